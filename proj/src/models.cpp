#include "llmfs/models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/metrics.hpp"

namespace llmfs {
namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task) {
  if (X.rows() != y.size())
    throw NumericError(fmt::format("X has {} rows but y has {}", X.rows(), y.size()));
  if (X.rows() == 0) throw NumericError("cannot fit on zero rows");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("non-finite values in training data");
  if (task == TaskKind::classification)
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0) throw NumericError("classification labels must be 0/1");
}

// Dense BFGS with Armijo backtracking on the inverse Hessian approximation.
Eigen::VectorXd minimize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>& f,
                         Eigen::VectorXd x, const FitOptions& options) {
  const Eigen::Index p = x.size();
  Eigen::VectorXd g(p);
  double fx = f(x, &g);
  if (!std::isfinite(fx)) throw NumericError("objective is not finite at the starting point");
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(p, p);
  bool scaled = false;
  Eigen::VectorXd g_new(p);
  // Where no further decrease is representable, accept a gradient that is
  // small in absolute terms or relative to where the descent began.
  const double stall_tolerance = std::max(1e3 * options.gradient_tolerance, 1e-9 * g.norm());

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (g.norm() < options.gradient_tolerance) return x;
    Eigen::VectorXd dir = -H * g;
    double slope = g.dot(dir);
    if (slope >= 0) {
      H.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (g.norm() < stall_tolerance) return x;
      throw NumericError(fmt::format("line search failed (gradient norm {:.3g})", g.norm()));
    }
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (!scaled) {
        H *= sy / yv.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * yv;
      H += (rho * rho * yv.dot(Hy) + rho) * s * s.transpose() -
           rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    const bool stalled = std::abs(fx - f_new) <= 1e-15 * std::max(1.0, std::abs(fx));
    x = x_new;
    fx = f_new;
    g = g_new;
    if (stalled && g.norm() < stall_tolerance) return x;
  }
  if (g.norm() < stall_tolerance) return x;
  throw NumericError(fmt::format("optimizer did not converge (gradient norm {:.3g})", g.norm()));
}

}  // namespace

nlohmann::json to_json(const LinearModel& model) {
  return {{"weights", std::vector<double>(model.weights.data(),
                                          model.weights.data() + model.weights.size())},
          {"bias", model.bias},
          {"task", to_string(model.task)},
          {"hyperparameter", model.hyperparameter},
          {"class_weighting", model.class_weighting}};
}

LinearModel model_from_json(const nlohmann::json& doc) {
  LinearModel m;
  const auto w = doc.at("weights").get<std::vector<double>>();
  m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  m.bias = doc.at("bias").get<double>();
  m.task = parse_task_kind(doc.at("task").get<std::string>());
  m.hyperparameter = doc.at("hyperparameter").get<double>();
  m.class_weighting = doc.value("class_weighting", true);
  return m;
}

void GridSpec::validate() const {
  if (values.empty()) throw NumericError("hyperparameter grid is empty");
  for (const double v : values)
    if (!(v > 0.0) || !std::isfinite(v))
      throw NumericError(fmt::format("grid value {} is not a positive number", v));
}

GridSpec GridSpec::defaults(TaskKind task) {
  if (task == TaskKind::classification) return {{0.1, 0.5, 1, 5, 10, 50, 100}};
  return {{0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1, 5, 10}};
}

Eigen::VectorXd class_sample_weights(const Eigen::VectorXd& y, TaskKind task,
                                     bool class_weighting) {
  const auto n = y.size();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (task != TaskKind::classification || !class_weighting) return w;
  const double n_pos = y.sum();
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return w;
  for (Eigen::Index i = 0; i < n; ++i)
    w[i] = static_cast<double>(n) / (2.0 * (y[i] > 0.5 ? n_pos : n_neg));
  return w;
}

double training_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                          double hyperparameter, const Eigen::VectorXd& sample_weights,
                          const Eigen::VectorXd& params, Eigen::VectorXd* grad) {
  const Eigen::Index d = X.cols();
  const auto w = params.head(d);
  const double b = params[d];
  const Eigen::VectorXd z = (X * w).array() + b;
  Eigen::VectorXd dz(z.size());
  double value = 0.0;
  double penalty_scale = 0.0;  // penalty = penalty_scale * ||w||^2

  if (task == TaskKind::classification) {
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      value += sample_weights[i] * (softplus(z[i]) - y[i] * z[i]);
      dz[i] = sample_weights[i] * (sigmoid(z[i]) - y[i]);
    }
    penalty_scale = 1.0 / (2.0 * hyperparameter);
  } else {
    const double total = sample_weights.sum();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double r = z[i] - y[i];
      value += sample_weights[i] * r * r / total;
      dz[i] = 2.0 * sample_weights[i] * r / total;
    }
    penalty_scale = hyperparameter;
  }
  value += penalty_scale * w.squaredNorm();
  if (grad) {
    grad->resize(d + 1);
    grad->head(d) = X.transpose() * dz + 2.0 * penalty_scale * w;
    (*grad)[d] = dz.sum();
  }
  return value;
}

LinearModel fit_weighted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                         double hyperparameter, const Eigen::VectorXd& sample_weights,
                         const FitOptions& options) {
  check_inputs(X, y, task);
  if (!(hyperparameter > 0.0) || !std::isfinite(hyperparameter))
    throw NumericError(fmt::format("hyperparameter must be positive, got {}", hyperparameter));
  if (sample_weights.size() != y.size()) throw NumericError("sample weight length mismatch");

  const Eigen::Index d = X.cols();
  Eigen::VectorXd start = Eigen::VectorXd::Zero(d + 1);
  if (task == TaskKind::regression) start[d] = sample_weights.dot(y) / sample_weights.sum();
  const auto objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
    return training_objective(X, y, task, hyperparameter, sample_weights, p, g);
  };
  const Eigen::VectorXd params = minimize(objective, start, options);
  if (!params.allFinite()) throw NumericError("optimizer diverged");

  LinearModel m;
  m.weights = params.head(d);
  m.bias = params[d];
  m.task = task;
  m.hyperparameter = hyperparameter;
  return m;
}

LinearModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                double hyperparameter, bool class_weighting, const FitOptions& options) {
  check_inputs(X, y, task);
  auto m = fit_weighted(X, y, task, hyperparameter, class_sample_weights(y, task, class_weighting),
                        options);
  m.class_weighting = class_weighting;
  return m;
}

Eigen::VectorXd predict(const LinearModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.weights.size())
    throw NumericError(fmt::format("model expects {} columns, got {}", model.weights.size(),
                                   X.cols()));
  Eigen::VectorXd z = (X * model.weights).array() + model.bias;
  if (model.task == TaskKind::classification) z = z.unaryExpr([](double v) { return sigmoid(v); });
  return z;
}

double task_metric(TaskKind task, const Eigen::VectorXd& y, const Eigen::VectorXd& predictions) {
  return task == TaskKind::classification ? auroc(y, predictions) : mae(y, predictions);
}

double cv_metric(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                 double hyperparameter, const CvFolds& folds, bool class_weighting) {
  if (folds.size() < 2) throw NumericError("cross-validation needs at least two folds");
  double total = 0.0;
  int used = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    const Eigen::VectorXd y_val = take_rows(y, fold.validate);
    if (task == TaskKind::classification) {
      const double pos = y_val.sum();
      if (pos == 0 || pos == static_cast<double>(y_val.size())) {
        warn(fmt::format("fold {} has a single class in validation; skipped", f));
        continue;
      }
    }
    const Eigen::VectorXd y_fit = take_rows(y, fold.fit);
    const auto model =
        fit(take_rows(X, fold.fit), y_fit, task, hyperparameter, class_weighting);
    total += task_metric(task, y_val, predict(model, take_rows(X, fold.validate)));
    ++used;
  }
  if (used == 0) throw NumericError("every cross-validation fold was skipped");
  return total / used;
}

GridSearchResult grid_search_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                TaskKind task, const GridSpec& grid, const CvFolds& folds,
                                bool class_weighting) {
  grid.validate();
  GridSearchResult result;
  result.cv_metrics.resize(grid.values.size());
  for (std::size_t i = 0; i < grid.values.size(); ++i)
    result.cv_metrics[i] = cv_metric(X, y, task, grid.values[i], folds, class_weighting);

  // Visit from strongest to weakest regularization; only strict gains move the choice.
  std::vector<std::size_t> order(grid.values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return task == TaskKind::classification ? grid.values[a] < grid.values[b]
                                            : grid.values[a] > grid.values[b];
  });
  std::size_t best = order.front();
  for (const auto i : order)
    if (oriented(task, result.cv_metrics[i]) > oriented(task, result.cv_metrics[best])) best = i;
  result.best = grid.values[best];
  result.best_metric = result.cv_metrics[best];
  return result;
}

Trainer::Trainer(TaskKind task) : Trainer(task, GridSpec::defaults(task), true) {}

Trainer::Trainer(TaskKind task, GridSpec grid, bool class_weighting)
    : task_(task), grid_(std::move(grid)), class_weighting_(class_weighting) {
  grid_.validate();
}

GridSearchResult Trainer::tune(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const CvFolds& folds) const {
  return grid_search_cv(X, y, task_, grid_, folds, class_weighting_);
}

double Trainer::cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CvFolds& folds,
                   double hyperparameter) const {
  return cv_metric(X, y, task_, hyperparameter, folds, class_weighting_);
}

LinearModel Trainer::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         double hyperparameter) const {
  return llmfs::fit(X, y, task_, hyperparameter, class_weighting_);
}

double Trainer::evaluate(const LinearModel& model, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& y) const {
  return task_metric(task_, y, predict(model, X));
}

}  // namespace llmfs
