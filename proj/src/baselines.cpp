#include "llmfs/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <queue>

#include <boost/math/special_functions/digamma.hpp>
#include <fmt/format.h>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/metrics.hpp"
#include "llmfs/random.hpp"

namespace llmfs {
namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double digamma(double x) { return boost::math::digamma(x); }

void require_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw NumericError("row count mismatch between X and y");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("non-finite values in X or y");
}

std::vector<std::size_t> active_set(const Eigen::VectorXd& beta) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) out.push_back(static_cast<std::size_t>(j));
  return out;
}

std::span<const double> column_span(const Eigen::MatrixXd& X, Eigen::Index j) {
  return {X.col(j).data(), static_cast<std::size_t>(X.rows())};
}

// ---- kNN mutual information helpers ----

std::vector<double> jittered(std::span<const double> v, Rng& rng, bool& constant) {
  const auto n = static_cast<double>(v.size());
  double mean = 0.0;
  for (const double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (const double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  constant = !(sd > 0.0);
  std::vector<double> out(v.begin(), v.end());
  if (constant) return out;
  double mean_abs = 0.0;
  for (auto& x : out) {
    x /= sd;
    mean_abs += std::abs(x);
  }
  mean_abs /= n;
  const double scale = 1e-10 * std::max(1.0, mean_abs);
  for (auto& x : out) x += scale * rng.normal();
  return out;
}

// Number of entries of sorted `s` with |s - x| < eps, judged on the computed
// distance so the k-th neighbour itself is never counted through rounding.
std::size_t count_closer(const std::vector<double>& s, double x, double eps) {
  const auto inside = [&](double v) { return std::abs(v - x) < eps; };
  auto lo = std::lower_bound(s.begin(), s.end(), x - eps);
  while (lo != s.begin() && inside(*(lo - 1))) --lo;
  while (lo != s.end() && *lo < x && !inside(*lo)) ++lo;
  auto hi = std::upper_bound(s.begin(), s.end(), x + eps);
  while (hi != s.end() && inside(*hi)) ++hi;
  while (hi != lo && *(hi - 1) > x && !inside(*(hi - 1))) --hi;
  return static_cast<std::size_t>(hi - lo);
}

// Chebyshev distance to the k-th nearest neighbour in the (x, y) plane.
std::vector<double> joint_kth_distance(const std::vector<double>& x, const std::vector<double>& y,
                                       int k) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[order[i]] = i;

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::priority_queue<double> best;  // k smallest distances, max on top
    const auto consider = [&](std::size_t j) {
      const double d = std::max(std::abs(x[i] - x[j]), std::abs(y[i] - y[j]));
      if (best.size() < static_cast<std::size_t>(k)) {
        best.push(d);
      } else if (d < best.top()) {
        best.pop();
        best.push(d);
      }
    };
    std::size_t left = pos[i], right = pos[i] + 1;
    bool go_left = left > 0, go_right = right < n;
    while (go_left || go_right) {
      const double bound = best.size() == static_cast<std::size_t>(k) ? best.top()
                                                                       : std::numeric_limits<double>::infinity();
      if (go_left) {
        const std::size_t j = order[left - 1];
        if (std::abs(x[i] - x[j]) > bound) {
          go_left = false;
        } else {
          consider(j);
          --left;
          go_left = left > 0;
        }
      }
      if (go_right) {
        const std::size_t j = order[right];
        if (std::abs(x[i] - x[j]) > bound) {
          go_right = false;
        } else {
          consider(j);
          ++right;
          go_right = right < n;
        }
      }
    }
    out[i] = best.top();
  }
  return out;
}

double mi_continuous_continuous(const std::vector<double>& x, const std::vector<double>& y,
                                int k) {
  const std::size_t n = x.size();
  const auto radius = joint_kth_distance(x, y, k);
  std::vector<double> xs = x, ys = y;
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Counts include the point itself, which is the "+1" of the estimator.
    sum += digamma(static_cast<double>(count_closer(xs, x[i], radius[i]))) +
           digamma(static_cast<double>(count_closer(ys, y[i], radius[i])));
  }
  const double mi = digamma(static_cast<double>(n)) + digamma(k) - sum / static_cast<double>(n);
  return std::max(0.0, mi);
}

double mi_continuous_discrete(const std::vector<double>& c, std::span<const double> d, int k) {
  const std::size_t n = c.size();
  std::map<double, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[d[i]].push_back(i);

  std::vector<double> kept_c, radius, k_used, label_count;
  for (const auto& [label, idx] : by_label) {
    if (idx.size() < 2) continue;
    const int kk = std::min<int>(k, static_cast<int>(idx.size()) - 1);
    std::vector<double> values;
    for (const auto i : idx) values.push_back(c[i]);
    std::vector<double> dist;
    for (std::size_t a = 0; a < values.size(); ++a) {
      dist.clear();
      for (std::size_t b = 0; b < values.size(); ++b)
        if (a != b) dist.push_back(std::abs(values[a] - values[b]));
      std::nth_element(dist.begin(), dist.begin() + (kk - 1), dist.end());
      kept_c.push_back(values[a]);
      radius.push_back(dist[static_cast<std::size_t>(kk - 1)]);
      k_used.push_back(kk);
      label_count.push_back(static_cast<double>(idx.size()));
    }
  }
  const std::size_t m = kept_c.size();
  if (m == 0) return 0.0;
  std::vector<double> sorted = kept_c;
  std::sort(sorted.begin(), sorted.end());
  double sum_k = 0.0, sum_label = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sum_k += digamma(k_used[i]);
    sum_label += digamma(label_count[i]);
    sum_m += digamma(static_cast<double>(count_closer(sorted, kept_c[i], radius[i])));
  }
  const auto mf = static_cast<double>(m);
  const double mi = digamma(mf) + sum_k / mf - sum_label / mf - sum_m / mf;
  return std::max(0.0, mi);
}

}  // namespace

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// ---- LASSO ----

LassoSolution lasso_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                               const LassoSolution* warm, const LassoOptions& options) {
  require_finite(X, y);
  if (!(lambda >= 0.0)) throw NumericError("lambda must be non-negative");
  const auto n = static_cast<double>(X.rows());
  const Eigen::Index d = X.cols();
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  const Eigen::VectorXd col_sq = Xc.colwise().squaredNorm().transpose() / n;

  Eigen::VectorXd beta = warm ? warm->coefficients : Eigen::VectorXd::Zero(d);
  Eigen::VectorXd r = yc - Xc * beta;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq[j] == 0.0) {
        beta[j] = 0.0;
        continue;
      }
      const double old = beta[j];
      const double z = Xc.col(j).dot(r) / n + col_sq[j] * old;
      const double updated = soft_threshold(z, lambda) / col_sq[j];
      if (updated != old) {
        r -= (updated - old) * Xc.col(j);
        beta[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < options.tolerance) break;
  }
  return {beta, y_mean - x_mean.dot(beta)};
}

LassoSolution lasso_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                             const Eigen::VectorXd& sample_weights, const LassoSolution* warm,
                             const LassoOptions& options) {
  require_finite(X, y);
  if (!(lambda >= 0.0)) throw NumericError("lambda must be non-negative");
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const double total_weight = sample_weights.sum();
  LassoSolution sol;
  if (warm) {
    sol = *warm;
  } else {
    sol.coefficients = Eigen::VectorXd::Zero(d);
    const double p = std::clamp(sample_weights.dot(y) / total_weight, 1e-12, 1 - 1e-12);
    sol.intercept = std::log(p / (1 - p));
  }
  double objective = lasso_objective(X, y, TaskKind::classification, lambda, sample_weights, sol);

  Eigen::VectorXd W(n), r(n);
  for (int outer = 0; outer < 100; ++outer) {
    const Eigen::VectorXd eta = (X * sol.coefficients).array() + sol.intercept;
    Eigen::VectorXd grad_eta(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(eta[i]);
      const double v = std::max(p * (1 - p), 1e-5);
      W[i] = sample_weights[i] * v / total_weight;
      r[i] = (y[i] - p) / v;
      grad_eta[i] = sample_weights[i] * (p - y[i]) / total_weight;
    }
    // Coordinate descent on the weighted least-squares model, in step space.
    Eigen::VectorXd beta = sol.coefficients;
    double b = sol.intercept;
    const double w_sum = W.sum();
    Eigen::VectorXd col_curv(d);
    for (Eigen::Index j = 0; j < d; ++j) col_curv[j] = W.dot(X.col(j).cwiseAbs2());
    for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
      double max_change = 0.0;
      const double db = W.dot(r) / w_sum;
      b += db;
      r.array() -= db;
      max_change = std::abs(db);
      for (Eigen::Index j = 0; j < d; ++j) {
        if (col_curv[j] == 0.0) continue;
        const double old = beta[j];
        const double z = X.col(j).cwiseProduct(W).dot(r) + col_curv[j] * old;
        const double updated = soft_threshold(z, lambda) / col_curv[j];
        if (updated != old) {
          r -= (updated - old) * X.col(j);
          beta[j] = updated;
          max_change = std::max(max_change, std::abs(updated - old));
        }
      }
      if (max_change < options.tolerance * 0.1) break;
    }
    const Eigen::VectorXd step_beta = beta - sol.coefficients;
    const double step_b = b - sol.intercept;
    const double descent = grad_eta.dot(X * step_beta) + grad_eta.sum() * step_b +
                           lambda * (beta.lpNorm<1>() - sol.coefficients.lpNorm<1>());
    double t = 1.0;
    LassoSolution candidate;
    double cand_obj = objective;
    bool moved = false;
    for (int ls = 0; ls < 50; ++ls) {
      candidate.coefficients = sol.coefficients + t * step_beta;
      candidate.intercept = sol.intercept + t * step_b;
      cand_obj = lasso_objective(X, y, TaskKind::classification, lambda, sample_weights, candidate);
      if (cand_obj <= objective + 1e-4 * t * std::min(descent, 0.0)) {
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
    const double change = t * std::max(step_beta.cwiseAbs().maxCoeff(), std::abs(step_b));
    sol = candidate;
    objective = cand_obj;
    if (!(change >= options.tolerance)) break;
  }
  return sol;
}

double lasso_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                       double lambda, const Eigen::VectorXd& sample_weights,
                       const LassoSolution& solution) {
  const Eigen::VectorXd eta = (X * solution.coefficients).array() + solution.intercept;
  double loss = 0.0;
  if (task == TaskKind::classification) {
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      loss += sample_weights[i] * (softplus(eta[i]) - y[i] * eta[i]);
    loss /= sample_weights.sum();
  } else {
    loss = (y - eta).squaredNorm() / (2.0 * static_cast<double>(y.size()));
  }
  return loss + lambda * solution.coefficients.lpNorm<1>();
}

Eigen::VectorXd lasso_smooth_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      TaskKind task, const Eigen::VectorXd& sample_weights,
                                      const LassoSolution& solution) {
  const Eigen::VectorXd eta = (X * solution.coefficients).array() + solution.intercept;
  Eigen::VectorXd g(eta.size());
  if (task == TaskKind::classification) {
    const double total = sample_weights.sum();
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      g[i] = sample_weights[i] * (sigmoid(eta[i]) - y[i]) / total;
  } else {
    g = (eta - y) / static_cast<double>(y.size());
  }
  return X.transpose() * g;
}

RegPath lasso_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                   const LassoOptions& options) {
  require_finite(X, y);
  if (!(options.factor > 1.0)) throw NumericError("path factor must exceed 1");
  if (options.max_points == 0) throw NumericError("max_points must be positive");
  const bool classification = task == TaskKind::classification;
  double strength = options.start_strength;
  if (std::isnan(strength)) strength = classification ? 1e-4 : 1e4;
  if (!(strength > 0.0)) throw NumericError("start strength must be positive");
  const auto n = static_cast<double>(X.rows());
  const Eigen::VectorXd weights = class_sample_weights(y, task, options.class_weighting);

  RegPath path;
  path.task = task;
  path.direction = PathDirection::sparse_to_dense;
  const LassoSolution* warm = nullptr;
  for (std::size_t i = 0; i < options.max_points; ++i) {
    RegPathPoint point;
    point.strength = strength;
    point.lambda = classification ? 1.0 / (n * strength) : strength;
    point.solution = classification ? lasso_logistic(X, y, point.lambda, weights, warm, options)
                                    : lasso_regression(X, y, point.lambda, warm, options);
    point.active = active_set(point.solution.coefficients);
    path.points.push_back(std::move(point));
    warm = &path.points.back().solution;
    if (path.points.back().active.size() == static_cast<std::size_t>(X.cols())) break;
    strength = classification ? strength * options.factor : strength / options.factor;
  }
  return path;
}

nlohmann::json to_json(const RegPath& path) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : path.points) {
    const auto& c = p.solution.coefficients;
    points.push_back({{"strength", p.strength},
                      {"lambda", p.lambda},
                      {"active", p.active},
                      {"coefficients", std::vector<double>(c.data(), c.data() + c.size())},
                      {"intercept", p.solution.intercept}});
  }
  return {{"task", to_string(path.task)},
          {"direction", path.direction == PathDirection::sparse_to_dense ? "sparse_to_dense"
                                                                          : "dense_to_sparse"},
          {"points", points}};
}

std::vector<std::size_t> lasso_select(const RegPath& path, std::size_t k, std::size_t n_columns) {
  if (k == 0 || k > n_columns) throw NumericError(fmt::format("cannot select {} of {} columns", k, n_columns));
  for (const auto& point : path.points) {
    if (point.active.size() < k) continue;
    std::vector<std::size_t> chosen = point.active;
    const auto& c = point.solution.coefficients;
    std::stable_sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(c[static_cast<Eigen::Index>(a)]) > std::abs(c[static_cast<Eigen::Index>(b)]);
    });
    chosen.resize(k);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }
  warn(fmt::format("lasso path never reached {} active columns; padding in column order", k));
  std::vector<std::size_t> chosen = path.points.empty() ? std::vector<std::size_t>{} : path.points.back().active;
  for (std::size_t j = 0; j < n_columns && chosen.size() < k; ++j)
    if (std::find(chosen.begin(), chosen.end(), j) == chosen.end()) chosen.push_back(j);
  chosen.resize(k);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// ---- Mutual information ----

double plugin_mutual_information(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw NumericError("plugin MI: length mismatch");
  if (a.empty()) throw NumericError("plugin MI of empty input");
  std::map<std::pair<double, double>, double> joint;
  std::map<double, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  const auto n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint)
    mi += (c / n) * std::log(n * c / (ca[key.first] * cb[key.second]));
  return std::max(0.0, mi);
}

bool looks_discrete(std::span<const double> values) {
  if (values.empty()) return true;
  const double first = values[0];
  std::optional<double> second;
  for (const double v : values) {
    if (v == first) continue;
    if (!second) {
      second = v;
    } else if (v != *second) {
      return false;
    }
  }
  return true;
}

double knn_mutual_information(std::span<const double> a, bool a_discrete,
                              std::span<const double> b, bool b_discrete,
                              const MiOptions& options) {
  if (a.size() != b.size()) throw NumericError("kNN MI: length mismatch");
  const int k = options.neighbors;
  if (k < 1) throw NumericError("kNN MI needs at least one neighbour");
  if (a.size() < static_cast<std::size_t>(k) + 1)
    throw NumericError(fmt::format("kNN MI needs at least {} samples", k + 1));
  if (a_discrete && b_discrete) return plugin_mutual_information(a, b);

  Rng rng(options.seed);
  bool constant_a = false, constant_b = false;
  if (!a_discrete && !b_discrete) {
    const auto x = jittered(a, rng, constant_a);
    const auto y = jittered(b, rng, constant_b);
    if (constant_a || constant_b) return 0.0;
    return mi_continuous_continuous(x, y, k);
  }
  // One side discrete: estimate with the continuous side in the kNN role.
  const auto continuous = a_discrete ? b : a;
  const auto discrete = a_discrete ? a : b;
  const auto c = jittered(continuous, rng, constant_a);
  if (constant_a) return 0.0;
  return mi_continuous_discrete(c, discrete, k);
}

Eigen::VectorXd mi_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                          MiEstimator estimator, const MiOptions& options) {
  require_finite(X, y);
  const std::span<const double> target(y.data(), static_cast<std::size_t>(y.size()));
  const bool target_discrete = task == TaskKind::classification;
  Eigen::VectorXd out(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto col = column_span(X, j);
    if (estimator == MiEstimator::plugin_discrete) {
      out[j] = plugin_mutual_information(col, target);
    } else {
      MiOptions opt = options;
      opt.seed = splitmix64(options.seed) + static_cast<std::uint64_t>(j);
      out[j] = knn_mutual_information(col, looks_discrete(col), target, target_discrete, opt);
    }
  }
  return out;
}

std::vector<std::size_t> mrmr_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     TaskKind task, std::size_t k, MiEstimator estimator,
                                     const MiOptions& options) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (k < 1 || k > d) throw NumericError(fmt::format("mrmr: k={} outside [1,{}]", k, d));
  const Eigen::VectorXd relevance = mi_scores(X, y, task, estimator, options);

  std::vector<bool> discrete(d);
  for (std::size_t j = 0; j < d; ++j) discrete[j] = looks_discrete(column_span(X, static_cast<Eigen::Index>(j)));
  const auto redundancy = [&](std::size_t a, std::size_t b) {
    const auto ca = column_span(X, static_cast<Eigen::Index>(a));
    const auto cb = column_span(X, static_cast<Eigen::Index>(b));
    if (estimator == MiEstimator::plugin_discrete) return plugin_mutual_information(ca, cb);
    MiOptions opt = options;
    opt.seed = splitmix64(options.seed ^ (0x5bd1e995ULL * (std::min(a, b) + 1))) + std::max(a, b);
    return knn_mutual_information(ca, discrete[a], cb, discrete[b], opt);
  };

  std::vector<std::size_t> chosen;
  std::vector<bool> used(d, false);
  std::vector<double> redundancy_sum(d, 0.0);
  while (chosen.size() < k) {
    std::size_t best = d;
    double best_score = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (used[j]) continue;
      const double score = chosen.empty()
                               ? relevance[static_cast<Eigen::Index>(j)]
                               : relevance[static_cast<Eigen::Index>(j)] -
                                     redundancy_sum[j] / static_cast<double>(chosen.size());
      if (best == d || score > best_score) {
        best = j;
        best_score = score;
      }
    }
    used[best] = true;
    chosen.push_back(best);
    if (chosen.size() == k) break;
    for (std::size_t j = 0; j < d; ++j)
      if (!used[j]) redundancy_sum[j] += redundancy(j, best);
  }
  return chosen;
}

// ---- Wrappers ----

std::vector<std::size_t> rfe_ranking(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Trainer& trainer, double hyperparameter) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (d == 0) throw NumericError("rfe needs at least one column");
  std::vector<std::size_t> current(d);
  std::iota(current.begin(), current.end(), std::size_t{0});
  std::vector<std::size_t> eliminated;
  while (current.size() > 1) {
    const auto model = trainer.fit(take_columns(X, current), y, hyperparameter);
    std::size_t weakest = 0;
    for (std::size_t i = 1; i < current.size(); ++i)
      if (std::abs(model.weights[static_cast<Eigen::Index>(i)]) <
          std::abs(model.weights[static_cast<Eigen::Index>(weakest)]))
        weakest = i;
    eliminated.push_back(current[weakest]);
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(weakest));
  }
  std::vector<std::size_t> order{current.front()};
  order.insert(order.end(), eliminated.rbegin(), eliminated.rend());
  return order;
}

std::vector<std::size_t> rfe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t k,
                             const Trainer& trainer, double hyperparameter) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (k < 1 || k > d) throw NumericError(fmt::format("rfe: k={} outside [1,{}]", k, d));
  if (k == d) {
    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto order = rfe_ranking(X, y, trainer, hyperparameter);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> sequential_ranking(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            Direction direction, const Trainer& trainer,
                                            double hyperparameter, const CvFolds& folds,
                                            std::size_t stop_at) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (d == 0) throw NumericError("sequential selection needs at least one column");
  if (stop_at > d) throw NumericError("stop_at exceeds the column count");
  const auto score = [&](std::vector<std::size_t> cols) {
    std::sort(cols.begin(), cols.end());
    return oriented(trainer.task(), trainer.cv(take_columns(X, cols), y, folds, hyperparameter));
  };

  if (direction == Direction::forward) {
    const std::size_t target = stop_at == 0 ? d : stop_at;
    std::vector<std::size_t> chosen;
    std::vector<bool> used(d, false);
    while (chosen.size() < target) {
      if (chosen.size() + 1 == d) {
        for (std::size_t j = 0; j < d; ++j)
          if (!used[j]) chosen.push_back(j);
        break;
      }
      std::size_t best = d;
      double best_value = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        if (used[j]) continue;
        auto cols = chosen;
        cols.push_back(j);
        const double v = score(cols);
        if (best == d || v > best_value) {
          best = j;
          best_value = v;
        }
      }
      used[best] = true;
      chosen.push_back(best);
    }
    return chosen;
  }

  const std::size_t keep = stop_at == 0 ? 1 : stop_at;
  std::vector<std::size_t> current(d);
  std::iota(current.begin(), current.end(), std::size_t{0});
  std::vector<std::size_t> removed;
  while (current.size() > keep) {
    std::size_t best = current.size();
    double best_value = 0.0;
    for (std::size_t i = 0; i < current.size(); ++i) {
      auto cols = current;
      cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(i));
      const double v = score(cols);
      if (best == current.size() || v > best_value) {
        best = i;
        best_value = v;
      }
    }
    removed.push_back(current[best]);
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(best));
  }
  std::vector<std::size_t> order = current;
  order.insert(order.end(), removed.rbegin(), removed.rend());
  return order;
}

std::vector<std::size_t> sequential_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                           std::size_t k, Direction direction,
                                           const Trainer& trainer, double hyperparameter,
                                           const CvFolds& folds) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (k < 1 || k > d) throw NumericError(fmt::format("sequential: k={} outside [1,{}]", k, d));
  auto order = sequential_ranking(X, y, direction, trainer, hyperparameter, folds, k);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> random_order(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

}  // namespace llmfs
