#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmfs/dataset.hpp"

namespace llmfs {

/// L2-penalized logistic (classification) or ridge (regression) model.
struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  TaskKind task = TaskKind::classification;
  double hyperparameter = 1.0;  ///< C for classification, lambda for regression
  bool class_weighting = true;
};

nlohmann::json to_json(const LinearModel& model);
LinearModel model_from_json(const nlohmann::json& doc);

struct GridSpec {
  std::vector<double> values;

  void validate() const;
  /// [0.1, 0.5, 1, 5, 10, 50, 100] for C; [0.001 ... 10] for lambda.
  static GridSpec defaults(TaskKind task);
};

/// Per-row weights. With class weighting each class c gets n / (2 n_c),
/// so the weights average to one; otherwise all ones.
Eigen::VectorXd class_sample_weights(const Eigen::VectorXd& y, TaskKind task,
                                     bool class_weighting);

/// Training objective at params = [weights; bias].
///   classification: sum_i s_i * nll_i + ||w||^2 / (2C)
///   regression:     sum_i s_i * r_i^2 / sum_i s_i + lambda ||w||^2
/// Writes the gradient when `grad` is non-null.
double training_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                          double hyperparameter, const Eigen::VectorXd& sample_weights,
                          const Eigen::VectorXd& params, Eigen::VectorXd* grad = nullptr);

struct FitOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 2000;
};

LinearModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                double hyperparameter, bool class_weighting = true,
                const FitOptions& options = {});

/// Fit with explicit per-row weights (class weighting is not applied on top).
LinearModel fit_weighted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                         double hyperparameter, const Eigen::VectorXd& sample_weights,
                         const FitOptions& options = {});

/// Probabilities for classification, values for regression.
Eigen::VectorXd predict(const LinearModel& model, const Eigen::MatrixXd& X);

/// Test metric of a task: AUROC for classification, MAE for regression.
double task_metric(TaskKind task, const Eigen::VectorXd& y, const Eigen::VectorXd& predictions);

/// Larger-is-better form of a task metric (MAE is negated).
inline double oriented(TaskKind task, double metric) {
  return task == TaskKind::classification ? metric : -metric;
}

struct GridSearchResult {
  double best = 0.0;
  double best_metric = 0.0;        ///< mean CV metric at `best` (raw: AUROC or MAE)
  std::vector<double> cv_metrics;  ///< aligned with the grid values
};

/// Mean CV metric across folds. Classification folds whose validation part
/// holds a single class are skipped with a warning.
double cv_metric(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                 double hyperparameter, const CvFolds& folds, bool class_weighting = true);

/// Ties resolve toward stronger regularization (smaller C, larger lambda).
GridSearchResult grid_search_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                TaskKind task, const GridSpec& grid, const CvFolds& folds,
                                bool class_weighting = true);

/// Downstream model recipe shared by evaluation, wrappers and LLM-Seq.
class Trainer {
 public:
  explicit Trainer(TaskKind task);
  Trainer(TaskKind task, GridSpec grid, bool class_weighting = true);

  TaskKind task() const { return task_; }
  const GridSpec& grid() const { return grid_; }
  bool class_weighting() const { return class_weighting_; }

  GridSearchResult tune(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const CvFolds& folds) const;
  double cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CvFolds& folds,
            double hyperparameter) const;
  LinearModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  double hyperparameter) const;
  double evaluate(const LinearModel& model, const Eigen::MatrixXd& X,
                  const Eigen::VectorXd& y) const;

 private:
  TaskKind task_;
  GridSpec grid_;
  bool class_weighting_;
};

}  // namespace llmfs
