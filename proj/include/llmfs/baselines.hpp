#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmfs/dataset.hpp"
#include "llmfs/models.hpp"

namespace llmfs {

/// sign(z) * max(|z| - gamma, 0)
double soft_threshold(double z, double gamma);

// ---- LASSO -------------------------------------------------------------

struct LassoOptions {
  /// Regression: lambda at the first point (default 1e4), divided by `factor`
  /// each step. Classification: C at the first point (default 1e-4),
  /// multiplied by `factor` each step.
  double start_strength = std::numeric_limits<double>::quiet_NaN();
  double factor = 1.02;
  std::size_t max_points = 2000;
  double tolerance = 1e-7;  ///< max coefficient change per sweep
  int max_sweeps = 1000;
  bool class_weighting = true;
};

struct LassoSolution {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
};

/// (1/2n) ||y - b - X beta||^2 + lambda ||beta||_1, by cyclic coordinate descent.
LassoSolution lasso_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                               const LassoSolution* warm = nullptr,
                               const LassoOptions& options = {});

/// (1/sum s) sum_i s_i nll_i + lambda ||w||_1 with lambda = 1/(nC), solved by
/// proximal Newton steps (weighted least squares + coordinate descent).
LassoSolution lasso_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                             const Eigen::VectorXd& sample_weights,
                             const LassoSolution* warm = nullptr,
                             const LassoOptions& options = {});

/// Penalized objective of either solver at `solution`.
double lasso_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                       double lambda, const Eigen::VectorXd& sample_weights,
                       const LassoSolution& solution);

/// Gradient of the smooth part of the objective with respect to the coefficients.
Eigen::VectorXd lasso_smooth_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      TaskKind task, const Eigen::VectorXd& sample_weights,
                                      const LassoSolution& solution);

enum class PathDirection { sparse_to_dense, dense_to_sparse };

struct RegPathPoint {
  double strength = 0.0;  ///< C for classification, lambda for regression
  double lambda = 0.0;    ///< L1 weight actually used by the solver
  std::vector<std::size_t> active;
  LassoSolution solution;
};

struct RegPath {
  TaskKind task = TaskKind::classification;
  PathDirection direction = PathDirection::sparse_to_dense;
  std::vector<RegPathPoint> points;
};

/// Warm-started sweep that stops once every column is active or after
/// `max_points` points.
RegPath lasso_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                   const LassoOptions& options = {});

nlohmann::json to_json(const RegPath& path);

/// Columns chosen at the first path point with at least k active columns,
/// trimmed to the k largest |coefficients|. If no point reaches k, the last
/// point's active set is padded with the remaining columns in index order.
std::vector<std::size_t> lasso_select(const RegPath& path, std::size_t k, std::size_t n_columns);

// ---- Mutual information -------------------------------------------------

enum class MiEstimator { plugin_discrete, knn };

struct MiOptions {
  int neighbors = 3;
  std::uint64_t seed = 0;
};

/// MI (nats) of two discrete variables from their joint histogram.
double plugin_mutual_information(std::span<const double> a, std::span<const double> b);

/// Nearest-neighbour MI. Discrete variables are marked by the flags; pairs of
/// discrete variables fall back to the plug-in estimate.
double knn_mutual_information(std::span<const double> a, bool a_discrete,
                              std::span<const double> b, bool b_discrete,
                              const MiOptions& options = {});

/// A column counts as discrete when it takes at most two distinct values.
bool looks_discrete(std::span<const double> values);

/// Per-column MI with the target; kNN estimates below zero are clamped to 0.
Eigen::VectorXd mi_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, TaskKind task,
                          MiEstimator estimator, const MiOptions& options = {});

/// Greedy MID criterion: relevance minus mean redundancy with the chosen set.
std::vector<std::size_t> mrmr_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     TaskKind task, std::size_t k, MiEstimator estimator,
                                     const MiOptions& options = {});

// ---- Wrappers ----------------------------------------------------------

/// Recursive feature elimination, one column per round. Returns the full
/// importance order: the last survivor first, the first eliminated last.
std::vector<std::size_t> rfe_ranking(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Trainer& trainer, double hyperparameter);

/// Survivors once k columns remain (ascending).
std::vector<std::size_t> rfe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             std::size_t k, const Trainer& trainer, double hyperparameter);

enum class Direction { forward, backward };

/// Order in which columns are added (forward) or, reversed, the order of
/// removal (backward, last remaining first). Prefixes are the selections.
std::vector<std::size_t> sequential_ranking(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            Direction direction, const Trainer& trainer,
                                            double hyperparameter, const CvFolds& folds,
                                            std::size_t stop_at = 0);

std::vector<std::size_t> sequential_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                           std::size_t k, Direction direction,
                                           const Trainer& trainer, double hyperparameter,
                                           const CvFolds& folds);

/// Seeded permutation of `count` items; a selection of size k is its prefix.
std::vector<std::size_t> random_order(std::size_t count, std::uint64_t seed);

}  // namespace llmfs
