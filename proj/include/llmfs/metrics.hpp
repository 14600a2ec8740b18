#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmfs/dataset.hpp"
#include "llmfs/models.hpp"

namespace llmfs {

/// Tie-aware area under the ROC curve (Mann-Whitney form).
double auroc(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores);
double mae(const Eigen::VectorXd& y, const Eigen::VectorXd& predictions);

/// Kendall tau-b, O(n log n).
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Average (mid) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

/// Per column Fisher score with epsilon 1e-12 in the denominator.
Eigen::VectorXd fisher_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

enum class CorrelationKind { pearson, spearman };
/// |correlation| per column; zero-variance columns give 0 with a warning.
Eigen::VectorXd correlation_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   CorrelationKind kind);

/// Mean drop of the oriented test metric when a player's columns are
/// shuffled together. `players` defaults to one player per column.
Eigen::VectorXd permutation_importance(const LinearModel& model, const Eigen::MatrixXd& X_test,
                                       const Eigen::VectorXd& y_test, int repeats,
                                       std::uint64_t seed,
                                       const std::vector<std::vector<std::size_t>>& players = {});

/// Value function for Shapley attribution: oriented CV metric of the
/// downstream model with a fixed hyperparameter, restricted to a coalition.
/// The empty coalition scores chance: 0.5 AUROC, or minus the CV MAE of the
/// fold-mean predictor.
double coalition_value(const Trainer& trainer, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const CvFolds& folds, double hyperparameter,
                       std::span<const std::size_t> columns);

/// Exact Shapley values by enumerating all coalitions of `players`.
Eigen::VectorXd exact_shapley(const Trainer& trainer, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y, const CvFolds& folds,
                              double hyperparameter,
                              const std::vector<std::vector<std::size_t>>& players = {},
                              std::size_t max_players = 10);

/// k = max(1, round-half-up(fraction * total)).
std::size_t selection_size(double fraction, std::size_t total);

/// 0.1, 0.2, ..., 1.0
std::vector<double> default_fractions();

struct PathPoint {
  double fraction = 0.0;
  std::vector<std::size_t> columns;
  double hyperparameter = 0.0;
  double value = 0.0;
};

struct SelectionPath {
  std::string method;
  std::string dataset;
  std::string metric;  ///< "AUROC" or "MAE"
  std::uint64_t seed = 0;
  std::vector<PathPoint> points;
};

nlohmann::json to_json(const SelectionPath& path);
SelectionPath path_from_json(const nlohmann::json& doc);
/// "fraction,value" rows with header.
std::string to_csv(const SelectionPath& path);

/// Maps a fraction to the columns of the prepared dataset to keep.
using ColumnSelector = std::function<std::vector<std::size_t>(double fraction)>;

/// Tunes on the training rows with the split's folds, refits on all training
/// rows and scores the test rows. Columns are evaluated in ascending order.
PathPoint evaluate_columns(const PreparedDataset& prepared, const Split& split,
                           std::vector<std::size_t> columns, const Trainer& trainer);

SelectionPath selection_path(const ColumnSelector& selector, const PreparedDataset& prepared,
                             const Split& split, std::span<const double> fractions,
                             const Trainer& trainer);

/// Trapezoid integral over the fraction axis divided by the fraction span.
double path_area(const SelectionPath& path);

/// Pointwise mean of paths that share fractions.
SelectionPath mean_path(const std::vector<SelectionPath>& paths);

/// Positive when the variant is better: larger area for classification,
/// smaller for regression.
double pct_improvement(double area_variant, double area_default, TaskKind task);

}  // namespace llmfs
