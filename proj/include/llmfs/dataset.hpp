#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace llmfs {

enum class TaskKind { classification, regression };

std::string to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view text);

/// Name of the downstream metric for a task ("AUROC" or "MAE").
std::string metric_name(TaskKind task);

/// Describes a CSV dataset and how its columns map to concepts.
struct DatasetManifest {
  std::string name;
  std::filesystem::path csv_path;
  std::string target;
  TaskKind task = TaskKind::classification;
  std::vector<std::string> categorical;
  std::optional<std::string> context;
  /// Column name -> display name shown to the language model.
  std::map<std::string, std::string> concept_overrides;
  /// Natural-language target used in prompts, e.g. "whether a patient has diabetes".
  std::optional<std::string> target_description;
};

/// Relative csv paths are resolved against `base_dir`.
DatasetManifest manifest_from_json(const nlohmann::json& doc,
                                   const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
nlohmann::json to_json(const DatasetManifest& manifest);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC-4180 reader: quoted fields, doubled quotes, embedded newlines, CRLF.
/// Throws DatasetError on ragged rows or unterminated quotes.
CsvTable parse_csv(std::istream& in);
CsvTable parse_csv(std::string_view text);

/// Raw table after target extraction. Concepts keep header order.
struct Dataset {
  std::vector<std::string> columns;   ///< original header names, target removed
  std::vector<std::string> concepts;  ///< display names (overrides applied)
  std::vector<bool> categorical;      ///< per concept
  std::vector<std::vector<std::string>> cells;  ///< per concept, one entry per row
  Eigen::VectorXd y;
  TaskKind task = TaskKind::classification;

  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
};

Dataset load_dataset(const DatasetManifest& manifest);

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;
};

/// Numeric design matrix with concept -> column groups.
struct PreparedDataset {
  Eigen::MatrixXd X;  ///< n x d
  Eigen::VectorXd y;
  TaskKind task = TaskKind::classification;
  std::vector<std::string> concepts;
  std::vector<std::string> column_names;
  std::vector<std::vector<std::size_t>> groups;  ///< concept -> columns (ascending)
  std::vector<std::size_t> column_concept;       ///< column -> concept
  std::vector<std::optional<ColumnStats>> stats;  ///< nullopt for one-hot columns
  std::vector<std::string> warnings;

  std::size_t concept_count() const { return concepts.size(); }
  std::size_t feature_count() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
};

/// Standardizes numeric columns with statistics from `train_rows` only and
/// one-hot encodes categorical columns with the vocabulary of the full table.
PreparedDataset prepare(const Dataset& dataset, const DatasetManifest& manifest,
                        std::span<const std::size_t> train_rows);

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
  bool stratified = true;
  int k_folds = 5;

  void validate() const;
};

/// Positions are indices into `Split::train`, not raw row ids.
struct CvFold {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> validate;
};
using CvFolds = std::vector<CvFold>;

struct Split {
  std::vector<std::size_t> train;  ///< row ids, ascending
  std::vector<std::size_t> test;   ///< row ids, ascending
  CvFolds folds;
};

/// The test part depends only on the labels and row order; the folds depend on
/// `spec.seed`. Stratification applies to classification targets only.
Split split_rows(const Eigen::VectorXd& y, TaskKind task, const SplitSpec& spec);
Split split(const PreparedDataset& prepared, const SplitSpec& spec);

/// Folds over `y` (already restricted to training rows) for the given seed.
CvFolds make_folds(const Eigen::VectorXd& y, TaskKind task, int k_folds, std::uint64_t seed,
                   bool stratified);

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> rows);
Eigen::VectorXd take_rows(const Eigen::VectorXd& y, std::span<const std::size_t> rows);
Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, std::span<const std::size_t> cols);

/// Train/test matrices of a prepared dataset under a split.
struct TrainTest {
  Eigen::MatrixXd X_train;
  Eigen::VectorXd y_train;
  Eigen::MatrixXd X_test;
  Eigen::VectorXd y_test;
};
TrainTest train_test(const PreparedDataset& prepared, const Split& split);

/// Loads the CSV, derives the fixed test split, and prepares with train statistics.
struct LoadedData {
  DatasetManifest manifest;
  Dataset raw;
  PreparedDataset prepared;
};
LoadedData load_and_prepare(const DatasetManifest& manifest, double test_fraction = 0.2);

}  // namespace llmfs
