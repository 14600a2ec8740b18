#include "llmfs/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/random.hpp"

namespace llmfs {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::optional<double> parse_double(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

std::size_t header_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? header.size() : static_cast<std::size_t>(it - header.begin());
}

Eigen::VectorXd coerce_binary_labels(const std::vector<std::string>& raw,
                                     const std::string& target) {
  static const std::vector<std::pair<std::string, std::string>> kWordPairs = {
      {"false", "true"}, {"no", "yes"}, {"negative", "positive"}, {"n", "y"}};
  Eigen::VectorXd y(static_cast<Eigen::Index>(raw.size()));
  std::set<std::string> distinct;
  for (const auto& v : raw) distinct.insert(lower(trim(v)));

  bool numeric = true;
  for (const auto& v : distinct) {
    const auto d = parse_double(v);
    if (!d || (*d != 0.0 && *d != 1.0)) {
      numeric = false;
      break;
    }
  }
  if (numeric) {
    for (std::size_t i = 0; i < raw.size(); ++i) y[static_cast<Eigen::Index>(i)] = *parse_double(raw[i]);
    return y;
  }
  for (const auto& [neg, pos] : kWordPairs) {
    if (std::all_of(distinct.begin(), distinct.end(),
                    [&](const std::string& v) { return v == neg || v == pos; })) {
      for (std::size_t i = 0; i < raw.size(); ++i)
        y[static_cast<Eigen::Index>(i)] = lower(trim(raw[i])) == pos ? 1.0 : 0.0;
      return y;
    }
  }
  std::string values;
  for (const auto& v : distinct) {
    if (!values.empty()) values += ", ";
    values += v;
    if (values.size() > 60) {
      values += ", ...";
      break;
    }
  }
  throw DatasetError(fmt::format(
      "classification target '{}' must be binary (0/1); found values {{{}}}", target, values));
}

std::vector<std::vector<std::size_t>> strata(const Eigen::VectorXd& y, TaskKind task,
                                             bool stratified) {
  const auto n = static_cast<std::size_t>(y.size());
  if (!stratified || task != TaskKind::classification) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return {all};
  }
  std::vector<std::vector<std::size_t>> out(2);
  for (std::size_t i = 0; i < n; ++i) out[y[static_cast<Eigen::Index>(i)] > 0.5 ? 1 : 0].push_back(i);
  return out;
}

}  // namespace

std::string to_string(TaskKind task) {
  return task == TaskKind::classification ? "classification" : "regression";
}

TaskKind parse_task_kind(std::string_view text) {
  const auto t = lower(std::string(text));
  if (t == "classification") return TaskKind::classification;
  if (t == "regression") return TaskKind::regression;
  throw DatasetError(fmt::format("unknown task kind '{}'", text));
}

std::string metric_name(TaskKind task) {
  return task == TaskKind::classification ? "AUROC" : "MAE";
}

DatasetManifest manifest_from_json(const nlohmann::json& doc,
                                   const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw DatasetError("manifest must be a JSON object");
  for (const char* key : {"csv_path", "target", "task"})
    if (!doc.contains(key)) throw DatasetError(fmt::format("manifest is missing '{}'", key));
  DatasetManifest m;
  try {
    m.csv_path = doc.at("csv_path").get<std::string>();
    if (m.csv_path.is_relative() && !base_dir.empty()) m.csv_path = base_dir / m.csv_path;
    m.target = doc.at("target").get<std::string>();
    m.task = parse_task_kind(doc.at("task").get<std::string>());
    m.name = doc.value("name", m.csv_path.stem().string());
    if (doc.contains("categorical"))
      m.categorical = doc.at("categorical").get<std::vector<std::string>>();
    if (doc.contains("context") && !doc.at("context").is_null())
      m.context = doc.at("context").get<std::string>();
    if (doc.contains("concept_overrides"))
      m.concept_overrides = doc.at("concept_overrides").get<std::map<std::string, std::string>>();
    if (doc.contains("target_description") && !doc.at("target_description").is_null())
      m.target_description = doc.at("target_description").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(fmt::format("malformed manifest: {}", e.what()));
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot open manifest '{}'", path.string()));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(fmt::format("manifest '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return manifest_from_json(doc, path.parent_path());
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json doc{{"name", m.name},
                     {"csv_path", m.csv_path.string()},
                     {"target", m.target},
                     {"task", to_string(m.task)},
                     {"categorical", m.categorical},
                     {"concept_overrides", m.concept_overrides}};
  doc["context"] = m.context ? nlohmann::json(*m.context) : nlohmann::json();
  doc["target_description"] =
      m.target_description ? nlohmann::json(*m.target_description) : nlohmann::json();
  return doc;
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw DatasetError("stray quote inside unquoted CSV field");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (in_quotes) throw DatasetError("unterminated quoted CSV field");
  if (field_started || !record.empty()) end_record();

  if (records.empty()) throw DatasetError("CSV has no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (auto& h : table.header) h = trim(h);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      throw DatasetError(fmt::format("ragged CSV row {}: expected {} fields, found {}", r + 1,
                                     table.header.size(), records[r].size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable parse_csv(std::istream& in) {
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(std::string_view(buffer.str()));
}

Dataset load_dataset(const DatasetManifest& manifest) {
  std::ifstream in(manifest.csv_path, std::ios::binary);
  if (!in) throw DatasetError(fmt::format("cannot open CSV '{}'", manifest.csv_path.string()));
  const CsvTable table = parse_csv(in);
  if (table.rows.size() < 2) throw DatasetError("CSV must contain at least two data rows");

  const auto target_col = header_index(table.header, manifest.target);
  if (target_col == table.header.size())
    throw DatasetError(fmt::format("target '{}' not found in CSV header", manifest.target));
  for (const auto& c : manifest.categorical)
    if (header_index(table.header, c) == table.header.size())
      throw DatasetError(fmt::format("categorical column '{}' not found in CSV header", c));
  for (const auto& [key, _] : manifest.concept_overrides)
    if (header_index(table.header, key) == table.header.size())
      throw DatasetError(fmt::format("concept override key '{}' not found in CSV header", key));
  if (std::find(manifest.categorical.begin(), manifest.categorical.end(), manifest.target) !=
      manifest.categorical.end())
    throw DatasetError("target cannot be listed as categorical");

  Dataset ds;
  ds.task = manifest.task;
  const std::size_t n = table.rows.size();
  std::vector<std::string> target_raw(n);
  for (std::size_t r = 0; r < n; ++r) target_raw[r] = table.rows[r][target_col];

  if (manifest.task == TaskKind::classification) {
    ds.y = coerce_binary_labels(target_raw, manifest.target);
  } else {
    ds.y.resize(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
      const auto v = parse_double(target_raw[r]);
      if (!v)
        throw DatasetError(fmt::format("non-numeric or missing target value '{}' at row {}",
                                       target_raw[r], r + 2));
      ds.y[static_cast<Eigen::Index>(r)] = *v;
    }
  }

  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == target_col) continue;
    const auto& name = table.header[c];
    const bool is_cat = std::find(manifest.categorical.begin(), manifest.categorical.end(),
                                  name) != manifest.categorical.end();
    std::vector<std::string> column(n);
    for (std::size_t r = 0; r < n; ++r) {
      column[r] = trim(table.rows[r][c]);
      if (!is_cat && !parse_double(column[r]))
        throw DatasetError(fmt::format(
            "column '{}' row {}: value '{}' is missing or non-numeric (declare the column "
            "categorical if it is not numeric)",
            name, r + 2, column[r]));
    }
    ds.columns.push_back(name);
    const auto ov = manifest.concept_overrides.find(name);
    ds.concepts.push_back(ov == manifest.concept_overrides.end() ? name : ov->second);
    ds.categorical.push_back(is_cat);
    ds.cells.push_back(std::move(column));
  }
  if (ds.columns.empty()) throw DatasetError("dataset has no feature columns");
  return ds;
}

PreparedDataset prepare(const Dataset& dataset, const DatasetManifest& manifest,
                        std::span<const std::size_t> train_rows) {
  (void)manifest;
  if (train_rows.empty()) throw DatasetError("prepare requires at least one training row");
  const std::size_t n = dataset.rows();
  for (const auto r : train_rows)
    if (r >= n) throw DatasetError(fmt::format("training row {} out of range", r));

  PreparedDataset out;
  out.task = dataset.task;
  out.y = dataset.y;
  out.concepts = dataset.concepts;
  out.groups.resize(dataset.concepts.size());

  struct Pending {
    std::vector<double> values;
    std::optional<ColumnStats> stats;
  };
  std::vector<Pending> columns;

  for (std::size_t c = 0; c < dataset.columns.size(); ++c) {
    const auto& cells = dataset.cells[c];
    if (dataset.categorical[c]) {
      const std::set<std::string> vocab(cells.begin(), cells.end());
      for (const auto& level : vocab) {
        Pending col;
        col.values.resize(n);
        for (std::size_t r = 0; r < n; ++r) col.values[r] = cells[r] == level ? 1.0 : 0.0;
        out.groups[c].push_back(columns.size());
        out.column_names.push_back(dataset.columns[c] + "=" + level);
        out.column_concept.push_back(c);
        columns.push_back(std::move(col));
      }
      continue;
    }
    Pending col;
    col.values.resize(n);
    for (std::size_t r = 0; r < n; ++r) col.values[r] = *parse_double(cells[r]);

    double mean = 0.0;
    for (const auto r : train_rows) mean += col.values[r];
    mean /= static_cast<double>(train_rows.size());
    double var = 0.0;
    bool constant = true;
    const double first = col.values[train_rows.front()];
    for (const auto r : train_rows) {
      const double d = col.values[r] - mean;
      var += d * d;
      if (col.values[r] != first) constant = false;
    }
    var /= static_cast<double>(train_rows.size());
    ColumnStats stats{mean, std::sqrt(var), constant};
    if (constant) {
      std::fill(col.values.begin(), col.values.end(), 0.0);
      const auto msg =
          fmt::format("column '{}' is constant on training rows; encoded as zeros", dataset.columns[c]);
      out.warnings.push_back(msg);
      warn(msg);
    } else {
      for (auto& v : col.values) v = (v - mean) / stats.std;
    }
    col.stats = stats;
    out.groups[c].push_back(columns.size());
    out.column_names.push_back(dataset.columns[c]);
    out.column_concept.push_back(c);
    columns.push_back(std::move(col));
  }

  out.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t r = 0; r < n; ++r)
      out.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = columns[j].values[r];
    out.stats.push_back(columns[j].stats);
  }
  return out;
}

void SplitSpec::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DatasetError(fmt::format("test_fraction must lie in (0,1), got {}", test_fraction));
  if (k_folds < 2) throw DatasetError(fmt::format("k_folds must be >= 2, got {}", k_folds));
}

CvFolds make_folds(const Eigen::VectorXd& y, TaskKind task, int k_folds, std::uint64_t seed,
                   bool stratified) {
  if (k_folds < 2) throw DatasetError("k_folds must be >= 2");
  const auto k = static_cast<std::size_t>(k_folds);
  const auto n = static_cast<std::size_t>(y.size());
  if (n < k) throw DatasetError(fmt::format("{} rows cannot form {} folds", n, k));
  auto groups = strata(y, task, stratified);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups.size() > 1 && groups[g].size() < k)
      throw DatasetError(fmt::format("class {} has {} members, fewer than k_folds={}", g,
                                     groups[g].size(), k));
  }
  Rng rng(seed);
  std::vector<std::size_t> fold_of(n);
  std::size_t counter = 0;
  for (auto& g : groups) {
    rng.shuffle(std::span<std::size_t>(g));
    for (const auto pos : g) fold_of[pos] = counter++ % k;
  }
  CvFolds folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      if (fold_of[i] == f)
        folds[f].validate.push_back(i);
      else
        folds[f].fit.push_back(i);
    }
  }
  return folds;
}

Split split_rows(const Eigen::VectorXd& y, TaskKind task, const SplitSpec& spec) {
  spec.validate();
  auto groups = strata(y, task, spec.stratified);
  Split out;
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(), [](std::size_t a, std::size_t b) {
      const auto ha = splitmix64(a), hb = splitmix64(b);
      return ha != hb ? ha < hb : a < b;
    });
    const auto n_test = std::min(g.size(), round_half_up(spec.test_fraction * static_cast<double>(g.size())));
    out.test.insert(out.test.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), g.begin() + static_cast<std::ptrdiff_t>(n_test), g.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  if (out.train.empty() || out.test.empty())
    throw DatasetError("split produced an empty train or test set");
  out.folds = make_folds(take_rows(y, out.train), task, spec.k_folds, spec.seed, spec.stratified);
  return out;
}

Split split(const PreparedDataset& prepared, const SplitSpec& spec) {
  return split_rows(prepared.y, prepared.task, spec);
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Eigen::VectorXd take_rows(const Eigen::VectorXd& y, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(rows[i])];
  return out;
}

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

TrainTest train_test(const PreparedDataset& prepared, const Split& split) {
  return {take_rows(prepared.X, split.train), take_rows(prepared.y, split.train),
          take_rows(prepared.X, split.test), take_rows(prepared.y, split.test)};
}

LoadedData load_and_prepare(const DatasetManifest& manifest, double test_fraction) {
  LoadedData out{manifest, load_dataset(manifest), {}};
  SplitSpec spec;
  spec.test_fraction = test_fraction;
  spec.validate();
  // Only the test/train partition is needed here; it does not depend on the seed.
  auto groups = strata(out.raw.y, manifest.task, true);
  std::vector<std::size_t> train;
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(), [](std::size_t a, std::size_t b) {
      const auto ha = splitmix64(a), hb = splitmix64(b);
      return ha != hb ? ha < hb : a < b;
    });
    const auto n_test = std::min(g.size(), round_half_up(test_fraction * static_cast<double>(g.size())));
    train.insert(train.end(), g.begin() + static_cast<std::ptrdiff_t>(n_test), g.end());
  }
  std::sort(train.begin(), train.end());
  out.prepared = prepare(out.raw, manifest, train);
  return out;
}

}  // namespace llmfs
