#include "llmfs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/random.hpp"

namespace llmfs {
namespace {

// Counts inversions of v while merge-sorting it in place.
std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buffer,
                              std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = count_inversions(v, buffer, lo, mid) + count_inversions(v, buffer, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buffer[k++] = v[j++];
    } else {
      buffer[k++] = v[i++];
    }
  }
  while (i < mid) buffer[k++] = v[i++];
  while (j < hi) buffer[k++] = v[j++];
  std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo),
            buffer.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// Sum of t(t-1)/2 over runs of equal values in a sorted sequence.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal) {
  std::int64_t total = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      total += static_cast<std::int64_t>(run) * static_cast<std::int64_t>(run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

double pearson_abs(const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool& degenerate) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  degenerate = !(denom > 0.0);
  if (degenerate) return 0.0;
  return std::min(1.0, std::abs(ac.dot(bc) / denom));
}

Eigen::VectorXd ranks_of(const Eigen::VectorXd& v) {
  const auto r = average_ranks(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  return Eigen::Map<const Eigen::VectorXd>(r.data(), v.size());
}

std::vector<std::vector<std::size_t>> default_players(const std::vector<std::vector<std::size_t>>& players,
                                                      Eigen::Index cols) {
  if (!players.empty()) return players;
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(cols));
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = {j};
  return out;
}

}  // namespace

double auroc(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores) {
  if (labels.size() != scores.size()) throw NumericError("auroc: length mismatch");
  const auto n = static_cast<std::size_t>(labels.size());
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i) n_pos += labels[static_cast<Eigen::Index>(i)] > 0.5 ? 1.0 : 0.0;
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw NumericError("auroc needs both classes present");
  const Eigen::VectorXd ranks = ranks_of(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[static_cast<Eigen::Index>(i)] > 0.5) rank_sum += ranks[static_cast<Eigen::Index>(i)];
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double mae(const Eigen::VectorXd& y, const Eigen::VectorXd& predictions) {
  if (y.size() != predictions.size()) throw NumericError("mae: length mismatch");
  if (y.size() == 0) throw NumericError("mae of empty input");
  return (y - predictions).cwiseAbs().mean();
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = mid;
    i = j;
  }
  return ranks;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw NumericError("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw NumericError("kendall_tau needs at least two observations");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] != a[j] ? a[i] < a[j] : b[i] < b[j];
  });
  const std::int64_t ties_a =
      tied_pairs(n, [&](std::size_t i, std::size_t j) { return a[order[i]] == a[order[j]]; });
  const std::int64_t ties_joint = tied_pairs(n, [&](std::size_t i, std::size_t j) {
    return a[order[i]] == a[order[j]] && b[order[i]] == b[order[j]];
  });
  std::vector<double> bs(n), buffer(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  const std::int64_t swaps = count_inversions(bs, buffer, 0, n);
  const std::int64_t ties_b = tied_pairs(n, [&](std::size_t i, std::size_t j) { return bs[i] == bs[j]; });

  const auto total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t net = total - ties_a - ties_b + ties_joint - 2 * swaps;
  const double denom = std::sqrt(static_cast<double>(total - ties_a) *
                                 static_cast<double>(total - ties_b));
  if (denom == 0.0) throw NumericError("kendall_tau undefined for an all-tied vector");
  return static_cast<double>(net) / denom;
}

Eigen::VectorXd fisher_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw NumericError("fisher_score: row mismatch");
  constexpr double kEpsilon = 1e-12;
  std::vector<Eigen::Index> rows[2];
  for (Eigen::Index i = 0; i < y.size(); ++i) rows[y[i] > 0.5 ? 1 : 0].push_back(i);
  if (rows[0].empty() || rows[1].empty()) throw NumericError("fisher_score needs both classes");
  Eigen::VectorXd out(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    double between = 0.0, within = 0.0;
    for (const auto& r : rows) {
      const auto nc = static_cast<double>(r.size());
      double mc = 0.0;
      for (const auto i : r) mc += X(i, j);
      mc /= nc;
      double var = 0.0;
      for (const auto i : r) var += (X(i, j) - mc) * (X(i, j) - mc);
      var /= nc;
      between += nc * (mc - mean) * (mc - mean);
      within += nc * var;
    }
    out[j] = between / (within + kEpsilon);
  }
  return out;
}

Eigen::VectorXd correlation_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   CorrelationKind kind) {
  if (X.rows() != y.size()) throw NumericError("correlation_scores: row mismatch");
  if (y.size() < 2) throw NumericError("correlation needs at least two rows");
  const Eigen::VectorXd target = kind == CorrelationKind::spearman ? ranks_of(y) : y;
  Eigen::VectorXd out(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const Eigen::VectorXd col = kind == CorrelationKind::spearman ? ranks_of(X.col(j)) : Eigen::VectorXd(X.col(j));
    bool degenerate = false;
    out[j] = pearson_abs(col, target, degenerate);
    if (degenerate) warn(fmt::format("column {} has zero variance; correlation set to 0", j));
  }
  return out;
}

Eigen::VectorXd permutation_importance(const LinearModel& model, const Eigen::MatrixXd& X_test,
                                       const Eigen::VectorXd& y_test, int repeats,
                                       std::uint64_t seed,
                                       const std::vector<std::vector<std::size_t>>& players) {
  if (repeats < 1) throw NumericError("permutation_importance needs repeats >= 1");
  const auto groups = default_players(players, X_test.cols());
  const TaskKind task = model.task;
  const double baseline = oriented(task, task_metric(task, y_test, predict(model, X_test)));
  const auto n = static_cast<std::size_t>(X_test.rows());
  Rng rng(seed);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(groups.size()));
  std::vector<std::size_t> perm(n);
  for (std::size_t p = 0; p < groups.size(); ++p) {
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      Eigen::MatrixXd Xp = X_test;
      for (const auto c : groups[p])
        for (std::size_t i = 0; i < n; ++i)
          Xp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
              X_test(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(c));
      total += baseline - oriented(task, task_metric(task, y_test, predict(model, Xp)));
    }
    out[static_cast<Eigen::Index>(p)] = total / repeats;
  }
  return out;
}

double coalition_value(const Trainer& trainer, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const CvFolds& folds, double hyperparameter,
                       std::span<const std::size_t> columns) {
  if (!columns.empty())
    return oriented(trainer.task(),
                    trainer.cv(take_columns(X, columns), y, folds, hyperparameter));
  if (trainer.task() == TaskKind::classification) return 0.5;
  double total = 0.0;
  for (const auto& fold : folds) {
    const double mean = take_rows(y, fold.fit).mean();
    const Eigen::VectorXd y_val = take_rows(y, fold.validate);
    total += mae(y_val, Eigen::VectorXd::Constant(y_val.size(), mean));
  }
  return -total / static_cast<double>(folds.size());
}

Eigen::VectorXd exact_shapley(const Trainer& trainer, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y, const CvFolds& folds,
                              double hyperparameter,
                              const std::vector<std::vector<std::size_t>>& players,
                              std::size_t max_players) {
  const auto groups = default_players(players, X.cols());
  const std::size_t p = groups.size();
  if (p == 0) throw NumericError("exact_shapley needs at least one player");
  if (p > max_players)
    throw NumericError(fmt::format("exact_shapley supports at most {} players, got {}",
                                   max_players, p));
  const std::size_t masks = std::size_t{1} << p;
  std::vector<double> value(masks);
  for (std::size_t mask = 0; mask < masks; ++mask) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < p; ++i)
      if (mask & (std::size_t{1} << i)) cols.insert(cols.end(), groups[i].begin(), groups[i].end());
    std::sort(cols.begin(), cols.end());
    value[mask] = coalition_value(trainer, X, y, folds, hyperparameter, cols);
  }
  std::vector<double> factorial(p + 1, 1.0);
  for (std::size_t i = 1; i <= p; ++i) factorial[i] = factorial[i - 1] * static_cast<double>(i);

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < masks; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<std::size_t>(__builtin_popcountll(mask));
      const double weight = factorial[s] * factorial[p - s - 1] / factorial[p];
      phi[static_cast<Eigen::Index>(i)] += weight * (value[mask | bit] - value[mask]);
    }
  }
  return phi;
}

std::size_t selection_size(double fraction, std::size_t total) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw NumericError(fmt::format("fraction must lie in (0,1], got {}", fraction));
  if (total == 0) throw NumericError("cannot select from zero items");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, total);
}

std::vector<double> default_fractions() {
  std::vector<double> out;
  for (int i = 1; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

nlohmann::json to_json(const SelectionPath& path) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : path.points)
    points.push_back({{"fraction", p.fraction},
                      {"value", p.value},
                      {"columns", p.columns},
                      {"hyperparameter", p.hyperparameter}});
  return {{"method", path.method}, {"dataset", path.dataset}, {"metric", path.metric},
          {"seed", path.seed},     {"points", points}};
}

SelectionPath path_from_json(const nlohmann::json& doc) {
  SelectionPath path;
  path.method = doc.value("method", "");
  path.dataset = doc.value("dataset", "");
  path.metric = doc.value("metric", "");
  path.seed = doc.value("seed", std::uint64_t{0});
  for (const auto& p : doc.at("points")) {
    PathPoint point;
    point.fraction = p.at("fraction").get<double>();
    point.value = p.at("value").get<double>();
    point.columns = p.value("columns", std::vector<std::size_t>{});
    point.hyperparameter = p.value("hyperparameter", 0.0);
    path.points.push_back(std::move(point));
  }
  return path;
}

std::string to_csv(const SelectionPath& path) {
  std::string out = "fraction,value\n";
  for (const auto& p : path.points) out += fmt::format("{},{}\n", p.fraction, p.value);
  return out;
}

PathPoint evaluate_columns(const PreparedDataset& prepared, const Split& split,
                           std::vector<std::size_t> columns, const Trainer& trainer) {
  std::sort(columns.begin(), columns.end());
  columns.erase(std::unique(columns.begin(), columns.end()), columns.end());
  if (columns.empty()) throw NumericError("selection produced no columns");
  if (columns.back() >= prepared.feature_count())
    throw NumericError(fmt::format("column {} out of range", columns.back()));
  const Eigen::MatrixXd X = take_columns(prepared.X, columns);
  const Eigen::MatrixXd X_train = take_rows(X, split.train);
  const Eigen::VectorXd y_train = take_rows(prepared.y, split.train);
  const auto tuned = trainer.tune(X_train, y_train, split.folds);
  const auto model = trainer.fit(X_train, y_train, tuned.best);
  PathPoint point;
  point.columns = std::move(columns);
  point.hyperparameter = tuned.best;
  point.value = trainer.evaluate(model, take_rows(X, split.test), take_rows(prepared.y, split.test));
  return point;
}

SelectionPath selection_path(const ColumnSelector& selector, const PreparedDataset& prepared,
                             const Split& split, std::span<const double> fractions,
                             const Trainer& trainer) {
  if (fractions.empty()) throw NumericError("no fractions requested");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
      throw NumericError(fmt::format("fraction {} outside (0,1]", fractions[i]));
    if (i > 0 && !(fractions[i] > fractions[i - 1]))
      throw NumericError("fractions must be strictly increasing");
  }
  SelectionPath path;
  path.metric = metric_name(trainer.task());
  std::map<std::vector<std::size_t>, PathPoint> evaluated;
  for (const double f : fractions) {
    auto cols = selector(f);
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    auto it = evaluated.find(cols);
    if (it == evaluated.end())
      it = evaluated.emplace(cols, evaluate_columns(prepared, split, cols, trainer)).first;
    PathPoint point = it->second;
    point.fraction = f;
    path.points.push_back(std::move(point));
  }
  return path;
}

double path_area(const SelectionPath& path) {
  const auto& pts = path.points;
  if (pts.size() < 2) throw NumericError("path_area needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double width = pts[i].fraction - pts[i - 1].fraction;
    if (!(width > 0.0)) throw NumericError("path fractions must be strictly increasing");
    area += 0.5 * (pts[i].value + pts[i - 1].value) * width;
  }
  return area / (pts.back().fraction - pts.front().fraction);
}

SelectionPath mean_path(const std::vector<SelectionPath>& paths) {
  if (paths.empty()) throw NumericError("mean_path of no paths");
  SelectionPath out;
  out.method = paths.front().method;
  out.dataset = paths.front().dataset;
  out.metric = paths.front().metric;
  for (std::size_t i = 0; i < paths.front().points.size(); ++i) {
    PathPoint point;
    point.fraction = paths.front().points[i].fraction;
    double total = 0.0;
    for (const auto& p : paths) {
      if (p.points.size() != paths.front().points.size() || p.points[i].fraction != point.fraction)
        throw NumericError("mean_path requires paths over identical fractions");
      total += p.points[i].value;
    }
    point.value = total / static_cast<double>(paths.size());
    out.points.push_back(std::move(point));
  }
  return out;
}

double pct_improvement(double area_variant, double area_default, TaskKind task) {
  if (area_default == 0.0) throw NumericError("pct_improvement with zero default area");
  const double delta =
      task == TaskKind::classification ? area_variant - area_default : area_default - area_variant;
  return 100.0 * delta / area_default;
}

}  // namespace llmfs
