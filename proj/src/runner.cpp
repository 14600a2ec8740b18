#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "llmfs/baselines.hpp"
#include "llmfs/cli.hpp"
#include "llmfs/error.hpp"
#include "llmfs/log.hpp"

#ifndef LLMFS_VERSION
#define LLMFS_VERSION "0.0.0"
#endif

namespace llmfs {

namespace fs = std::filesystem;

std::string_view library_version() { return LLMFS_VERSION; }

namespace {

constexpr std::array<Method, 10> kMethods = {
    Method::llm_score, Method::llm_rank, Method::llm_seq, Method::lasso,   Method::mi,
    Method::mrmr,      Method::rfe,      Method::forward, Method::backward, Method::random};

std::vector<std::size_t> prefix(const std::vector<std::size_t>& order, double fraction) {
  const auto k = selection_size(fraction, order.size());
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)};
}

std::vector<std::size_t> descending(const Eigen::VectorXd& v) {
  std::vector<std::size_t> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) > v(static_cast<Eigen::Index>(b));
  });
  return order;
}

// Largest column value within each concept's group.
std::vector<double> per_concept_max(const Eigen::VectorXd& column_values,
                                    const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    double best = -std::numeric_limits<double>::infinity();
    for (auto c : g) best = std::max(best, column_values(static_cast<Eigen::Index>(c)));
    out.push_back(best);
  }
  return out;
}

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::llm_score: return "llm-score";
    case Method::llm_rank: return "llm-rank";
    case Method::llm_seq: return "llm-seq";
    case Method::lasso: return "lasso";
    case Method::mi: return "mi";
    case Method::mrmr: return "mrmr";
    case Method::rfe: return "rfe";
    case Method::forward: return "forward";
    case Method::backward: return "backward";
    case Method::random: return "random";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  std::string name(text);
  std::replace(name.begin(), name.end(), '_', '-');
  for (auto m : kMethods)
    if (to_string(m) == name) return m;
  throw Error(fmt::format("unknown method '{}'", text));
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (auto m : kMethods) out.push_back(to_string(m));
    return out;
  }();
  return names;
}

bool is_llm_method(Method method) {
  return method == Method::llm_score || method == Method::llm_rank || method == Method::llm_seq;
}

bool selects_concepts(Method method) { return is_llm_method(method) || method == Method::random; }

void RunConfig::validate() const {
  if (dataset.empty()) throw Error("no dataset manifest given");
  if (seeds.empty()) throw Error("no seeds given");
  if (fractions.empty()) throw Error("no fractions given");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw Error(fmt::format("fraction {} outside (0,1]", f));
  if (!(score_min < score_max)) throw Error("score range needs MIN < MAX");
  if (buffer_size && *buffer_size < 0) throw Error("buffer size must be non-negative");
  if (rank_requery < 0 || rank_requery > 2) throw Error("rank re-queries must be between 0 and 2");
  if (jobs < 1) throw Error("jobs must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test fraction outside (0,1)");
  if (permutation_repeats < 1) throw Error("permutation repeats must be at least 1");
  decoding.validate();
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {
      {"dataset", c.dataset.string()},
      {"method", to_string(c.method)},
      {"prompt_variant", to_string(c.prompt_variant)},
      {"decoding",
       {{"mode", to_string(c.decoding.mode)},
        {"temperature", c.decoding.temperature},
        {"samples", c.decoding.n_samples}}},
      {"score_range", {c.score_min, c.score_max}},
      {"seeds", c.seeds},
      {"fractions", c.fractions},
      {"buffer_size", c.buffer_size ? nlohmann::json(*c.buffer_size) : nlohmann::json()},
      {"init", to_string(c.init)},
      {"rank_requery", c.rank_requery},
      {"backend", c.backend},
      {"model", c.model ? nlohmann::json(*c.model) : nlohmann::json()},
      {"base_url", c.base_url ? nlohmann::json(*c.base_url) : nlohmann::json()},
      {"family", to_string(c.family)},
      {"prompts", c.prompts ? nlohmann::json(c.prompts->string()) : nlohmann::json()},
      {"cache_dir", c.cache_dir ? nlohmann::json(c.cache_dir->string()) : nlohmann::json()},
      {"output_dir", c.output_dir.string()},
      {"test_fraction", c.test_fraction},
      {"permutation_repeats", c.permutation_repeats},
  };
  return j;
}

std::string config_hash(const RunConfig& config) {
  // jobs only changes scheduling, not results.
  return sha256_hex(to_json(config).dump());
}

OpenedBackend open_backend(const RunConfig& config) {
  const auto colon = config.backend.find(':');
  const std::string scheme = config.backend.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : config.backend.substr(colon + 1);
  OpenedBackend out;
  out.family = config.family;
  if (scheme == "scripted") {
    if (rest.empty()) throw BackendError("scripted backend needs a script path (scripted:PATH)");
    out.backend = ScriptedBackend::from_file(rest);
    out.model_id = config.model.value_or("scripted");
  } else if (scheme == "openai") {
    HttpBackendConfig http;
    if (config.base_url) http.base_url = *config.base_url;
    out.model_id = config.model.value_or(rest);
    if (out.model_id.empty()) throw BackendError("openai backend needs a model (openai:MODEL)");
    out.backend = std::make_unique<HttpBackend>(http);
  } else if (scheme == "config") {
    const fs::path path(rest);
    std::ifstream in(path);
    if (!in) throw BackendError(fmt::format("cannot read backend config {}", path.string()));
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(fmt::format("backend config {}: {}", path.string(), e.what()));
    }
    const auto settings = backend_settings_from_json(doc, path.parent_path());
    out.backend = make_backend(settings);
    out.model_id = config.model.value_or(settings.model_id);
    out.family = settings.family;
    out.cache_dir = settings.cache_dir;
  } else {
    throw BackendError(fmt::format("unknown backend '{}' (use scripted:, openai: or config:)",
                                   config.backend));
  }
  if (config.cache_dir) out.cache_dir = config.cache_dir;
  if (!out.cache_dir) out.cache_dir = config.output_dir / "cache";
  return out;
}

TaskSpec task_spec_for(const RunConfig& config, const DatasetManifest& manifest) {
  std::vector<TaskFixture> fixtures;
  const TaskFixture* fixture = nullptr;
  if (config.prompts) {
    fixtures = load_task_fixtures(*config.prompts);
    fixture = find_fixture(fixtures, manifest.name);
    if (!fixture) warn(fmt::format("no prompt fixture named '{}'", manifest.name));
  }
  TaskSpec spec = task_spec_from_manifest(manifest, fixture);
  spec.min_score = config.score_min;
  spec.max_score = config.score_max;
  spec.validate();
  return spec;
}

MethodRunner::MethodRunner(const RunContext& context) : ctx_(context) {
  if (is_llm_method(ctx_.config.method) && !ctx_.client)
    throw Error(fmt::format("method {} needs a language model backend", to_string(ctx_.config.method)));
}

MethodOutput MethodRunner::run(const Split& split, std::uint64_t seed) {
  const auto& cfg = ctx_.config;
  const auto& p = ctx_.data.prepared;
  const auto D = p.concept_count();
  const auto d = p.feature_count();
  const Trainer trainer(p.task);
  MethodOutput out;

  const auto ensure_scores = [&] {
    if (!importance_)
      importance_ = llm_score(*ctx_.client, ctx_.model_id, ctx_.task, p.concepts,
                              cfg.prompt_variant, cfg.decoding, ctx_.family);
  };

  switch (cfg.method) {
    case Method::llm_score:
      ensure_scores();
      out.importance = importance_;
      out.ranking = ranking_from_scores(*importance_);
      break;
    case Method::llm_rank:
      if (!ranking_)
        ranking_ = llm_rank(*ctx_.client, ctx_.model_id, ctx_.task, p.concepts, cfg.decoding,
                            {.requery_missing = cfg.rank_requery});
      out.ranking = ranking_;
      break;
    case Method::llm_seq: {
      SeqOptions opt;
      opt.k = selection_size(*std::max_element(cfg.fractions.begin(), cfg.fractions.end()), D);
      opt.buffer_size = cfg.buffer_size ? cfg.buffer_size : default_seq_buffer(D);
      opt.init = cfg.init;
      opt.temperature = cfg.decoding.temperature;
      if (cfg.init == SeqInit::top_llm_score) {
        ensure_scores();
        opt.init_scores = &*importance_;
        out.importance = importance_;
      }
      out.ranking = llm_seq(*ctx_.client, ctx_.model_id, ctx_.task, p, split, trainer, opt);
      break;
    }
    case Method::random:
      out.ranking = Ranking{random_order(D, seed), RankingSource::baseline};
      break;
    default: {
      const Eigen::MatrixXd X = take_rows(p.X, split.train);
      const Eigen::VectorXd y = take_rows(p.y, split.train);
      const MiOptions mi{3, seed};
      switch (cfg.method) {
        case Method::lasso: {
          auto path = std::make_shared<RegPath>(lasso_path(X, y, p.task));
          out.selector = [path, d](double f) { return lasso_select(*path, selection_size(f, d), d); };
          return out;
        }
        case Method::mi:
          out.column_order = descending(mi_scores(X, y, p.task, MiEstimator::knn, mi));
          break;
        case Method::mrmr:
          out.column_order = mrmr_select(X, y, p.task, d, MiEstimator::knn, mi);
          break;
        case Method::rfe:
          out.column_order = rfe_ranking(X, y, trainer, trainer.tune(X, y, split.folds).best);
          break;
        case Method::forward:
        case Method::backward:
          out.column_order = sequential_ranking(
              X, y, cfg.method == Method::forward ? Direction::forward : Direction::backward,
              trainer, trainer.tune(X, y, split.folds).best, split.folds);
          break;
        default:
          throw Error("unhandled method");
      }
      out.selector = [order = out.column_order](double f) { return prefix(order, f); };
      return out;
    }
  }
  out.selector = ranking_selector(*out.ranking, p.groups);
  return out;
}

std::vector<ImportanceMetric> correlate_importance(const ImportanceVector& scores,
                                                   const LoadedData& data, const Split& split,
                                                   std::uint64_t seed, int permutation_repeats) {
  const auto& p = data.prepared;
  if (scores.concepts != p.concepts) {
    throw Error(fmt::format("scores cover {} concepts that do not match the dataset's {}",
                            scores.concepts.size(), p.concepts.size()));
  }
  const auto tt = train_test(p, split);
  const Trainer trainer(p.task);
  std::vector<ImportanceMetric> out;
  const auto add = [&](std::string name, std::vector<double> values) {
    ImportanceMetric m{std::move(name), std::move(values), 0.0};
    m.tau = kendall_tau(scores.scores, m.values);
    out.push_back(std::move(m));
  };

  if (p.task == TaskKind::classification)
    add("fisher", per_concept_max(fisher_score(tt.X_train, tt.y_train), p.groups));
  add("mi", per_concept_max(mi_scores(tt.X_train, tt.y_train, p.task, MiEstimator::knn, {3, seed}),
                            p.groups));
  add("pearson", per_concept_max(correlation_scores(tt.X_train, tt.y_train, CorrelationKind::pearson),
                                 p.groups));
  add("spearman",
      per_concept_max(correlation_scores(tt.X_train, tt.y_train, CorrelationKind::spearman), p.groups));

  const auto tuned = trainer.tune(tt.X_train, tt.y_train, split.folds);
  const auto model = trainer.fit(tt.X_train, tt.y_train, tuned.best);
  const Eigen::VectorXd perm =
      permutation_importance(model, tt.X_test, tt.y_test, permutation_repeats, seed, p.groups);
  add("permutation", {perm.data(), perm.data() + perm.size()});

  constexpr std::size_t kMaxShapleyPlayers = 10;
  if (p.concept_count() <= kMaxShapleyPlayers) {
    const Eigen::VectorXd phi =
        exact_shapley(trainer, tt.X_train, tt.y_train, split.folds, tuned.best, p.groups);
    add("shapley_exact", {phi.data(), phi.data() + phi.size()});
  } else {
    warn(fmt::format("skipping exact Shapley values: {} concepts exceed {}", p.concept_count(),
                     kMaxShapleyPlayers));
  }
  return out;
}

std::string render_paths_svg(const std::vector<SelectionPath>& paths, std::string_view title) {
  constexpr double W = 760, H = 440, left = 70, right = 200, top = 40, bottom = 55;
  constexpr std::array<const char*, 10> palette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                                   "#bcbd22", "#17becf"};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& path : paths)
    for (const auto& pt : path.points) {
      lo = std::min(lo, pt.value);
      hi = std::max(hi, pt.value);
    }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.05, hi += 0.05;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  const auto sx = [&](double f) { return left + f * pw; };
  const auto sy = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" font-size=\"15\">{3}</text>\n",
      W, H, left, xml_escape(title));
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
                     left, top, pw, ph);
  for (int i = 0; i <= 10; i += 2) {
    const double f = i / 10.0;
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"#333\"/>"
        "<text x=\"{0:.1f}\" y=\"{3}\" text-anchor=\"middle\">{4:.1f}</text>\n",
        sx(f), top + ph, top + ph + 5, top + ph + 19, f);
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"#333\"/>"
        "<text x=\"{3}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.3f}</text>\n",
        left - 5, sy(v), left, left - 8, sy(v) + 4, v);
  }
  const std::string metric = paths.empty() ? "metric" : paths.front().metric;
  svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">fraction of features selected</text>\n",
                     left + pw / 2, H - 12);
  svg += fmt::format("<text transform=\"translate(18,{:.1f}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                     top + ph / 2, xml_escape(metric));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const char* color = palette[i % palette.size()];
    std::string pts;
    for (const auto& pt : paths[i].points)
      pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", sx(pt.fraction), sy(pt.value));
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                       color, pts);
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{5:.1f}\">{6}</text>\n",
        left + pw + 15, ly, left + pw + 35, color, left + pw + 40, ly + 4,
        xml_escape(paths[i].method));
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace llmfs
