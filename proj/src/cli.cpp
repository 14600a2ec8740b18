#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "llmfs/cli.hpp"
#include "llmfs/error.hpp"
#include "llmfs/log.hpp"

namespace llmfs {

namespace fs = std::filesystem;

namespace {

/// Reads JSON objects (nested objects become sections) and falls back to
/// TOML for anything else.
class JsonOrTomlConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const std::string text{std::istreambuf_iterator<char>(input), {}};
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream in(text);
      return CLI::ConfigTOML::from_config(in);
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config file: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(doc, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(name);
        flatten(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = name;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else if (!value.is_null()) {
        item.inputs.push_back(scalar(value));
      } else {
        continue;
      }
      items.push_back(std::move(item));
    }
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

struct Session {
  RunConfig config;
  LoadedData data;
  std::optional<OpenedBackend> llm;
  std::unique_ptr<ChatClient> client;
  std::optional<RunContext> context;
};

LoadedData load_data(const RunConfig& config) {
  return load_and_prepare(load_manifest(config.dataset), config.test_fraction);
}

std::unique_ptr<Session> open_session(const RunConfig& config) {
  auto s = std::make_unique<Session>();
  s->config = config;
  s->data = load_data(config);
  s->context.emplace(RunContext{s->config, s->data, {}, nullptr, {}, config.family});
  if (is_llm_method(config.method)) {
    s->context->task = task_spec_for(config, s->data.manifest);
    s->llm = open_backend(config);
    s->client = std::make_unique<ChatClient>(*s->llm->backend, s->llm->cache_dir, config.jobs);
    s->context->client = s->client.get();
    s->context->model_id = s->llm->model_id;
    s->context->family = s->llm->family;
  }
  return s;
}

Split split_for(const Session& s, std::uint64_t seed) {
  SplitSpec spec;
  spec.test_fraction = s.config.test_fraction;
  spec.seed = seed;
  return split(s.data.prepared, spec);
}

nlohmann::json provenance(const Session& s) {
  nlohmann::json doc = {{"library_version", std::string(library_version())},
                        {"config_hash", config_hash(s.config)},
                        {"config", to_json(s.config)},
                        {"seeds", s.config.seeds},
                        {"dataset", s.data.manifest.name}};
  if (s.client) {
    const auto usage = s.client->usage();
    doc["llm"] = {{"backend_id", s.llm->backend->id()},
                  {"model_id", s.llm->model_id},
                  {"requests", usage.requests},
                  {"cache_hits", usage.cache_hits},
                  {"backend_calls", s.llm->backend->calls()},
                  {"cache_dir", s.llm->cache_dir ? s.llm->cache_dir->string() : ""},
                  {"cache_keys", usage.cache_keys}};
  }
  return doc;
}

std::vector<std::string> names_of(std::span<const std::size_t> ids, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (auto i : ids) out.push_back(names.at(i));
  return out;
}

nlohmann::json selection_json(const SelectionResult& r, const PreparedDataset& p) {
  auto j = to_json(r);
  j["concepts"] = names_of(r.selected_concepts, p.concepts);
  j["columns"] = names_of(r.selected_columns, p.column_names);
  return j;
}

// Column selections reported with the concepts they touch, in pick order.
SelectionResult column_selection(const MethodOutput& m, const PreparedDataset& p, double fraction,
                                 const std::string& method, std::uint64_t seed) {
  SelectionResult r;
  std::vector<std::size_t> picked = m.column_order.empty()
                                        ? m.selector(fraction)
                                        : std::vector<std::size_t>(m.column_order.begin(),
                                                                   m.column_order.begin() +
                                                                       static_cast<std::ptrdiff_t>(selection_size(fraction, p.feature_count())));
  for (auto c : picked) {
    const auto concept_id = p.column_concept.at(c);
    if (std::find(r.selected_concepts.begin(), r.selected_concepts.end(), concept_id) ==
        r.selected_concepts.end())
      r.selected_concepts.push_back(concept_id);
  }
  std::sort(picked.begin(), picked.end());
  r.selected_columns = picked;
  r.fraction_requested = fraction;
  r.method = method;
  r.seed = seed;
  return r;
}

int cmd_select(const RunConfig& config, std::ostream& out) {
  auto s = open_session(config);
  const auto& p = s->data.prepared;
  const auto seed = config.seeds.front();
  const auto sp = split_for(*s, seed);
  MethodRunner runner(*s->context);
  const auto result = runner.run(sp, seed);
  const auto method = to_string(config.method);

  nlohmann::json doc = {{"dataset", s->data.manifest.name}, {"method", method}, {"seed", seed}};
  doc["selections"] = nlohmann::json::array();
  for (double f : config.fractions) {
    const auto r = result.ranking ? select_top_fraction(*result.ranking, p.groups, f, method, seed)
                                  : column_selection(result, p, f, method, seed);
    doc["selections"].push_back(selection_json(r, p));
  }
  if (result.importance) {
    doc["importance"] = to_json(*result.importance);
    write_json(config.output_dir / "scores.json", to_json(*result.importance));
  }
  if (result.ranking) {
    doc["ranking"] = to_json(*result.ranking);
    doc["ranking"]["concepts"] = names_of(result.ranking->order, p.concepts);
  }
  if (!result.column_order.empty()) doc["column_order"] = names_of(result.column_order, p.column_names);
  write_json(config.output_dir / "selection.json", doc);
  write_json(config.output_dir / "provenance.json", provenance(*s));

  if (result.importance) {
    for (std::size_t c = 0; c < p.concept_count(); ++c)
      out << fmt::format("{:>8.4f}  {}\n", result.importance->scores[c], p.concepts[c]);
  } else if (result.ranking) {
    for (std::size_t i = 0; i < result.ranking->order.size(); ++i)
      out << fmt::format("{:>3}. {}\n", i + 1, p.concepts[result.ranking->order[i]]);
  }
  out << "wrote " << (config.output_dir / "selection.json").string() << "\n";
  return 0;
}

int cmd_path(RunConfig config, std::ostream& out) {
  std::sort(config.fractions.begin(), config.fractions.end());
  config.fractions.erase(std::unique(config.fractions.begin(), config.fractions.end()),
                         config.fractions.end());
  auto s = open_session(config);
  const auto& p = s->data.prepared;
  const Trainer trainer(p.task);
  MethodRunner runner(*s->context);
  const auto method = to_string(config.method);

  std::vector<SelectionPath> paths;
  nlohmann::json areas = nlohmann::json::object();
  nlohmann::json rankings = nlohmann::json::object();
  for (auto seed : config.seeds) {
    const auto sp = split_for(*s, seed);
    const auto result = runner.run(sp, seed);
    auto path = selection_path(result.selector, p, sp, config.fractions, trainer);
    path.method = method;
    path.dataset = s->data.manifest.name;
    path.seed = seed;
    const auto stem = config.output_dir / fmt::format("path_seed{}", seed);
    write_json(stem.string() + ".json", to_json(path));
    write_text(stem.string() + ".csv", to_csv(path));
    if (result.ranking) rankings[std::to_string(seed)] = names_of(result.ranking->order, p.concepts);
    if (result.importance && seed == config.seeds.front())
      write_json(config.output_dir / "scores.json", to_json(*result.importance));
    if (path.points.size() >= 2) areas[std::to_string(seed)] = path_area(path);
    out << fmt::format("seed {}: {}\n", seed,
                       path.points.size() >= 2 ? fmt::format("area {:.4f}", path_area(path)) : "single point");
    paths.push_back(std::move(path));
  }
  const auto mean = mean_path(paths);
  write_json(config.output_dir / "mean_path.json", to_json(mean));
  write_text(config.output_dir / "mean_path.csv", to_csv(mean));

  nlohmann::json summary = {{"dataset", s->data.manifest.name},
                            {"method", method},
                            {"metric", mean.metric},
                            {"seeds", config.seeds},
                            {"areas", areas}};
  if (mean.points.size() >= 2) {
    double total = 0.0;
    for (const auto& [seed, a] : areas.items()) total += a.get<double>();
    summary["mean_area"] = total / static_cast<double>(areas.size());
    out << fmt::format("mean area over {} seeds: {:.4f}\n", areas.size(), summary["mean_area"].get<double>());
  }
  if (!rankings.empty()) summary["rankings"] = rankings;
  write_json(config.output_dir / "summary.json", summary);
  write_json(config.output_dir / "provenance.json", provenance(*s));
  return 0;
}

int cmd_correlate(const RunConfig& config, const fs::path& scores_path, std::ostream& out) {
  auto doc = read_json(scores_path);
  if (doc.contains("importance")) doc = doc["importance"];
  const auto scores = importance_from_json(doc);
  const auto data = load_data(config);
  const auto seed = config.seeds.front();
  SplitSpec spec;
  spec.test_fraction = config.test_fraction;
  spec.seed = seed;
  const auto sp = split(data.prepared, spec);
  const auto metrics = correlate_importance(scores, data, sp, seed, config.permutation_repeats);

  // Pairwise tau over LLM scores and every metric.
  std::vector<std::string> names = {"llm_score"};
  std::vector<std::vector<double>> columns = {scores.scores};
  nlohmann::json per_metric = nlohmann::json::object();
  for (const auto& m : metrics) {
    names.push_back(m.name);
    columns.push_back(m.values);
    per_metric[m.name] = {{"tau", m.tau}, {"values", m.values}};
    out << fmt::format("{:<14} tau = {:+.4f}\n", m.name, m.tau);
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& a : columns) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& b : columns) row.push_back(kendall_tau(a, b));
    matrix.push_back(row);
  }
  write_json(config.output_dir / "correlation.json",
             {{"dataset", data.manifest.name},
              {"seed", seed},
              {"concepts", data.prepared.concepts},
              {"llm_scores", scores.scores},
              {"metrics", per_metric},
              {"matrix", {{"names", names}, {"tau", matrix}}},
              {"library_version", std::string(library_version())},
              {"config_hash", config_hash(config)}});
  return 0;
}

int cmd_report(const RunConfig& config, const std::vector<fs::path>& inputs, std::ostream& out) {
  struct Run {
    std::string method;
    std::vector<double> areas;
    SelectionPath mean;
  };
  std::map<std::string, std::vector<Run>> by_dataset;
  std::map<std::string, std::string> metric_of;
  for (const auto& dir : inputs) {
    const auto summary = read_json(dir / "summary.json");
    Run run;
    run.method = summary.at("method").get<std::string>();
    const auto areas = summary.value("areas", nlohmann::json::object());
    for (const auto& [seed, a] : areas.items()) run.areas.push_back(a.get<double>());
    run.mean = path_from_json(read_json(dir / "mean_path.json"));
    const auto dataset = summary.at("dataset").get<std::string>();
    metric_of[dataset] = summary.value("metric", run.mean.metric);
    by_dataset[dataset].push_back(std::move(run));
  }

  std::string md = "# Feature selection report\n\n";
  md += fmt::format("Generated by llmfs {} from {} run(s).\n", library_version(), inputs.size());
  for (auto& [dataset, runs] : by_dataset) {
    const auto task = metric_of[dataset] == "MAE" ? TaskKind::regression : TaskKind::classification;
    std::optional<double> random_area;
    for (const auto& r : runs)
      if (r.method == "random" && !r.areas.empty())
        random_area = std::accumulate(r.areas.begin(), r.areas.end(), 0.0) / static_cast<double>(r.areas.size());
    md += fmt::format("\n## {} ({})\n\n", dataset, metric_of[dataset]);
    md += "| method | seeds | mean area | sd | vs random |\n|---|---|---|---|---|\n";
    for (const auto& r : runs) {
      if (r.areas.empty()) {
        md += fmt::format("| {} | 0 | n/a | n/a | n/a |\n", r.method);
        continue;
      }
      const double n = static_cast<double>(r.areas.size());
      const double mean = std::accumulate(r.areas.begin(), r.areas.end(), 0.0) / n;
      double var = 0.0;
      for (double a : r.areas) var += (a - mean) * (a - mean);
      const double sd = r.areas.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
      const std::string vs = random_area && r.method != "random"
                                 ? fmt::format("{:+.2f}%", pct_improvement(mean, *random_area, task))
                                 : "";
      md += fmt::format("| {} | {} | {:.4f} | {:.4f} | {} |\n", r.method, r.areas.size(), mean, sd, vs);
    }
    std::vector<SelectionPath> means;
    for (const auto& r : runs) means.push_back(r.mean);
    const auto svg_name = fmt::format("paths_{}.svg", dataset);
    write_text(config.output_dir / svg_name, render_paths_svg(means, dataset));
    md += fmt::format("\n![{} selection paths]({})\n", dataset, svg_name);
  }
  write_text(config.output_dir / "report.md", md);
  out << "wrote " << (config.output_dir / "report.md").string() << "\n";
  return 0;
}

std::pair<double, double> parse_score_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--score-range", "expected MIN:MAX");
  try {
    return {std::stod(text.substr(0, colon)), std::stod(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--score-range", "expected numbers in MIN:MAX");
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature selection with language models and data-driven baselines", "llmfs"};
  app.config_formatter(std::make_shared<JsonOrTomlConfig>());
  app.set_config("--config", "", "TOML or JSON file with option defaults; flags override it");
  app.set_version_flag("--version", std::string(library_version()));
  app.require_subcommand(1);

  RunConfig cfg;
  std::string method = "llm-score", variant = "default", init = "empty", family = "gpt";
  std::string score_range = "0:1", buffer = "auto", dataset, output_dir = "out";
  std::optional<double> temperature;
  int samples = 1;
  std::string cache_dir, prompts;

  app.add_option("--method", method, "Selection method")
      ->check(CLI::IsMember(method_names()))
      ->capture_default_str();
  app.add_option("--dataset", dataset, "Dataset manifest (JSON)");
  app.add_option("--fractions", cfg.fractions, "Comma-separated fractions of features to keep")
      ->delimiter(',');
  app.add_option("--prompt-variant", variant, "Prompt variant")
      ->check(CLI::IsMember({"default", "examples", "examples_cot", "context", "context_examples",
                             "context_examples_cot"}))
      ->capture_default_str();
  app.add_option("--temperature", temperature, "Sampling temperature");
  app.add_option("--samples", samples, "Samples per prompt (more than one averages)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--score-range", score_range, "Importance score range MIN:MAX")->capture_default_str();
  app.add_option("--buffer-size", buffer, "Dialogue turns kept by llm-seq (auto, all, or a count)")
      ->capture_default_str();
  app.add_option("--init", init, "Starting selection for llm-seq")
      ->check(CLI::IsMember({"empty", "top-llm-score", "top_llm_score"}))
      ->capture_default_str();
  app.add_option("--rank-requery", cfg.rank_requery, "Re-queries when a ranking leaves concepts out")
      ->check(CLI::Range(0, 2));
  app.add_option("--seeds", cfg.seeds, "Comma-separated seeds")->delimiter(',');
  app.add_option("--backend", cfg.backend, "scripted:PATH, openai:MODEL or config:PATH");
  app.add_option("--model", cfg.model, "Model id sent to the backend");
  app.add_option("--base-url", cfg.base_url, "Endpoint for openai: backends");
  app.add_option("--family", family, "Model family for output formatting")
      ->check(CLI::IsMember({"gpt", "llama"}));
  app.add_option("--prompts", prompts, "Task fixture file with few-shot examples");
  app.add_option("--cache-dir", cache_dir, "Response cache (default OUTPUT_DIR/cache)");
  app.add_option("--output-dir", output_dir, "Where results are written")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "Concurrent backend requests")->check(CLI::PositiveNumber);
  app.add_option("--test-fraction", cfg.test_fraction, "Held-out test share");
  app.add_option("--permutation-repeats", cfg.permutation_repeats, "Shuffles per feature");

  auto* select = app.add_subcommand("select", "Select concepts and write the selection")->fallthrough();
  auto* path = app.add_subcommand("path", "Compute selection paths over seeds")->fallthrough();
  auto* correlate = app.add_subcommand("correlate", "Rank-correlate LLM scores with importance metrics")
                        ->fallthrough();
  fs::path scores_path;
  correlate->add_option("--scores", scores_path, "scores.json or selection.json")->required();
  auto* report = app.add_subcommand("report", "Summarize path runs into markdown and SVG")->fallthrough();
  std::vector<fs::path> inputs;
  report->add_option("--inputs", inputs, "Output directories of path runs")->required()->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    cfg.method = parse_method(method);
    cfg.prompt_variant = parse_prompt_variant(variant);
    cfg.init = parse_seq_init(init == "top-llm-score" ? "top_llm_score" : init);
    cfg.family = parse_model_family(family);
    std::tie(cfg.score_min, cfg.score_max) = parse_score_range(score_range);
    if (buffer == "auto") {
      cfg.buffer_size.reset();
    } else if (buffer == "all" || buffer == "inf") {
      cfg.buffer_size = std::numeric_limits<int>::max();
    } else {
      try {
        cfg.buffer_size = std::stoi(buffer);
      } catch (const std::exception&) {
        throw CLI::ValidationError("--buffer-size", "expected auto, all or a count");
      }
    }
    cfg.decoding.n_samples = samples;
    cfg.decoding.mode = samples > 1 || temperature.value_or(0.0) > 0.0 ? DecodingMode::self_consistency
                                                                       : DecodingMode::greedy;
    cfg.decoding.temperature =
        temperature.value_or(cfg.decoding.mode == DecodingMode::greedy ? 0.0 : 0.5);
    cfg.dataset = dataset;
    cfg.output_dir = output_dir;
    if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
    if (!prompts.empty()) cfg.prompts = prompts;
    if (!report->parsed()) cfg.validate();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (select->parsed()) return cmd_select(cfg, out);
    if (path->parsed()) return cmd_path(cfg, out);
    if (correlate->parsed()) return cmd_correlate(cfg, scores_path, out);
    return cmd_report(cfg, inputs, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace llmfs
