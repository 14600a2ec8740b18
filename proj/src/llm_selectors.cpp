#include "llmfs/llm_selectors.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "llmfs/baselines.hpp"
#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/response_parsing.hpp"

namespace llmfs {

namespace {

std::vector<std::size_t> stable_order_by(const std::vector<double>& key, bool descending) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? key[a] > key[b] : key[a] < key[b];
  });
  return order;
}

SelectionResult take_prefix(const std::vector<std::size_t>& order,
                            const std::vector<std::vector<std::size_t>>& groups, double fraction,
                            std::string method, std::uint64_t seed) {
  if (order.size() != groups.size())
    throw Error(fmt::format("ranking covers {} concepts but there are {} groups", order.size(),
                            groups.size()));
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(fmt::format("fraction {} outside (0,1]", fraction));
  SelectionResult result;
  const auto k = selection_size(fraction, order.size());
  result.selected_concepts.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  result.selected_columns = expand_columns(result.selected_concepts, groups);
  result.fraction_requested = fraction;
  result.method = std::move(method);
  result.seed = seed;
  return result;
}

}  // namespace

nlohmann::json to_json(const ImportanceVector& importance) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < importance.size(); ++i) {
    items.push_back({{"concept", importance.concepts.at(i)},
                     {"score", importance.scores[i]},
                     {"n_samples_used", importance.n_samples_used.at(i)},
                     {"reasonings", importance.reasonings.at(i)}});
  }
  return {{"scores", items}};
}

ImportanceVector importance_from_json(const nlohmann::json& doc) {
  ImportanceVector out;
  for (const auto& item : doc.at("scores")) {
    out.concepts.push_back(item.at("concept").get<std::string>());
    out.scores.push_back(item.at("score").get<double>());
    out.n_samples_used.push_back(item.value("n_samples_used", 1));
    out.reasonings.push_back(item.value("reasonings", std::vector<std::string>{}));
  }
  return out;
}

std::string to_string(RankingSource source) {
  switch (source) {
    case RankingSource::llm_rank: return "llm_rank";
    case RankingSource::derived_from_scores: return "derived_from_scores";
    case RankingSource::llm_seq: return "llm_seq";
    case RankingSource::baseline: return "baseline";
  }
  return "unknown";
}

RankingSource parse_ranking_source(std::string_view text) {
  for (auto s : {RankingSource::llm_rank, RankingSource::derived_from_scores,
                 RankingSource::llm_seq, RankingSource::baseline}) {
    if (to_string(s) == text) return s;
  }
  throw Error(fmt::format("unknown ranking source '{}'", text));
}

void Ranking::validate(std::size_t count) const {
  if (order.size() != count)
    throw Error(fmt::format("ranking has {} entries, expected {}", order.size(), count));
  std::vector<bool> seen(count, false);
  for (auto c : order) {
    if (c >= count || seen[c]) throw Error("ranking is not a permutation");
    seen[c] = true;
  }
}

nlohmann::json to_json(const Ranking& ranking) {
  return {{"order", ranking.order}, {"source", to_string(ranking.source)}};
}

Ranking ranking_from_json(const nlohmann::json& doc) {
  Ranking r;
  r.order = doc.at("order").get<std::vector<std::size_t>>();
  r.source = parse_ranking_source(doc.value("source", std::string("llm_rank")));
  r.validate(r.order.size());
  return r;
}

nlohmann::json to_json(const SelectionResult& result) {
  return {{"selected_concepts", result.selected_concepts},
          {"selected_columns", result.selected_columns},
          {"fraction_requested", result.fraction_requested},
          {"method", result.method},
          {"seed", result.seed}};
}

ImportanceVector llm_score(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                           std::span<const std::string> concepts, PromptVariant variant,
                           const DecodingConfig& decoding, ModelFamily family) {
  if (concepts.empty()) throw Error("llm_score needs at least one concept");
  decoding.validate();
  task.validate();

  std::vector<ChatRequest> requests;
  requests.reserve(concepts.size() * static_cast<std::size_t>(decoding.n_samples));
  for (const auto& name : concepts) {
    const auto bundle = build_score_prompt(task, name, variant, family);
    for (int s = 0; s < decoding.n_samples; ++s)
      requests.push_back(make_request(bundle, std::string(model_id), decoding.temperature, s));
  }
  const auto replies = client.try_chat_all(requests);

  ImportanceVector out;
  out.concepts.assign(concepts.begin(), concepts.end());
  out.scores.assign(concepts.size(), 0.0);
  out.n_samples_used.assign(concepts.size(), 0);
  out.reasonings.assign(concepts.size(), {});
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    double sum = 0.0;
    std::string last_error;
    for (int s = 0; s < decoding.n_samples; ++s) {
      const auto& reply = replies[c * static_cast<std::size_t>(decoding.n_samples) +
                                  static_cast<std::size_t>(s)];
      try {
        if (const auto* e = std::get_if<std::exception_ptr>(&reply)) std::rethrow_exception(*e);
        const auto parsed =
            parse_score(std::get<ChatResponse>(reply).text, task.min_score, task.max_score);
        sum += parsed.score;
        ++out.n_samples_used[c];
        if (parsed.reasoning) out.reasonings[c].push_back(*parsed.reasoning);
      } catch (const Error& e) {
        last_error = e.what();
        warn(fmt::format("score sample {} for '{}' dropped: {}", s, concepts[c], last_error));
      }
    }
    if (out.n_samples_used[c] == 0)
      throw ParseError(fmt::format("no usable score for '{}': {}", concepts[c], last_error));
    out.scores[c] = sum / out.n_samples_used[c];
  }
  return out;
}

Ranking llm_rank(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                 std::span<const std::string> concepts, const DecodingConfig& decoding,
                 const RankOptions& options) {
  if (concepts.size() < 2) throw Error("llm_rank needs at least two concepts");
  if (options.requery_missing < 0 || options.requery_missing > 2)
    throw Error("requery_missing must be between 0 and 2");
  decoding.validate();

  const auto bundle = build_rank_prompt(task, concepts);
  std::vector<ChatRequest> requests;
  for (int s = 0; s < decoding.n_samples; ++s)
    requests.push_back(make_request(bundle, std::string(model_id), decoding.temperature, s));
  const auto replies = client.try_chat_all(requests);

  std::vector<double> position_sum(concepts.size(), 0.0);
  int usable = 0;
  std::string last_error;
  for (int s = 0; s < decoding.n_samples; ++s) {
    const auto& reply = replies[static_cast<std::size_t>(s)];
    try {
      if (const auto* e = std::get_if<std::exception_ptr>(&reply)) std::rethrow_exception(*e);
      std::string text = std::get<ChatResponse>(reply).text;
      auto parsed = parse_ranking(text, concepts);
      // Re-ask with the previous answer visible; keep the most complete reply.
      PromptBundle retry = bundle;
      for (int r = 0; r < options.requery_missing && parsed.missing > 0; ++r) {
        std::vector<std::string> left_out;
        for (std::size_t i = parsed.listed; i < parsed.order.size(); ++i)
          left_out.push_back(concepts[parsed.order[i]]);
        retry.history.push_back({retry.user, text});
        retry.user = fmt::format("Your ranking left out: \"{}\". {}", fmt::join(left_out, ", "),
                                 bundle.user);
        text = client.chat(make_request(retry, std::string(model_id), decoding.temperature, s)).text;
        try {
          auto again = parse_ranking(text, concepts);
          if (again.missing < parsed.missing) parsed = std::move(again);
        } catch (const ParseError& e) {
          warn(fmt::format("rank re-query {} unparseable: {}", r + 1, e.what()));
        }
      }
      for (std::size_t pos = 0; pos < parsed.order.size(); ++pos)
        position_sum[parsed.order[pos]] += static_cast<double>(pos + 1);
      ++usable;
    } catch (const Error& e) {
      last_error = e.what();
      warn(fmt::format("rank sample {} dropped: {}", s, last_error));
    }
  }
  if (usable == 0) throw ParseError("no usable ranking: " + last_error);
  return {stable_order_by(position_sum, false), RankingSource::llm_rank};
}

std::string to_string(SeqInit init) {
  return init == SeqInit::empty ? "empty" : "top_llm_score";
}

SeqInit parse_seq_init(std::string_view text) {
  if (text == "empty") return SeqInit::empty;
  if (text == "top_llm_score") return SeqInit::top_llm_score;
  throw Error(fmt::format("unknown seq init '{}'", text));
}

std::optional<int> default_seq_buffer(std::size_t concept_count) {
  if (concept_count <= 30) return std::nullopt;
  return 1;
}

Ranking llm_seq(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                const PreparedDataset& prepared, const Split& split, const Trainer& trainer,
                const SeqOptions& options) {
  const auto D = prepared.concept_count();
  if (options.k < 1 || options.k > D)
    throw Error(fmt::format("llm_seq needs 1 <= k <= {}, got {}", D, options.k));
  if (options.buffer_size && *options.buffer_size < 0) throw Error("buffer_size must be >= 0");

  std::vector<std::size_t> selected;
  std::vector<bool> taken(D, false);
  if (options.init == SeqInit::top_llm_score) {
    if (!options.init_scores) throw Error("top_llm_score init needs importance scores");
    if (options.init_scores->size() != D) throw Error("importance scores do not match dataset");
    const auto first = top_concept(*options.init_scores);
    selected.push_back(first);
    taken[first] = true;
  }

  const auto metric = metric_name(prepared.task);
  const Eigen::VectorXd y_train = take_rows(prepared.y, split.train);
  const Eigen::MatrixXd X_train = take_rows(prepared.X, split.train);
  std::vector<DialogueTurn> history;
  const std::string model(model_id);

  while (selected.size() < options.k) {
    std::optional<double> cv;
    if (!selected.empty()) {
      const auto cols = expand_columns(selected, prepared.groups);
      cv = trainer.tune(take_columns(X_train, cols), y_train, split.folds).best_metric;
    }
    std::vector<std::string> selected_names, candidates;
    std::vector<std::size_t> candidate_ids;
    for (auto c : selected) selected_names.push_back(prepared.concepts[c]);
    for (std::size_t c = 0; c < D; ++c) {
      if (!taken[c]) {
        candidates.push_back(prepared.concepts[c]);
        candidate_ids.push_back(c);
      }
    }

    const auto bundle = build_seq_prompt(task, selected_names, cv, metric, candidates, history,
                                         options.buffer_size);
    const auto turn = static_cast<int>(selected.size());
    std::string reply = client.chat(make_request(bundle, model, options.temperature, 0)).text;

    // Returns the chosen concept or a reminder explaining why the reply was refused.
    auto interpret = [&](const std::string& text) -> std::pair<std::optional<std::size_t>, std::string> {
      std::string name;
      try {
        name = extract_feature_name(text);
        const auto m = match_concept(name, prepared.concepts);
        if (!taken[m.concept_index]) return {m.concept_index, {}};
        return {std::nullopt, fmt::format("\"{}\" has already been selected.", prepared.concepts[m.concept_index])};
      } catch (const ParseError&) {
        return {std::nullopt, fmt::format("\"{}\" is not one of the remaining features.", name)};
      }
    };

    auto [choice, reminder] = interpret(reply);
    if (!choice) {
      PromptBundle retry = bundle;
      retry.history.push_back({bundle.user, reply});
      retry.user = fmt::format(
          "{} What feature should I add next from: {}? Give me just the name of the feature to "
          "add (no other text).",
          reminder, fmt::join(candidates, ", "));
      reply = client.chat(make_request(retry, model, options.temperature, 0)).text;
      std::tie(choice, reminder) = interpret(reply);
      if (!choice) {
        choice = candidate_ids.front();
        warn(fmt::format("turn {}: no usable feature after re-query ({}); taking '{}'", turn + 1,
                         reminder, prepared.concepts[*choice]));
        reply = prepared.concepts[*choice];
      }
    }
    history.push_back({bundle.user, reply});
    selected.push_back(*choice);
    taken[*choice] = true;
  }

  Ranking ranking{selected, RankingSource::llm_seq};
  for (std::size_t c = 0; c < D; ++c)
    if (!taken[c]) ranking.order.push_back(c);
  return ranking;
}

Ranking ranking_from_scores(const ImportanceVector& importance) {
  return {stable_order_by(importance.scores, true), RankingSource::derived_from_scores};
}

std::size_t top_concept(const ImportanceVector& importance) {
  if (importance.scores.empty()) throw Error("no scores");
  return static_cast<std::size_t>(
      std::max_element(importance.scores.begin(), importance.scores.end(),
                       [](double a, double b) { return a < b; }) -
      importance.scores.begin());
}

std::vector<std::size_t> expand_columns(std::span<const std::size_t> concepts,
                                        const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<std::size_t> cols;
  for (auto c : concepts) {
    if (c >= groups.size()) throw Error(fmt::format("concept {} out of range", c));
    cols.insert(cols.end(), groups[c].begin(), groups[c].end());
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

SelectionResult select_top_fraction(const Ranking& ranking,
                                    const std::vector<std::vector<std::size_t>>& groups,
                                    double fraction, std::string method, std::uint64_t seed) {
  ranking.validate(groups.size());
  return take_prefix(ranking.order, groups, fraction,
                     method.empty() ? to_string(ranking.source) : std::move(method), seed);
}

SelectionResult select_top_fraction(const ImportanceVector& importance,
                                    const std::vector<std::vector<std::size_t>>& groups,
                                    double fraction, std::string method, std::uint64_t seed) {
  return take_prefix(ranking_from_scores(importance).order, groups, fraction,
                     method.empty() ? "llm_score" : std::move(method), seed);
}

SelectionResult random_select(const std::vector<std::vector<std::size_t>>& groups,
                              double fraction, std::uint64_t seed) {
  return take_prefix(random_order(groups.size(), seed), groups, fraction, "random", seed);
}

ColumnSelector ranking_selector(Ranking ranking, std::vector<std::vector<std::size_t>> groups) {
  ranking.validate(groups.size());
  return [ranking = std::move(ranking), groups = std::move(groups)](double fraction) {
    return select_top_fraction(ranking, groups, fraction).selected_columns;
  };
}

}  // namespace llmfs
