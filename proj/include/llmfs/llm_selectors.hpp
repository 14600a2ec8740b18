#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmfs/dataset.hpp"
#include "llmfs/llm_backend.hpp"
#include "llmfs/metrics.hpp"
#include "llmfs/models.hpp"
#include "llmfs/prompting.hpp"

namespace llmfs {

/// Per-concept importance scores, aligned with `concepts`.
struct ImportanceVector {
  std::vector<std::string> concepts;
  std::vector<double> scores;
  std::vector<int> n_samples_used;
  std::vector<std::vector<std::string>> reasonings;

  std::size_t size() const { return scores.size(); }
};

nlohmann::json to_json(const ImportanceVector& importance);
ImportanceVector importance_from_json(const nlohmann::json& doc);

enum class RankingSource { llm_rank, derived_from_scores, llm_seq, baseline };

std::string to_string(RankingSource source);
RankingSource parse_ranking_source(std::string_view text);

struct Ranking {
  std::vector<std::size_t> order;  ///< concept indices, most important first
  RankingSource source = RankingSource::llm_rank;

  /// Throws Error unless `order` is a permutation of 0..count-1.
  void validate(std::size_t count) const;
};

nlohmann::json to_json(const Ranking& ranking);
Ranking ranking_from_json(const nlohmann::json& doc);

struct SelectionResult {
  std::vector<std::size_t> selected_concepts;  ///< in selection order
  std::vector<std::size_t> selected_columns;   ///< ascending
  double fraction_requested = 0.0;
  std::string method;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const SelectionResult& result);

/// Issues `decoding.n_samples` requests per concept and averages the parsed
/// scores. Samples that fail to parse are dropped with a warning; a concept
/// with no usable sample is an error.
ImportanceVector llm_score(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                           std::span<const std::string> concepts, PromptVariant variant,
                           const DecodingConfig& decoding, ModelFamily family = ModelFamily::gpt);

struct RankOptions {
  /// Re-queries (0..2) when the reply leaves concepts out, before the
  /// completion rule fills in the rest.
  int requery_missing = 0;
};

/// One rank prompt per sample; several samples are combined by mean
/// position with ties going to the earlier concept.
Ranking llm_rank(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                 std::span<const std::string> concepts, const DecodingConfig& decoding,
                 const RankOptions& options = {});

enum class SeqInit { empty, top_llm_score };

std::string to_string(SeqInit init);
SeqInit parse_seq_init(std::string_view text);

struct SeqOptions {
  std::size_t k = 1;
  /// Prior turns kept in the dialogue; nullopt keeps all.
  std::optional<int> buffer_size;
  SeqInit init = SeqInit::empty;
  /// Needed for SeqInit::top_llm_score.
  const ImportanceVector* init_scores = nullptr;
  double temperature = 0.0;
};

/// Unbounded history for up to 30 concepts, otherwise the last turn only.
std::optional<int> default_seq_buffer(std::size_t concept_count);

/// Adds one concept per turn until `options.k` are selected, feeding back
/// the cross-validated metric of the current selection on the training rows.
/// The remaining concepts follow in original order.
Ranking llm_seq(ChatClient& client, std::string_view model_id, const TaskSpec& task,
                const PreparedDataset& prepared, const Split& split, const Trainer& trainer,
                const SeqOptions& options);

/// Descending score, ties to the earlier concept.
Ranking ranking_from_scores(const ImportanceVector& importance);

/// Index of the highest score, ties to the earlier concept.
std::size_t top_concept(const ImportanceVector& importance);

/// Union of the groups of `concepts`, ascending.
std::vector<std::size_t> expand_columns(std::span<const std::size_t> concepts,
                                        const std::vector<std::vector<std::size_t>>& groups);

/// Takes the first selection_size(fraction, D) concepts of the ranking.
SelectionResult select_top_fraction(const Ranking& ranking,
                                    const std::vector<std::vector<std::size_t>>& groups,
                                    double fraction, std::string method = {},
                                    std::uint64_t seed = 0);
SelectionResult select_top_fraction(const ImportanceVector& importance,
                                    const std::vector<std::vector<std::size_t>>& groups,
                                    double fraction, std::string method = {},
                                    std::uint64_t seed = 0);

SelectionResult random_select(const std::vector<std::vector<std::size_t>>& groups,
                              double fraction, std::uint64_t seed);

/// Column selector for selection_path backed by a concept ranking.
ColumnSelector ranking_selector(Ranking ranking, std::vector<std::vector<std::size_t>> groups);

}  // namespace llmfs
