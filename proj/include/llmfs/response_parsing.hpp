#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmfs {

struct ParsedScore {
  double score = 0.0;
  std::optional<std::string> reasoning;
};

enum class MatchKind { exact, normalized, fuzzy };

std::string to_string(MatchKind kind);

struct ConceptMatch {
  std::size_t concept_index = 0;
  std::string matched_text;
  MatchKind kind = MatchKind::exact;
};

struct ParsedRanking {
  std::vector<std::size_t> order;  ///< permutation of all concepts
  std::size_t listed = 0;          ///< concepts taken from the reply
  std::size_t missing = 0;         ///< concepts appended by the completion rule
};

inline constexpr double kDefaultFuzzyThreshold = 0.85;

/// First balanced {...} in `text`, string literals respected. Markdown
/// fences around it are ignored. Throws ParseError when none exists.
std::string extract_json_block(std::string_view text);

/// Throws ParseError for a missing or non-numeric score, or one outside
/// [min_score, max_score] by more than 1e-9 (smaller excursions are clamped).
ParsedScore parse_score(std::string_view text, double min_score, double max_score);

/// Lower-cased, trimmed, unquoted, whitespace-collapsed, with any trailing
/// parenthetical removed.
std::string normalize_concept_text(std::string_view text);

std::size_t levenshtein(std::string_view a, std::string_view b);

/// 1 - distance / max(length), 1 for two empty strings.
double name_similarity(std::string_view a, std::string_view b);

/// Exact, then normalized, then fuzzy match; ties go to the lowest index.
/// Throws UnmatchedConceptError when nothing reaches `threshold`.
ConceptMatch match_concept(std::string_view text, std::span<const std::string> concepts,
                           double threshold = kDefaultFuzzyThreshold);

/// Numbered-list reply ("1. a" per line, or inline "1. a  2. b"). Unknown
/// items and repeats are skipped with a warning; concepts never mentioned
/// are appended in dataset order. Throws ParseError if fewer than two
/// items match.
ParsedRanking parse_ranking(std::string_view text, std::span<const std::string> concepts,
                            double threshold = kDefaultFuzzyThreshold);

/// The feature name in a sequential-selection reply: first non-empty line,
/// with list numbering and decoration removed.
std::string extract_feature_name(std::string_view text);

}  // namespace llmfs
