#include "llmfs/response_parsing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"

namespace llmfs {

namespace {

// End of the balanced object starting at `open`, or npos.
std::size_t object_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

std::vector<std::string> balanced_objects(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = text.find('{');
  while (pos != std::string_view::npos) {
    const std::size_t end = object_end(text, pos);
    if (end == std::string_view::npos) {
      pos = text.find('{', pos + 1);
      continue;
    }
    out.emplace_back(text.substr(pos, end - pos + 1));
    pos = text.find('{', end + 1);
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Quotes, backticks and markdown emphasis around a name.
std::string_view strip_decoration(std::string_view s) {
  constexpr std::string_view kWrap = "\"'`*_";
  s = trim(s);
  while (s.size() >= 2 && kWrap.find(s.front()) != std::string_view::npos && s.back() == s.front()) {
    s = trim(s.substr(1, s.size() - 2));
  }
  while (!s.empty() && (s.front() == '*' || s.front() == '`')) s = trim(s.substr(1));
  while (!s.empty() && (s.back() == '*' || s.back() == '`')) s = trim(s.substr(0, s.size() - 1));
  return s;
}

std::string_view strip_trailing_parenthetical(std::string_view s) {
  s = trim(s);
  if (s.empty() || s.back() != ')') return s;
  int depth = 0;
  for (std::size_t i = s.size(); i-- > 0;) {
    if (s[i] == ')') ++depth;
    else if (s[i] == '(' && --depth == 0) {
      const auto head = trim(s.substr(0, i));
      return head.empty() ? s : head;
    }
  }
  return s;
}

// Position of "<n>." at or after `from` that starts a token, or npos.
std::size_t find_marker(std::string_view text, int n, std::size_t from) {
  const std::string marker = fmt::format("{}.", n);
  for (std::size_t at = text.find(marker, from); at != std::string_view::npos;
       at = text.find(marker, at + 1)) {
    if (at == 0 || std::isspace(static_cast<unsigned char>(text[at - 1]))) return at;
  }
  return std::string_view::npos;
}

std::vector<std::string> inline_items(std::string_view text) {
  std::vector<std::string> out;
  std::size_t at = find_marker(text, 1, 0);
  if (at == std::string_view::npos) return out;
  std::size_t from = at + 2;
  for (int n = 2;; ++n) {
    const std::size_t next = find_marker(text, n, from);
    const auto piece = next == std::string_view::npos ? text.substr(from) : text.substr(from, next - from);
    out.emplace_back(trim(piece));
    if (next == std::string_view::npos) break;
    from = next + fmt::format("{}.", n).size();
  }
  return out;
}

}  // namespace

std::string to_string(MatchKind kind) {
  switch (kind) {
    case MatchKind::exact: return "exact";
    case MatchKind::normalized: return "normalized";
    case MatchKind::fuzzy: return "fuzzy";
  }
  return "exact";
}

std::string extract_json_block(std::string_view text) {
  const std::size_t open = text.find('{');
  std::size_t pos = open;
  while (pos != std::string_view::npos) {
    const std::size_t end = object_end(text, pos);
    if (end != std::string_view::npos) return std::string(text.substr(pos, end - pos + 1));
    pos = text.find('{', pos + 1);
  }
  throw ParseError("no JSON object found in reply");
}

ParsedScore parse_score(std::string_view text, double min_score, double max_score) {
  const auto blocks = balanced_objects(text);
  if (blocks.empty()) throw ParseError("no JSON object found in reply");
  std::optional<nlohmann::json> object;
  for (const auto& b : blocks) {
    auto doc = nlohmann::json::parse(b, nullptr, false);
    if (!doc.is_discarded() && doc.is_object()) {
      object = std::move(doc);
      break;
    }
  }
  if (!object) throw ParseError("reply contains braces but no valid JSON object");
  if (!object->contains("score")) throw ParseError("reply object has no \"score\" key");
  const auto& value = (*object)["score"];
  if (!value.is_number()) throw ParseError(fmt::format("score is not a number: {}", value.dump()));
  ParsedScore out;
  out.score = value.get<double>();
  if (!std::isfinite(out.score)) throw ParseError("score is not finite");
  constexpr double kSlack = 1e-9;
  if (out.score < min_score - kSlack || out.score > max_score + kSlack)
    throw ParseError(fmt::format("score {} outside [{}, {}]", out.score, min_score, max_score));
  out.score = std::clamp(out.score, min_score, max_score);
  if (object->contains("reasoning") && (*object)["reasoning"].is_string())
    out.reasoning = (*object)["reasoning"].get<std::string>();
  return out;
}

namespace {

std::string fold_text(std::string_view text, bool drop_parenthetical) {
  std::string_view s = strip_decoration(text);
  if (!s.empty() && s.back() == '.') s = trim(s.substr(0, s.size() - 1));
  s = strip_decoration(s);
  if (drop_parenthetical) s = strip_trailing_parenthetical(s);
  std::string out;
  bool space = false;
  for (const char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

std::string normalize_concept_text(std::string_view text) { return fold_text(text, true); }

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double name_similarity(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

ConceptMatch match_concept(std::string_view text, std::span<const std::string> concepts,
                           double threshold) {
  if (concepts.empty()) throw ParseError("no concepts to match against");
  for (std::size_t i = 0; i < concepts.size(); ++i)
    if (concepts[i] == text) return {i, std::string(text), MatchKind::exact};

  // Folding without dropping a trailing parenthetical first, so that
  // "Income (USD)" and "Income (EUR)" stay distinct.
  for (const bool drop : {false, true}) {
    const std::string wanted = fold_text(text, drop);
    if (wanted.empty()) continue;
    for (std::size_t i = 0; i < concepts.size(); ++i)
      if (fold_text(concepts[i], drop) == wanted) return {i, std::string(text), MatchKind::normalized};
  }

  const std::string wanted_full = fold_text(text, false), wanted_short = fold_text(text, true);
  double best = -1.0;
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const double sim = std::max(name_similarity(wanted_full, fold_text(concepts[i], false)),
                                name_similarity(wanted_short, fold_text(concepts[i], true)));
    if (sim > best) {
      best = sim;
      best_index = i;
    }
  }
  if (best >= threshold && !wanted_short.empty())
    return {best_index, std::string(text), MatchKind::fuzzy};
  throw UnmatchedConceptError(std::string(text));
}

ParsedRanking parse_ranking(std::string_view text, std::span<const std::string> concepts,
                            double threshold) {
  if (concepts.size() < 2) throw ParseError("ranking needs at least two concepts");
  static const std::regex line_item(R"(^\s*\d+[.)]\s*(.+)$)");
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    std::smatch m;
    if (std::regex_match(line, m, line_item)) items.push_back(m[1].str());
    start = end + 1;
  }
  // Inline form: "1. foo  2. bar  3. baz" on one line.
  if (items.size() < 2) {
    auto inline_form = inline_items(text);
    if (inline_form.size() > items.size()) items = std::move(inline_form);
  }

  ParsedRanking out;
  std::vector<bool> seen(concepts.size(), false);
  std::size_t unknown = 0, repeats = 0;
  for (const auto& item : items) {
    try {
      const auto m = match_concept(item, concepts, threshold);
      if (seen[m.concept_index]) {
        ++repeats;
        continue;
      }
      seen[m.concept_index] = true;
      out.order.push_back(m.concept_index);
    } catch (const UnmatchedConceptError&) {
      ++unknown;
    }
  }
  if (out.order.size() < 2)
    throw ParseError(fmt::format("ranking reply yielded {} usable items", out.order.size()));
  out.listed = out.order.size();
  for (std::size_t i = 0; i < concepts.size(); ++i)
    if (!seen[i]) out.order.push_back(i);
  out.missing = concepts.size() - out.listed;
  if (unknown) warn(fmt::format("ranking: skipped {} item(s) matching no concept", unknown));
  if (repeats) warn(fmt::format("ranking: ignored {} repeated item(s)", repeats));
  if (out.missing)
    warn(fmt::format("ranking omitted {} concept(s); appended in dataset order", out.missing));
  return out;
}

std::string extract_feature_name(std::string_view text) {
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(start, end - start));
    if (!line.empty()) {
      static const std::regex numbered(R"(^\s*(?:\d+[.)]|[-*])\s+(.+)$)");
      std::string l(line);
      std::smatch m;
      if (std::regex_match(l, m, numbered)) l = m[1].str();
      return std::string(strip_decoration(l));
    }
    start = end + 1;
  }
  throw ParseError("empty reply where a feature name was expected");
}

}  // namespace llmfs
