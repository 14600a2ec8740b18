#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"
#include "llmfs/prompting.hpp"
#include "llmfs/random.hpp"
#include "llmfs/response_parsing.hpp"
#include "oracles.hpp"

using namespace llmfs;

namespace {

struct WarningCapture {
  std::vector<std::string> seen;
  WarningSink old;
  WarningCapture() : old(set_warning_sink([this](std::string_view w) { seen.emplace_back(w); })) {}
  ~WarningCapture() { set_warning_sink(old); }
};

}  // namespace

TEST(ExtractJson, FencesProseAndAbsence) {
  EXPECT_EQ(extract_json_block("```json\n{\"score\": 0.7}\n```"), "{\"score\": 0.7}");
  EXPECT_EQ(extract_json_block("Sure! {\"a\": {\"b\": 1}} and {\"c\": 2} done"),
            "{\"a\": {\"b\": 1}}");
  EXPECT_EQ(extract_json_block(R"({"reasoning": "a } inside \" quote", "score": 1})"),
            R"({"reasoning": "a } inside \" quote", "score": 1})");
  EXPECT_THROW(extract_json_block("no braces here"), ParseError);
  EXPECT_THROW(extract_json_block("{ unterminated"), ParseError);
}

TEST(ParseScore, PaperReplies) {
  const auto s = parse_score(
      "```json\n{\n    \"reasoning\": \"The number of times a woman has been pregnant can be "
      "relevant to diabetes risk.\",\n    \"score\": 0.7\n}\n```",
      0, 1);
  EXPECT_EQ(s.score, 0.7);
  EXPECT_TRUE(s.reasoning.has_value());
  EXPECT_EQ(parse_score(R"({"reasoning": "Thus, the score is 0.9.", "score": 0.9})", 0, 1).score, 0.9);
  // Score before reasoning is fine as well.
  EXPECT_EQ(parse_score(R"({"score": 0.25, "reasoning": "r"})", 0, 1).reasoning.value(), "r");
}

TEST(ParseScore, RangeAndErrors) {
  EXPECT_THROW(parse_score(R"({"score": 1.5})", 0, 1), ParseError);
  EXPECT_EQ(parse_score(R"({"score": 1.0000000001})", 0, 1).score, 1.0);
  EXPECT_EQ(parse_score(R"({"score": -1e-10})", 0, 1).score, 0.0);
  EXPECT_EQ(parse_score(R"({"score": 17})", 8, 24).score, 17.0);
  EXPECT_THROW(parse_score(R"({"reasoning": "x"})", 0, 1), ParseError);
  EXPECT_THROW(parse_score(R"({"score": "high"})", 0, 1), ParseError);
  EXPECT_THROW(parse_score("I think 0.5", 0, 1), ParseError);
  // First block that parses is used.
  EXPECT_EQ(parse_score("{not json} then {\"score\": 0.3}", 0, 1).score, 0.3);
}

TEST(Levenshtein, MatchesRecursiveOracle) {
  Rng rng(8);
  const std::string alphabet = "abc ";
  for (int i = 0; i < 300; ++i) {
    std::string a, b;
    const auto la = rng.uniform_index(8), lb = rng.uniform_index(8);
    for (std::size_t k = 0; k < la; ++k) a += alphabet[rng.uniform_index(4)];
    for (std::size_t k = 0; k < lb; ++k) b += alphabet[rng.uniform_index(4)];
    EXPECT_EQ(levenshtein(a, b), oracle::levenshtein(a, b)) << a << "|" << b;
  }
  EXPECT_EQ(levenshtein("Glucse", "Glucose"), 1u);
}

TEST(MatchConcept, Kinds) {
  const std::vector<std::string> concepts = {
      "blood pressure", "Installment rate in percentage of disposable income", "Glucose",
      "Diastolic blood pressure (mm Hg)"};
  auto m = match_concept("Blood Pressure ", concepts);
  EXPECT_EQ(m.concept_index, 0u);
  EXPECT_EQ(m.kind, MatchKind::normalized);
  m = match_concept("Installment rate in percentage of disposable income", concepts);
  EXPECT_EQ(m.concept_index, 1u);
  EXPECT_EQ(m.kind, MatchKind::exact);
  m = match_concept("Glucse", concepts);
  EXPECT_EQ(m.concept_index, 2u);
  EXPECT_EQ(m.kind, MatchKind::fuzzy);
  EXPECT_EQ(match_concept("\"Diastolic  blood pressure\"", concepts).concept_index, 3u);
  EXPECT_EQ(match_concept("**Glucose**", concepts).kind, MatchKind::normalized);
  try {
    match_concept("Shoe size", concepts);
    FAIL();
  } catch (const UnmatchedConceptError& e) {
    EXPECT_EQ(e.text(), "Shoe size");
  }
  EXPECT_THROW(match_concept("x", std::vector<std::string>{}), ParseError);
}

TEST(MatchConcept, FuzzyThresholdBoundary) {
  // similarity 1 - 1/7 = 0.857 passes, 1 - 2/7 = 0.714 fails.
  EXPECT_NEAR(name_similarity("glucse", "glucose"), 6.0 / 7.0, 1e-15);
  const std::vector<std::string> concepts = {"Glucose"};
  EXPECT_NO_THROW(match_concept("Glucse", concepts));
  EXPECT_THROW(match_concept("Glcse", concepts), UnmatchedConceptError);
}

TEST(MatchConcept, ParentheticalDoesNotMergeDistinctNames) {
  const std::vector<std::string> concepts = {"Income (USD)", "Income (EUR)"};
  EXPECT_EQ(match_concept("income (eur) ", concepts).concept_index, 1u);
  EXPECT_EQ(match_concept("Income", concepts).concept_index, 0u);
}

TEST(MatchConcept, IdempotentOnOwnNames) {
  const auto fixtures = load_task_fixtures(std::filesystem::path(LLMFS_SOURCE_DIR) / "data/prompts.json");
  std::vector<std::string> names;
  for (const auto& f : fixtures) names.push_back(f.spec.few_shots[0].concept_name);
  names.erase(std::unique(names.begin(), names.end()), names.end());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto m = match_concept(names[i], names);
    EXPECT_EQ(m.concept_index, i);
    EXPECT_EQ(m.kind, MatchKind::exact);
  }
}

TEST(ParseRanking, NumberedLines) {
  const std::vector<std::string> concepts = {"bar", "baz", "foo"};
  EXPECT_EQ(parse_ranking("1. foo\n2. bar\n3. baz", concepts).order,
            (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(parse_ranking("Here you go:\n1) foo\n2) bar\n  3.   baz\n", concepts).order,
            (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(parse_ranking("1. foo  2. bar  3. baz", concepts).order,
            (std::vector<std::size_t>{2, 0, 1}));
}

TEST(ParseRanking, CompletionRuleAndWarnings) {
  const std::vector<std::string> concepts = {"a", "b", "c", "d", "e"};
  WarningCapture w;
  const auto r = parse_ranking("1. d\n2. b\n3. a\n4. e", concepts);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{3, 1, 0, 4, 2}));
  EXPECT_EQ(r.listed, 4u);
  EXPECT_EQ(r.missing, 1u);
  EXPECT_EQ(w.seen.size(), 1u);
  const auto dup = parse_ranking("1. b\n2. b\n3. a\n4. unknown thing", concepts);
  EXPECT_EQ(dup.order, (std::vector<std::size_t>{1, 0, 2, 3, 4}));
  EXPECT_THROW(parse_ranking("1. a", concepts), ParseError);
  EXPECT_THROW(parse_ranking("nothing useful", concepts), ParseError);
  EXPECT_THROW(parse_ranking("1. a\n2. b", std::vector<std::string>{"a"}), ParseError);
}

TEST(ParseRanking, AlwaysAPermutation) {
  Rng rng(21);
  std::vector<std::string> concepts;
  for (int i = 0; i < 12; ++i) concepts.push_back("feature number " + std::to_string(i));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> perm(concepts.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    const auto keep = 2 + rng.uniform_index(concepts.size() - 1);
    std::string reply;
    for (std::size_t i = 0; i < keep; ++i)
      reply += std::to_string(i + 1) + ". " + concepts[perm[i]] + "\n";
    WarningCapture quiet;
    auto order = parse_ranking(reply, concepts).order;
    EXPECT_TRUE(std::equal(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(keep), order.begin()));
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
  }
}

TEST(FeatureName, Extraction) {
  EXPECT_EQ(extract_feature_name("Glucose"), "Glucose");
  EXPECT_EQ(extract_feature_name("\n  \"BMI\"\n"), "BMI");
  EXPECT_EQ(extract_feature_name("1. Age (years)\nbecause..."), "Age (years)");
  EXPECT_THROW(extract_feature_name("   \n"), ParseError);
}

TEST(RoundTrip, FixturePromptsParse) {
  // Well-formed replies to every fixture prompt parse without error.
  const auto fixtures = load_task_fixtures(std::filesystem::path(LLMFS_SOURCE_DIR) / "data/prompts.json");
  for (const auto& f : fixtures) {
    const auto& ex = f.spec.few_shots[0];
    const std::string reply = "```json\n{\n    \"reasoning\": \"" + ex.reasoning.value() +
                              "\",\n    \"score\": " + format_score(ex.score) + "\n}\n```";
    EXPECT_EQ(parse_score(reply, f.spec.min_score, f.spec.max_score).score, ex.score);
  }
}
