#include <gtest/gtest.h>

#include <map>

#include "llmfs/error.hpp"
#include "llmfs/prompting.hpp"

using namespace llmfs;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(LLMFS_SOURCE_DIR) / "data/prompts.json";

TaskSpec diabetes() {
  TaskSpec t;
  t.target_description = "whether a patient has diabetes";
  t.context = "We wish to build a model.";
  t.few_shots = {{"Year of Birth", "Not relevant. Therefore, the score is 0.1.", 0.1}};
  return t;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

const std::vector<std::string> kPima = {"Number of times pregnant", "Plasma glucose", "BMI"};

}  // namespace

TEST(ScorePrompt, DefaultTemplate) {
  const auto b = build_score_prompt(diabetes(), "Glucose", PromptVariant::default_prompt);
  EXPECT_EQ(b.system.rfind(
                "For each feature input by the user, your task is to provide a feature importance "
                "score (between 0 and 1; larger value indicates greater importance) for predicting "
                "whether a patient has diabetes and a reasoning behind how the importance score "
                "was assigned.\n\nThe output should be formatted as a JSON instance that conforms "
                "to the JSON schema below.",
                0),
            0u);
  EXPECT_TRUE(contains(b.system, "a feature importance score (between 0 and 1"));
  EXPECT_TRUE(contains(b.system, "\"required\": [\"score\"]}\n```"));
  EXPECT_FALSE(contains(b.system, "Context:"));
  EXPECT_FALSE(contains(b.system, "Variable:"));
  EXPECT_EQ(b.user,
            "Provide a score and reasoning for \"Glucose\" formatted according to the output "
            "schema above:");
  EXPECT_TRUE(b.history.empty());
}

TEST(ScorePrompt, ScoreRangeSubstituted) {
  auto t = diabetes();
  t.min_score = 8;
  t.max_score = 24;
  t.few_shots.clear();
  EXPECT_TRUE(contains(build_score_prompt(t, "x", PromptVariant::default_prompt).system,
                       "between 8 and 24;"));
  t.min_score = 0;
  t.max_score = 10;
  EXPECT_TRUE(contains(build_score_prompt(t, "x", PromptVariant::default_prompt).system,
                       "between 0 and 10;"));
}

TEST(ScorePrompt, FewShotWithoutReasoning) {
  const auto b = build_score_prompt(diabetes(), "Glucose", PromptVariant::examples);
  EXPECT_TRUE(contains(b.system,
                       "\n\nHere is an example output:\n\n- Variable: Year of Birth\n{\n    "
                       "\"score\": 0.1\n}"));
  EXPECT_FALSE(contains(b.system, "reasoning\": \"Not relevant"));
}

TEST(ScorePrompt, FewShotWithReasoning) {
  const auto b = build_score_prompt(diabetes(), "Glucose", PromptVariant::examples_cot);
  EXPECT_TRUE(contains(b.system,
                       "- Variable: Year of Birth\n{\n    \"reasoning\": \"Not relevant. "
                       "Therefore, the score is 0.1.\",\n    \"score\": 0.1\n}"));
}

TEST(ScorePrompt, MultipleExamplesLeadIn) {
  auto t = diabetes();
  t.few_shots.push_back({"Age", std::nullopt, 0.5});
  const auto b = build_score_prompt(t, "Glucose", PromptVariant::examples);
  EXPECT_TRUE(contains(b.system, "Here are some example outputs:\n\n- Variable: Year of Birth"));
  EXPECT_TRUE(contains(b.system, "\n\n- Variable: Age\n{\n    \"score\": 0.5\n}"));
}

TEST(ScorePrompt, ContextComesFirst) {
  const auto def = build_score_prompt(diabetes(), "Glucose", PromptVariant::default_prompt);
  for (const auto v : {PromptVariant::context, PromptVariant::context_examples,
                       PromptVariant::context_examples_cot}) {
    const auto b = build_score_prompt(diabetes(), "Glucose", v);
    EXPECT_EQ(b.system.rfind("Context: We wish to build a model.\n\nFor each feature", 0), 0u);
    EXPECT_TRUE(contains(b.system, def.system));
    EXPECT_EQ(b.user, def.user);
  }
}

TEST(ScorePrompt, LlamaFormat) {
  const auto b =
      build_score_prompt(diabetes(), "Glucose", PromptVariant::default_prompt, ModelFamily::llama);
  EXPECT_TRUE(contains(b.system,
                       "The output should be a markdown code snippet formatted in the following "
                       "schema, including the leading and trailing \"```json\" and \"```\":\n\n"
                       "```json\n{\n\t\"reasoning\": str  // Logical reasoning behind feature "
                       "importance score\n\t\"score\": float  // Feature importance score\n}\n```"));
  EXPECT_FALSE(contains(b.system, "JSON schema below"));
}

TEST(ScorePrompt, MissingPrerequisites) {
  TaskSpec bare;
  bare.target_description = "y";
  EXPECT_THROW(build_score_prompt(bare, "x", PromptVariant::context), PromptError);
  EXPECT_THROW(build_score_prompt(bare, "x", PromptVariant::examples), PromptError);
  auto no_reason = diabetes();
  no_reason.few_shots[0].reasoning.reset();
  EXPECT_NO_THROW(build_score_prompt(no_reason, "x", PromptVariant::examples));
  EXPECT_THROW(build_score_prompt(no_reason, "x", PromptVariant::examples_cot), PromptError);
  auto bad = diabetes();
  bad.few_shots[0].score = 3;
  EXPECT_THROW(build_score_prompt(bad, "x", PromptVariant::default_prompt), PromptError);
  bad = diabetes();
  bad.min_score = 1;
  EXPECT_THROW(bad.validate(), PromptError);
}

TEST(ScorePrompt, Deterministic) {
  const auto a = build_score_prompt(diabetes(), "BMI", PromptVariant::context_examples_cot);
  const auto b = build_score_prompt(diabetes(), "BMI", PromptVariant::context_examples_cot);
  EXPECT_EQ(a.system, b.system);
  EXPECT_EQ(a.user, b.user);
}

TEST(Variants, NamesRoundTrip) {
  for (const auto v : {PromptVariant::default_prompt, PromptVariant::examples,
                       PromptVariant::examples_cot, PromptVariant::context,
                       PromptVariant::context_examples, PromptVariant::context_examples_cot})
    EXPECT_EQ(parse_prompt_variant(to_string(v)), v);
  EXPECT_THROW(parse_prompt_variant("fancy"), PromptError);
  EXPECT_EQ(parse_model_family("llama"), ModelFamily::llama);
  EXPECT_THROW(parse_model_family("gemini"), PromptError);
}

TEST(RankPrompt, Template) {
  const std::vector<std::string> concepts = {"a", "b", "c", "d", "e", "f", "g", "h"};
  const auto b = build_rank_prompt(diabetes(), concepts);
  EXPECT_EQ(b.system,
            "Given a list of features, rank them according to their importances in predicting "
            "whether a patient has diabetes. The ranking should be in descending order, starting "
            "with the most important feature.\n\nYour response should be a numbered list with "
            "each item on a new line. For example:   1. foo  2. bar  3. baz\n\nOnly output the "
            "ranking. Do not output dialogue or explanations for the ranking. Do not exclude any "
            "features in the ranking.");
  EXPECT_EQ(b.user, "Rank all 8 features in the following list: \"a, b, c, d, e, f, g, h\".");
  EXPECT_THROW(build_rank_prompt(diabetes(), std::vector<std::string>{"a"}), PromptError);
  EXPECT_THROW(build_rank_prompt(diabetes(), std::vector<std::string>{}), PromptError);
}

TEST(SeqPrompt, FirstTurn) {
  const auto b = build_seq_prompt(diabetes(), {}, std::nullopt, "AUROC", kPima, {}, std::nullopt);
  EXPECT_EQ(b.system,
            "Given a list of features already selected and a list of candidate features "
            "available, your task is to output the next feature that should be included to "
            "maximally improve the performance in predicting whether a patient has diabetes.");
  EXPECT_EQ(b.user,
            "I used the features [], and the trained model achieved a test AUROC of N/A. What "
            "feature should I add next from: Number of times pregnant, Plasma glucose, BMI? Give "
            "me just the name of the feature to add (no other text).");
}

TEST(SeqPrompt, LaterTurnAndBuffer) {
  const std::vector<std::string> selected = {"Plasma glucose"};
  const std::vector<std::string> rest = {"Number of times pregnant", "BMI"};
  const std::vector<DialogueTurn> history = {{"u1", "a1"}, {"u2", "a2"}, {"u3", "a3"}};
  const auto b = build_seq_prompt(diabetes(), selected, 0.81234567, "MAE", rest, history, 1);
  EXPECT_TRUE(contains(b.user, "I used the features [Plasma glucose], and the trained model "
                               "achieved a test MAE of 0.8123. What feature should I add next "
                               "from: Number of times pregnant, BMI?"));
  ASSERT_EQ(b.history.size(), 1u);
  EXPECT_EQ(b.history[0].user, "u3");
  EXPECT_TRUE(build_seq_prompt(diabetes(), selected, 0.5, "MAE", rest, history, 0).history.empty());
  EXPECT_EQ(build_seq_prompt(diabetes(), selected, 0.5, "MAE", rest, history, std::nullopt)
                .history.size(),
            3u);
  EXPECT_EQ(build_seq_prompt(diabetes(), selected, 0.5, "MAE", rest, history, 10).history.size(), 3u);
  EXPECT_THROW(build_seq_prompt(diabetes(), selected, 0.5, "MAE", rest, history, -1), PromptError);
  EXPECT_THROW(build_seq_prompt(diabetes(), selected, 0.5, "MAE", {}, history, 1), PromptError);
}

TEST(Fixtures, FourteenDatasetsWithGoldenSentences) {
  const auto fixtures = load_task_fixtures(kFixtures);
  ASSERT_EQ(fixtures.size(), 14u);
  const std::map<std::string, std::string> targets = {
      {"credit_g", "whether an individual carries high credit risk"},
      {"bank", "whether an individual will subscribe to a term deposit"},
      {"give_me_some_credit",
       "whether an individual is likely to experience serious financial distress in the next two "
       "years"},
      {"compas", "whether a criminal defendant carries high risk of recidivism"},
      {"pima", "whether a patient has diabetes"},
      {"aus_cars", "the selling price of a car in Australia"},
      {"youtube", "whether a YouTube channel has more than 20 million subscribers"},
      {"ca_housing", "the median housing price of a U.S. census block group"},
      {"diabetes_progression", "the disease progression status in diabetes patients"},
      {"wine_quality", "whether a wine is high or low quality"},
      {"miami_housing", "the selling price of homes in Miami"},
      {"used_cars", "the selling price of a used car"},
      {"nba", "the number of points per game of an NBA basketball player"},
      {"nyc_rideshare", "the total pay given to a rideshare driver from a trip"},
  };
  int classification = 0;
  for (const auto& f : fixtures) {
    ASSERT_TRUE(targets.count(f.name)) << f.name;
    const std::string& target = targets.at(f.name);
    EXPECT_EQ(f.spec.target_description, target);
    classification += f.task == TaskKind::classification;
    for (const auto v : {PromptVariant::default_prompt, PromptVariant::context_examples_cot}) {
      const auto score = build_score_prompt(f.spec, "Some feature", v);
      EXPECT_TRUE(contains(score.system,
                           "your task is to provide a feature importance score (between 0 and 1; "
                           "larger value indicates greater importance) for predicting " +
                               target +
                               " and a reasoning behind how the importance score was assigned."));
    }
    const auto cot = build_score_prompt(f.spec, "x", PromptVariant::context_examples_cot);
    EXPECT_EQ(cot.system.rfind("Context: ", 0), 0u);
    EXPECT_TRUE(contains(cot.system, "- Variable: " + f.spec.few_shots[0].concept_name));
    const auto rank = build_rank_prompt(f.spec, kPima);
    EXPECT_TRUE(contains(rank.system, "rank them according to their importances in predicting " +
                                          target + ". The ranking should be in descending order"));
    const auto seq = build_seq_prompt(f.spec, {}, std::nullopt, "AUROC", kPima, {}, std::nullopt);
    EXPECT_TRUE(contains(seq.system, "maximally improve the performance in predicting " + target + "."));
  }
  EXPECT_EQ(classification, 7);
  const auto* credit = find_fixture(fixtures, "credit_g");
  ASSERT_NE(credit, nullptr);
  EXPECT_EQ(credit->spec.few_shots[0].concept_name,
            "Installment rate in percentage of disposable income");
  EXPECT_EQ(credit->spec.few_shots[0].score, 0.9);
  EXPECT_EQ(find_fixture(fixtures, "nope"), nullptr);
}

TEST(Fixtures, ManifestOverridesFixture) {
  const auto fixtures = load_task_fixtures(kFixtures);
  DatasetManifest m;
  m.name = "pima";
  const auto from_fixture = task_spec_from_manifest(m, find_fixture(fixtures, "pima"));
  EXPECT_EQ(from_fixture.target_description, "whether a patient has diabetes");
  EXPECT_EQ(from_fixture.few_shots.size(), 1u);
  m.target_description = "diabetes status";
  m.context = "ctx";
  const auto spec = task_spec_from_manifest(m, find_fixture(fixtures, "pima"));
  EXPECT_EQ(spec.target_description, "diabetes status");
  EXPECT_EQ(spec.context.value(), "ctx");
  DatasetManifest empty;
  EXPECT_THROW(task_spec_from_manifest(empty), PromptError);
  EXPECT_THROW(load_task_fixtures("/nonexistent/prompts.json"), PromptError);
}
