#include "llmfs/prompting.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmfs/error.hpp"

namespace llmfs {

namespace {

constexpr std::string_view kGptFormat =
    "The output should be formatted as a JSON instance that conforms to the JSON schema below.\n"
    "\n"
    "As an example, for the schema {\"properties\": {\"foo\": {\"title\": \"Foo\", \"description\": "
    "\"a list of strings\", \"type\": \"array\", \"items\": {\"type\": \"string\"}}}, \"required\": "
    "[\"foo\"]} the object {\"foo\": [\"bar\", \"baz\"]} is a well-formatted instance of the "
    "schema. The object {\"properties\": {\"foo\": [\"bar\", \"baz\"]}} is not well-formatted.\n"
    "\n"
    "Here is the output schema:\n"
    "```\n"
    "{\"description\": \"Langchain Pydantic output parsing structure.\", \"properties\": "
    "{\"reasoning\": {\"title\": \"Reasoning\", \"description\": \"Logical reasoning behind feature "
    "importance score\", \"type\": \"string\"}, \"score\": {\"title\": \"Score\", \"description\": "
    "\"Feature importance score\", \"type\": \"number\"}}, \"required\": [\"score\"]}\n"
    "```";

constexpr std::string_view kLlamaFormat =
    "The output should be a markdown code snippet formatted in the following schema, including "
    "the leading and trailing \"```json\" and \"```\":\n"
    "\n"
    "```json\n"
    "{\n"
    "\t\"reasoning\": str  // Logical reasoning behind feature importance score\n"
    "\t\"score\": float  // Feature importance score\n"
    "}\n"
    "```";

constexpr std::string_view kRankFormat =
    "Your response should be a numbered list with each item on a new line. For example:   "
    "1. foo  2. bar  3. baz\n"
    "\n"
    "Only output the ranking. Do not output dialogue or explanations for the ranking. Do not "
    "exclude any features in the ranking.";

std::string join(std::span<const std::string> items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string few_shot_block(const std::vector<FewShotExample>& examples, bool with_reasoning) {
  std::string out = examples.size() == 1 ? "Here is an example output:\n"
                                         : "Here are some example outputs:\n";
  for (const auto& ex : examples) {
    out += "\n- Variable: " + ex.concept_name + "\n{\n";
    if (with_reasoning && ex.reasoning)
      out += "    \"reasoning\": " + nlohmann::json(*ex.reasoning).dump() + ",\n";
    out += "    \"score\": " + format_score(ex.score) + "\n}\n";
  }
  out.pop_back();
  return out;
}

}  // namespace

void TaskSpec::validate() const {
  if (target_description.empty()) throw PromptError("task spec has an empty target description");
  if (!std::isfinite(min_score) || !std::isfinite(max_score) || !(min_score < max_score))
    throw PromptError(fmt::format("score range [{}, {}] is not increasing", min_score, max_score));
  for (const auto& ex : few_shots)
    if (!(ex.score >= min_score && ex.score <= max_score))
      throw PromptError(fmt::format("example score {} for \"{}\" lies outside [{}, {}]", ex.score,
                                    ex.concept_name, min_score, max_score));
}

std::string to_string(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::default_prompt: return "default";
    case PromptVariant::examples: return "examples";
    case PromptVariant::examples_cot: return "examples_cot";
    case PromptVariant::context: return "context";
    case PromptVariant::context_examples: return "context_examples";
    case PromptVariant::context_examples_cot: return "context_examples_cot";
  }
  return "default";
}

PromptVariant parse_prompt_variant(std::string_view text) {
  for (const auto v : {PromptVariant::default_prompt, PromptVariant::examples,
                       PromptVariant::examples_cot, PromptVariant::context,
                       PromptVariant::context_examples, PromptVariant::context_examples_cot})
    if (to_string(v) == text) return v;
  throw PromptError(fmt::format("unknown prompt variant \"{}\"", text));
}

bool uses_context(PromptVariant v) {
  return v == PromptVariant::context || v == PromptVariant::context_examples ||
         v == PromptVariant::context_examples_cot;
}

bool uses_examples(PromptVariant v) {
  return v != PromptVariant::default_prompt && v != PromptVariant::context;
}

bool uses_reasoning(PromptVariant v) {
  return v == PromptVariant::examples_cot || v == PromptVariant::context_examples_cot;
}

std::string to_string(ModelFamily family) { return family == ModelFamily::gpt ? "gpt" : "llama"; }

ModelFamily parse_model_family(std::string_view text) {
  if (text == "gpt") return ModelFamily::gpt;
  if (text == "llama") return ModelFamily::llama;
  throw PromptError(fmt::format("unknown model family \"{}\" (expected gpt or llama)", text));
}

std::string output_format_instructions(ModelFamily family) {
  return std::string(family == ModelFamily::gpt ? kGptFormat : kLlamaFormat);
}

std::string format_score(double value) { return fmt::format("{}", value); }

PromptBundle build_score_prompt(const TaskSpec& task, std::string_view concept_name,
                                PromptVariant variant, ModelFamily family) {
  task.validate();
  if (concept_name.empty()) throw PromptError("score prompt needs a concept name");
  if (uses_context(variant) && !task.context)
    throw PromptError(fmt::format("variant {} needs a dataset context", to_string(variant)));
  if (uses_examples(variant) && task.few_shots.empty())
    throw PromptError(fmt::format("variant {} needs few-shot examples", to_string(variant)));
  if (uses_reasoning(variant))
    for (const auto& ex : task.few_shots)
      if (!ex.reasoning)
        throw PromptError(fmt::format("example \"{}\" has no reasoning text", ex.concept_name));

  PromptBundle bundle;
  if (uses_context(variant)) bundle.system = "Context: " + *task.context + "\n\n";
  bundle.system += fmt::format(
      "For each feature input by the user, your task is to provide a feature importance score "
      "(between {} and {}; larger value indicates greater importance) for predicting {} and a "
      "reasoning behind how the importance score was assigned.",
      format_score(task.min_score), format_score(task.max_score), task.target_description);
  bundle.system += "\n\n" + output_format_instructions(family);
  if (uses_examples(variant))
    bundle.system += "\n\n" + few_shot_block(task.few_shots, uses_reasoning(variant));
  bundle.user = fmt::format(
      "Provide a score and reasoning for \"{}\" formatted according to the output schema above:",
      concept_name);
  return bundle;
}

PromptBundle build_rank_prompt(const TaskSpec& task, std::span<const std::string> concepts) {
  if (task.target_description.empty()) throw PromptError("task spec has an empty target description");
  if (concepts.size() < 2) throw PromptError("rank prompt needs at least two concepts");
  PromptBundle bundle;
  bundle.system = fmt::format(
      "Given a list of features, rank them according to their importances in predicting {}. The "
      "ranking should be in descending order, starting with the most important feature.\n\n{}",
      task.target_description, kRankFormat);
  bundle.user = fmt::format("Rank all {} features in the following list: \"{}\".",
                            concepts.size(), join(concepts, ", "));
  return bundle;
}

PromptBundle build_seq_prompt(const TaskSpec& task, std::span<const std::string> selected,
                              std::optional<double> cv_value, std::string_view metric,
                              std::span<const std::string> candidates,
                              std::span<const DialogueTurn> history,
                              std::optional<int> buffer_size) {
  if (task.target_description.empty()) throw PromptError("task spec has an empty target description");
  if (candidates.empty()) throw PromptError("seq prompt needs at least one candidate");
  if (buffer_size && *buffer_size < 0)
    throw PromptError(fmt::format("buffer size {} is negative", *buffer_size));
  PromptBundle bundle;
  bundle.system = fmt::format(
      "Given a list of features already selected and a list of candidate features available, "
      "your task is to output the next feature that should be included to maximally improve the "
      "performance in predicting {}.",
      task.target_description);
  const std::string value = cv_value ? fmt::format("{:.4f}", *cv_value) : "N/A";
  bundle.user = fmt::format(
      "I used the features [{}], and the trained model achieved a test {} of {}. What feature "
      "should I add next from: {}? Give me just the name of the feature to add (no other text).",
      join(selected, ", "), metric, value, join(candidates, ", "));
  std::size_t keep = history.size();
  if (buffer_size) keep = std::min(keep, static_cast<std::size_t>(*buffer_size));
  bundle.history.assign(history.end() - static_cast<std::ptrdiff_t>(keep), history.end());
  return bundle;
}

std::vector<TaskFixture> load_task_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PromptError(fmt::format("cannot open prompt fixtures {}", path.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PromptError(fmt::format("{}: {}", path.string(), e.what()));
  }
  double lo = 0.0, hi = 1.0;
  if (doc.contains("score_range")) {
    lo = doc["score_range"].at(0).get<double>();
    hi = doc["score_range"].at(1).get<double>();
  }
  std::vector<TaskFixture> out;
  try {
    for (const auto& t : doc.at("tasks")) {
      TaskFixture f;
      f.name = t.at("name").get<std::string>();
      f.task = parse_task_kind(t.value("task", std::string("classification")));
      f.spec.target_description = t.at("target_description").get<std::string>();
      if (t.contains("context")) f.spec.context = t["context"].get<std::string>();
      f.spec.min_score = lo;
      f.spec.max_score = hi;
      for (const auto& ex : t.value("few_shots", nlohmann::json::array())) {
        FewShotExample e;
        e.concept_name = ex.at("concept").get<std::string>();
        if (ex.contains("reasoning")) e.reasoning = ex["reasoning"].get<std::string>();
        e.score = ex.at("score").get<double>();
        f.spec.few_shots.push_back(std::move(e));
      }
      f.spec.validate();
      out.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw PromptError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return out;
}

const TaskFixture* find_fixture(std::span<const TaskFixture> fixtures, std::string_view name) {
  for (const auto& f : fixtures)
    if (f.name == name) return &f;
  return nullptr;
}

TaskSpec task_spec_from_manifest(const DatasetManifest& manifest, const TaskFixture* fixture) {
  TaskSpec spec;
  if (fixture) spec = fixture->spec;
  if (manifest.target_description) spec.target_description = *manifest.target_description;
  if (manifest.context) spec.context = manifest.context;
  if (spec.target_description.empty())
    throw PromptError(fmt::format("dataset {} has no target_description", manifest.name));
  return spec;
}

}  // namespace llmfs
