#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmfs/dataset.hpp"

namespace llmfs {

struct FewShotExample {
  std::string concept_name;
  std::optional<std::string> reasoning;
  double score = 0.0;
};

/// Everything about the prediction task that goes into a prompt.
struct TaskSpec {
  std::string target_description;
  std::optional<std::string> context;
  std::vector<FewShotExample> few_shots;
  double min_score = 0.0;
  double max_score = 1.0;

  /// Throws PromptError on an empty target, an inverted range or an
  /// example scored outside the range.
  void validate() const;
};

enum class PromptVariant {
  default_prompt,
  examples,
  examples_cot,
  context,
  context_examples,
  context_examples_cot,
};

std::string to_string(PromptVariant variant);
PromptVariant parse_prompt_variant(std::string_view text);
bool uses_context(PromptVariant variant);
bool uses_examples(PromptVariant variant);
bool uses_reasoning(PromptVariant variant);

/// Selects the output-format instructions for score prompts.
enum class ModelFamily { gpt, llama };

std::string to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view text);

struct DialogueTurn {
  std::string user;
  std::string assistant;
};

struct PromptBundle {
  std::string system;
  std::string user;
  std::vector<DialogueTurn> history;  ///< oldest first
};

std::string output_format_instructions(ModelFamily family);

PromptBundle build_score_prompt(const TaskSpec& task, std::string_view concept_name,
                                PromptVariant variant, ModelFamily family = ModelFamily::gpt);

PromptBundle build_rank_prompt(const TaskSpec& task, std::span<const std::string> concepts);

/// `buffer_size` limits how many prior turns are kept; nullopt keeps all.
PromptBundle build_seq_prompt(const TaskSpec& task, std::span<const std::string> selected,
                              std::optional<double> cv_value, std::string_view metric,
                              std::span<const std::string> candidates,
                              std::span<const DialogueTurn> history,
                              std::optional<int> buffer_size);

/// Score rendered the way prompts show it: shortest round-trip form.
std::string format_score(double value);

/// One entry of the few-shot fixture file.
struct TaskFixture {
  std::string name;
  TaskKind task = TaskKind::classification;
  TaskSpec spec;
};

std::vector<TaskFixture> load_task_fixtures(const std::filesystem::path& path);
const TaskFixture* find_fixture(std::span<const TaskFixture> fixtures, std::string_view name);

/// Task spec from a manifest, with few-shot examples taken from `fixture`
/// when given. Falls back to the fixture's target and context if the
/// manifest leaves them out.
TaskSpec task_spec_from_manifest(const DatasetManifest& manifest,
                                 const TaskFixture* fixture = nullptr);

}  // namespace llmfs
