#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmfs/dataset.hpp"
#include "llmfs/llm_backend.hpp"
#include "llmfs/llm_selectors.hpp"
#include "llmfs/metrics.hpp"
#include "llmfs/prompting.hpp"

namespace llmfs {

std::string_view library_version();

enum class Method { llm_score, llm_rank, llm_seq, lasso, mi, mrmr, rfe, forward, backward, random };

/// Hyphenated names as used on the command line ("llm-score", "forward", ...).
std::string to_string(Method method);
Method parse_method(std::string_view text);
const std::vector<std::string>& method_names();
bool is_llm_method(Method method);
/// True when the method picks whole concepts rather than single columns.
bool selects_concepts(Method method);

struct RunConfig {
  std::filesystem::path dataset;  ///< manifest
  Method method = Method::llm_score;
  PromptVariant prompt_variant = PromptVariant::default_prompt;
  DecodingConfig decoding;
  double score_min = 0.0;
  double score_max = 1.0;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> fractions = default_fractions();
  std::optional<int> buffer_size;  ///< nullopt: default_seq_buffer(D)
  SeqInit init = SeqInit::empty;
  int rank_requery = 0;
  std::string backend = "scripted:";  ///< scripted:PATH, openai:MODEL or config:PATH
  std::optional<std::string> model;
  std::optional<std::string> base_url;
  ModelFamily family = ModelFamily::gpt;
  std::optional<std::filesystem::path> prompts;  ///< task fixtures with few-shot examples
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path output_dir = "out";
  std::size_t jobs = 4;
  double test_fraction = 0.2;
  int permutation_repeats = 30;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// SHA-256 of the canonical config JSON.
std::string config_hash(const RunConfig& config);

/// Backend named by a URI plus the model id to send.
struct OpenedBackend {
  std::unique_ptr<ChatBackend> backend;
  std::string model_id;
  ModelFamily family = ModelFamily::gpt;
  std::optional<std::filesystem::path> cache_dir;
};
OpenedBackend open_backend(const RunConfig& config);

/// Everything a method needs besides the split and seed.
struct RunContext {
  const RunConfig& config;
  const LoadedData& data;
  TaskSpec task;
  ChatClient* client = nullptr;  ///< required for LLM methods
  std::string model_id;
  ModelFamily family = ModelFamily::gpt;
};

TaskSpec task_spec_for(const RunConfig& config, const DatasetManifest& manifest);

struct MethodOutput {
  ColumnSelector selector;
  std::optional<ImportanceVector> importance;
  std::optional<Ranking> ranking;          ///< concept ranking, when there is one
  std::vector<std::size_t> column_order;   ///< column ranking of data-driven methods
};

/// Runs the configured method for one seed. LLM score and rank results do
/// not depend on the seed and are computed once per runner.
class MethodRunner {
 public:
  explicit MethodRunner(const RunContext& context);
  MethodOutput run(const Split& split, std::uint64_t seed);

 private:
  const RunContext& ctx_;
  std::optional<ImportanceVector> importance_;
  std::optional<Ranking> ranking_;
};

/// Concept-level importance metrics compared against LLM scores.
struct ImportanceMetric {
  std::string name;  ///< fisher, mi, pearson, spearman, permutation, shapley_exact
  std::vector<double> values;
  double tau = 0.0;
};

std::vector<ImportanceMetric> correlate_importance(const ImportanceVector& scores,
                                                   const LoadedData& data, const Split& split,
                                                   std::uint64_t seed, int permutation_repeats);

/// Line chart of selection paths (fraction on x, metric on y).
std::string render_paths_svg(const std::vector<SelectionPath>& paths, std::string_view title);

/// Entry point; `args` excludes the program name. Returns 0 on success,
/// 1 on a usage error and 2 on a runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace llmfs
