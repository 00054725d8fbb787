#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/mini_scan.hpp"
#include "duel/model/config.hpp"
#include "duel/splits/split.hpp"
#include "duel/train/procedures.hpp"

namespace duel::experiment {

enum class Method { none, merged, duel };

std::string method_name(Method method);
Method parse_method(std::string_view name);

/// Where one split pair comes from: a generated or loaded corpus, an
/// optional lexical variant of it, and the split to apply.
struct DataSpec {
  std::string name = "scan";
  /// "generate" (mini-SCAN) or "tsv".
  std::string origin = "generate";
  std::string path;
  data::MiniScanConfig generator;
  std::uint64_t generator_seed = 1;
  /// Empty for none, a lexicon file path, or "synthetic" (pseudo-words for
  /// the generator's primitives, plus "turn" when enabled).
  std::string lexicon;
  int lexicon_alternatives = 5;
  std::uint64_t lexicon_seed = 1;
  std::uint64_t variant_seed = 1;
  splits::SplitKind split = splits::SplitKind::standard;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  std::size_t mcd_iterations = 20000;
  int mcd_restarts = 1;
  splits::ExtractorConfig extractor;
  /// Optional manifest file that fixes the split instead of computing it.
  std::string manifest;
  /// Prompt tag; empty means the lowercased name.
  std::string tag;

  std::string prompt_tag() const;
  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct FinetuneSpec {
  train::FinetuneConfig config;
  /// Fraction of t held out as a dev set for early stopping (0 = no dev).
  double dev_fraction = 0.0;
  std::uint64_t dev_seed = 1;

  friend bool operator==(const FinetuneSpec&, const FinetuneSpec&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::none;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";
  bool prompts = true;
  /// Reuse a persisted pre-finetune checkpoint when one exists.
  bool resume = false;
  /// Seeds trained concurrently.
  int jobs = 1;
  model::ModelConfig model;
  DataSpec target;
  /// Concatenated into one source pair. Optional for NONE, where it only
  /// contributes to the shared vocabulary.
  std::vector<DataSpec> sources;
  train::DuelConfig duel;
  int merged_steps = 3000;
  FinetuneSpec finetune;
  int eval_max_len = 0;

  /// Throws ConfigError for inconsistent settings or missing files.
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses the sectioned key-value format. `overrides` maps "section.key"
/// (or "source<N>.key" for the N-th source, 0-based) to a value and is
/// applied before interpretation. Unknown sections or keys are errors.
ExperimentConfig parse_experiment_config(std::string_view text,
                                         const std::map<std::string, std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::map<std::string, std::string>& overrides = {});
std::string to_text(const ExperimentConfig& config);

/// The "key = value" body of one data section.
std::string to_text(const DataSpec& spec);

}  // namespace duel::experiment
