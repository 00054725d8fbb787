#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/eval/exact_match.hpp"
#include "duel/experiment/config.hpp"
#include "duel/splits/split.hpp"
#include "duel/train/procedures.hpp"

namespace duel::experiment {

/// The corpus a spec names: generated or loaded, then lexically varied when
/// a lexicon is configured. No prompt is applied.
struct Corpus {
  data::Dataset dataset;
  /// Input-side substitution of the variant; empty without a lexicon.
  std::map<std::string, std::string> mapping;
};

Corpus load_corpus(const DataSpec& spec);

/// Splits the corpus as the spec says (or replays its manifest).
splits::SplitPair make_split_pair(const DataSpec& spec, const data::Dataset& corpus);

/// Provenance of one split pair as used by a run.
struct SplitSummary {
  std::string name;
  std::string split;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  splits::SplitMetrics metrics;
  std::map<std::string, std::string> mapping;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  /// Absent for NONE and when the stage was restored from a checkpoint.
  std::optional<train::StageReport> prefinetune;
  bool resumed = false;
  std::optional<train::StageReport> finetune;
  eval::EvalResult eval;
  double prefinetune_seconds = 0.0;
  double finetune_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct RunReport {
  std::string name;
  Method method = Method::none;
  /// Canonical text of the target spec; reports are comparable only when
  /// these agree.
  std::string target_spec;
  std::string target_label;
  /// "-" for NONE, otherwise the concatenated "name/split" of the sources.
  std::string source_label;
  SplitSummary target;
  std::vector<SplitSummary> sources;
  std::string config_text;
  std::vector<SeedResult> seeds;

  /// Mean and sample standard deviation of t~ accuracy over seeds that
  /// finished.
  double mean_accuracy() const;
  double stddev_accuracy() const;
  std::size_t failures() const;
};

struct RunOptions {
  /// Progress lines; may be called from several worker threads, one line
  /// at a time.
  std::function<void(std::string_view)> log;
};

/// For each seed: initialize, pre-finetune on the source pair (unless NONE),
/// fine-tune on t, and evaluate exact match on t~. Checkpoints, stage
/// reports, predictions, and the run report are written under
/// output_dir/name. A failing seed is recorded and the sweep continues.
RunReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Key-value text of a report, and its inverse for the fields the table
/// needs (name, method, target, sources, per-seed results).
std::string to_text(const RunReport& report);
RunReport parse_run_report(std::string_view text);

/// Rows are (method, source), the column is t~ exact match in percent
/// (mean and standard deviation over seeds). DUEL rows carry their gain
/// over the MERGED row with the same source in parentheses. Throws
/// UsageError for an empty list or reports with different targets.
std::string report_table(const std::vector<RunReport>& reports);

/// "+5.9" style signed one-decimal difference in percentage points.
std::string format_delta(double delta_points);

}  // namespace duel::experiment
