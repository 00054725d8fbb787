#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/data/vocab.hpp"
#include "duel/grad/tensor.hpp"
#include "duel/model/config.hpp"
#include "duel/model/transformer.hpp"
#include "duel/train/optimizer.hpp"

namespace duel::train {

/// A dataset already mapped to vocabulary ids.
struct EncodedDataset {
  std::string name;
  std::vector<model::SeqPair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

EncodedDataset encode_dataset(const data::Vocabulary& vocab, const data::Dataset& dataset);

/// Indices drawn uniformly with replacement. Throws UsageError on an empty
/// dataset or a non-positive batch size.
std::vector<model::SeqPair> sample_batch(const EncodedDataset& dataset, int batch_size, std::mt19937_64& rng);

/// Gradients of the batch loss for one block (others act as constants).
grad::GradMap compute_gradients(const grad::ParamStore& params, const model::ModelConfig& config,
                                std::span<const model::SeqPair> batch, model::Block block, double label_smoothing,
                                std::uint64_t dropout_seed = 0, double* loss = nullptr);

struct EarlyStopMonitor {
  int patience = 1;
  /// No evaluation yet: the first one always counts as an improvement.
  double best_accuracy = -std::numeric_limits<double>::infinity();
  int evaluations_since_improvement = 0;
};

/// Records one evaluation. True once the number of consecutive evaluations
/// that are not strictly better than the best so far exceeds the patience.
bool accuracy_decreases(EarlyStopMonitor& monitor, double new_accuracy);

struct DuelConfig {
  OptimizerConfig optimizer;
  int batch_size = 32;
  int outer_rounds = 10;
  int inner_steps = 30000;
  int patience = 1;
  /// Outer loop stops when a theta loop runs fewer steps than this.
  /// Defaults to max(50, inner_steps / 30).
  std::optional<int> min_theta_steps;
  int eval_every = 500;
  /// Monitor on at most this many examples of the opposite set (0 = all).
  std::size_t eval_subset = 0;
  double label_smoothing = 0.0;
  /// Decode cap for monitor evaluation (0 = model cap).
  int max_decode_len = 0;
  /// Run the theta loop before the phi loop in each round.
  bool theta_first = false;

  int t_min() const;
  void validate() const;

  friend bool operator==(const DuelConfig&, const DuelConfig&) = default;
};

enum class StopReason { step_cap, patience, min_steps, step_budget };

std::string stop_reason_name(StopReason reason);

struct LoopRecord {
  int outer_round = 0;
  /// "phi", "theta", "joint", or "finetune".
  std::string loop;
  std::string train_set;
  std::string monitor_set;
  int steps = 0;
  StopReason stop = StopReason::step_cap;
};

struct EvalEvent {
  std::string stage;
  int outer_round = 0;
  std::string loop;
  int step = 0;
  /// Mean training loss since the previous event.
  double loss = 0.0;
  /// NaN for loss-only events.
  double accuracy = 0.0;
  /// Dataset the monitor read; empty for loss-only events.
  std::string dataset;
  std::uint64_t theta_hash = 0;
  std::uint64_t phi_hash = 0;
};

struct StageReport {
  std::string stage;
  std::vector<LoopRecord> loops;
  std::vector<EvalEvent> events;
  std::int64_t theta_updates = 0;
  std::int64_t phi_updates = 0;
  /// Why the outer loop ended (DUEL only).
  std::optional<StopReason> outer_stop;
  double seconds = 0.0;
};

/// One record per line: loop summaries, evaluation events, totals.
std::string to_text(const StageReport& report);

struct StepInfo {
  std::string_view stage;
  int outer_round = 0;
  std::string_view loop;
  model::Block block = model::Block::all;
  int step = 0;
  double loss = 0.0;
  const grad::ParamStore* params = nullptr;
  std::span<const model::SeqPair> batch;
};

/// Called after every optimizer step.
using StepObserver = std::function<void(const StepInfo&)>;

/// Alternating blockwise training. Each outer round runs a phi loop on s
/// (theta frozen, monitored on s_tilde), then a theta loop on s_tilde (phi
/// frozen, monitored on s). Each inner loop stops at inner_steps or when the
/// monitor's patience runs out; the outer loop stops after outer_rounds or
/// when a theta loop ran fewer than t_min() steps.
StageReport duel_prefinetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& s,
                             const EncodedDataset& s_tilde, const DuelConfig& duel, std::uint64_t seed,
                             const StepObserver& observer = {});

/// Joint training on batches drawn uniformly from the union of s and
/// s_tilde for a fixed number of steps.
StageReport merged_prefinetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& s,
                               const EncodedDataset& s_tilde, int steps, const DuelConfig& duel, std::uint64_t seed,
                               const StepObserver& observer = {});

struct FinetuneConfig {
  OptimizerConfig optimizer;
  int batch_size = 32;
  int steps = 2000;
  int eval_every = 500;
  /// Dev early stopping patience, in evaluations.
  int patience = 5;
  std::size_t eval_subset = 0;
  double label_smoothing = 0.0;
  int max_decode_len = 0;
  bool reinit_head = true;

  void validate() const;

  friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

/// Optionally redraws the task head, then trains both blocks on t. With a
/// dev set, evaluates every eval_every steps, stops on patience, and
/// restores the best-scoring parameters; without one, runs exactly `steps`.
StageReport finetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& t,
                     const EncodedDataset* dev, const FinetuneConfig& finetune, std::uint64_t seed,
                     const StepObserver& observer = {});

}  // namespace duel::train
