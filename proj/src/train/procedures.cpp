#include "duel/train/procedures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "duel/error.hpp"
#include "duel/eval/exact_match.hpp"
#include "duel/grad/graph.hpp"
#include "duel/util/kv.hpp"

namespace duel::train {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Independent generator per (seed, tag, round).
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint32_t round) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag, round};
  return std::mt19937_64(seq);
}

// Fixed monitor sample: a seeded shuffle truncated to the cap.
std::vector<model::SeqPair> monitor_set(const EncodedDataset& ds, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || cap >= ds.size()) return ds.pairs;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = stream(seed, 0x6d6f6eU, 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(cap);
  std::sort(order.begin(), order.end());
  std::vector<model::SeqPair> out;
  for (auto i : order) out.push_back(ds.pairs[i]);
  return out;
}

void require_nonempty(const EncodedDataset& ds, std::string_view what) {
  if (ds.empty()) throw UsageError(std::string(what) + " dataset '" + ds.name + "' is empty");
}

class Trainer {
 public:
  Trainer(grad::ParamStore& params, const model::ModelConfig& cfg, OptimizerState opt, double smoothing,
          const StepObserver& observer, StageReport& report)
      : params_(params), cfg_(cfg), opt_(std::move(opt)), smoothing_(smoothing), observer_(observer),
        report_(report) {
    util::tune_allocator();
  }

  double step(std::span<const model::SeqPair> batch, model::Block block, std::mt19937_64& rng, int outer_round,
              std::string_view loop, int step_no) {
    double loss = 0.0;
    grad::GradMap grads;
    try {
      grads = compute_gradients(params_, cfg_, batch, block, smoothing_, rng(), &loss);
    } catch (const NumericError& e) {
      throw NumericError(report_.stage + " round " + std::to_string(outer_round) + " " + std::string(loop) +
                         " step " + std::to_string(step_no) + ": " + e.what());
    }
    optimizer_step(params_, grads, opt_, block);
    if (block != model::Block::phi) ++report_.theta_updates;
    if (block != model::Block::theta) ++report_.phi_updates;
    window_loss_ += loss;
    ++window_steps_;
    if (observer_) observer_({report_.stage, outer_round, loop, block, step_no, loss, &params_, batch});
    return loss;
  }

  void event(int outer_round, std::string_view loop, int step_no, std::optional<double> accuracy,
             std::string_view dataset) {
    EvalEvent e;
    e.stage = report_.stage;
    e.outer_round = outer_round;
    e.loop = loop;
    e.step = step_no;
    e.loss = window_steps_ ? window_loss_ / window_steps_ : 0.0;
    e.accuracy = accuracy.value_or(std::nan(""));
    e.dataset = dataset;
    e.theta_hash = model::block_hash(params_, model::Block::theta);
    e.phi_hash = model::block_hash(params_, model::Block::phi);
    report_.events.push_back(std::move(e));
    window_loss_ = 0.0;
    window_steps_ = 0;
  }

 private:
  grad::ParamStore& params_;
  const model::ModelConfig& cfg_;
  OptimizerState opt_;
  double smoothing_;
  const StepObserver& observer_;
  StageReport& report_;
  double window_loss_ = 0.0;
  int window_steps_ = 0;
};

}  // namespace

EncodedDataset encode_dataset(const data::Vocabulary& vocab, const data::Dataset& dataset) {
  EncodedDataset out{dataset.name, {}};
  out.pairs.reserve(dataset.size());
  for (const auto& ex : dataset.examples) out.pairs.push_back({vocab.encode(ex.input), vocab.encode(ex.output)});
  return out;
}

std::vector<model::SeqPair> sample_batch(const EncodedDataset& dataset, int batch_size, std::mt19937_64& rng) {
  require_nonempty(dataset, "batch source");
  if (batch_size < 1) throw UsageError("batch size must be positive");
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<model::SeqPair> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) batch.push_back(dataset.pairs[pick(rng)]);
  return batch;
}

grad::GradMap compute_gradients(const grad::ParamStore& params, const model::ModelConfig& config,
                                std::span<const model::SeqPair> batch, model::Block block, double label_smoothing,
                                std::uint64_t dropout_seed, double* loss) {
  grad::Graph g(params, {true, dropout_seed, model::block_filter(block)});
  const auto l = model::build_loss(g, config, batch, label_smoothing);
  if (loss) *loss = g.value(l).values[0];
  return g.backward(l);
}

bool accuracy_decreases(EarlyStopMonitor& m, double acc) {
  if (acc > m.best_accuracy) {
    m.best_accuracy = acc;
    m.evaluations_since_improvement = 0;
    return false;
  }
  ++m.evaluations_since_improvement;
  return m.evaluations_since_improvement > m.patience;
}

int DuelConfig::t_min() const { return min_theta_steps ? *min_theta_steps : std::max(50, inner_steps / 30); }

void DuelConfig::validate() const {
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (outer_rounds < 0) throw ConfigError("outer_rounds must be non-negative");
  if (inner_steps < 1) throw ConfigError("inner_steps must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (min_theta_steps && *min_theta_steps < 0) throw ConfigError("min_theta_steps must be non-negative");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must lie in [0, 1)");
}

void FinetuneConfig::validate() const {
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must lie in [0, 1)");
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::step_cap: return "step_cap";
    case StopReason::patience: return "patience";
    case StopReason::min_steps: return "min_steps";
    case StopReason::step_budget: return "step_budget";
  }
  return "step_cap";
}

std::string to_text(const StageReport& r) {
  std::string out;
  for (const auto& l : r.loops) {
    out += "loop stage=" + r.stage + " round=" + std::to_string(l.outer_round) + " loop=" + l.loop +
           " train=" + l.train_set + " monitor=" + (l.monitor_set.empty() ? "-" : l.monitor_set) +
           " steps=" + std::to_string(l.steps) + " stop=" + stop_reason_name(l.stop) + "\n";
  }
  for (const auto& e : r.events) {
    out += "event stage=" + e.stage + " round=" + std::to_string(e.outer_round) + " loop=" + e.loop +
           " step=" + std::to_string(e.step) + " loss=" + util::format_double(e.loss) +
           " accuracy=" + (std::isnan(e.accuracy) ? std::string("-") : util::format_double(e.accuracy)) +
           " dataset=" + (e.dataset.empty() ? "-" : e.dataset) + " theta_hash=" + std::to_string(e.theta_hash) +
           " phi_hash=" + std::to_string(e.phi_hash) + "\n";
  }
  out += "total stage=" + r.stage + " theta_updates=" + std::to_string(r.theta_updates) +
         " phi_updates=" + std::to_string(r.phi_updates) +
         " outer_stop=" + (r.outer_stop ? stop_reason_name(*r.outer_stop) : std::string("-")) +
         " seconds=" + util::format_double(r.seconds) + "\n";
  return out;
}

StageReport duel_prefinetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& s,
                             const EncodedDataset& s_tilde, const DuelConfig& duel, std::uint64_t seed,
                             const StepObserver& observer) {
  duel.validate();
  const auto start = Clock::now();
  StageReport report;
  report.stage = "duel";
  if (duel.outer_rounds == 0) return report;
  require_nonempty(s, "source train");
  require_nonempty(s_tilde, "source test");
  const auto monitor_s = monitor_set(s, duel.eval_subset, seed);
  const auto monitor_s_tilde = monitor_set(s_tilde, duel.eval_subset, seed + 1);
  Trainer trainer(params, config, make_optimizer(duel.optimizer), duel.label_smoothing, observer, report);

  // Returns the number of steps run.
  const auto inner = [&](int round, model::Block block) {
    const bool phi = block == model::Block::phi;
    const auto& train_set = phi ? s : s_tilde;
    const auto& monitor_name = phi ? s_tilde.name : s.name;
    const auto& monitor = phi ? monitor_s_tilde : monitor_s;
    const std::string loop = phi ? "phi" : "theta";
    auto rng = stream(seed, phi ? 1U : 2U, static_cast<std::uint32_t>(round));
    EarlyStopMonitor mon{duel.patience};
    LoopRecord rec{round, loop, train_set.name, monitor_name, 0, StopReason::step_cap};
    for (int step = 1; step <= duel.inner_steps; ++step) {
      const auto batch = sample_batch(train_set, duel.batch_size, rng);
      trainer.step(batch, block, rng, round, loop, step);
      rec.steps = step;
      if (step % duel.eval_every == 0) {
        const double acc = eval::exact_match_ids(params, config, monitor, duel.max_decode_len);
        trainer.event(round, loop, step, acc, monitor_name);
        if (accuracy_decreases(mon, acc)) {
          rec.stop = StopReason::patience;
          break;
        }
      }
    }
    report.loops.push_back(rec);
    return rec.steps;
  };

  report.outer_stop = StopReason::step_cap;
  for (int round = 1; round <= duel.outer_rounds; ++round) {
    int theta_steps = 0;
    if (duel.theta_first) {
      theta_steps = inner(round, model::Block::theta);
      inner(round, model::Block::phi);
    } else {
      inner(round, model::Block::phi);
      theta_steps = inner(round, model::Block::theta);
    }
    if (theta_steps < duel.t_min()) {
      report.outer_stop = StopReason::min_steps;
      break;
    }
  }
  report.seconds = seconds_since(start);
  return report;
}

StageReport merged_prefinetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& s,
                               const EncodedDataset& s_tilde, int steps, const DuelConfig& duel, std::uint64_t seed,
                               const StepObserver& observer) {
  duel.validate();
  if (steps < 0) throw ConfigError("merged steps must be non-negative");
  const auto start = Clock::now();
  StageReport report;
  report.stage = "merged";
  if (steps == 0) return report;
  require_nonempty(s, "source train");
  require_nonempty(s_tilde, "source test");
  EncodedDataset merged{s.name + "+" + s_tilde.name, s.pairs};
  merged.pairs.insert(merged.pairs.end(), s_tilde.pairs.begin(), s_tilde.pairs.end());
  Trainer trainer(params, config, make_optimizer(duel.optimizer), duel.label_smoothing, observer, report);
  auto rng = stream(seed, 3U, 0);
  for (int step = 1; step <= steps; ++step) {
    const auto batch = sample_batch(merged, duel.batch_size, rng);
    trainer.step(batch, model::Block::all, rng, 0, "joint", step);
    if (step % duel.eval_every == 0 || step == steps) trainer.event(0, "joint", step, std::nullopt, "");
  }
  report.loops.push_back({0, "joint", merged.name, "", steps, StopReason::step_budget});
  report.seconds = seconds_since(start);
  return report;
}

StageReport finetune(grad::ParamStore& params, const model::ModelConfig& config, const EncodedDataset& t,
                     const EncodedDataset* dev, const FinetuneConfig& ft, std::uint64_t seed,
                     const StepObserver& observer) {
  ft.validate();
  require_nonempty(t, "fine-tune");
  const auto start = Clock::now();
  StageReport report;
  report.stage = "finetune";
  if (ft.reinit_head) params = model::reinit_task_head(params, config, seed);
  Trainer trainer(params, config, make_optimizer(ft.optimizer), ft.label_smoothing, observer, report);
  const auto monitor = dev ? monitor_set(*dev, ft.eval_subset, seed) : std::vector<model::SeqPair>{};
  EarlyStopMonitor mon{ft.patience};
  std::optional<grad::ParamStore> best;
  auto rng = stream(seed, 4U, 0);
  LoopRecord rec{0, "finetune", t.name, dev ? dev->name : "", 0, StopReason::step_budget};
  for (int step = 1; step <= ft.steps; ++step) {
    const auto batch = sample_batch(t, ft.batch_size, rng);
    trainer.step(batch, model::Block::all, rng, 0, "finetune", step);
    rec.steps = step;
    if (step % ft.eval_every != 0 && step != ft.steps) continue;
    if (!dev) {
      trainer.event(0, "finetune", step, std::nullopt, "");
      continue;
    }
    const double acc = eval::exact_match_ids(params, config, monitor, ft.max_decode_len);
    trainer.event(0, "finetune", step, acc, dev->name);
    const bool improved = acc > mon.best_accuracy;
    const bool stop = accuracy_decreases(mon, acc);
    if (improved) best = params;
    if (stop) {
      rec.stop = StopReason::patience;
      break;
    }
  }
  if (best) params = std::move(*best);
  report.loops.push_back(rec);
  report.seconds = seconds_since(start);
  return report;
}

}  // namespace duel::train
