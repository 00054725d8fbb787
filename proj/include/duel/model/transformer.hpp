#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "duel/grad/graph.hpp"
#include "duel/grad/tensor.hpp"
#include "duel/model/config.hpp"

namespace duel::model {

/// One training pair as raw vocabulary ids, without BOS/EOS. The model
/// feeds sources as ids+EOS and targets as BOS+ids (input) / ids+EOS
/// (prediction targets).
struct SeqPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

/// Fresh parameters. Matrices are uniform in +-sqrt(3/fan_in) (variance
/// 1/fan_in), biases zero, layer-norm gains one. Every entry draws from a
/// stream keyed on (seed, name), so one block can be redrawn on its own.
grad::ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Redraws every phi ("decoder.") entry with the given seed; theta entries
/// are copied bit-for-bit.
grad::ParamStore reinit_task_head(const grad::ParamStore& params, const ModelConfig& cfg, std::uint64_t seed);

/// Teacher-forced logits [batch*T, vocab] where T is the longest target
/// plus one. Row b*T+t predicts target token t of example b (token
/// len(tgt_b) being EOS); rows past that are padding.
template <typename T>
grad::Var build_logits(grad::BasicGraph<T>& g, const ModelConfig& cfg, std::span<const SeqPair> batch);

/// Mean over the batch of the summed per-token (optionally smoothed)
/// cross-entropy: (1/N) sum_n sum_t loss_t.
template <typename T>
grad::Var build_loss(grad::BasicGraph<T>& g, const ModelConfig& cfg, std::span<const SeqPair> batch,
                     double label_smoothing);

/// sum_t log p(y_t | y_<t, x) under teacher forcing, EOS included.
double sequence_log_prob(const grad::ParamStore& params, const ModelConfig& cfg, const SeqPair& pair);

/// Value of build_loss without dropout.
double training_loss(const grad::ParamStore& params, const ModelConfig& cfg, std::span<const SeqPair> batch,
                     double label_smoothing);

struct Decoded {
  std::vector<int> ids;     // generated tokens, EOS excluded
  bool hit_max_len = false;  // stopped by the length cap rather than EOS
};

/// Greedy argmax decoding from BOS; ties go to the lowest id. Stops at EOS
/// or after max_len generated tokens (max_len <= cfg.max_tgt_len).
Decoded greedy_decode(const grad::ParamStore& params, const ModelConfig& cfg, std::span<const int> src, int max_len);

/// Batched form of greedy_decode; each result matches the single call.
std::vector<Decoded> greedy_decode_batch(const grad::ParamStore& params, const ModelConfig& cfg,
                                         std::span<const std::vector<int>> srcs, int max_len,
                                         int batch_size = 64);

/// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace duel::model
