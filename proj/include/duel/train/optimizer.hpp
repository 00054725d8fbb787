#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "duel/grad/tensor.hpp"
#include "duel/model/config.hpp"

namespace duel::train {

enum class OptimizerKind { adam, sgd };

std::string optimizer_kind_name(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  /// Decoupled: p -= lr * weight_decay * p before the gradient update.
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Adam moments per parameter. Bias correction uses each parameter's own
/// update count, so a block frozen for a while resumes with consistent
/// statistics.
struct OptimizerState {
  OptimizerConfig config;
  std::map<std::string, grad::Tensor> first_moment;
  std::map<std::string, grad::Tensor> second_moment;
  std::map<std::string, std::int64_t> parameter_steps;
  /// Optimizer calls so far.
  std::int64_t step = 0;
};

OptimizerState make_optimizer(const OptimizerConfig& config);

/// AdamW update of the parameters in restrict_to. Parameters outside the
/// block are not touched. Throws UsageError when a gradient for a restricted
/// parameter is missing or mis-shaped.
void adam_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state, model::Block restrict_to);

/// Plain gradient descent with the same decoupled weight decay.
void sgd_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state, model::Block restrict_to);

/// Dispatches on state.config.kind.
void optimizer_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state,
                    model::Block restrict_to);

}  // namespace duel::train
