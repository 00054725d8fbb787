#include "duel/train/optimizer.hpp"

#include <cmath>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::train {
namespace {

const grad::Tensor& gradient_for(const grad::GradMap& grads, const std::string& name, const grad::Tensor& param) {
  auto it = grads.find(name);
  if (it == grads.end()) throw UsageError("optimizer: no gradient for parameter '" + name + "'");
  if (it->second.shape != param.shape) {
    throw UsageError("optimizer: gradient for '" + name + "' has shape " + grad::shape_string(it->second.shape) +
                     ", parameter has " + grad::shape_string(param.shape));
  }
  return it->second;
}

}  // namespace

std::string optimizer_kind_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

OptimizerState make_optimizer(const OptimizerConfig& config) {
  config.validate();
  OptimizerState s;
  s.config = config;
  return s;
}

void adam_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state,
               model::Block restrict_to) {
  const auto& c = state.config;
  for (auto& [name, p] : params.entries()) {
    if (!model::in_block(name, restrict_to)) continue;
    const auto& g = gradient_for(grads, name, p);
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.shape != p.shape) m = grad::Tensor::zeros(p.shape);
    if (v.shape != p.shape) v = grad::Tensor::zeros(p.shape);
    const auto t = static_cast<double>(++state.parameter_steps[name]);
    const double c1 = 1.0 - std::pow(c.beta1, t);
    const double c2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.values[i];
      double pi = p.values[i];
      const double mi = c.beta1 * m.values[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v.values[i] + (1.0 - c.beta2) * gi * gi;
      m.values[i] = static_cast<float>(mi);
      v.values[i] = static_cast<float>(vi);
      pi -= c.learning_rate * c.weight_decay * pi;
      pi -= c.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + c.epsilon);
      p.values[i] = static_cast<float>(pi);
    }
  }
  ++state.step;
}

void sgd_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state, model::Block restrict_to) {
  const auto& c = state.config;
  for (auto& [name, p] : params.entries()) {
    if (!model::in_block(name, restrict_to)) continue;
    const auto& g = gradient_for(grads, name, p);
    ++state.parameter_steps[name];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double pi = p.values[i];
      pi -= c.learning_rate * c.weight_decay * pi;
      pi -= c.learning_rate * static_cast<double>(g.values[i]);
      p.values[i] = static_cast<float>(pi);
    }
  }
  ++state.step;
}

void optimizer_step(grad::ParamStore& params, const grad::GradMap& grads, OptimizerState& state,
                    model::Block restrict_to) {
  if (state.config.kind == OptimizerKind::adam) {
    adam_step(params, grads, state, restrict_to);
  } else {
    sgd_step(params, grads, state, restrict_to);
  }
}

}  // namespace duel::train
