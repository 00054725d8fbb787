#pragma once

#include <functional>

#include "duel/error.hpp"
#include "duel/grad/graph.hpp"
#include "duel/grad/tensor.hpp"

namespace duel::grad {

/// Central-difference gradient estimate (L(p+h) - L(p-h)) / 2h for every
/// scalar of every parameter accepted by filter (all when empty).
template <typename T>
BasicGradMap<T> finite_difference_gradient(const std::function<double(const BasicParamStore<T>&)>& loss,
                                           BasicParamStore<T> params, double step,
                                           const ParamFilter& filter = {}) {
  if (!(step > 0.0)) throw InputError("finite difference step must be positive");
  BasicGradMap<T> grads;
  for (auto& [name, tensor] : params.entries()) {
    if (filter && !filter(name)) continue;
    auto g = BasicTensor<T>::zeros(tensor.shape);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const T original = tensor.values[i];
      tensor.values[i] = static_cast<T>(original + step);
      const double up = loss(params);
      tensor.values[i] = static_cast<T>(original - step);
      const double down = loss(params);
      tensor.values[i] = original;
      g.values[i] = static_cast<T>((up - down) / (2.0 * step));
    }
    grads.emplace(name, std::move(g));
  }
  return grads;
}

/// max over scalars of |a - b| / (|b| + floor), b being the reference.
template <typename T>
double max_relative_error(const BasicGradMap<T>& actual, const BasicGradMap<T>& reference, double floor = 1e-8) {
  double worst = 0.0;
  for (const auto& [name, ref] : reference) {
    const auto it = actual.find(name);
    if (it == actual.end() || !it->second.same_shape(ref)) {
      throw ShapeError("gradient maps disagree on parameter '" + name + "'");
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double a = it->second.values[i];
      const double b = ref.values[i];
      worst = std::max(worst, std::abs(a - b) / (std::abs(b) + floor));
    }
  }
  return worst;
}

}  // namespace duel::grad
