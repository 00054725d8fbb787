#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace duel::grad {

std::size_t shape_product(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

/// Dense row-major tensor. The shape product always equals the number of
/// stored values. Training runs on float; the double instantiation exists
/// for numerically tight gradient checks.
template <typename T>
struct BasicTensor {
  using value_type = T;

  std::vector<int> shape;
  std::vector<T> values;

  BasicTensor() = default;
  BasicTensor(std::vector<int> shape, std::vector<T> values);

  static BasicTensor zeros(std::vector<int> shape) { return filled(std::move(shape), T(0)); }
  static BasicTensor filled(std::vector<int> shape, T value);
  static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

  std::size_t size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  /// Leading extent for rank-2 tensors; 1 for vectors and scalars.
  int rows() const { return rank() >= 2 ? shape[0] : 1; }
  /// Trailing extent.
  int cols() const { return shape.empty() ? 1 : shape.back(); }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  bool same_shape(const BasicTensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

/// Named parameters in lexicographic order. Every name lives under
/// "encoder." or "decoder.".
template <typename T>
class BasicParamStore {
 public:
  using Map = std::map<std::string, BasicTensor<T>>;

  BasicParamStore() = default;
  explicit BasicParamStore(std::uint64_t seed) : seed_(seed) {}

  void insert(const std::string& name, BasicTensor<T> value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const BasicTensor<T>& at(const std::string& name) const;
  BasicTensor<T>& at(const std::string& name);

  const Map& entries() const { return entries_; }
  Map& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  friend bool operator==(const BasicParamStore&, const BasicParamStore&) = default;

 private:
  Map entries_;
  std::uint64_t seed_ = 0;
};

using ParamStore = BasicParamStore<float>;

/// Gradients keyed like the ParamStore they were computed for.
template <typename T>
using BasicGradMap = std::map<std::string, BasicTensor<T>>;
using GradMap = BasicGradMap<float>;

/// Element-wise precision conversion, names and seed preserved.
template <typename To, typename From>
BasicParamStore<To> convert(const BasicParamStore<From>& params) {
  BasicParamStore<To> out(params.seed());
  for (const auto& [name, t] : params.entries()) {
    out.insert(name, BasicTensor<To>(t.shape, std::vector<To>(t.values.begin(), t.values.end())));
  }
  return out;
}

extern template struct BasicTensor<float>;
extern template struct BasicTensor<double>;
extern template class BasicParamStore<float>;
extern template class BasicParamStore<double>;

}  // namespace duel::grad
