#include "duel/grad/tensor.hpp"

#include <bit>
#include <cmath>
#include <sstream>
#include <type_traits>

#include "duel/error.hpp"

namespace duel::grad {

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_product(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(std::vector<int> shape, T value) {
  const auto n = shape_product(shape);
  BasicTensor t;
  t.shape = std::move(shape);
  t.values.assign(n, value);
  return t;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  // Exponent bits all set means inf or NaN. The integer form vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits kExp = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & kExp) == kExp);
  return bad == 0;
}

template <typename T>
void BasicParamStore<T>::insert(const std::string& name, BasicTensor<T> value) {
  if (name.rfind("encoder.", 0) != 0 && name.rfind("decoder.", 0) != 0) {
    throw InputError("parameter name '" + name + "' must start with encoder. or decoder.");
  }
  if (!entries_.emplace(name, std::move(value)).second) {
    throw InputError("duplicate parameter name '" + name + "'");
  }
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw InputError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw InputError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t BasicParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

template struct BasicTensor<float>;
template struct BasicTensor<double>;
template class BasicParamStore<float>;
template class BasicParamStore<double>;

}  // namespace duel::grad
