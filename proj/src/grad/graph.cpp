#include "duel/grad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "duel/error.hpp"

namespace duel::grad {

template <typename T>
BasicGraph<T>::BasicGraph(const Store& params) : BasicGraph(params, Options{}) {}

template <typename T>
BasicGraph<T>::BasicGraph(const Store& params, Options options)
    : params_(params), options_(std::move(options)), dropout_rng_(options_.dropout_seed) {
  nodes_.reserve(256);
}

template <typename T>
Var BasicGraph<T>::push(std::string op, TensorT value, bool needs_grad) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename BasicGraph<T>::Node& BasicGraph<T>::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw UsageError("variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw UsageError("variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
BasicTensor<T>& BasicGraph<T>::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.values.empty()) n.grad = TensorT::zeros(n.value.shape);
  return n.grad;
}

template <typename T>
std::string BasicGraph<T>::describe(int id) const {
  return "'" + nodes_[static_cast<std::size_t>(id)].op + "#" + std::to_string(id) + "'";
}

template <typename T>
void BasicGraph<T>::check_finite(Var v) {
  if (!node(v).value.all_finite()) {
    throw NumericError("non-finite value produced by node " + describe(v.id));
  }
}

template <typename T>
bool BasicGraph<T>::any_needs_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return node(v).needs_grad; });
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::value(Var v) const { return node(v).value; }

template <typename T>
void BasicGraph<T>::set_label(Var v, std::string label) { node(v).op = std::move(label); }

template <typename T>
Var BasicGraph<T>::param(const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{it->second};
  const TensorT& t = params_.at(name);
  const bool trainable = !options_.requires_grad || options_.requires_grad(name);
  Var v = push(name, t, trainable);
  param_nodes_.emplace(name, v.id);
  check_finite(v);
  return v;
}

template <typename T>
Var BasicGraph<T>::input(TensorT value, std::string label) {
  Var v = push(std::move(label), std::move(value), false);
  check_finite(v);
  return v;
}

template <typename T>
Var BasicGraph<T>::matmul(Var a, Var b) {
  const TensorT& A = value(a);
  const TensorT& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) {
    throw ShapeError("matmul#" + std::to_string(nodes_.size()) + ": cannot multiply " +
                     shape_string(A.shape) + " by " + shape_string(B.shape));
  }
  const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  TensorT out = TensorT::zeros({m, n});
  kernels::matmul(A.data(), B.data(), out.data(), m, k, n, false);
  Var o = push("matmul", std::move(out), any_needs_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).backward = [this, a, b, o, m, k, n] {
      const TensorT& g = nodes_[o.id].grad;
      if (nodes_[a.id].needs_grad) {
        kernels::matmul_bt(g.data(), nodes_[b.id].value.data(), grad_of(a.id).data(), m, n, k, true);
      }
      if (nodes_[b.id].needs_grad) {
        kernels::matmul_at(nodes_[a.id].value.data(), g.data(), grad_of(b.id).data(), m, k, n, true);
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::add(Var a, Var b) {
  const TensorT& A = value(a);
  const TensorT& B = value(b);
  if (!A.same_shape(B)) {
    throw ShapeError("add#" + std::to_string(nodes_.size()) + ": shapes " + shape_string(A.shape) +
                     " and " + shape_string(B.shape) + " differ");
  }
  TensorT out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += B.values[i];
  Var o = push("add", std::move(out), any_needs_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).backward = [this, a, b, o] {
      const TensorT& g = nodes_[o.id].grad;
      for (Var p : {a, b}) {
        if (!nodes_[p.id].needs_grad) continue;
        TensorT& gp = grad_of(p.id);
        for (std::size_t i = 0; i < g.size(); ++i) gp.values[i] += g.values[i];
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::add_bias(Var a, Var bias) {
  const TensorT& A = value(a);
  const TensorT& b = value(bias);
  if (A.rank() != 2 || b.size() != static_cast<std::size_t>(A.cols())) {
    throw ShapeError("add_bias#" + std::to_string(nodes_.size()) + ": bias " + shape_string(b.shape) +
                     " does not match " + shape_string(A.shape));
  }
  const int rows = A.rows(), cols = A.cols();
  TensorT out = A;
  for (int r = 0; r < rows; ++r) {
    T* row = out.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += b.values[c];
  }
  Var o = push("add_bias", std::move(out), any_needs_grad({a, bias}));
  if (node(o).needs_grad) {
    node(o).backward = [this, a, bias, o, rows, cols] {
      const TensorT& g = nodes_[o.id].grad;
      if (nodes_[a.id].needs_grad) {
        TensorT& ga = grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i];
      }
      if (nodes_[bias.id].needs_grad) {
        TensorT& gb = grad_of(bias.id);
        for (int r = 0; r < rows; ++r) {
          const T* row = g.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) gb.values[c] += row[c];
        }
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::mul(Var a, Var b) {
  const TensorT& A = value(a);
  const TensorT& B = value(b);
  if (!A.same_shape(B)) {
    throw ShapeError("mul#" + std::to_string(nodes_.size()) + ": shapes " + shape_string(A.shape) +
                     " and " + shape_string(B.shape) + " differ");
  }
  TensorT out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= B.values[i];
  Var o = push("mul", std::move(out), any_needs_grad({a, b}));
  if (node(o).needs_grad) {
    node(o).backward = [this, a, b, o] {
      const TensorT& g = nodes_[o.id].grad;
      if (nodes_[a.id].needs_grad) {
        TensorT& ga = grad_of(a.id);
        const TensorT& vb = nodes_[b.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * vb.values[i];
      }
      if (nodes_[b.id].needs_grad) {
        TensorT& gb = grad_of(b.id);
        const TensorT& va = nodes_[a.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) gb.values[i] += g.values[i] * va.values[i];
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::scale(Var a, double factor) {
  const T f = static_cast<T>(factor);
  TensorT out = value(a);
  for (T& x : out.values) x *= f;
  Var o = push("scale", std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, a, o, f] {
      const TensorT& g = nodes_[o.id].grad;
      TensorT& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * f;
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::relu(Var a) {
  TensorT out = value(a);
  for (T& x : out.values) x = x > T(0) ? x : T(0);
  Var o = push("relu", std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, a, o] {
      const TensorT& g = nodes_[o.id].grad;
      const TensorT& y = nodes_[o.id].value;
      TensorT& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (y.values[i] > T(0)) ga.values[i] += g.values[i];
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::gelu(Var a) {
  constexpr T kC = static_cast<T>(kernels::kGeluC);
  constexpr T kA = static_cast<T>(kernels::kGeluA);
  const TensorT& X = value(a);
  TensorT out = X;
  auto th = std::make_shared<std::vector<T>>(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T x = X.values[i];
    const T t = std::tanh(kC * (x + kA * x * x * x));
    (*th)[i] = t;
    out.values[i] = T(0.5) * x * (T(1) + t);
  }
  Var o = push("gelu", std::move(out), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, a, o, th] {
      const TensorT& g = nodes_[o.id].grad;
      const TensorT& X = nodes_[a.id].value;
      TensorT& ga = grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = X.values[i];
        const T t = (*th)[i];
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
        ga.values[i] += g.values[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * dt);
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::sum(Var a) {
  T total = 0;
  for (T x : value(a).values) total += x;
  Var o = push("sum", TensorT::scalar(total), node(a).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, a, o] {
      const T g = nodes_[o.id].grad.values[0];
      TensorT& ga = grad_of(a.id);
      for (T& x : ga.values) x += g;
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::layer_norm(Var x, Var gain, Var bias) {
  const TensorT& X = value(x);
  const int rows = X.rows(), cols = X.cols();
  if (value(gain).size() != static_cast<std::size_t>(cols) || value(bias).size() != static_cast<std::size_t>(cols)) {
    throw ShapeError("layer_norm#" + std::to_string(nodes_.size()) + ": gain/bias do not match width " +
                     std::to_string(cols));
  }
  TensorT out = TensorT::zeros(X.shape);
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  kernels::layer_norm(X.data(), value(gain).data(), value(bias).data(), out.data(), mean->data(), rstd->data(),
                      rows, cols);
  Var o = push("layer_norm", std::move(out), any_needs_grad({x, gain, bias}));
  if (node(o).needs_grad) {
    node(o).backward = [this, x, gain, bias, o, rows, cols, mean, rstd] {
      const TensorT& g = nodes_[o.id].grad;
      const TensorT& X = nodes_[x.id].value;
      const TensorT& G = nodes_[gain.id].value;
      const bool gx = nodes_[x.id].needs_grad;
      const bool gg = nodes_[gain.id].needs_grad;
      const bool gbias = nodes_[bias.id].needs_grad;
      T* dx = gx ? grad_of(x.id).data() : nullptr;
      T* dgain = gg ? grad_of(gain.id).data() : nullptr;
      T* dbias = gbias ? grad_of(bias.id).data() : nullptr;
      std::vector<T> xhat(static_cast<std::size_t>(cols));
      std::vector<T> dxhat(static_cast<std::size_t>(cols));
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        const T mu = (*mean)[r], rs = (*rstd)[r];
        T mean_d = 0, mean_dx = 0;
        for (int c = 0; c < cols; ++c) {
          xhat[c] = (X.values[off + c] - mu) * rs;
          dxhat[c] = g.values[off + c] * G.values[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * xhat[c];
          if (dgain) dgain[c] += g.values[off + c] * xhat[c];
          if (dbias) dbias[c] += g.values[off + c];
        }
        if (!dx) continue;
        mean_d /= static_cast<T>(cols);
        mean_dx /= static_cast<T>(cols);
        for (int c = 0; c < cols; ++c) dx[off + c] += rs * (dxhat[c] - mean_d - xhat[c] * mean_dx);
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::gather_rows(Var table, std::vector<int> ids) {
  const TensorT& tab = value(table);
  if (tab.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_string(tab.shape));
  const int width = tab.cols();
  TensorT out = TensorT::zeros({static_cast<int>(ids.size()), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tab.rows()) {
      throw InputError("gather_rows#" + std::to_string(nodes_.size()) + ": index " + std::to_string(ids[r]) +
                       " outside table of " + std::to_string(tab.rows()) + " rows");
    }
    std::copy_n(tab.data() + static_cast<std::size_t>(ids[r]) * width, width, out.data() + r * width);
  }
  Var o = push("gather_rows", std::move(out), node(table).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, table, o, width, ids = std::move(ids)] {
      const TensorT& g = nodes_[o.id].grad;
      TensorT& gt = grad_of(table.id);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        T* dst = gt.data() + static_cast<std::size_t>(ids[r]) * width;
        const T* src = g.data() + r * width;
        for (int c = 0; c < width; ++c) dst[c] += src[c];
      }
    };
  }
  return o;
}

template <typename T>
Var BasicGraph<T>::attention(Var q, Var k, Var v, std::vector<std::uint8_t> key_valid, kernels::AttentionShape s) {
  const TensorT& Q = value(q);
  const TensorT& K = value(k);
  const TensorT& V = value(v);
  const auto expect = [&](const TensorT& t, int rows, const char* what) {
    if (t.rank() != 2 || t.shape[0] != rows || t.shape[1] != s.dim) {
      throw ShapeError("attention#" + std::to_string(nodes_.size()) + ": " + what + " has shape " +
                       shape_string(t.shape) + ", expected [" + std::to_string(rows) + "," +
                       std::to_string(s.dim) + "]");
    }
  };
  expect(Q, s.batch * s.q_len, "query");
  expect(K, s.batch * s.k_len, "key");
  expect(V, s.batch * s.k_len, "value");
  if (s.heads <= 0 || s.dim % s.heads != 0) throw ShapeError("attention: dim not divisible by heads");
  if (!key_valid.empty() && key_valid.size() != static_cast<std::size_t>(s.batch * s.k_len)) {
    throw ShapeError("attention: key mask size mismatch");
  }
  TensorT out = TensorT::zeros({s.batch * s.q_len, s.dim});
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.batch) * s.heads * s.q_len * s.k_len);
  kernels::attention(Q.data(), K.data(), V.data(), key_valid, s, out.data(), probs->data());
  Var o = push("attention", std::move(out), any_needs_grad({q, k, v}));
  if (node(o).needs_grad) {
    node(o).backward = [this, q, k, v, o, s, probs] {
      const TensorT& g = nodes_[o.id].grad;
      const TensorT& Q = nodes_[q.id].value;
      const TensorT& K = nodes_[k.id].value;
      const TensorT& V = nodes_[v.id].value;
      T* dq = nodes_[q.id].needs_grad ? grad_of(q.id).data() : nullptr;
      T* dk = nodes_[k.id].needs_grad ? grad_of(k.id).data() : nullptr;
      T* dv = nodes_[v.id].needs_grad ? grad_of(v.id).data() : nullptr;
      kernels::attention_backward(Q.data(), K.data(), V.data(), probs->data(), g.data(), s, dq, dk, dv);
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
Var BasicGraph<T>::dropout(Var x, double rate) {
  if (!options_.training || rate <= 0.0) return x;
  if (rate >= 1.0) throw InputError("dropout rate must be below 1");
  const TensorT& X = value(x);
  auto mask = std::make_shared<std::vector<T>>(X.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const T inv = static_cast<T>(1.0 / (1.0 - rate));
  TensorT out = X;
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*mask)[i] = keep(dropout_rng_) ? inv : T(0);
    out.values[i] *= (*mask)[i];
  }
  Var o = push("dropout", std::move(out), node(x).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, x, o, mask] {
      const TensorT& g = nodes_[o.id].grad;
      TensorT& gx = grad_of(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.values[i] += g.values[i] * (*mask)[i];
    };
  }
  return o;
}

template <typename T>
Var BasicGraph<T>::cross_entropy(Var logits, std::vector<int> targets, double smoothing) {
  const TensorT& L = value(logits);
  if (L.rank() != 2 || targets.size() != static_cast<std::size_t>(L.rows())) {
    throw ShapeError("cross_entropy#" + std::to_string(nodes_.size()) + ": logits " + shape_string(L.shape) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  if (smoothing < 0.0 || smoothing > 1.0) throw InputError("label smoothing must lie in [0,1]");
  const int rows = L.rows(), vocab = L.cols();
  auto softmax = std::make_shared<std::vector<T>>(L.size());
  // Accumulated in double for both instantiations.
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    if (t >= vocab) {
      throw InputError("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    const T* z = L.data() + static_cast<std::size_t>(r) * vocab;
    T* p = softmax->data() + static_cast<std::size_t>(r) * vocab;
    const T zmax = *std::max_element(z, z + vocab);
    double denom = 0.0, zsum = 0.0;
    for (int c = 0; c < vocab; ++c) {
      p[c] = std::exp(z[c] - zmax);
      denom += p[c];
      zsum += z[c];
    }
    const double lse = zmax + std::log(denom);
    for (int c = 0; c < vocab; ++c) p[c] = static_cast<T>(p[c] / denom);
    const double nll_target = lse - z[t];
    const double nll_mean = lse - zsum / vocab;
    total += (1.0 - smoothing) * nll_target + smoothing * nll_mean;
  }
  Var o = push("cross_entropy", TensorT::scalar(static_cast<T>(total)), node(logits).needs_grad);
  if (node(o).needs_grad) {
    node(o).backward = [this, logits, o, rows, vocab, smoothing, softmax, targets = std::move(targets)] {
      const T g = nodes_[o.id].grad.values[0];
      TensorT& gl = grad_of(logits.id);
      const T uniform = static_cast<T>(smoothing / vocab);
      for (int r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t < 0) continue;
        const T* p = softmax->data() + static_cast<std::size_t>(r) * vocab;
        T* d = gl.data() + static_cast<std::size_t>(r) * vocab;
        for (int c = 0; c < vocab; ++c) d[c] += g * (p[c] - uniform);
        d[t] -= g * static_cast<T>(1.0 - smoothing);
      }
    };
  }
  check_finite(o);
  return o;
}

template <typename T>
BasicGradMap<T> BasicGraph<T>::backward(Var loss) {
  if (!loss.valid()) throw UsageError("backward called before a forward pass produced a loss");
  if (backward_done_) throw UsageError("backward already ran on this graph; build a new graph per step");
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw UsageError("backward needs a scalar loss, node " + describe(loss.id) + " has shape " +
                     shape_string(root.value.shape));
  }
  backward_done_ = true;
  if (root.needs_grad) {
    grad_of(loss.id).values[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && !n.grad.values.empty()) n.backward();
    }
  }
  Grads grads;
  for (const auto& [name, t] : params_.entries()) {
    if (options_.requires_grad && !options_.requires_grad(name)) continue;
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end() && !nodes_[it->second].grad.values.empty()) {
      grads.emplace(name, nodes_[it->second].grad);
    } else {
      grads.emplace(name, TensorT::zeros(t.shape));
    }
  }
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
  return grads;
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace duel::grad
