#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "duel/grad/kernels.hpp"
#include "duel/grad/tensor.hpp"

namespace duel::grad {

/// Handle to a node of a Graph. Default-constructed handles refer to nothing.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Which parameters receive gradients. Parameters rejected by the filter are
/// treated as constants: backward never propagates into them.
using ParamFilter = std::function<bool(const std::string&)>;

/// Eager reverse-mode tape. Every op evaluates immediately (the forward
/// pass) and records what backward needs. One graph serves one loss
/// evaluation; build a new graph per step.
template <typename T>
class BasicGraph {
 public:
  struct Options {
    bool training = false;
    std::uint64_t dropout_seed = 0;
    ParamFilter requires_grad;  // empty: every parameter
  };

  using TensorT = BasicTensor<T>;
  using Store = BasicParamStore<T>;
  using Grads = BasicGradMap<T>;

  explicit BasicGraph(const Store& params);
  BasicGraph(const Store& params, Options options);
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  bool training() const { return options_.training; }

  /// Parameter leaf; repeated calls with one name return the same node.
  Var param(const std::string& name);
  Var input(TensorT value, std::string label = "input");

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a[r,c] + bias[c] for every row r.
  Var add_bias(Var a, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var relu(Var a);
  /// tanh-approximated GELU.
  Var gelu(Var a);
  Var sum(Var a);
  Var layer_norm(Var x, Var gain, Var bias);
  /// Rows of table selected by ids.
  Var gather_rows(Var table, std::vector<int> ids);
  Var attention(Var q, Var k, Var v, std::vector<std::uint8_t> key_valid, kernels::AttentionShape shape);
  /// Inverted dropout; identity outside training or when rate == 0.
  Var dropout(Var x, double rate);
  /// Summed token cross-entropy of logits [rows, vocab] against targets
  /// (target < 0 rows are ignored). With smoothing e the per-row loss is
  /// (1-e)*nll(target) + e*mean_v nll(v).
  Var cross_entropy(Var logits, std::vector<int> targets, double smoothing);

  const TensorT& value(Var v) const;
  void set_label(Var v, std::string label);

  /// Runs reverse accumulation from a scalar loss. Returns one entry per
  /// parameter that passes the filter, zero-filled when off the loss path.
  Grads backward(Var loss);

 private:
  struct Node {
    std::string op;
    TensorT value;
    TensorT grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(std::string op, TensorT value, bool needs_grad);
  Node& node(Var v);
  const Node& node(Var v) const;
  TensorT& grad_of(int id);
  std::string describe(int id) const;
  void check_finite(Var v);
  bool any_needs_grad(std::initializer_list<Var> vars) const;

  const Store& params_;
  Options options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  std::mt19937_64 dropout_rng_;
  bool backward_done_ = false;
};

using Graph = BasicGraph<float>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace duel::grad
