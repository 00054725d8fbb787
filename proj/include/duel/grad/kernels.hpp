#pragma once

#include <cmath>
#include <cstdint>
#include <span>

// Dense kernels shared by the autodiff graph and the cached
// inference path. All matrices are row-major.
namespace duel::grad::kernels {

/// out[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul(const T* a, const T* b, T* out, int m, int k, int n, bool accumulate);
/// out[k,n] (+)= a[m,k]^T * b[m,n]
template <typename T>
void matmul_at(const T* a, const T* b, T* out, int m, int k, int n, bool accumulate);
/// out[m,k] (+)= a[m,n] * b[k,n]^T
template <typename T>
void matmul_bt(const T* a, const T* b, T* out, int m, int n, int k, bool accumulate);

constexpr double kLayerNormEps = 1e-5;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

/// tanh approximation of GELU.
template <typename T>
inline T gelu(T x) {
  const T t = std::tanh(static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x));
  return static_cast<T>(0.5) * x * (T(1) + t);
}

/// Normalizes each row; mean/rstd (length rows) are written when non-null.
template <typename T>
void layer_norm(const T* x, const T* gain, const T* bias, T* out, T* mean, T* rstd, int rows, int cols);

/// Geometry of one batched multi-head attention call. Queries are laid out
/// [batch*q_len, dim], keys/values [batch*k_len, dim]; head h owns columns
/// [h*dim/heads, (h+1)*dim/heads).
struct AttentionShape {
  int batch = 1;
  int q_len = 1;
  int k_len = 1;
  int dim = 1;
  int heads = 1;
  bool causal = false;
  /// Offset added to the query index before the causal comparison; lets a
  /// single cached query row at position p attend to keys 0..p.
  int q_offset = 0;
};

/// Writes attention output and, when probs is non-null, the softmax
/// weights [batch, heads, q_len, k_len]. key_valid (batch*k_len, may be
/// empty) masks padding keys. Query rows without any visible key get zeros.
template <typename T>
void attention(const T* q, const T* k, const T* v, std::span<const std::uint8_t> key_valid,
               const AttentionShape& shape, T* out, T* probs);

/// Accumulates gradients of attention into dq/dk/dv (each may be null)
/// given the saved softmax weights and the output gradient.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* grad_out,
                        const AttentionShape& shape, T* dq, T* dk, T* dv);

}  // namespace duel::grad::kernels
