#include "duel/grad/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace duel::grad::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using StridedConst = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using Strided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace

template <typename T>
void matmul(const T* a, const T* b, T* out, int m, int k, int n, bool accumulate) {
  ConstMap<T> A(a, m, k);
  ConstMap<T> B(b, k, n);
  Map<T> C(out, m, n);
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

template <typename T>
void matmul_at(const T* a, const T* b, T* out, int m, int k, int n, bool accumulate) {
  ConstMap<T> A(a, m, k);
  ConstMap<T> B(b, m, n);
  Map<T> C(out, k, n);
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

template <typename T>
void matmul_bt(const T* a, const T* b, T* out, int m, int n, int k, bool accumulate) {
  ConstMap<T> A(a, m, n);
  ConstMap<T> B(b, k, n);
  Map<T> C(out, m, k);
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

template <typename T>
void layer_norm(const T* x, const T* gain, const T* bias, T* out, T* mean,
                T* rstd, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    T* yr = out + static_cast<std::size_t>(r) * cols;
    T mu = 0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (int c = 0; c < cols; ++c) {
      const T d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gain[c] + bias[c];
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

template <typename T>
void attention(const T* q, const T* k, const T* v, std::span<const std::uint8_t> key_valid,
               const AttentionShape& s, T* out, T* probs) {
  const int hd = s.dim / s.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const Eigen::OuterStride<> stride(s.dim);
  RowMat<T> scores(s.q_len, s.k_len);
  for (int b = 0; b < s.batch; ++b) {
    const std::uint8_t* valid = key_valid.empty() ? nullptr : key_valid.data() + static_cast<std::size_t>(b) * s.k_len;
    for (int h = 0; h < s.heads; ++h) {
      const std::size_t qoff = static_cast<std::size_t>(b) * s.q_len * s.dim + h * hd;
      const std::size_t koff = static_cast<std::size_t>(b) * s.k_len * s.dim + h * hd;
      StridedConst<T> Q(q + qoff, s.q_len, hd, stride);
      StridedConst<T> K(k + koff, s.k_len, hd, stride);
      StridedConst<T> V(v + koff, s.k_len, hd, stride);
      Strided<T> O(out + qoff, s.q_len, hd, stride);
      scores.noalias() = Q * K.transpose();
      for (int i = 0; i < s.q_len; ++i) {
        T* row = scores.data() + static_cast<std::size_t>(i) * s.k_len;
        const int last = s.causal ? std::min(s.k_len, i + s.q_offset + 1) : s.k_len;
        T best = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < last; ++j) {
          if (valid && !valid[j]) continue;
          best = std::max(best, row[j] * scale);
        }
        if (best == -std::numeric_limits<T>::infinity()) {
          std::fill(row, row + s.k_len, T(0));
          continue;
        }
        T total = 0;
        for (int j = 0; j < s.k_len; ++j) {
          const bool visible = j < last && (!valid || valid[j]);
          row[j] = visible ? std::exp(row[j] * scale - best) : T(0);
          total += row[j];
        }
        const T inv = T(1) / total;
        for (int j = 0; j < s.k_len; ++j) row[j] *= inv;
      }
      O.noalias() = scores * V;
      if (probs) {
        std::copy_n(scores.data(), scores.size(),
                    probs + (static_cast<std::size_t>(b) * s.heads + h) * s.q_len * s.k_len);
      }
    }
  }
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* grad_out,
                        const AttentionShape& s, T* dq, T* dk, T* dv) {
  const int hd = s.dim / s.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const Eigen::OuterStride<> stride(s.dim);
  RowMat<T> dp(s.q_len, s.k_len);
  for (int b = 0; b < s.batch; ++b) {
    for (int h = 0; h < s.heads; ++h) {
      const std::size_t qoff = static_cast<std::size_t>(b) * s.q_len * s.dim + h * hd;
      const std::size_t koff = static_cast<std::size_t>(b) * s.k_len * s.dim + h * hd;
      ConstMap<T> P(probs + (static_cast<std::size_t>(b) * s.heads + h) * s.q_len * s.k_len, s.q_len, s.k_len);
      StridedConst<T> G(grad_out + qoff, s.q_len, hd, stride);
      StridedConst<T> V(v + koff, s.k_len, hd, stride);
      if (dv) Strided<T>(dv + koff, s.k_len, hd, stride).noalias() += P.transpose() * G;
      if (!dq && !dk) continue;
      dp.noalias() = G * V.transpose();
      for (int i = 0; i < s.q_len; ++i) {
        const T* pr = P.data() + static_cast<std::size_t>(i) * s.k_len;
        T* dr = dp.data() + static_cast<std::size_t>(i) * s.k_len;
        T weighted = 0;
        for (int j = 0; j < s.k_len; ++j) weighted += pr[j] * dr[j];
        for (int j = 0; j < s.k_len; ++j) dr[j] = pr[j] * (dr[j] - weighted) * scale;
      }
      if (dq) {
        Strided<T>(dq + qoff, s.q_len, hd, stride).noalias() += dp * StridedConst<T>(k + koff, s.k_len, hd, stride);
      }
      if (dk) {
        Strided<T>(dk + koff, s.k_len, hd, stride).noalias() +=
            dp.transpose() * StridedConst<T>(q + qoff, s.q_len, hd, stride);
      }
    }
  }
}

#define DUEL_INSTANTIATE_KERNELS(T)                                                                  \
  template void matmul<T>(const T*, const T*, T*, int, int, int, bool);                            \
  template void matmul_at<T>(const T*, const T*, T*, int, int, int, bool);                         \
  template void matmul_bt<T>(const T*, const T*, T*, int, int, int, bool);                         \
  template void layer_norm<T>(const T*, const T*, const T*, T*, T*, T*, int, int);                 \
  template void attention<T>(const T*, const T*, const T*, std::span<const std::uint8_t>,          \
                             const AttentionShape&, T*, T*);                                    \
  template void attention_backward<T>(const T*, const T*, const T*, const T*, const T*,              \
                                      const AttentionShape&, T*, T*, T*);

DUEL_INSTANTIATE_KERNELS(float)
DUEL_INSTANTIATE_KERNELS(double)

#undef DUEL_INSTANTIATE_KERNELS

}  // namespace duel::grad::kernels
