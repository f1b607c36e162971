#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#if defined(EENED_USE_CBLAS)
#include <cblas.h>
#endif

#include "eened/errors.hpp"
#include "eened/rng.hpp"
#include "eened/tape.hpp"
#include "eened/tensor.hpp"

// Differentiable primitives. Every op validates shapes before reading data,
// computes its value eagerly and, when an input is tracked by the active
// tape, records a backward closure that accumulates into its inputs.

namespace eened {

namespace detail {

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return nullptr;
  for (const Tensor<T>* in : inputs) {
    if (tape->tracks(*in)) return tape;
  }
  return nullptr;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (t.empty() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         (t.empty() ? std::string("empty tensor") : t.shape().str()));
  }
}

inline DimensionError mismatch(const char* op, const Shape& a, const Shape& b) {
  return DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

#if defined(EENED_USE_CBLAS)
template <typename T>
constexpr bool kBlas = std::is_same_v<T, float> || std::is_same_v<T, double>;

// Row-major C[m×n] += op(A) · op(B)
template <typename T>
void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
               std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto i = [](std::size_t v) { return static_cast<int>(v); };
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, i(m), i(n), i(k), 1.0f, a, i(lda), b, i(ldb), 1.0f, c, i(ldc));
  } else {
    cblas_dgemm(CblasRowMajor, ta, tb, i(m), i(n), i(k), 1.0, a, i(lda), b, i(ldb), 1.0, c, i(ldc));
  }
}
#else
template <typename T>
constexpr bool kBlas = false;
template <typename T>
void blas_gemm(int, int, std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, std::size_t, T*,
               std::size_t) {}
inline constexpr int CblasNoTrans = 0, CblasTrans = 1;
#endif

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  if constexpr (kBlas<T>) return blas_gemm(CblasNoTrans, CblasNoTrans, m, n, k, a, k, b, n, c, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += G[m×n] · B[k×n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* c) {
  if constexpr (kBlas<T>) return blas_gemm(CblasNoTrans, CblasTrans, m, k, n, g, n, b, n, c, k);
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k×n] += A[m×k]^T · G[m×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  if constexpr (kBlas<T>) return blas_gemm(CblasTrans, CblasNoTrans, k, n, m, a, k, g, n, c, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul", "lhs");
  detail::require_rank(b, 2, "matmul", "rhs");
  if (a.cols() != b.rows()) throw detail::mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  Tensor<T> result(Shape{m, n}, std::move(out));
  auto* tape = detail::recording_tape({&a, &b});
  if (!tape) return result;
  return tape->record(OpKind::matmul, result, {&a, &b}, [a, b, m, k, n](std::span<const T> g, const auto& in) {
    if (auto ga = in[0]; !ga.empty()) detail::gemm_nt(m, n, k, g.data(), b.data().data(), ga.data());
    if (auto gb = in[1]; !gb.empty()) detail::gemm_tn(m, k, n, a.data().data(), g.data(), gb.data());
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose", "input");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  Tensor<T> result(Shape{c, r}, std::move(out));
  auto* tape = detail::recording_tape({&a});
  if (!tape) return result;
  return tape->record(OpKind::transpose, result, {&a}, [r, c](std::span<const T> g, const auto& in) {
    auto ga = in[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty() || b.empty() || !(a.shape() == b.shape())) throw detail::mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = detail::recording_tape({&a, &b});
  if (!tape) return result;
  return tape->record(OpKind::add, result, {&a, &b}, [](std::span<const T> g, const auto& in) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto gi = in[s]; !gi.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty() || b.empty() || !(a.shape() == b.shape())) throw detail::mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = detail::recording_tape({&a, &b});
  if (!tape) return result;
  return tape->record(OpKind::mul, result, {&a, &b}, [a, b](std::span<const T> g, const auto& in) {
    auto x = a.data(), y = b.data();
    if (auto ga = in[0]; !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    if (auto gb = in[1]; !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = detail::recording_tape({&a});
  if (!tape) return result;
  return tape->record(OpKind::scale, result, {&a}, [s](std::span<const T> g, const auto& in) {
    auto ga = in[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

/// x[r×c] + 1·b^T with b of length c.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank(x, 2, "add_bias", "input");
  detail::require_rank(b, 1, "add_bias", "bias");
  if (b.size() != x.cols()) throw detail::mismatch("add_bias", x.shape(), b.shape());
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x, &b});
  if (!tape) return result;
  return tape->record(OpKind::add_bias, result, {&x, &b}, [r, c](std::span<const T> g, const auto& in) {
    if (auto gx = in[0]; !gx.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (auto gb = in[1]; !gb.empty())
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
  });
}

/// Logistic function, clamped to the open interval (0, 1) at working precision.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  std::vector<T> out(x.size());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(detail::sigmoid_scalar(v[i]), lo, hi);
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::sigmoid, result, {&x}, [result](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    auto y = result.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

/// x · sigmoid(x)
template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * detail::sigmoid_scalar(v[i]);
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::swish, result, {&x}, [x](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    auto v = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = detail::sigmoid_scalar(v[i]);
      gx[i] += g[i] * (s + v[i] * s * (T(1) - s));
    }
  });
}

/// Row-wise softmax with the row maximum subtracted first.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "softmax_rows", "input");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(r * c);
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = v.data() + i * c;
    T* dst = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::softmax_rows, result, {&x}, [result, r, c](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    auto y = result.data();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

/// Per-row normalization to zero mean and unit (biased) variance, then gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::require_rank(x, 2, "layer_norm", "input");
  detail::require_rank(gamma, 1, "layer_norm", "gamma");
  detail::require_rank(beta, 1, "layer_norm", "beta");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c) throw detail::mismatch("layer_norm", x.shape(), gamma.shape());
  if (beta.size() != c) throw detail::mismatch("layer_norm", x.shape(), beta.shape());
  std::vector<T> xhat(r * c), inv_std(r), out(r * c);
  auto v = x.data(), gm = gamma.data(), bt = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = v.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gm[j] + bt[j];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x, &gamma, &beta});
  if (!tape) return result;
  return tape->record(
      OpKind::layer_norm, result, {&x, &gamma, &beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](std::span<const T> g, const auto& in) {
        auto gm = gamma.data();
        if (auto gx = in[0]; !gx.empty()) {
          for (std::size_t i = 0; i < r; ++i) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T gh = g[i * c + j] * gm[j];
              m1 += gh;
              m2 += gh * xhat[i * c + j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T gh = g[i * c + j] * gm[j];
              gx[i * c + j] += inv_std[i] * (gh - m1 - xhat[i * c + j] * m2);
            }
          }
        }
        if (auto gg = in[1]; !gg.empty())
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
        if (auto gb = in[2]; !gb.empty())
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      });
}

/// Kernel-size-1 convolution over time: x[T×C_in] · w[C_in×C_out] + b.
template <typename T>
Tensor<T> conv1d_pointwise(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 2, "conv1d_pointwise", "input");
  detail::require_rank(w, 2, "conv1d_pointwise", "weight");
  detail::require_rank(b, 1, "conv1d_pointwise", "bias");
  if (x.cols() != w.rows()) throw detail::mismatch("conv1d_pointwise", x.shape(), w.shape());
  if (b.size() != w.cols()) throw detail::mismatch("conv1d_pointwise", w.shape(), b.shape());
  const std::size_t t = x.rows(), ci = x.cols(), co = w.cols();
  std::vector<T> out(t * co, T(0));
  detail::gemm_nn(t, ci, co, x.data().data(), w.data().data(), out.data());
  auto bv = b.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t o = 0; o < co; ++o) out[i * co + o] += bv[o];
  Tensor<T> result(Shape{t, co}, std::move(out));
  auto* tape = detail::recording_tape({&x, &w, &b});
  if (!tape) return result;
  return tape->record(OpKind::conv1d_pointwise, result, {&x, &w, &b},
                      [x, w, t, ci, co](std::span<const T> g, const auto& in) {
                        if (auto gx = in[0]; !gx.empty()) detail::gemm_nt(t, co, ci, g.data(), w.data().data(), gx.data());
                        if (auto gw = in[1]; !gw.empty()) detail::gemm_tn(t, ci, co, x.data().data(), g.data(), gw.data());
                        if (auto gb = in[2]; !gb.empty())
                          for (std::size_t i = 0; i < t; ++i)
                            for (std::size_t o = 0; o < co; ++o) gb[o] += g[i * co + o];
                      });
}

/// Depthwise (groups == channels) 1-D cross-correlation over time with zero
/// padding: out[t,c] = b[c] + sum_j k[c,j] * x[t + j - pad, c].
template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, std::size_t pad) {
  detail::require_rank(x, 2, "conv1d_depthwise", "input");
  detail::require_rank(k, 2, "conv1d_depthwise", "kernel");
  detail::require_rank(b, 1, "conv1d_depthwise", "bias");
  if (k.rows() != x.cols()) throw detail::mismatch("conv1d_depthwise", x.shape(), k.shape());
  if (b.size() != x.cols()) throw detail::mismatch("conv1d_depthwise", x.shape(), b.shape());
  const std::size_t kw = k.cols();
  if (kw % 2 == 0) throw ConfigError("conv1d_depthwise: kernel size must be odd, got " + std::to_string(kw));
  if (pad != (kw - 1) / 2) {
    throw ConfigError("conv1d_depthwise: padding must be (kernel - 1) / 2 = " + std::to_string((kw - 1) / 2) +
                      ", got " + std::to_string(pad));
  }
  const std::size_t t = x.rows(), c = x.cols();
  std::vector<T> out(t * c);
  auto xv = x.data(), kv = k.data(), bv = b.data();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = bv[ch];
      for (std::size_t j = 0; j < kw; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        acc += kv[ch * kw + j] * xv[static_cast<std::size_t>(src) * c + ch];
      }
      out[i * c + ch] = acc;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x, &k, &b});
  if (!tape) return result;
  return tape->record(
      OpKind::conv1d_depthwise, result, {&x, &k, &b}, [x, k, t, c, kw, pad](std::span<const T> g, const auto& in) {
        auto gx = in[0], gk = in[1], gb = in[2];
        auto xv = x.data(), kv = k.data();
        for (std::size_t i = 0; i < t; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T go = g[i * c + ch];
            if (!gb.empty()) gb[ch] += go;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - static_cast<std::ptrdiff_t>(pad);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
              const std::size_t s = static_cast<std::size_t>(src) * c + ch;
              if (!gx.empty()) gx[s] += go * kv[ch * kw + j];
              if (!gk.empty()) gk[ch * kw + j] += go * xv[s];
            }
          }
        }
      });
}

/// Inverted dropout. Identity when not training or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (!rng) throw ContractError("dropout in training mode needs a random generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size()), out(x.size());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng->uniform() < p ? T(0) : keep_scale;
    out[i] = v[i] * mask[i];
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::dropout, result, {&x}, [mask = std::move(mask)](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

/// [A_1 | A_2 | ...] for matrices with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  for (const auto& p : parts) detail::require_rank(p, 2, "concat_cols", "input");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw detail::mismatch("concat_cols", parts.front().shape(), p.shape());
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<T> out(r * total);
  for (std::size_t n = 0; n < parts.size(); ++n) {
    const std::size_t pc = parts[n].cols();
    auto v = parts[n].data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * pc, pc, out.data() + i * total + offsets[n]);
  }
  Tensor<T> result(Shape{r, total}, std::move(out));
  Tape<T>* tape = Tape<T>::active();
  if (!tape || std::none_of(parts.begin(), parts.end(), [&](const auto& p) { return tape->tracks(p); })) {
    return result;
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  return tape->record(OpKind::concat_cols, result, parts,
                      [r, total, offsets, widths](std::span<const T> g, const auto& in) {
                        for (std::size_t n = 0; n < widths.size(); ++n) {
                          auto gp = in[n];
                          if (gp.empty()) continue;
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < widths[n]; ++j)
                              gp[i * widths[n] + j] += g[i * total + offsets[n] + j];
                        }
                      });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols", "input");
  if (begin >= end || end > x.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + x.shape().str());
  }
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  std::vector<T> out(r * w);
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * c + begin, w, out.data() + i * w);
  Tensor<T> result(Shape{r, w}, std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::slice_cols, result, {&x}, [r, c, w, begin](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
  });
}

/// Mean over rows: x[r×c] -> [1×c].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "mean_rows", "input");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(c, T(0));
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  for (auto& o : out) o /= static_cast<T>(r);
  Tensor<T> result(Shape{1, c}, std::move(out));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::mean_rows, result, {&x}, [r, c](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    const T inv = T(1) / static_cast<T>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.size() != x.size()) throw detail::mismatch("reshape", x.shape(), shape);
  Tensor<T> result(shape, std::vector<T>(x.data().begin(), x.data().end()));
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::reshape, result, {&x}, [](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Sum of all elements as a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  Tensor<T> result(Shape{1}, {total});
  auto* tape = detail::recording_tape({&x});
  if (!tape) return result;
  return tape->record(OpKind::sum, result, {&x}, [](std::span<const T> g, const auto& in) {
    auto gx = in[0];
    for (auto& v : gx) v += g[0];
  });
}

/// Mean binary cross-entropy of probabilities `p` against 0/1 `labels`.
/// Probabilities are clamped to [eps, 1 - eps]; the clamp passes no gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, std::span<const T> labels, T eps = T(1e-7)) {
  if (p.empty() || p.size() != labels.size()) {
    throw DimensionError("bce_loss: " + std::to_string(p.size()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = p.size();
  const T lo = eps, hi = T(1) - eps;
  auto pv = p.data();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(pv[i], lo, hi);
    total -= labels[i] * std::log(q) + (T(1) - labels[i]) * std::log(T(1) - q);
  }
  Tensor<T> result(Shape{1}, {total / static_cast<T>(n)});
  auto* tape = detail::recording_tape({&p});
  if (!tape) return result;
  std::vector<T> y(labels.begin(), labels.end());
  return tape->record(OpKind::bce_loss, result, {&p}, [p, y = std::move(y), lo, hi](std::span<const T> g, const auto& in) {
    auto gp = in[0];
    auto pv = p.data();
    const T inv_n = T(1) / static_cast<T>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (pv[i] <= lo || pv[i] >= hi) continue;
      gp[i] += g[0] * inv_n * (-y[i] / pv[i] + (T(1) - y[i]) / (T(1) - pv[i]));
    }
  });
}

}  // namespace eened
