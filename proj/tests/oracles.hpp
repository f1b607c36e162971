#pragma once

// Plain-loop reference implementations used as test oracles. They share no code
// with the library beyond reading tensor values.

#include <cmath>
#include <cstddef>
#include <vector>

#include "eened/eened.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat to_mat(const eened::Tensor<double>& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Vec to_vec(const eened::Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline eened::Tensor<double> to_tensor(const Mat& m) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return eened::Tensor<double>(eened::Shape{m.size(), m[0].size()}, std::move(v));
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

inline Mat add_row(Mat a, const Vec& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return a;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double swish(double x) { return x * sigmoid(x); }

inline Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) / std::sqrt(var + eps) * gamma[j] + beta[j];
  }
  return y;
}

inline Mat softmax_rows(const Mat& x) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mx = x[i][0];
    for (double v : x[i]) mx = std::max(mx, v);
    double total = 0;
    for (std::size_t j = 0; j < x[i].size(); ++j) total += (y[i][j] = std::exp(x[i][j] - mx));
    for (auto& v : y[i]) v /= total;
  }
  return y;
}

/// out[t][c] = b[c] + sum_j k[c][j] * x[t + j - pad][c], zero outside [0, T).
inline Mat depthwise(const Mat& x, const Mat& k, const Vec& b, std::size_t pad) {
  const std::size_t T = x.size(), C = x[0].size(), K = k[0].size();
  Mat y(T, Vec(C));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = b[c];
      for (std::size_t j = 0; j < K; ++j) {
        const long src = static_cast<long>(t + j) - static_cast<long>(pad);
        if (src >= 0 && src < static_cast<long>(T)) acc += k[c][j] * x[static_cast<std::size_t>(src)][c];
      }
      y[t][c] = acc;
    }
  return y;
}

/// Feed-forward branch before the half-step: Swish(LN(x) W1 + b1) W2 + b2.
inline Mat pwff_branch(const Mat& x, const eened::PwffParams<double>& p, double eps) {
  const Mat f = layer_norm(x, to_vec(p.ln_gamma), to_vec(p.ln_beta), eps);
  Mat h = add_row(matmul(f, to_mat(p.w1)), to_vec(p.b1));
  for (auto& row : h)
    for (auto& v : row) v = swish(v);
  return add_row(matmul(h, to_mat(p.w2)), to_vec(p.b2));
}

/// Attention branch, head by head with explicit index loops:
/// A_h[i][j] = softmax_j(sum_k Q[i][k] K[j][k] / sqrt(D/H)), C_h = A_h V, out = [C_1..C_H] O.
inline Mat mhsa_branch(const Mat& x, const eened::MhsaParams<double>& p, double eps) {
  const std::size_t T = x.size(), D = x[0].size(), H = p.q.size();
  const Mat f = layer_norm(x, to_vec(p.ln_gamma), to_vec(p.ln_beta), eps);
  Mat concat(T);
  for (std::size_t h = 0; h < H; ++h) {
    const Mat q = matmul(f, to_mat(p.q[h])), k = matmul(f, to_mat(p.k[h])), v = matmul(f, to_mat(p.v[h]));
    const std::size_t d = q[0].size();
    Mat scores(T, Vec(T));
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
        scores[i][j] = s / std::sqrt(static_cast<double>(D) / static_cast<double>(H));
      }
    const Mat a = softmax_rows(scores);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < T; ++j) s += a[i][j] * v[j][c];
        concat[i].push_back(s);
      }
  }
  return matmul(concat, to_mat(p.o));
}

/// Convolution module including its residual.
inline Mat conv_module(const Mat& x, const eened::ConvModuleParams<double>& p, double eps, std::size_t pad) {
  const std::size_t T = x.size(), D = x[0].size();
  const Mat f = layer_norm(x, to_vec(p.ln_gamma), to_vec(p.ln_beta), eps);
  const Mat e = add_row(matmul(f, to_mat(p.pw1_w)), to_vec(p.pw1_b));
  Mat first(T, Vec(D)), second(T, Vec(D));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c) {
      first[t][c] = e[t][c];
      second[t][c] = e[t][D + c];
    }
  const Mat a = add_row(matmul(first, to_mat(p.glu_w1)), to_vec(p.glu_b1));
  const Mat g = add_row(matmul(second, to_mat(p.glu_w2)), to_vec(p.glu_b2));
  Mat glu(T, Vec(D));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c) glu[t][c] = a[t][c] * sigmoid(g[t][c]);
  Mat local = depthwise(glu, to_mat(p.dw_kernel), to_vec(p.dw_bias), pad);
  for (auto& row : local)
    for (auto& v : row) v = swish(v);
  Mat y = add_row(matmul(local, to_mat(p.proj_w)), to_vec(p.proj_b));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c) y[t][c] += x[t][c];
  return y;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

/// Central finite-difference gradient of a scalar function of a flat vector.
template <typename F>
Vec numeric_grad(F&& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

}  // namespace oracle
