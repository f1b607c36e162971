#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "eened/errors.hpp"
#include "eened/ops.hpp"
#include "eened/rng.hpp"
#include "eened/tensor.hpp"

namespace eened {

/// Hyperparameters shared by the encoder sub-modules.
struct EncoderSettings {
  std::size_t conv_pad = 7;
  double dropout_p = 0.1;
  double ln_eps = 1e-5;
};

/// Train/eval switch plus the generator consumed by dropout sites, in call order.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

/// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape.size());
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
struct PwffParams {
  Tensor<T> w1, b1, w2, b2, ln_gamma, ln_beta;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

  static PwffParams init(std::size_t d_model, std::size_t d_pwff, const Rng& rng) {
    return {uniform_init<T>(Shape{d_model, d_pwff}, d_model, rng.split("w1")),
            Tensor<T>::zeros(Shape{d_pwff}),
            uniform_init<T>(Shape{d_pwff, d_model}, d_pwff, rng.split("w2")),
            Tensor<T>::zeros(Shape{d_model}),
            Tensor<T>::full(Shape{d_model}, T(1)),
            Tensor<T>::zeros(Shape{d_model})};
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, const std::string& p, F& f) {
    f(p + "w1", s.w1);
    f(p + "b1", s.b1);
    f(p + "w2", s.w2);
    f(p + "b2", s.b2);
    f(p + "ln_gamma", s.ln_gamma);
    f(p + "ln_beta", s.ln_beta);
  }
};

template <typename T>
struct MhsaParams {
  std::vector<Tensor<T>> q, k, v;  // one D×d projection per head
  Tensor<T> o, ln_gamma, ln_beta;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

  std::size_t heads() const { return q.size(); }

  static MhsaParams init(std::size_t d_model, std::size_t n_heads, std::size_t head_dim, const Rng& rng) {
    MhsaParams p;
    for (std::size_t h = 0; h < n_heads; ++h) {
      p.q.push_back(uniform_init<T>(Shape{d_model, head_dim}, d_model, rng.split("q").split(h)));
      p.k.push_back(uniform_init<T>(Shape{d_model, head_dim}, d_model, rng.split("k").split(h)));
      p.v.push_back(uniform_init<T>(Shape{d_model, head_dim}, d_model, rng.split("v").split(h)));
    }
    p.o = uniform_init<T>(Shape{d_model, d_model}, d_model, rng.split("o"));
    p.ln_gamma = Tensor<T>::full(Shape{d_model}, T(1));
    p.ln_beta = Tensor<T>::zeros(Shape{d_model});
    return p;
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, const std::string& p, F& f) {
    for (std::size_t h = 0; h < s.q.size(); ++h) f(p + "q." + std::to_string(h), s.q[h]);
    for (std::size_t h = 0; h < s.k.size(); ++h) f(p + "k." + std::to_string(h), s.k[h]);
    for (std::size_t h = 0; h < s.v.size(); ++h) f(p + "v." + std::to_string(h), s.v[h]);
    f(p + "o", s.o);
    f(p + "ln_gamma", s.ln_gamma);
    f(p + "ln_beta", s.ln_beta);
  }
};

template <typename T>
struct ConvModuleParams {
  Tensor<T> pw1_w, pw1_b;                   // D×2D, 2D
  Tensor<T> glu_w1, glu_b1, glu_w2, glu_b2; // D×D, D
  Tensor<T> dw_kernel, dw_bias;             // D×K, D
  Tensor<T> proj_w, proj_b;                 // D×D, D
  Tensor<T> ln_gamma, ln_beta;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

  static ConvModuleParams init(std::size_t d_model, std::size_t kernel, const Rng& rng) {
    const std::size_t d = d_model;
    return {uniform_init<T>(Shape{d, 2 * d}, d, rng.split("pw1_w")),
            Tensor<T>::zeros(Shape{2 * d}),
            uniform_init<T>(Shape{d, d}, d, rng.split("glu_w1")),
            Tensor<T>::zeros(Shape{d}),
            uniform_init<T>(Shape{d, d}, d, rng.split("glu_w2")),
            Tensor<T>::zeros(Shape{d}),
            uniform_init<T>(Shape{d, kernel}, kernel, rng.split("dw_kernel")),
            Tensor<T>::zeros(Shape{d}),
            uniform_init<T>(Shape{d, d}, d, rng.split("proj_w")),
            Tensor<T>::zeros(Shape{d}),
            Tensor<T>::full(Shape{d}, T(1)),
            Tensor<T>::zeros(Shape{d})};
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, const std::string& p, F& f) {
    f(p + "pw1_w", s.pw1_w);
    f(p + "pw1_b", s.pw1_b);
    f(p + "glu_w1", s.glu_w1);
    f(p + "glu_b1", s.glu_b1);
    f(p + "glu_w2", s.glu_w2);
    f(p + "glu_b2", s.glu_b2);
    f(p + "dw_kernel", s.dw_kernel);
    f(p + "dw_bias", s.dw_bias);
    f(p + "proj_w", s.proj_w);
    f(p + "proj_b", s.proj_b);
    f(p + "ln_gamma", s.ln_gamma);
    f(p + "ln_beta", s.ln_beta);
  }
};

template <typename T>
struct EncoderBlockParams {
  PwffParams<T> pwff_a;
  MhsaParams<T> mhsa;
  ConvModuleParams<T> conv;
  PwffParams<T> pwff_b;
  Tensor<T> final_ln_gamma, final_ln_beta;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

  static EncoderBlockParams init(std::size_t d_model, std::size_t n_heads, std::size_t head_dim, std::size_t d_pwff,
                                 std::size_t kernel, const Rng& rng) {
    return {PwffParams<T>::init(d_model, d_pwff, rng.split("pwff_a")),
            MhsaParams<T>::init(d_model, n_heads, head_dim, rng.split("mhsa")),
            ConvModuleParams<T>::init(d_model, kernel, rng.split("conv")),
            PwffParams<T>::init(d_model, d_pwff, rng.split("pwff_b")),
            Tensor<T>::full(Shape{d_model}, T(1)),
            Tensor<T>::zeros(Shape{d_model})};
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, const std::string& p, F& f) {
    s.pwff_a.visit(p + "pwff_a.", f);
    s.mhsa.visit(p + "mhsa.", f);
    s.conv.visit(p + "conv.", f);
    s.pwff_b.visit(p + "pwff_b.", f);
    f(p + "final_ln_gamma", s.final_ln_gamma);
    f(p + "final_ln_beta", s.final_ln_beta);
  }
};

/// Dropout(Swish(LN(x) W1 + b1) W2 + b2): the feed-forward branch before the half-step residual.
template <typename T>
Tensor<T> pwff_branch(const Tensor<T>& x, const PwffParams<T>& p, const EncoderSettings& s, ForwardMode mode) {
  auto f = layer_norm(x, p.ln_gamma, p.ln_beta, static_cast<T>(s.ln_eps));
  auto hidden = swish(add_bias(matmul(f, p.w1), p.b1));
  auto y = add_bias(matmul(hidden, p.w2), p.b2);
  return dropout(y, s.dropout_p, mode.training, mode.rng);
}

/// x + branch / 2
template <typename T>
Tensor<T> pwff_forward(const Tensor<T>& x, const PwffParams<T>& p, const EncoderSettings& s, ForwardMode mode) {
  return add(x, scale(pwff_branch(x, p, s, mode), T(0.5)));
}

namespace detail {

template <typename T>
void check_mhsa(const Tensor<T>& x, const MhsaParams<T>& p) {
  require_rank(x, 2, "mhsa_forward", "input");
  const std::size_t h = p.heads();
  if (h == 0 || p.k.size() != h || p.v.size() != h) {
    throw ConfigError("mhsa_forward: need the same positive number of query, key and value projections");
  }
  const std::size_t d_model = x.cols();
  const std::size_t head_dim = p.q[0].cols();
  if (h * head_dim != d_model) {
    throw ConfigError("mhsa_forward: n_heads * head_dim (" + std::to_string(h) + " * " + std::to_string(head_dim) +
                      ") must equal d_model (" + std::to_string(d_model) + ")");
  }
}

// Returns the pre-dropout branch value; fills `attention` with every A_h when non-null.
template <typename T>
Tensor<T> mhsa_core(const Tensor<T>& x, const MhsaParams<T>& p, const EncoderSettings& s,
                    std::vector<Tensor<T>>* attention) {
  check_mhsa(x, p);
  const std::size_t heads = p.heads();
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(x.cols()) / static_cast<T>(heads));
  auto f = layer_norm(x, p.ln_gamma, p.ln_beta, static_cast<T>(s.ln_eps));
  std::vector<Tensor<T>> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto queries = matmul(f, p.q[h]);
    auto keys = matmul(f, p.k[h]);
    auto values = matmul(f, p.v[h]);
    auto similarity = matmul(queries, transpose(keys));
    auto weights = softmax_rows(scale(similarity, inv_scale));
    if (attention) attention->push_back(weights.detached());
    contexts.push_back(matmul(weights, values));
  }
  return matmul(concat_cols(contexts), p.o);
}

}  // namespace detail

/// Multi-head self-attention branch without positional encoding:
/// Dropout([C_1 ... C_H] O) with C_h = softmax(LN(x)Q_h (LN(x)K_h)^T / sqrt(D/H)) LN(x)V_h.
/// The residual is added by the caller.
template <typename T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const MhsaParams<T>& p, const EncoderSettings& s, ForwardMode mode) {
  return dropout(detail::mhsa_core<T>(x, p, s, nullptr), s.dropout_p, mode.training, mode.rng);
}

/// Attention weight matrices A_h of every head, for inspection.
template <typename T>
std::vector<Tensor<T>> mhsa_attention(const Tensor<T>& x, const MhsaParams<T>& p, const EncoderSettings& s) {
  std::vector<Tensor<T>> attention;
  detail::mhsa_core(x, p, s, &attention);
  return attention;
}

/// Convolution module including its residual:
/// x + Dropout(Swish(DWConv(GLU(PWConv(LN(x))))) W_proj + b_proj).
template <typename T>
Tensor<T> conv_module_forward(const Tensor<T>& x, const ConvModuleParams<T>& p, const EncoderSettings& s,
                              ForwardMode mode) {
  detail::require_rank(x, 2, "conv_module_forward", "input");
  const std::size_t d = x.cols();
  auto f = layer_norm(x, p.ln_gamma, p.ln_beta, static_cast<T>(s.ln_eps));
  auto expanded = conv1d_pointwise(f, p.pw1_w, p.pw1_b);
  if (expanded.cols() != 2 * d) throw detail::mismatch("conv_module_forward", x.shape(), p.pw1_w.shape());
  auto first = slice_cols(expanded, 0, d);
  auto second = slice_cols(expanded, d, 2 * d);
  auto glu = mul(add_bias(matmul(first, p.glu_w1), p.glu_b1), sigmoid(add_bias(matmul(second, p.glu_w2), p.glu_b2)));
  auto local = conv1d_depthwise(glu, p.dw_kernel, p.dw_bias, s.conv_pad);
  auto projected = add_bias(matmul(swish(local), p.proj_w), p.proj_b);
  return add(x, dropout(projected, s.dropout_p, mode.training, mode.rng));
}

/// One macaron encoder block:
///   f1  = x + PWFF_a(x)/2
///   f2  = f1 + MHSA(f1)
///   f3  = Conv(f2)            (residual inside)
///   out = LN(f3 + PWFF_b(f3)/2)
template <typename T>
Tensor<T> encoder_block_forward(const Tensor<T>& x, const EncoderBlockParams<T>& p, const EncoderSettings& s,
                                ForwardMode mode) {
  auto f1 = pwff_forward(x, p.pwff_a, s, mode);
  auto f2 = add(f1, mhsa_forward(f1, p.mhsa, s, mode));
  auto f3 = conv_module_forward(f2, p.conv, s, mode);
  auto f4 = pwff_forward(f3, p.pwff_b, s, mode);
  return layer_norm(f4, p.final_ln_gamma, p.final_ln_beta, static_cast<T>(s.ln_eps));
}

}  // namespace eened
