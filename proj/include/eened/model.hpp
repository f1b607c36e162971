#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "eened/encoder.hpp"
#include "eened/errors.hpp"
#include "eened/ops.hpp"
#include "eened/rng.hpp"
#include "eened/tensor.hpp"

namespace eened {

/// Architecture hyperparameters. Defaults are the full-size network.
struct ModelConfig {
  int d_model = 512;
  int n_blocks = 3;
  int n_heads = 8;
  int head_dim = 64;
  int conv_kernel = 15;
  int conv_pad = 7;
  int d_pwff = 2048;
  double dropout_p = 0.1;
  int t_in = 178;
  int classifier_hidden = 128;
  std::uint64_t seed = 0;

  /// Every violated constraint, one per entry.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto positive = [&](const char* name, int value) {
      if (value < 1) v.push_back(std::string(name) + " must be >= 1 (got " + std::to_string(value) + ")");
    };
    positive("d_model", d_model);
    positive("n_blocks", n_blocks);
    positive("n_heads", n_heads);
    positive("head_dim", head_dim);
    positive("conv_kernel", conv_kernel);
    positive("d_pwff", d_pwff);
    positive("t_in", t_in);
    positive("classifier_hidden", classifier_hidden);
    if (n_heads >= 1 && head_dim >= 1 && n_heads * head_dim != d_model) {
      v.push_back("n_heads * head_dim must equal d_model (" + std::to_string(n_heads) + " * " +
                  std::to_string(head_dim) + " != " + std::to_string(d_model) + ")");
    }
    if (conv_kernel >= 1 && conv_kernel % 2 == 0) {
      v.push_back("conv_kernel must be odd (got " + std::to_string(conv_kernel) + ")");
    }
    if (conv_pad != (conv_kernel - 1) / 2) {
      v.push_back("conv_pad must equal (conv_kernel - 1) / 2 = " + std::to_string((conv_kernel - 1) / 2) + " (got " +
                  std::to_string(conv_pad) + ")");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
      v.push_back("dropout_p must be in [0, 1) (got " + std::to_string(dropout_p) + ")");
    }
    return v;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config: ";
    for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? "; " : "") + v[i];
    throw ConfigError(msg);
  }

  EncoderSettings encoder_settings() const {
    return {static_cast<std::size_t>(conv_pad), dropout_p, 1e-5};
  }

  /// Canonical `key=value` lines in fixed order; round-trips exactly.
  std::string to_text() const {
    std::string s;
    auto line = [&](const char* key, auto value) {
      char buf[64];
      auto res = std::to_chars(buf, buf + sizeof buf, value);
      s += key;
      s += '=';
      s.append(buf, res.ptr);
      s += '\n';
    };
    line("d_model", d_model);
    line("n_blocks", n_blocks);
    line("n_heads", n_heads);
    line("head_dim", head_dim);
    line("conv_kernel", conv_kernel);
    line("conv_pad", conv_pad);
    line("d_pwff", d_pwff);
    line("dropout_p", dropout_p);
    line("t_in", t_in);
    line("classifier_hidden", classifier_hidden);
    line("seed", seed);
    return s;
  }

  static ModelConfig from_text(std::string_view text) {
    ModelConfig c;
    std::map<std::string, std::string, std::less<>> kv;
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("model config line without '=': " + std::string(line));
      kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    auto take = [&](const char* key, auto& field) {
      auto it = kv.find(key);
      if (it == kv.end()) throw ConfigError(std::string("model config missing key ") + key);
      const std::string& v = it->second;
      auto res = std::from_chars(v.data(), v.data() + v.size(), field);
      if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(std::string("model config: bad value for ") + key + ": " + v);
      }
      kv.erase(it);
    };
    take("d_model", c.d_model);
    take("n_blocks", c.n_blocks);
    take("n_heads", c.n_heads);
    take("head_dim", c.head_dim);
    take("conv_kernel", c.conv_kernel);
    take("conv_pad", c.conv_pad);
    take("d_pwff", c.d_pwff);
    take("dropout_p", c.dropout_p);
    take("t_in", c.t_in);
    take("classifier_hidden", c.classifier_hidden);
    take("seed", c.seed);
    if (!kv.empty()) throw ConfigError("model config: unknown key " + kv.begin()->first);
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Global z-score applied to raw input amplitudes before the network.
struct NormStats {
  double mean = 0.0;
  double stddev = 1.0;

  double apply(double raw) const { return (raw - mean) / stddev; }
};

template <typename T>
struct EenedModel {
  ModelConfig config;
  Tensor<T> embed_w, embed_b;  // 1×D, D
  std::vector<EncoderBlockParams<T>> blocks;
  Tensor<T> head_w1, head_b1;  // D×hidden, hidden
  Tensor<T> head_w2, head_b2;  // hidden×1, 1
  NormStats input_norm;

  /// Trainable tensors in canonical order.
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, const std::string& p, F& f) {
    f(p + "embed_w", s.embed_w);
    f(p + "embed_b", s.embed_b);
    for (std::size_t i = 0; i < s.blocks.size(); ++i) s.blocks[i].visit(p + "blocks." + std::to_string(i) + ".", f);
    f(p + "head_w1", s.head_w1);
    f(p + "head_b1", s.head_b1);
    f(p + "head_w2", s.head_w2);
    f(p + "head_b2", s.head_b2);
  }
};

template <typename T>
EenedModel<T> model_init(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hidden = static_cast<std::size_t>(cfg.classifier_hidden);
  const Rng root = Rng(cfg.seed).split("model_init");
  EenedModel<T> m;
  m.config = cfg;
  m.embed_w = uniform_init<T>(Shape{1, d}, 1, root.split("embed_w"));
  m.embed_b = Tensor<T>::zeros(Shape{d});
  for (int b = 0; b < cfg.n_blocks; ++b) {
    m.blocks.push_back(EncoderBlockParams<T>::init(d, static_cast<std::size_t>(cfg.n_heads),
                                                   static_cast<std::size_t>(cfg.head_dim),
                                                   static_cast<std::size_t>(cfg.d_pwff),
                                                   static_cast<std::size_t>(cfg.conv_kernel),
                                                   root.split("blocks").split(static_cast<std::uint64_t>(b))));
  }
  m.head_w1 = uniform_init<T>(Shape{d, hidden}, d, root.split("head_w1"));
  m.head_b1 = Tensor<T>::zeros(Shape{hidden});
  m.head_w2 = uniform_init<T>(Shape{hidden, 1}, hidden, root.split("head_w2"));
  m.head_b2 = Tensor<T>::zeros(Shape{1});
  return m;
}

template <typename T>
std::size_t parameter_count(const EenedModel<T>& m) {
  std::size_t n = 0;
  m.visit("", [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

/// Same parameters converted to another scalar type.
template <typename U, typename T>
EenedModel<U> cast_model(const EenedModel<T>& m) {
  EenedModel<U> out = model_init<U>(m.config);
  std::vector<const Tensor<T>*> src;
  m.visit("", [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit("", [&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  out.input_norm = m.input_norm;
  return out;
}

/// Probability of the epileptic class for one already-normalized segment, as a [1] tensor.
template <typename T>
Tensor<T> model_forward(const EenedModel<T>& m, const Tensor<T>& x, ForwardMode mode = {}) {
  const auto t_in = static_cast<std::size_t>(m.config.t_in);
  if (x.empty() || x.size() != t_in) {
    throw DimensionError("model_forward: expected " + std::to_string(t_in) + " input samples, got " +
                         std::to_string(x.size()));
  }
  const EncoderSettings settings = m.config.encoder_settings();
  auto h = add_bias(matmul(reshape(x, Shape{t_in, 1}), m.embed_w), m.embed_b);
  for (const auto& block : m.blocks) h = encoder_block_forward(h, block, settings, mode);
  auto pooled = mean_rows(h);
  auto hidden = swish(add_bias(matmul(pooled, m.head_w1), m.head_b1));
  auto logit = add_bias(matmul(hidden, m.head_w2), m.head_b2);
  return reshape(sigmoid(logit), Shape{1});
}

/// Eval-mode probability for a raw (un-normalized) segment.
template <typename T>
double predict_raw(const EenedModel<T>& m, std::span<const double> raw) {
  std::vector<T> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = static_cast<T>(m.input_norm.apply(raw[i]));
  return static_cast<double>(model_forward(m, Tensor<T>(Shape{raw.size()}, std::move(x)))[0]);
}

/// Named, ordered view over a model's trainable tensors with one gradient slot each.
template <typename T>
class ParamStore {
 public:
  template <typename Params>
  explicit ParamStore(Params& params) {
    params.visit("", [&](const std::string& name, Tensor<T>& t) {
      names_.push_back(name);
      tensors_.push_back(&t);
    });
    grads_.resize(tensors_.size());
  }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& param(std::size_t i) { return *tensors_[i]; }
  const Tensor<T>& param(std::size_t i) const { return *tensors_[i]; }

  /// Empty when no gradient has been accumulated since the last zero_grad.
  const std::vector<T>& grad(std::size_t i) const { return grads_[i]; }

  void zero_grad() {
    for (auto& g : grads_) g.clear();
  }

  void accumulate_grad(std::size_t i, std::span<const T> g) {
    if (g.size() != tensors_[i]->size()) {
      throw DimensionError("gradient for " + names_[i] + " has " + std::to_string(g.size()) + " values, expected " +
                           std::to_string(tensors_[i]->size()));
    }
    auto& dst = grads_[i];
    if (dst.empty()) {
      dst.assign(g.begin(), g.end());
      return;
    }
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>*> tensors_;
  std::vector<std::vector<T>> grads_;
};

}  // namespace eened
