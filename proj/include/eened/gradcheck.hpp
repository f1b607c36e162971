#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eened/encoder.hpp"
#include "eened/errors.hpp"
#include "eened/model.hpp"
#include "eened/ops.hpp"
#include "eened/rng.hpp"
#include "eened/tape.hpp"

namespace eened {

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  /// vanishing gradients from turning round-off into large ratios.
  double denominator_floor = 1e-4;
  /// Coordinates checked per tensor; larger tensors are sampled.
  std::size_t max_coords = 512;
  std::uint64_t seed = 0;
  /// Negate the backward pass of this op kind (negative control).
  std::optional<OpKind> fault;
};

struct TensorGradcheck {
  std::string name;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
};

struct GradcheckResult {
  std::string check;
  std::vector<TensorGradcheck> tensors;
  double max_rel_err = 0.0;
  bool pass = false;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;
using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar loss against central differences.
inline GradcheckResult gradcheck(std::string check, const NamedTensors& inputs, const LossFn& loss_fn,
                                 const GradcheckOptions& opts = {}) {
  std::vector<Tensor<double>> values;
  for (const auto& [name, t] : inputs) values.push_back(t.detached());

  std::vector<std::vector<double>> analytic;
  {
    std::optional<Tape<double>> tape;
    if (opts.fault) {
      tape.emplace(*opts.fault);
    } else {
      tape.emplace();
    }
    std::vector<Tensor<double>> watched;
    for (const auto& t : values) watched.push_back(tape->watch(t));
    tape->backward(loss_fn(watched));
    for (const auto& t : watched) analytic.push_back(tape->gradient(t));
  }

  GradcheckResult result{std::move(check), {}, 0.0, true};
  Rng rng = Rng(opts.seed).split("gradcheck").split(result.check);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Tensor<double> original = values[i];
    std::vector<std::size_t> coords(original.size());
    for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
    if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    TensorGradcheck tc{inputs[i].first, coords.size(), 0.0};
    for (auto k : coords) {
      std::vector<double> perturbed(original.data().begin(), original.data().end());
      const double base = perturbed[k];
      perturbed[k] = base + opts.step;
      values[i] = Tensor<double>(original.shape(), perturbed);
      const double up = loss_fn(values)[0];
      perturbed[k] = base - opts.step;
      values[i] = Tensor<double>(original.shape(), perturbed);
      const double down = loss_fn(values)[0];
      const double numeric = (up - down) / (2 * opts.step);
      const double a = analytic[i][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
      tc.max_rel_err = std::max(tc.max_rel_err, std::abs(a - numeric) / denom);
    }
    values[i] = original;
    result.max_rel_err = std::max(result.max_rel_err, tc.max_rel_err);
    result.tensors.push_back(std::move(tc));
  }
  result.pass = result.max_rel_err < opts.tolerance;
  return result;
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

/// sum(out ⊙ R) with a fixed random R: a scalar that depends on every output element.
inline Tensor<double> weighted_sum(const Tensor<double>& out, std::uint64_t seed) {
  Rng rng = Rng(seed).split("readout");
  return sum(mul(out, random_tensor(out.shape(), rng)));
}

/// Moves parameters off their structured initial values (unit gammas, zero biases).
template <typename Params>
void randomize_params(Params& p, Rng rng) {
  p.visit("", [&](const std::string& name, Tensor<double>& t) {
    const bool is_gamma = name.ends_with("gamma");
    const double lo = is_gamma ? 0.7 : -0.5, hi = is_gamma ? 1.3 : 0.5;
    t = random_tensor(t.shape(), rng, lo, hi);
  });
}

template <typename Params>
NamedTensors named_params(const Params& p) {
  NamedTensors out;
  p.visit("", [&](const std::string& name, const Tensor<double>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename Params>
Params with_values(Params p, std::span<const Tensor<double>> values) {
  std::size_t i = 0;
  p.visit("", [&](const std::string&, Tensor<double>& t) { t = values[i++]; });
  return p;
}

inline GradcheckResult check_params_and_input(
    const std::string& name, const Tensor<double>& x, const NamedTensors& params,
    const std::function<Tensor<double>(const Tensor<double>&, std::span<const Tensor<double>>)>& fn,
    const GradcheckOptions& opts) {
  NamedTensors inputs{{"x", x}};
  inputs.insert(inputs.end(), params.begin(), params.end());
  return gradcheck(
      name, inputs,
      [&](const std::vector<Tensor<double>>& v) {
        return weighted_sum(fn(v[0], std::span<const Tensor<double>>(v).subspan(1)), opts.seed);
      },
      opts);
}

}  // namespace detail

/// Toy configuration used by the module and end-to-end checks.
inline ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.head_dim = 4;
  c.conv_kernel = 15;
  c.conv_pad = 7;
  c.d_pwff = 32;
  c.dropout_p = 0.1;
  c.t_in = 16;
  c.classifier_hidden = 8;
  c.seed = 11;
  return c;
}

inline const std::vector<std::string_view>& gradcheck_modules() {
  static const std::vector<std::string_view> names{"tensor", "pwff", "mhsa", "conv", "block", "model"};
  return names;
}

/// Runs one named group ("tensor", "pwff", "mhsa", "conv", "block", "model") or "all".
inline std::vector<GradcheckResult> run_gradcheck_suite(std::string_view module, const GradcheckOptions& opts) {
  const auto& known = gradcheck_modules();
  if (module != "all" && std::find(known.begin(), known.end(), module) == known.end()) {
    throw ConfigError("unknown gradcheck module '" + std::string(module) +
                      "' (expected all, tensor, pwff, mhsa, conv, block or model)");
  }
  auto wants = [&](std::string_view m) { return module == "all" || module == m; };
  std::vector<GradcheckResult> results;
  Rng rng = Rng(opts.seed).split("gradcheck_inputs");
  const std::uint64_t seed = opts.seed;

  auto unary = [&](const std::string& name, Shape shape, auto op) {
    Rng r = rng.split(name);
    results.push_back(gradcheck(
        name, {{"x", detail::random_tensor(shape, r)}},
        [&](const std::vector<Tensor<double>>& v) { return detail::weighted_sum(op(v[0]), seed); }, opts));
  };
  auto multi = [&](const std::string& name, NamedTensors inputs, auto op) {
    results.push_back(gradcheck(
        name, inputs, [&](const std::vector<Tensor<double>>& v) { return detail::weighted_sum(op(v), seed); },
        opts));
  };

  if (wants("tensor")) {
    Rng r = rng.split("tensor");
    multi("matmul", {{"a", detail::random_tensor(Shape{3, 4}, r)}, {"b", detail::random_tensor(Shape{4, 2}, r)}},
          [](const auto& v) { return matmul(v[0], v[1]); });
    unary("transpose", Shape{3, 4}, [](const auto& x) { return transpose(x); });
    multi("add", {{"a", detail::random_tensor(Shape{2, 3}, r)}, {"b", detail::random_tensor(Shape{2, 3}, r)}},
          [](const auto& v) { return add(v[0], v[1]); });
    multi("mul", {{"a", detail::random_tensor(Shape{2, 3}, r)}, {"b", detail::random_tensor(Shape{2, 3}, r)}},
          [](const auto& v) { return mul(v[0], v[1]); });
    unary("scale", Shape{2, 3}, [](const auto& x) { return scale(x, 0.37); });
    multi("add_bias", {{"x", detail::random_tensor(Shape{3, 4}, r)}, {"b", detail::random_tensor(Shape{4}, r)}},
          [](const auto& v) { return add_bias(v[0], v[1]); });
    unary("sigmoid", Shape{3, 4}, [](const auto& x) { return sigmoid(scale(x, 3.0)); });
    unary("swish", Shape{3, 4}, [](const auto& x) { return swish(scale(x, 3.0)); });
    unary("softmax_rows", Shape{3, 5}, [](const auto& x) { return softmax_rows(scale(x, 2.0)); });
    multi("layer_norm",
          {{"x", detail::random_tensor(Shape{4, 8}, r)},
           {"gamma", detail::random_tensor(Shape{8}, r, 0.5, 1.5)},
           {"beta", detail::random_tensor(Shape{8}, r)}},
          [](const auto& v) { return layer_norm(v[0], v[1], v[2], 1e-5); });
    multi("conv1d_pointwise",
          {{"x", detail::random_tensor(Shape{5, 3}, r)},
           {"w", detail::random_tensor(Shape{3, 4}, r)},
           {"b", detail::random_tensor(Shape{4}, r)}},
          [](const auto& v) { return conv1d_pointwise(v[0], v[1], v[2]); });
    multi("conv1d_depthwise",
          {{"x", detail::random_tensor(Shape{20, 3}, r)},
           {"k", detail::random_tensor(Shape{3, 15}, r)},
           {"b", detail::random_tensor(Shape{3}, r)}},
          [](const auto& v) { return conv1d_depthwise(v[0], v[1], v[2], 7); });
    unary("dropout", Shape{4, 6}, [](const auto& x) {
      Rng mask_rng(99);  // same mask on every evaluation
      return dropout(x, 0.3, true, &mask_rng);
    });
    multi("concat_cols", {{"a", detail::random_tensor(Shape{3, 2}, r)}, {"b", detail::random_tensor(Shape{3, 4}, r)}},
          [](const auto& v) { return concat_cols(std::vector<Tensor<double>>{v[0], v[1]}); });
    unary("slice_cols", Shape{3, 6}, [](const auto& x) { return slice_cols(x, 1, 4); });
    unary("mean_rows", Shape{5, 3}, [](const auto& x) { return mean_rows(x); });
    unary("reshape", Shape{2, 6}, [](const auto& x) { return reshape(x, Shape{3, 4}); });
    unary("sum", Shape{2, 3}, [](const auto& x) { return scale(sum(x), 1.0); });
    {
      Rng rb = rng.split("bce_loss");
      std::vector<double> labels{1, 0, 0, 1, 1};
      results.push_back(gradcheck(
          "bce_loss", {{"p", detail::random_tensor(Shape{5}, rb, 0.1, 0.9)}},
          [labels](const std::vector<Tensor<double>>& v) { return bce_loss(v[0], std::span<const double>(labels)); },
          opts));
    }
  }

  const ModelConfig toy = gradcheck_model_config();
  const std::size_t d = static_cast<std::size_t>(toy.d_model);
  EncoderSettings settings = toy.encoder_settings();
  settings.dropout_p = 0.0;
  const ForwardMode eval{};
  const Shape block_input{5, d};

  if (wants("pwff")) {
    Rng r = rng.split("pwff");
    auto p = PwffParams<double>::init(d, static_cast<std::size_t>(toy.d_pwff), r);
    detail::randomize_params(p, r.split("values"));
    results.push_back(detail::check_params_and_input(
        "pwff", detail::random_tensor(block_input, r), detail::named_params(p),
        [&](const Tensor<double>& x, std::span<const Tensor<double>> v) {
          return pwff_forward(x, detail::with_values(p, v), settings, eval);
        },
        opts));
  }
  if (wants("mhsa")) {
    Rng r = rng.split("mhsa");
    auto p = MhsaParams<double>::init(d, static_cast<std::size_t>(toy.n_heads), static_cast<std::size_t>(toy.head_dim), r);
    detail::randomize_params(p, r.split("values"));
    results.push_back(detail::check_params_and_input(
        "mhsa", detail::random_tensor(block_input, r), detail::named_params(p),
        [&](const Tensor<double>& x, std::span<const Tensor<double>> v) {
          return mhsa_forward(x, detail::with_values(p, v), settings, eval);
        },
        opts));
  }
  if (wants("conv")) {
    Rng r = rng.split("conv");
    auto p = ConvModuleParams<double>::init(d, static_cast<std::size_t>(toy.conv_kernel), r);
    detail::randomize_params(p, r.split("values"));
    results.push_back(detail::check_params_and_input(
        "conv", detail::random_tensor(block_input, r), detail::named_params(p),
        [&](const Tensor<double>& x, std::span<const Tensor<double>> v) {
          return conv_module_forward(x, detail::with_values(p, v), settings, eval);
        },
        opts));
  }
  if (wants("block")) {
    Rng r = rng.split("block");
    auto p = EncoderBlockParams<double>::init(d, static_cast<std::size_t>(toy.n_heads),
                                              static_cast<std::size_t>(toy.head_dim),
                                              static_cast<std::size_t>(toy.d_pwff),
                                              static_cast<std::size_t>(toy.conv_kernel), r);
    detail::randomize_params(p, r.split("values"));
    results.push_back(detail::check_params_and_input(
        "block", detail::random_tensor(block_input, r), detail::named_params(p),
        [&](const Tensor<double>& x, std::span<const Tensor<double>> v) {
          return encoder_block_forward(x, detail::with_values(p, v), settings, eval);
        },
        opts));
  }
  if (wants("model")) {
    Rng r = rng.split("model");
    auto m = model_init<double>(toy);
    const Tensor<double> x = detail::random_tensor(Shape{static_cast<std::size_t>(toy.t_in)}, r, -2.0, 2.0);
    NamedTensors inputs{{"x", x}};
    const auto params = detail::named_params(m);
    inputs.insert(inputs.end(), params.begin(), params.end());
    const std::vector<double> label{1.0};
    results.push_back(gradcheck(
        "model",
        inputs,
        [&](const std::vector<Tensor<double>>& v) {
          auto mm = detail::with_values(m, std::span<const Tensor<double>>(v).subspan(1));
          return bce_loss(model_forward(mm, v[0], eval), std::span<const double>(label));
        },
        opts));
  }
  return results;
}

}  // namespace eened
