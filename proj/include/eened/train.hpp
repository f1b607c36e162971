#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eened/data.hpp"
#include "eened/errors.hpp"
#include "eened/model.hpp"
#include "eened/ops.hpp"
#include "eened/rng.hpp"
#include "eened/tape.hpp"

namespace eened {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  int eval_every = 1;
  int warmup_steps = 0;  // linear warmup length in optimizer steps; 0 disables

  void validate() const {
    std::vector<std::string> v;
    if (epochs < 1) v.push_back("epochs must be >= 1");
    if (batch_size < 1) v.push_back("batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) v.push_back("lr must be finite and >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) v.push_back("adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) v.push_back("adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) v.push_back("adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) v.push_back("weight_decay must be >= 0");
    if (eval_every < 1) v.push_back("eval_every must be >= 1");
    if (warmup_steps < 0) v.push_back("warmup_steps must be >= 0");
    if (v.empty()) return;
    std::string msg = "invalid train config: ";
    for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? "; " : "") + v[i];
    throw ConfigError(msg);
  }
};

/// Binary confusion counts (positive = epileptic) and the scores derived from them.
struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return ratio(tp + tn, total()); }
  double precision() const { return ratio(tp, tp + fp); }
  double recall() const { return ratio(tp, tp + fn); }
  double f1_positive() const { return ratio(2 * tp, 2 * tp + fp + fn); }
  double f1_negative() const { return ratio(2 * tn, 2 * tn + fn + fp); }
  double f1_macro() const { return 0.5 * (f1_positive() + f1_negative()); }

  void add(bool predicted_positive, bool actual_positive) {
    if (predicted_positive) {
      ++(actual_positive ? tp : fp);
    } else {
      ++(actual_positive ? fn : tn);
    }
  }

  bool operator==(const Metrics&) const = default;

 private:
  static double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  }
};

inline std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

/// Structured `key=value` report.
inline std::string metrics_report(const Metrics& m) {
  std::ostringstream os;
  os << "total=" << m.total() << '\n'
     << "tp=" << m.tp << '\n'
     << "fp=" << m.fp << '\n'
     << "tn=" << m.tn << '\n'
     << "fn=" << m.fn << '\n'
     << "accuracy=" << fixed6(m.accuracy()) << '\n'
     << "precision=" << fixed6(m.precision()) << '\n'
     << "recall=" << fixed6(m.recall()) << '\n'
     << "f1_pos=" << fixed6(m.f1_positive()) << '\n'
     << "f1_neg=" << fixed6(m.f1_negative()) << '\n'
     << "f1_macro=" << fixed6(m.f1_macro()) << '\n';
  return os.str();
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  Metrics metrics;

  /// `epoch=<n> loss=<f> acc=<f> f1_pos=<f> f1_neg=<f>`
  std::string line() const {
    return "epoch=" + std::to_string(epoch) + " loss=" + fixed6(loss) + " acc=" + fixed6(metrics.accuracy()) +
           " f1_pos=" + fixed6(metrics.f1_positive()) + " f1_neg=" + fixed6(metrics.f1_negative());
  }
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long step = 0;

  explicit AdamState(const ParamStore<T>& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.emplace_back(store.param(i).size(), T(0));
      v.emplace_back(store.param(i).size(), T(0));
    }
  }
};

/// Bias-corrected Adam with optional L2 weight decay folded into the gradient.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, const TrainConfig& cfg, double lr) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.grad(i).empty()) throw ContractError("adam_step: missing gradient for " + store.name(i));
  }
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor<T>& p = store.param(i);
    const auto& g = store.grad(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<T> next(p.data().begin(), p.data().end());
    for (std::size_t k = 0; k < next.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + cfg.weight_decay * static_cast<double>(next[k]);
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      next[k] = static_cast<T>(static_cast<double>(next[k]) - lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.adam_eps));
    }
    store.param(i) = Tensor<T>(p.shape(), std::move(next));
  }
}

template <typename T>
Tensor<T> segment_tensor(std::span<const double> row) {
  std::vector<T> v(row.begin(), row.end());
  return Tensor<T>(Shape{row.size()}, std::move(v));
}

/// One optimizer step on a batch. Gradients are accumulated sample by sample
/// (each on its own tape) in batch order. Returns the mean batch BCE.
template <typename T>
double train_step(EenedModel<T>& model, ParamStore<T>& store, AdamState<T>& state, const Batch& batch,
                  std::size_t t_in, const TrainConfig& cfg, double lr, const Rng& step_rng) {
  store.zero_grad();
  const T inv_b = T(1) / static_cast<T>(batch.size());
  double loss_total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape<T> tape;
    EenedModel<T> watched = model;
    ParamStore<T> leaves(watched);
    for (std::size_t i = 0; i < leaves.size(); ++i) leaves.param(i) = tape.watch(leaves.param(i));
    Rng sample_rng = step_rng.split(static_cast<std::uint64_t>(b));
    auto p = model_forward(watched, segment_tensor<T>({batch.x.data() + b * t_in, t_in}), {true, &sample_rng});
    const T label = static_cast<T>(batch.y[b]);
    auto loss = bce_loss(p, std::span<const T>(&label, 1));
    loss_total += static_cast<double>(loss[0]);
    tape.backward(scale(loss, inv_b));
    for (std::size_t i = 0; i < leaves.size(); ++i) store.accumulate_grad(i, tape.gradient(leaves.param(i)));
  }
  adam_step(store, state, cfg, lr);
  return loss_total / static_cast<double>(batch.size());
}

template <typename T>
Metrics evaluate(const EenedModel<T>& model, const Dataset& ds, Split which, double threshold = 0.5) {
  const auto rows = ds.indices(which);
  if (rows.empty()) throw DataError("evaluate: split is empty");
  Metrics m;
  for (auto i : rows) {
    const double p = static_cast<double>(model_forward(model, segment_tensor<T>(ds.row(i)))[0]);
    m.add(p >= threshold, ds.y[i] == 1);
  }
  return m;
}

/// Mean eval-mode BCE over a split.
template <typename T>
double evaluate_loss(const EenedModel<T>& model, const Dataset& ds, Split which) {
  const auto rows = ds.indices(which);
  if (rows.empty()) throw DataError("evaluate_loss: split is empty");
  double total = 0;
  for (auto i : rows) {
    const T label = static_cast<T>(ds.y[i]);
    auto p = model_forward(model, segment_tensor<T>(ds.row(i)));
    total += static_cast<double>(bce_loss(p, std::span<const T>(&label, 1))[0]);
  }
  return total / static_cast<double>(rows.size());
}

template <typename T>
struct TrainResult {
  EenedModel<T> best;
  int best_epoch = 0;
  Metrics best_metrics;
  std::vector<EpochLog> log;
};

/// Mini-batch Adam on the train split. Metrics are computed on the test split
/// (or the train split when no test rows exist) every `eval_every` epochs and
/// after the last one; the snapshot with the highest accuracy is returned.
template <typename T>
TrainResult<T> train(EenedModel<T> model, const Dataset& ds, const TrainConfig& cfg,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (static_cast<int>(ds.t_in) != model.config.t_in) {
    throw DataError("dataset segments have " + std::to_string(ds.t_in) + " samples, model expects " +
                    std::to_string(model.config.t_in));
  }
  const Split eval_split = ds.indices(Split::test).empty() ? Split::train : Split::test;
  model.input_norm = ds.norm;
  ParamStore<T> store(model);
  AdamState<T> state(store);
  const Rng root = Rng(cfg.seed).split("train");
  TrainResult<T> result{model, 0, {}, {}};
  double best_acc = -1.0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t shuffle_seed = root.split("shuffle").split(static_cast<std::uint64_t>(epoch)).next_u64();
    BatchIterator it(ds, Split::train, static_cast<std::size_t>(cfg.batch_size), shuffle_seed);
    double loss_sum = 0;
    std::size_t seen = 0;
    while (auto batch = it.next()) {
      ++step;
      double lr = cfg.lr;
      if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) lr *= static_cast<double>(step) / cfg.warmup_steps;
      const double loss = train_step(model, store, state, *batch, ds.t_in, cfg, lr,
                                     root.split("dropout").split(static_cast<std::uint64_t>(step)));
      loss_sum += loss * static_cast<double>(batch->size());
      seen += batch->size();
    }
    if (epoch % cfg.eval_every != 0 && epoch != cfg.epochs) continue;
    EpochLog entry{epoch, loss_sum / static_cast<double>(seen), evaluate(model, ds, eval_split)};
    if (entry.metrics.accuracy() > best_acc) {
      best_acc = entry.metrics.accuracy();
      result.best = model;
      result.best_epoch = epoch;
      result.best_metrics = entry.metrics;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace eened
