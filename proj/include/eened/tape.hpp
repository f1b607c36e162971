#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "eened/errors.hpp"
#include "eened/tensor.hpp"

namespace eened {

enum class OpKind {
  leaf,
  matmul,
  transpose,
  add,
  mul,
  scale,
  add_bias,
  sigmoid,
  swish,
  softmax_rows,
  layer_norm,
  conv1d_pointwise,
  conv1d_depthwise,
  dropout,
  concat_cols,
  slice_cols,
  mean_rows,
  reshape,
  sum,
  bce_loss,
};

inline constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_bias: return "add_bias";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::swish: return "swish";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::conv1d_pointwise: return "conv1d_pointwise";
    case OpKind::conv1d_depthwise: return "conv1d_depthwise";
    case OpKind::dropout: return "dropout";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::mean_rows: return "mean_rows";
    case OpKind::reshape: return "reshape";
    case OpKind::sum: return "sum";
    case OpKind::bce_loss: return "bce_loss";
  }
  return "?";
}

inline std::optional<OpKind> op_from_name(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(OpKind::bce_loss); ++i) {
    if (op_name(static_cast<OpKind>(i)) == name) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

/// Reverse-mode gradient tape.
///
/// Constructing a tape makes it the active tape of the current thread for
/// its scalar type; the previous one is restored on destruction. Ops record
/// a node whenever at least one input is tracked by the active tape, so
/// untracked (constant) inputs cost nothing. Nodes are appended in creation
/// order, which is a topological order of the graph.
template <typename T>
class Tape {
  struct Node;

 public:
  /// Accumulation targets for a node's inputs during backward.
  class InputGrads {
   public:
    /// Gradient buffer of input `slot`, or an empty span if that input is untracked.
    std::span<T> operator[](std::size_t slot) const {
      const auto& in = node_.inputs[slot];
      if (!in) return {};
      return tape_.grad_buffer(*in);
    }

   private:
    friend class Tape;
    InputGrads(Tape& tape, const Node& node) : tape_(tape), node_(node) {}
    Tape& tape_;
    const Node& node_;
  };

  using Backward = std::function<void(std::span<const T> grad_out, const InputGrads& grads)>;

  Tape() : id_(next_id()), previous_(active_) { active_ = this; }
  explicit Tape(OpKind fault) : Tape() { fault_ = fault; }
  ~Tape() { active_ = previous_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  bool tracks(const Tensor<T>& t) const { return t.node() && t.node()->tape == id_; }

  /// Registers `t` as a leaf whose gradient can be queried after backward.
  Tensor<T> watch(const Tensor<T>& t) {
    nodes_.push_back(Node{OpKind::leaf, {}, nullptr, t.size()});
    return t.with_node({id_, nodes_.size() - 1});
  }

  Tensor<T> record(OpKind kind, const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
                   Backward backward) {
    Node n{kind, {}, std::move(backward), out.size()};
    n.inputs.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) {
      n.inputs.push_back(tracks(*in) ? std::optional<std::size_t>(in->node()->node) : std::nullopt);
    }
    nodes_.push_back(std::move(n));
    return out.with_node({id_, nodes_.size() - 1});
  }

  Tensor<T> record(OpKind kind, const Tensor<T>& out, const std::vector<Tensor<T>>& inputs, Backward backward) {
    Node n{kind, {}, std::move(backward), out.size()};
    for (const auto& in : inputs) {
      n.inputs.push_back(tracks(in) ? std::optional<std::size_t>(in.node()->node) : std::nullopt);
    }
    nodes_.push_back(std::move(n));
    return out.with_node({id_, nodes_.size() - 1});
  }

  /// Propagates d(loss)/d(node) to every node that feeds `loss`.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + loss.shape().str());
    }
    if (!tracks(loss)) throw ContractError("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    const std::size_t root = loss.node()->node;
    grads_[root].assign(1, T(1));
    std::vector<T> flipped;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (grads_[i].empty() || !n.backward) continue;
      std::span<const T> g = grads_[i];
      if (fault_ && *fault_ == n.kind) {
        flipped.assign(g.begin(), g.end());
        for (auto& v : flipped) v = -v;
        g = flipped;
      }
      n.backward(g, InputGrads(*this, n));
    }
  }

  /// Gradient of the last backward pass with respect to a tracked tensor
  /// (zeros if the loss does not depend on it).
  std::vector<T> gradient(const Tensor<T>& t) const {
    if (!tracks(t)) throw ContractError("gradient: tensor is not recorded on this tape");
    const std::size_t i = t.node()->node;
    if (i >= grads_.size() || grads_[i].empty()) return std::vector<T>(t.size(), T(0));
    return grads_[i];
  }

  std::size_t node_count() const { return nodes_.size(); }
  OpKind node_kind(std::size_t i) const { return nodes_[i].kind; }
  std::optional<OpKind> fault() const { return fault_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::optional<std::size_t>> inputs;
    Backward backward;
    std::size_t size;
  };

  std::span<T> grad_buffer(std::size_t node) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(nodes_[node].size, T(0));
    return g;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  inline static thread_local Tape* active_ = nullptr;

  std::uint64_t id_;
  Tape* previous_;
  std::optional<OpKind> fault_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

}  // namespace eened
