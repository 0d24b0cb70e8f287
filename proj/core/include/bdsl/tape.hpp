#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bdsl/tensor.hpp"

namespace bdsl {

/// A trainable tensor with a stable name and its accumulated gradient.
template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  void zero_grad() { grad = BasicTensor<T>::zeros(value.shape()); }
};

using Parameter = BasicParameter<float>;

/// Handle to a value recorded on a tape.
struct Var {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

/// Records primitive operations during a forward pass and replays their
/// backward rules in reverse order.
///
/// Nodes that do not depend on any parameter (inputs, constants) are marked
/// as not requiring a gradient and their backward rules are skipped. With
/// gradients disabled the tape degenerates to plain evaluation and parameters
/// are recorded as constants.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicTape&, const TensorT& out_grad)>;

  explicit BasicTape(bool grad_enabled = true);
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(TensorT value);
  Var parameter(BasicParameter<T>& param);

  /// Appends an operation result. `backward` receives d(loss)/d(result) and is
  /// responsible for calling accumulate() on whichever inputs require grad.
  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward);

  const TensorT& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient accumulated so far; zeros if nothing reached the node.
  TensorT grad(Var v) const;
  /// Adds `g` into the gradient of `v` (no-op when `v` needs no gradient).
  void accumulate(Var v, const TensorT& g);
  /// Zero-initialised gradient buffer for in-place accumulation; null when `v`
  /// needs no gradient.
  TensorT* grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse
  /// execution order, then adds leaf gradients into the bound parameters.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<BasicParameter<T>*>& parameters() const noexcept { return params_; }
  /// Node indices whose backward rule ran during the last backward(), in order.
  const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

 private:
  struct Node {
    TensorT value;
    std::optional<TensorT> grad;
    BackwardFn backward;
    BasicParameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(Node n);

  std::uint64_t id_;
  bool grad_enabled_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  std::vector<BasicParameter<T>*> params_;
  std::vector<std::size_t> trace_;
};

using Tape = BasicTape<float>;
using TapeF64 = BasicTape<double>;

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

/// Runs backward from `loss` and returns d(loss)/d(P) for every parameter
/// registered on the tape, keyed by parameter name. Parameters off the path to
/// the loss receive zero gradients.
template <typename T>
GradMap<T> backward(BasicTape<T>& tape, Var loss);

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace bdsl
