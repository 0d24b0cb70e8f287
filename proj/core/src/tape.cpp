#include "bdsl/tape.hpp"

#include <atomic>

namespace bdsl {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

template <typename T>
BasicTape<T>::BasicTape(bool grad_enabled) : id_(next_tape_id++), grad_enabled_(grad_enabled) {}

template <typename T>
const typename BasicTape<T>::Node& BasicTape<T>::node(Var v) const {
  if (v.tape != id_ || v.index >= nodes_.size())
    throw GraphError("variable was not produced on this tape");
  return nodes_[v.index];
}

template <typename T>
typename BasicTape<T>::Node& BasicTape<T>::node(Var v) {
  if (v.tape != id_ || v.index >= nodes_.size())
    throw GraphError("variable was not produced on this tape");
  return nodes_[v.index];
}

template <typename T>
Var BasicTape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var BasicTape<T>::parameter(BasicParameter<T>& param) {
  Node n;
  n.value = param.value;
  if (grad_enabled_) {
    n.param = &param;
    n.requires_grad = true;
    params_.push_back(&param);
  }
  return push(std::move(n));
}

template <typename T>
Var BasicTape<T>::record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || node(in).requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
bool BasicTape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
BasicTensor<T> BasicTape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad) return *n.grad;
  return TensorT::zeros(n.value.shape());
}

template <typename T>
BasicTensor<T>* BasicTape<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.grad) n.grad = TensorT::zeros(n.value.shape());
  return &*n.grad;
}

template <typename T>
void BasicTape<T>::accumulate(Var v, const TensorT& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_to_string(g.shape()) + " does not match value " +
                     shape_to_string(n.value.shape()));
  }
  if (n.grad)
    n.grad->add_(g);
  else
    n.grad = g;
}

template <typename T>
void BasicTape<T>::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) throw GraphError("backward requires a single-element loss");
  if (!grad_enabled_) throw GraphError("backward on a tape with gradients disabled");
  if (backward_done_) throw GraphError("backward already ran on this tape");
  backward_done_ = true;
  trace_.clear();
  if (!root.requires_grad) return;
  root.grad = TensorT::ones(root.value.shape());

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad) continue;
    if (n.backward) {
      // Rules only touch gradients of earlier nodes, so the reference stays valid.
      trace_.push_back(i);
      n.backward(*this, *n.grad);
    }
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
    if (n.grad) n.param->grad.add_(*n.grad);
  }
}

template <typename T>
GradMap<T> backward(BasicTape<T>& tape, Var loss) {
  for (auto* p : tape.parameters()) p->zero_grad();
  tape.backward(loss);
  GradMap<T> out;
  for (auto* p : tape.parameters()) out.insert_or_assign(p->name, p->grad);
  return out;
}

template class BasicTape<float>;
template class BasicTape<double>;
template GradMap<float> backward(BasicTape<float>&, Var);
template GradMap<double> backward(BasicTape<double>&, Var);

}  // namespace bdsl
