#include "bdsl/ops.hpp"

namespace bdsl::ops {

namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  BasicTensor<T> out = av;
  out.add_(bv);
  return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av, bv, "mul");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (auto* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (auto* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var a) {
  T total = 0;
  for (T v : tape.value(a).values()) total += v;
  return tape.record(BasicTensor<T>::scalar(total), {a},
                     [a](BasicTape<T>& t, const BasicTensor<T>& g) {
                       if (auto* ga = t.grad_buffer(a))
                         for (auto& v : ga->values()) v += g[0];
                     });
}

template <typename T>
Var concat(BasicTape<T>& tape, Var a, Var b, std::size_t axis) {
  const std::size_t first = tape.value(a).dim(axis);
  auto out = concat_values(tape.value(a), tape.value(b), axis);
  return tape.record(std::move(out), {a, b},
                     [a, b, axis, first](BasicTape<T>& t, const BasicTensor<T>& g) {
                       auto [ga, gb] = split_values(g, axis, first);
                       t.accumulate(a, ga);
                       t.accumulate(b, gb);
                     });
}

template <typename T>
Var reshape(BasicTape<T>& tape, Var a, Shape shape) {
  const Shape original = tape.value(a).shape();
  auto out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), {a},
                     [a, original](BasicTape<T>& t, const BasicTensor<T>& g) {
                       t.accumulate(a, g.reshaped(original));
                     });
}

template <typename T>
Var flatten(BasicTape<T>& tape, Var a) {
  const auto& v = tape.value(a);
  const std::size_t batch = v.dim(0);
  return reshape(tape, a, Shape{batch, v.size() / batch});
}

#define BDSL_INSTANTIATE(T)                                            \
  template Var add(BasicTape<T>&, Var, Var);                           \
  template Var mul(BasicTape<T>&, Var, Var);                           \
  template Var sum(BasicTape<T>&, Var);                                \
  template Var concat(BasicTape<T>&, Var, Var, std::size_t);           \
  template Var reshape(BasicTape<T>&, Var, Shape);                     \
  template Var flatten(BasicTape<T>&, Var);

BDSL_INSTANTIATE(float)
BDSL_INSTANTIATE(double)
#undef BDSL_INSTANTIATE

}  // namespace bdsl::ops
