#include <doctest.h>

#include "bdsl/errors.hpp"
#include "bdsl/ops.hpp"
#include "bdsl/tape.hpp"
#include "bdsl/tensor.hpp"
#include "test_util.hpp"

using namespace bdsl;

TEST_CASE("tensor creation") {
  Tensor z({2, 2});
  CHECK(z.size() == 4);
  for (float v : z.values()) CHECK(v == 0.0f);

  Tensor t({3}, std::vector<float>{1, 2, 3});
  CHECK(t[0] == 1.0f);
  CHECK(t[2] == 3.0f);

  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), SizeError);
  CHECK_THROWS_AS(Tensor(Shape{}), SizeError);
  CHECK_THROWS_AS(Tensor({2, 0}), SizeError);
}

TEST_CASE("row-major strides and offsets") {
  Tensor t({2, 3, 4});
  CHECK(t.strides() == std::vector<std::size_t>{12, 4, 1});
  CHECK(t.offset({1, 2, 3}) == 23);
  t.at({1, 0, 2}) = 7.0f;
  CHECK(t[14] == 7.0f);
  CHECK_THROWS_AS(t.offset({2, 0, 0}), ShapeError);
  CHECK_THROWS_AS(t.offset({0, 0}), ShapeError);
}

TEST_CASE("reshape and item") {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at({2, 1}) == 6.0f);
  CHECK_THROWS_AS(t.reshaped({4}), SizeError);
  CHECK(Tensor::scalar(2.5f).item() == 2.5f);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("concat and split values") {
  Tensor a({1, 3}, std::vector<float>{1, 2, 3});
  Tensor b({1, 1}, std::vector<float>{9});
  Tensor c = concat_values(a, b, 1);
  CHECK(c.shape() == Shape{1, 4});
  CHECK(c.vector() == std::vector<float>{1, 2, 3, 9});
  auto [x, y] = split_values(c, 1, 3);
  CHECK(x.identical(a));
  CHECK(y.identical(b));
  CHECK(concat_values(Tensor({1, 128}), Tensor({1, 128}), 1).shape() == Shape{1, 256});
  CHECK_THROWS_AS(concat_values(Tensor({1, 2}), Tensor({2, 2}), 1), ShapeError);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2P") {
  Parameter p{"p", Tensor({2, 2}, std::vector<float>{1, -2, 3, 4}), {}};
  {
    Tape tape;
    Var v = tape.parameter(p);
    auto grads = backward(tape, ops::sum(tape, v));
    CHECK(grads.at("p").identical(Tensor::ones({2, 2})));
  }
  Parameter q{"q", Tensor({1}, std::vector<float>{3}), {}};
  Tape tape;
  Var v = tape.parameter(q);
  auto grads = backward(tape, ops::sum(tape, ops::mul(tape, v, v)));
  CHECK(grads.at("q")[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum(concat(a,b)) w.r.t. a is ones") {
  Parameter a{"a", test::random_tensor<float>({1, 3}, 1), {}};
  Parameter b{"b", test::random_tensor<float>({1, 2}, 2), {}};
  Tape tape;
  Var va = tape.parameter(a), vb = tape.parameter(b);
  auto grads = backward(tape, ops::sum(tape, ops::concat(tape, va, vb, 1)));
  CHECK(grads.at("a").identical(Tensor::ones({1, 3})));
  CHECK(grads.at("b").identical(Tensor::ones({1, 2})));
}

TEST_CASE("backward replays in exact reverse order") {
  Parameter p{"p", Tensor::ones({2}), {}};
  Tape tape;
  Var v = tape.parameter(p);
  Var a = ops::mul(tape, v, v);
  Var b = ops::add(tape, a, v);
  Var s = ops::sum(tape, b);
  tape.backward(s);
  CHECK(tape.backward_trace() == std::vector<std::size_t>{s.index, b.index, a.index});
}

TEST_CASE("parameters off the loss path get zero gradients of identical shape") {
  Parameter used{"used", Tensor::ones({3}), {}};
  Parameter unused{"unused", Tensor::ones({2, 2}), {}};
  Tape tape;
  Var u = tape.parameter(used);
  tape.parameter(unused);
  auto grads = backward(tape, ops::sum(tape, u));
  CHECK(grads.at("unused").identical(Tensor::zeros({2, 2})));
  CHECK(unused.grad.shape() == unused.value.shape());
}

TEST_CASE("graph errors") {
  Parameter p{"p", Tensor::ones({2}), {}};
  Tape t1, t2;
  Var v = t1.parameter(p);
  CHECK_THROWS_AS(t2.value(v), GraphError);
  CHECK_THROWS_AS(t2.backward(v), GraphError);
  CHECK_THROWS_AS(t1.backward(v), GraphError);  // not a scalar
  Var s = ops::sum(t1, v);
  t1.backward(s);
  CHECK_THROWS_AS(t1.backward(s), GraphError);

  Tape off(false);
  Var w = off.parameter(p);
  CHECK_FALSE(off.requires_grad(w));
  CHECK_THROWS_AS(off.backward(ops::sum(off, w)), GraphError);
}

TEST_CASE("constants do not require gradients") {
  Tape tape;
  Var c = tape.constant(Tensor::ones({2}));
  Var s = ops::sum(tape, ops::mul(tape, c, c));
  CHECK_FALSE(tape.requires_grad(s));
}

TEST_CASE("ops shape errors") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(ops::add(tape, a, b), ShapeError);
  CHECK_THROWS_AS(ops::mul(tape, a, b), ShapeError);
  CHECK_THROWS_AS(ops::reshape(tape, a, {5}), SizeError);
  CHECK(tape.value(ops::flatten(tape, tape.constant(Tensor({2, 3, 4})))).shape() == Shape{2, 12});
}
