#include "bdsl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "bdsl/layers.hpp"
#include "bdsl/ops.hpp"

namespace bdsl {

double gradient_relative_error(const LossBuilder& loss,
                               std::span<BasicParameter<double>* const> params,
                               double analytic_scale) {
  std::vector<TensorF64> analytic;
  {
    TapeF64 tape;
    Var l = loss(tape);
    for (auto* p : params) p->zero_grad();
    tape.backward(l);
    for (auto* p : params) {
      TensorF64 g = p->grad;
      for (auto& v : g.values()) v *= analytic_scale;
      analytic.push_back(std::move(g));
    }
  }
  auto evaluate = [&] {
    TapeF64 tape(false);
    return tape.value(loss(tape)).item();
  };
  double worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double x = value[i];
      const double h = 1e-5 * std::max(1.0, std::abs(x));
      value[i] = x + h;
      const double up = evaluate();
      value[i] = x - h;
      const double down = evaluate();
      value[i] = x;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

bool GradCheckReport::passed() const {
  return !layers.empty() &&
         std::all_of(layers.begin(), layers.end(), [](const GradCheckLayer& l) { return l.passed; });
}

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> names = {
      "conv2d", "batchnorm", "maxpool", "dense", "relu", "elu", "softmax_xent",
      "add",    "mul",       "sum",     "concat", "reshape"};
  return names;
}

namespace {

using Param = BasicParameter<double>;

TensorF64 uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  TensorF64 t(shape);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Values at least 0.05 from zero so ReLU's kink stays outside the FD stencil.
TensorF64 away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.5);
  std::bernoulli_distribution sign(0.5);
  TensorF64 t(shape);
  for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values spaced 0.1 apart so no 2x2 window holds a near-tie.
TensorF64 well_separated(const Shape& shape, std::mt19937_64& rng) {
  TensorF64 t(shape);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = 0.1 * static_cast<double>(perm[i]) - 0.05 * static_cast<double>(t.size()) + jitter(rng);
  return t;
}

struct Case {
  std::string shape;
  std::vector<std::unique_ptr<Param>> owned;
  std::vector<Param*> params;
  LossBuilder loss;

  Param* add(std::string name, TensorF64 value) {
    owned.push_back(std::make_unique<Param>(Param{std::move(name), std::move(value), {}}));
    params.push_back(owned.back().get());
    return owned.back().get();
  }
};

// loss = sum(out * R) for a fixed random R, so every output element matters.
Var project(TapeF64& tape, Var out, const TensorF64& weights) {
  return ops::sum(tape, ops::mul(tape, out, tape.constant(weights)));
}

using CaseFactory = std::function<std::unique_ptr<Case>(std::size_t shape_index, std::mt19937_64&)>;

std::unique_ptr<Case> conv_case(std::size_t s, std::mt19937_64& rng) {
  struct Spec {
    std::size_t b, c, h, w, out, k;
    nn::Padding pad;
  };
  static const Spec specs[] = {{2, 1, 5, 5, 2, 3, nn::Padding::same},
                               {2, 3, 4, 6, 4, 3, nn::Padding::same},
                               {3, 2, 6, 5, 3, 5, nn::Padding::valid}};
  const auto& sp = specs[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string({sp.b, sp.c, sp.h, sp.w}) + " k" + std::to_string(sp.k) +
             (sp.pad == nn::Padding::same ? " same" : " valid");
  auto* x = c->add("input", uniform({sp.b, sp.c, sp.h, sp.w}, rng, -1, 1));
  auto conv = std::make_shared<nn::Conv2dParams<double>>(
      nn::make_conv2d<double>("conv", sp.c, sp.out, sp.k, sp.pad));
  conv->weights.value = uniform(conv->weights.value.shape(), rng, -0.5, 0.5);
  conv->bias.value = uniform(conv->bias.value.shape(), rng, -0.5, 0.5);
  c->params.push_back(&conv->weights);
  c->params.push_back(&conv->bias);
  const std::size_t oh = sp.pad == nn::Padding::same ? sp.h : sp.h - sp.k + 1;
  const std::size_t ow = sp.pad == nn::Padding::same ? sp.w : sp.w - sp.k + 1;
  auto r = uniform({sp.b, sp.out, oh, ow}, rng, -1, 1);
  c->loss = [x, conv, r](TapeF64& t) { return project(t, nn::conv2d(t, t.parameter(*x), *conv), r); };
  return c;
}

std::unique_ptr<Case> batchnorm_case(std::size_t s, std::mt19937_64& rng, nn::Mode mode) {
  static const Shape shapes[] = {{4, 3}, {2, 3, 3, 3}, {3, 2, 4, 2}};
  const Shape& shape = shapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape) + (mode == nn::Mode::train ? " train" : " infer");
  auto* x = c->add("input", uniform(shape, rng, -2, 2));
  auto bn = std::make_shared<nn::BatchNormParams<double>>(
      nn::make_batchnorm<double>("bn", shape[1]));
  bn->gamma.value = uniform({shape[1]}, rng, 0.5, 1.5);
  bn->beta.value = uniform({shape[1]}, rng, -0.5, 0.5);
  bn->running_mean = uniform({shape[1]}, rng, -0.5, 0.5);
  bn->running_var = uniform({shape[1]}, rng, 0.5, 2.0);
  c->params.push_back(&bn->gamma);
  c->params.push_back(&bn->beta);
  auto r = uniform(shape, rng, -1, 1);
  c->loss = [x, bn, r, mode](TapeF64& t) {
    return project(t, nn::batchnorm(t, t.parameter(*x), *bn, mode), r);
  };
  return c;
}

std::unique_ptr<Case> maxpool_case(std::size_t s, std::mt19937_64& rng) {
  static const Shape shapes[] = {{1, 1, 4, 4}, {2, 3, 4, 6}, {2, 2, 6, 2}};
  const Shape& shape = shapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape);
  auto* x = c->add("input", well_separated(shape, rng));
  auto r = uniform({shape[0], shape[1], shape[2] / 2, shape[3] / 2}, rng, -1, 1);
  c->loss = [x, r](TapeF64& t) { return project(t, nn::maxpool2x2(t, t.parameter(*x)), r); };
  return c;
}

std::unique_ptr<Case> dense_case(std::size_t s, std::mt19937_64& rng) {
  static const std::size_t specs[][3] = {{2, 3, 4}, {5, 7, 2}, {1, 4, 6}};
  const auto [b, in, out] = std::tuple{specs[s][0], specs[s][1], specs[s][2]};
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string({b, in}) + "->" + std::to_string(out);
  auto* x = c->add("input", uniform({b, in}, rng, -1, 1));
  auto d = std::make_shared<nn::DenseParams<double>>(nn::make_dense<double>("dense", in, out));
  d->weights.value = uniform(d->weights.value.shape(), rng, -0.5, 0.5);
  d->bias.value = uniform(d->bias.value.shape(), rng, -0.5, 0.5);
  c->params.push_back(&d->weights);
  c->params.push_back(&d->bias);
  auto r = uniform({b, out}, rng, -1, 1);
  c->loss = [x, d, r](TapeF64& t) { return project(t, nn::dense(t, t.parameter(*x), *d), r); };
  return c;
}

const Shape kElementwiseShapes[] = {{3, 4}, {2, 3, 2, 2}, {10}};

std::unique_ptr<Case> activation_case(std::size_t s, std::mt19937_64& rng, nn::Activation kind) {
  const Shape& shape = kElementwiseShapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape);
  auto* x = c->add("input", kind == nn::Activation::relu ? away_from_zero(shape, rng)
                                                         : uniform(shape, rng, -3, 3));
  auto r = uniform(shape, rng, -1, 1);
  c->loss = [x, r, kind](TapeF64& t) { return project(t, nn::activation(t, t.parameter(*x), kind), r); };
  return c;
}

std::unique_ptr<Case> softmax_case(std::size_t s, std::mt19937_64& rng) {
  static const std::size_t specs[][2] = {{2, 3}, {4, 5}, {3, 38}};
  const std::size_t b = specs[s][0], k = specs[s][1];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string({b, k});
  auto* z = c->add("logits", uniform({b, k}, rng, -3, 3));
  std::uniform_int_distribution<int> label(0, static_cast<int>(k) - 1);
  std::vector<int> labels(b);
  for (auto& l : labels) l = label(rng);
  c->loss = [z, labels](TapeF64& t) { return nn::softmax_xent(t, t.parameter(*z), labels).loss; };
  return c;
}

std::unique_ptr<Case> binary_case(std::size_t s, std::mt19937_64& rng, bool multiply) {
  const Shape& shape = kElementwiseShapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape);
  auto* a = c->add("a", uniform(shape, rng, -1, 1));
  auto* b = c->add("b", uniform(shape, rng, -1, 1));
  auto r = uniform(shape, rng, -1, 1);
  c->loss = [a, b, r, multiply](TapeF64& t) {
    Var va = t.parameter(*a), vb = t.parameter(*b);
    return project(t, multiply ? ops::mul(t, va, vb) : ops::add(t, va, vb), r);
  };
  return c;
}

std::unique_ptr<Case> sum_case(std::size_t s, std::mt19937_64& rng) {
  const Shape& shape = kElementwiseShapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape);
  auto* a = c->add("a", uniform(shape, rng, -1, 1));
  // Squared so the gradient is not constant.
  c->loss = [a](TapeF64& t) {
    Var v = t.parameter(*a);
    return ops::sum(t, ops::mul(t, v, v));
  };
  return c;
}

std::unique_ptr<Case> concat_case(std::size_t s, std::mt19937_64& rng) {
  static const std::pair<Shape, Shape> specs[] = {
      {{1, 3}, {1, 1}}, {{2, 4}, {2, 3}}, {{2, 1, 3}, {2, 2, 3}}};
  const auto& [sa, sb] = specs[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(sa) + "+" + shape_to_string(sb);
  auto* a = c->add("a", uniform(sa, rng, -1, 1));
  auto* b = c->add("b", uniform(sb, rng, -1, 1));
  Shape joined = sa;
  joined[1] += sb[1];
  auto r = uniform(joined, rng, -1, 1);
  c->loss = [a, b, r](TapeF64& t) {
    return project(t, ops::concat(t, t.parameter(*a), t.parameter(*b), 1), r);
  };
  return c;
}

std::unique_ptr<Case> reshape_case(std::size_t s, std::mt19937_64& rng) {
  static const Shape shapes[] = {{2, 3, 2, 2}, {4, 1, 3, 3}, {3, 2, 4, 1}};
  const Shape& shape = shapes[s];
  auto c = std::make_unique<Case>();
  c->shape = shape_to_string(shape);
  auto* a = c->add("a", uniform(shape, rng, -1, 1));
  auto r = uniform({shape[0], shape_numel(shape) / shape[0]}, rng, -1, 1);
  c->loss = [a, r](TapeF64& t) {
    Var flat = ops::flatten(t, t.parameter(*a));
    return project(t, ops::mul(t, flat, flat), r);
  };
  return c;
}

const std::map<std::string, std::vector<CaseFactory>>& factories() {
  static const std::map<std::string, std::vector<CaseFactory>> table = {
      {"conv2d", {conv_case}},
      {"batchnorm",
       {[](std::size_t s, std::mt19937_64& r) { return batchnorm_case(s, r, nn::Mode::train); },
        [](std::size_t s, std::mt19937_64& r) { return batchnorm_case(s, r, nn::Mode::infer); }}},
      {"maxpool", {maxpool_case}},
      {"dense", {dense_case}},
      {"relu", {[](std::size_t s, std::mt19937_64& r) { return activation_case(s, r, nn::Activation::relu); }}},
      {"elu", {[](std::size_t s, std::mt19937_64& r) { return activation_case(s, r, nn::Activation::elu); }}},
      {"softmax_xent", {softmax_case}},
      {"add", {[](std::size_t s, std::mt19937_64& r) { return binary_case(s, r, false); }}},
      {"mul", {[](std::size_t s, std::mt19937_64& r) { return binary_case(s, r, true); }}},
      {"sum", {sum_case}},
      {"concat", {concat_case}},
      {"reshape", {reshape_case}},
  };
  return table;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  const auto& table = factories();
  for (const auto& layer : gradcheck_layers()) {
    GradCheckLayer summary;
    summary.layer = layer;
    const double scale = layer == options.fault_layer ? 1.5 : 1.0;
    for (const auto& factory : table.at(layer)) {
      for (std::size_t shape = 0; shape < 3; ++shape) {
        for (std::size_t k = 0; k < options.seeds; ++k) {
          const std::uint64_t seed = options.seed * 1000003ull + k;
          std::mt19937_64 rng(seed ^ (shape << 32));
          auto c = factory(shape, rng);
          const double err = gradient_relative_error(c->loss, c->params, scale);
          report.cases.push_back({layer, c->shape, seed, err});
          summary.max_relative_error = std::max(summary.max_relative_error, err);
          ++summary.cases;
        }
      }
    }
    summary.passed = summary.max_relative_error < options.tolerance;
    report.layers.push_back(summary);
  }
  return report;
}

}  // namespace bdsl
