#include <benchmark/benchmark.h>

#include <random>

#include "bdsl/layers.hpp"
#include "bdsl/model.hpp"
#include "bdsl/ops.hpp"

using namespace bdsl;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0, 1);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Args: batch, channels in/out, spatial size.
void BM_Conv2dForward(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1)),
             s = static_cast<std::size_t>(state.range(2));
  auto p = nn::make_conv2d<float>("c", c, c, 3);
  p.weights.value = uniform({c, c, 3, 3}, 1);
  const Tensor x = uniform({b, c, s, s}, 2);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(tape.value(nn::conv2d(tape, tape.constant(x), p)).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_Conv2dForward)->Args({32, 8, 64})->Args({32, 32, 16})->Args({32, 64, 32});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1)),
             s = static_cast<std::size_t>(state.range(2));
  auto p = nn::make_conv2d<float>("c", c, c, 3);
  p.weights.value = uniform({c, c, 3, 3}, 1);
  const Tensor x = uniform({b, c, s, s}, 2);
  for (auto _ : state) {
    Tape tape;
    auto grads = backward(tape, ops::sum(tape, nn::conv2d(tape, tape.constant(x), p)));
    benchmark::DoNotOptimize(grads.size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 8, 64})->Args({32, 32, 16})->Args({32, 64, 32});

void BM_Dense(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0)), out = static_cast<std::size_t>(state.range(1));
  auto p = nn::make_dense<float>("d", in, out);
  p.weights.value = uniform({out, in}, 3);
  const Tensor x = uniform({32, in}, 4);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(tape.value(nn::dense(tape, tape.constant(x), p)).data());
  }
}
BENCHMARK(BM_Dense)->Args({8192, 256})->Args({256, 128});

void BM_ModelForward(benchmark::State& state) {
  ModelConfig c;
  if (state.range(0) == 0) c.conv_channels = {4, 4, 8, 8, 16, 16, 32, 32, 32, 32};
  Network net = build_concatenated(c);
  const Tensor x = uniform({32, 1, 64, 64}, 5), kp = uniform({32, 42}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, &kp, nn::Mode::infer).data());
  state.SetItemsProcessed(state.iterations() * 32);
  state.SetLabel(state.range(0) == 0 ? "desk widths" : "default widths");
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
