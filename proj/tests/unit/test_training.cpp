#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdsl/errors.hpp"
#include "bdsl/evaluation.hpp"
#include "bdsl/training.hpp"
#include "test_util.hpp"

using namespace bdsl;

namespace {

ModelConfig tiny(std::size_t classes) {
  ModelConfig c;
  c.input_height = c.input_width = 16;
  c.conv_channels = {4, 4, 8, 8, 8, 8, 8, 8, 8, 8};
  c.image_fc_widths = {16, 16};
  c.pose_fc_widths = {16, 16};
  c.head_widths = {16, 16};
  c.num_classes = classes;
  c.bn_momentum = 0.9;
  return c;
}

// Class c (< 4): a bright image quadrant and one keypoint coordinate encode the label.
LoadedDataset toy(std::size_t n, std::size_t classes, std::uint64_t seed) {
  LoadedDataset d;
  for (std::size_t c = 0; c < classes; ++c) d.classes.push_back("c" + std::to_string(c));
  d.images = test::random_tensor<float>({n, 1, 16, 16}, seed, 0, 0.2);
  d.keypoints = test::random_tensor<float>({n, 42}, seed + 1, 0, 0.1);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    d.labels.push_back(label);
    d.detected.push_back(1);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        d.images[i * 256 + (8 * (label / 2) + y) * 16 + 8 * (label % 2) + x] += 0.8f;
    d.keypoints[i * 42 + label] += 0.8f;
  }
  return d;
}

double scalar_adam(double theta, int steps, double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2 * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
  }
  return theta;
}

}  // namespace

TEST_CASE("Adam on theta^2 matches the scalar recurrence and a frozen reference") {
  BasicParameter<double> p{"theta", TensorF64({3}, std::vector<double>{1.0, -0.5, 3.0}), {}};
  AdamState<double> state;
  BasicParameter<double>* ps[] = {&p};
  for (int t = 0; t < 5; ++t) {
    p.grad = p.value;
    for (auto& g : p.grad.values()) g *= 2;
    adam_step<double>(ps, state, AdamConfig{}, 0.001);
  }
  CHECK(state.step == 5);
  const double init[] = {1.0, -0.5, 3.0};
  // Independent framework's Adam after five steps on sum(theta^2).
  const double frozen[] = {0.995000436052392, -0.49500087766883727, 2.995000144735273};
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(p.value[i] - scalar_adam(init[i], 5, 0.001)) < 1e-12);
    CHECK(std::abs(p.value[i] - frozen[i]) < 1e-12);
  }
}

// First step: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
TEST_CASE("Adam first step moves by lr against the gradient sign") {
  const double eps = AdamConfig{}.epsilon;
  for (double g : {1e-3, 0.7, -250.0}) {
    BasicParameter<double> p{"x", TensorF64({1}, 2.0), TensorF64({1}, g)};
    AdamState<double> s;
    BasicParameter<double>* ps[] = {&p};
    adam_step<double>(ps, s, AdamConfig{}, 0.01);
    const double delta = p.value[0] - 2.0;
    CHECK(std::abs(delta + 0.01 * g / (std::abs(g) + eps)) <= 1e-15);
    CHECK(std::abs(delta + 0.01 * (g > 0 ? 1 : -1)) <= 0.01 * eps * std::max(1.0, 1.0 / std::abs(g)));
  }
  BasicParameter<double> z{"z", TensorF64({4}, 1.5), TensorF64({4}, 0.0)};
  AdamState<double> s;
  BasicParameter<double>* ps[] = {&z};
  for (int i = 0; i < 3; ++i) adam_step<double>(ps, s, AdamConfig{}, 0.1);
  for (double v : z.value.values()) CHECK(v == 1.5);

  z.grad = TensorF64({5});
  CHECK_THROWS_AS(adam_step<double>(ps, s, AdamConfig{}, 0.1), OptimizerError);
}

TEST_CASE("plateau schedule") {
  TrainConfig cfg;
  TrainState s = TrainState::initial(cfg);
  for (int i = 0; i < 10; ++i) CHECK(plateau_update(s, 1.0 - 0.01 * i, cfg));
  CHECK(s.lr == 0.001);

  s = TrainState::initial(cfg);
  for (int i = 0; i < 4; ++i) plateau_update(s, 1.0, cfg);
  CHECK(s.lr == 0.001);
  plateau_update(s, 1.0, cfg);
  CHECK(s.lr == doctest::Approx(1e-4));

  // Clamped at min_lr, never increasing.
  double prev = s.lr;
  for (int i = 0; i < 60; ++i) {
    plateau_update(s, 2.0, cfg);
    CHECK(s.lr <= prev);
    CHECK(s.lr >= cfg.plateau.min_lr);
    prev = s.lr;
  }
  CHECK(s.lr == doctest::Approx(1e-6));

  s = TrainState::initial(cfg);
  plateau_update(s, 1.0, cfg);
  CHECK_FALSE(plateau_update(s, 1.0 - 1e-8, cfg));  // within tolerance
}

TEST_CASE("early stopping") {
  TrainConfig cfg;
  TrainState s = TrainState::initial(cfg);
  for (int i = 0; i < 30; ++i) {
    plateau_update(s, 1.0 / (i + 1), cfg);
    CHECK(early_stop_check(s, cfg) == StopDecision::proceed);
  }
  s = TrainState::initial(cfg);
  plateau_update(s, 0.5, cfg);
  for (int i = 0; i < 7; ++i) {
    plateau_update(s, 0.9, cfg);
    CHECK(early_stop_check(s, cfg) == StopDecision::proceed);
  }
  plateau_update(s, 0.9, cfg);
  CHECK(early_stop_check(s, cfg) == StopDecision::stop);
}

TEST_CASE("batches never leave a single straggler") {
  std::vector<std::size_t> order(65);
  auto b = make_batches(order, 32);
  REQUIRE(b.size() == 2);
  CHECK(b[1].size() == 33);
  order.resize(66);
  b = make_batches(order, 32);
  REQUIRE(b.size() == 3);
  CHECK(b[2].size() == 2);
}

TEST_CASE("train config JSON") {
  TrainConfig c;
  c.max_epochs = 7;
  c.seed = 9;
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"learning_rate": 1})"), ConfigError);
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("fit is deterministic and keeps the best epoch") {
  const LoadedDataset train = toy(40, 3, 1), val = toy(12, 3, 2);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 5;
  auto once = [&] {
    Network net = build_concatenated(tiny(3));
    FitResult r = fit(net, train, val, cfg);
    return std::make_pair(encode_checkpoint(net), r);
  };
  auto [ck1, r1] = once();
  auto [ck2, r2] = once();
  CHECK(ck1 == ck2);
  CHECK(history_csv(r1.history) == history_csv(r2.history));
  REQUIRE(r1.history.size() == 4);
  double best = 1e30;
  std::size_t best_epoch = 0;
  for (const auto& row : r1.history)
    if (row.val_loss < best) {
      best = row.val_loss;
      best_epoch = row.epoch;
    }
  CHECK(r1.best_epoch == best_epoch);

  Network net = decode_checkpoint(ck1);
  CHECK(measure(net, val).loss == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("fit learns a separable toy problem") {
  const LoadedDataset train = toy(96, 4, 3), val = toy(16, 4, 4);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 8;
  cfg.lr0 = 3e-3;
  Network net = build_image_only(tiny(4));
  fit(net, train, val, cfg);
  CHECK(measure(net, val).accuracy >= 0.9);
}

TEST_CASE("fit preconditions and divergence") {
  const LoadedDataset train = toy(10, 2, 1);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 4;
  Network net = build_concatenated(tiny(2));
  CHECK_THROWS_AS(fit(net, train, LoadedDataset{}, cfg), PreconditionError);

  LoadedDataset poisoned = train;
  poisoned.images[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    fit(net, poisoned, train, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 1);
  }
  Network three = build_concatenated(tiny(3));
  LoadedDataset wide = toy(10, 4, 1);
  CHECK_THROWS_AS(fit(three, wide, train, cfg), LabelError);
}

TEST_CASE("history CSV layout") {
  std::vector<HistoryRow> rows{{1, 1.5, 0.25, 1.25, 0.5, 0.001}, {2, 1.0, 0.5, 1.0, 0.75, 0.0001}};
  CHECK(history_csv(rows) ==
        "epoch,train_loss,train_acc,val_loss,val_acc,lr\n"
        "1,1.500000,0.250000,1.250000,0.500000,0.001000\n"
        "2,1.000000,0.500000,1.000000,0.750000,0.000100\n");
}

TEST_CASE("evaluation report") {
  const std::vector<int> t{0, 0, 1}, p{0, 1, 1};
  EvalReport r = make_report(t, p, {"a", "b"});
  CHECK(r.confusion == std::vector<std::vector<std::size_t>>{{1, 1}, {0, 1}});
  CHECK(r.accuracy == doctest::Approx(2.0 / 3));
  CHECK(r.per_class[0].support == 2);
  CHECK(r.per_class[1].precision == doctest::Approx(0.5));
  REQUIRE(r.confused_pairs.size() == 1);
  CHECK(r.confused_pairs[0].truth == 0);
  CHECK(confusion_csv(r) == "true\\predicted,a,b\na,1,1\nb,0,1\n");

  const std::vector<int> all{0, 1, 2, 2, 1};
  EvalReport perfect = make_report(all, all, {"x", "y", "z"});
  CHECK(perfect.accuracy == 1.0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      total += perfect.confusion[i][j];
      if (i != j) CHECK(perfect.confusion[i][j] == 0);
    }
  CHECK(total == 5);
  CHECK(perfect.confused_pairs.empty());

  const std::vector<int> bad{3};
  CHECK_THROWS_AS(make_report(bad, bad, {"a"}), LabelError);

  const std::vector<float> probs{0.1f, 0.4f, 0.2f, 0.3f};
  auto top = top_k(probs, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].label == 1);
  CHECK(top[1].label == 3);
  CHECK(top[2].label == 2);
}

TEST_CASE("evaluate rows sum to class counts and topology is enforced") {
  const LoadedDataset data = toy(9, 3, 7);
  Network net = build_concatenated(tiny(3));
  EvalReport r = evaluate(net, data);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0;
    for (auto v : r.confusion[c]) row += v;
    CHECK(row == 3);
  }
  CHECK_THROWS_AS(evaluate(net, data, false), TopologyError);
  Network img = build_image_only(tiny(3));
  CHECK_NOTHROW(evaluate(img, data, false));
  Network wrong = build_image_only(tiny(4));
  CHECK_THROWS_AS(evaluate(wrong, data), TopologyError);
}
