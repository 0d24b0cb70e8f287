// Acceptance suite: one PASS/FAIL line per primary criterion.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "bdsl/archive.hpp"
#include "bdsl/dataset.hpp"
#include "bdsl/errors.hpp"
#include "bdsl/evaluation.hpp"
#include "bdsl/gradcheck.hpp"
#include "bdsl/image_io.hpp"
#include "bdsl/layers.hpp"
#include "bdsl/model.hpp"
#include "bdsl/synthetic.hpp"
#include "bdsl/training.hpp"
#include "cli.hpp"

using namespace bdsl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult bdsl(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

double parse_accuracy(const std::string& out) {
  const auto pos = out.find("accuracy=");
  if (pos == std::string::npos) throw std::runtime_error("no accuracy line");
  return std::stod(out.substr(pos + 9));
}

std::string desk_config() { return (fs::path(BDSL_SOURCE_DIR) / "configs" / "desk.json").string(); }

Outcome gradient_suite(const fs::path&) {
  const auto t0 = Clock::now();
  const CliResult r = bdsl({"gradcheck", "--seed", "0"});
  const double secs = seconds_since(t0);
  GradCheckOptions opt;  // same defaults as the command
  const GradCheckReport rep = run_gradcheck(opt);
  double worst = 0;
  std::size_t min_cases = SIZE_MAX;
  for (const auto& l : rep.layers) {
    worst = std::max(worst, l.max_relative_error);
    min_cases = std::min(min_cases, l.cases);
  }
  const bool ok = r.code == 0 && rep.passed() && opt.seeds >= 5 && min_cases >= 15 && secs < 60;
  return {ok, fmt("exit=%d kinds=%zu min_cases=%zu max_rel_err=%.2e (<1e-4) %.1fs (<60s)", r.code,
                  rep.layers.size(), min_cases, worst, secs)};
}

Outcome optimizer_oracle(const fs::path&) {
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  BasicParameter<double> p{"theta", TensorF64({1}, 1.0), {}};
  AdamState<double> st;
  BasicParameter<double>* ps[] = {&p};
  double theta = 1.0, m = 0, v = 0, worst = 0;
  for (int t = 1; t <= 5; ++t) {
    p.grad = TensorF64({1}, 2 * p.value[0]);
    adam_step<double>(ps, st, AdamConfig{}, lr);
    const double g = 2 * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    worst = std::max(worst, std::abs(p.value[0] - theta));
  }
  // First step is -lr*g/(|g|+eps): within eps*lr of -lr*sign(g) once |g| >= 1,
  // within eps*lr/|g| below that.
  double first_ratio = 0;
  for (double g : {1e-4, 0.3, -7.0, 1e3}) {
    BasicParameter<double> q{"q", TensorF64({1}, 0.0), TensorF64({1}, g)};
    AdamState<double> s;
    BasicParameter<double>* qs[] = {&q};
    adam_step<double>(qs, s, AdamConfig{}, lr);
    const double dev = std::abs(q.value[0] + lr * (g > 0 ? 1 : -1));
    first_ratio = std::max(first_ratio, dev / (eps * lr * std::max(1.0, 1.0 / std::abs(g))));
  }
  const bool ok = worst <= 1e-12 && first_ratio <= 1.0;
  return {ok, fmt("5-step max |diff|=%.1e (<=1e-12), first-step |dtheta+lr*sign(g)| / (eps*lr*max(1,1/|g|))=%.6f "
                  "(<=1)",
                  worst, first_ratio)};
}

Outcome cold_start(const fs::path& work) {
  SyntheticConfig sc;
  sc.classes = 38;
  sc.ambiguous_pairs = 0;
  sc.train_count = 76;
  sc.test_count = 38;
  generate_synthetic(sc, work / "synth38");
  const LoadedDataset d = load_dataset(scan_dataset(work / "synth38" / "train"), true);
  const auto order = epoch_order(d.size(), 0, 0);
  const std::vector<std::size_t> rows(order.begin(), order.begin() + 32);
  Tensor x, kp;
  std::vector<int> labels;
  d.gather(rows, x, kp, labels);
  Network net = build_concatenated(ModelConfig{});
  Tape tape;
  auto sx = nn::softmax_xent(tape, net.forward_logits(tape, x, &kp, nn::Mode::train), labels);
  const double loss = tape.value(sx.loss).item();
  const double target = std::log(38.0);
  return {std::abs(loss - target) <= 0.15,
          fmt("default 38-class model, first batch of 32: loss=%.4f, ln38=%.4f, |diff|=%.4f (<=0.15)", loss, target,
              std::abs(loss - target))};
}

Outcome overfit(const fs::path& work) {
  SyntheticConfig sc;
  sc.ambiguous_pairs = 0;
  sc.train_count = 64;
  sc.test_count = 8;
  sc.seed = 7;
  generate_synthetic(sc, work / "overfit");
  const LoadedDataset d = load_dataset(scan_dataset(work / "overfit" / "train"), false);
  ModelConfig mc = ModelConfig::from_json(R"({"conv_channels": [4, 4, 8, 8, 16, 16, 32, 32, 32, 32]})");
  mc.num_classes = d.num_classes();
  Network net = build_image_only(mc);
  TrainConfig tc;
  tc.batch_size = 8;
  AdamState<float> adam;
  const auto t0 = Clock::now();
  std::size_t epoch = 0;
  double acc = 0;
  while (epoch < 200 && acc < 1.0) {
    ++epoch;
    const auto order = epoch_order(d.size(), 1, epoch);
    for (auto batch : make_batches(order, tc.batch_size)) {
      Tensor x, kp;
      std::vector<int> labels;
      d.gather(batch, x, kp, labels);
      Tape tape;
      auto sx = nn::softmax_xent(tape, net.forward_logits(tape, x, nullptr, nn::Mode::train), labels);
      backward(tape, sx.loss);
      auto params = net.parameters();
      adam_step<float>(params, adam, tc.adam, tc.lr0);
    }
    acc = measure(net, d).accuracy;
  }
  const double secs = seconds_since(t0);
  return {acc == 1.0 && secs < 300,
          fmt("64 samples, image-only, batch 8: inference-mode train accuracy %.4f after %zu epochs (<=200), "
              "%.1fs (<300s)",
              acc, epoch, secs)};
}

Outcome fusion(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path data = work / "fusion";
  if (bdsl({"synth", "--out", data.string(), "--seed", "42"}).code != 0) return {false, "synth failed"};
  double acc[2] = {0, 0};
  const char* models[2] = {"image-only", "concat"};
  for (int i = 0; i < 2; ++i) {
    const fs::path ckpt = work / ("fusion_" + std::string(models[i])) / "model.ckpt";
    const CliResult t = bdsl({"train", "--data", data.string(), "--model", models[i], "--epochs", "30", "--out",
                              ckpt.string(), "--config", desk_config()});
    if (t.code != 0) return {false, std::string("train failed: ") + t.err};
    const CliResult e = bdsl({"eval", "--data", data.string(), "--ckpt", ckpt.string(), "--report",
                              (ckpt.parent_path() / "report").string()});
    if (e.code != 0) return {false, std::string("eval failed: ") + e.err};
    acc[i] = parse_accuracy(e.out);
  }
  const double secs = seconds_since(t0);
  const bool ok = acc[0] <= 0.65 && acc[1] >= 0.90 && acc[1] - acc[0] >= 0.25 && secs < 900;
  return {ok, fmt("synth defaults seed 42, 30 epochs: image-only=%.4f (<=0.65) concat=%.4f (>=0.90) gap=%.4f "
                  "(>=0.25) %.0fs (<900s)",
                  acc[0], acc[1], acc[1] - acc[0], secs)};
}

Outcome determinism(const fs::path& work) {
  const fs::path data = work / "det_data";
  if (bdsl({"synth", "--out", data.string(), "--train", "320", "--test", "80", "--seed", "5"}).code != 0)
    return {false, "synth failed"};
  std::vector<std::uint8_t> ckpt[2];
  std::string hist[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = work / ("det_run" + std::to_string(i)) / "model.ckpt";
    const CliResult r = bdsl({"train", "--data", data.string(), "--model", "concat", "--epochs", "3", "--seed", "11",
                              "--out", out.string(), "--config", desk_config()});
    if (r.code != 0) return {false, "train failed: " + r.err};
    ckpt[i] = read_file_bytes(out);
    std::ifstream h(out.parent_path() / "history.csv", std::ios::binary);
    hist[i].assign(std::istreambuf_iterator<char>(h), {});
  }
  const bool ok = ckpt[0] == ckpt[1] && hist[0] == hist[1] && !hist[0].empty();
  return {ok, fmt("two concat runs, seed 11: checkpoints %s (%zu bytes), history.csv %s", ckpt[0] == ckpt[1] ? "identical" : "DIFFER",
                  ckpt[0].size(), hist[0] == hist[1] ? "identical" : "DIFFERS")};
}

Outcome formats(const fs::path& work) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  Archive a;
  Tensor t({3, 4, 5});
  for (auto& v : t.values()) v = static_cast<float>(nd(rng));
  TensorF64 u({7});
  for (auto& v : u.values()) v = nd(rng);
  a["weights"] = t;
  a["stats"] = u;
  write_archive(a, work / "fmt.ctns");
  const Archive back = read_archive(work / "fmt.ctns");
  bool roundtrip = back.size() == 2 && std::get<Tensor>(back.at("weights")).identical(t) &&
                   std::get<TensorF64>(back.at("stats")).identical(u);

  ModelConfig mc = ModelConfig::from_json(R"({"conv_channels": [4, 4, 8, 8, 16, 16, 32, 32, 32, 32]})");
  Network net = build_concatenated(mc);
  save_checkpoint(net, work / "fmt.ckpt");
  Network loaded = load_checkpoint(work / "fmt.ckpt");
  roundtrip = roundtrip && encode_checkpoint(loaded) == encode_checkpoint(net);
  for (const auto& [name, value] : net.state())
    roundtrip = roundtrip && std::get<Tensor>(value).identical(std::get<Tensor>(loaded.state().at(name)));

  auto fuzz = [&](const std::vector<std::uint8_t>& good, auto decode) {
    std::size_t rejected = 0;
    for (int i = 0; i < 1000; ++i) {
      auto bytes = good;
      switch (i % 4) {
        case 0: bytes.resize(rng() % bytes.size()); break;
        case 1: bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
        case 2:
          for (int k = 0; k < 4; ++k) bytes[rng() % bytes.size()] = static_cast<std::uint8_t>(rng());
          if (bytes == good) bytes[0] ^= 0xFF;
          break;
        case 3: bytes.insert(bytes.begin() + static_cast<std::ptrdiff_t>(rng() % bytes.size()), static_cast<std::uint8_t>(rng())); break;
      }
      try {
        decode(bytes);
      } catch (const FormatError&) {
        ++rejected;
      } catch (...) {
      }
    }
    return rejected;
  };
  const std::size_t ra = fuzz(encode_archive(a), [](const auto& b) { decode_archive(b); });
  const std::size_t rc = fuzz(encode_checkpoint(net), [](const auto& b) { decode_checkpoint(b); });
  return {roundtrip && ra == 1000 && rc == 1000,
          fmt("round trips %s; corrupted archives rejected %zu/1000, checkpoints %zu/1000",
              roundtrip ? "bit-exact" : "NOT exact", ra, rc)};
}

Outcome protocol(const fs::path& work) {
  std::vector<std::string> problems;
  const ModelConfig mc;
  const TrainConfig tc;
  if (mc.input_height != 64 || mc.input_width != 64 || mc.image_channels != 1) problems.push_back("input");
  if (mc.num_classes != 38) problems.push_back("classes");
  if (tc.max_epochs != 30) problems.push_back("epochs");
  if (tc.lr0 != 0.001) problems.push_back("lr");
  if (tc.plateau.patience != 4) problems.push_back("plateau");
  DatasetManifest m;
  m.classes = {"a"};
  for (std::size_t i = 0; i < 11061; ++i) m.items.push_back({std::to_string(1000000 + i), {}, 0});
  const auto [tr, va] = split_train_val(m, default_val_count(m.size()), 0);
  if (tr.size() != 9959 || va.size() != 1102) problems.push_back("split");
  const Tensor white = preprocess_image(Image8{80, 48, 3, std::vector<std::uint8_t>(80 * 48 * 3, 255)});
  if (white.shape() != Shape{1, 64, 64} || white[0] != 1.0f) problems.push_back("preprocess");

  // Structural run on a 38-class folder dataset with sidecars.
  SyntheticConfig sc;
  sc.classes = 38;
  sc.ambiguous_pairs = 19;
  sc.train_count = 380;
  sc.test_count = 76;
  const fs::path data = work / "protocol_data";
  generate_synthetic(sc, data);
  const fs::path out = work / "protocol_out";
  const CliResult r = bdsl({"compare", "--data", data.string(), "--out", out.string(), "--config", desk_config(),
                            "--epochs", "1"});
  if (r.code != 0) problems.push_back("compare exit " + std::to_string(r.code) + ": " + r.err);
  std::ifstream md_in(out / "comparison.md");
  const std::string md((std::istreambuf_iterator<char>(md_in)), {});
  for (const char* needle : {"Concatenated BdSL Network", "Only Image Network Model", "| Training |", "| Validation |",
                             "| Testing |", "| Image size | 64*64 | 64*64 |", "| Epoch |", "| GPU | No | No |"})
    if (md.find(needle) == std::string::npos) problems.push_back(std::string("table lacks '") + needle + "'");
  const std::size_t val = default_val_count(380);
  if (r.out.find("train_items=" + std::to_string(380 - val) + " val_items=" + std::to_string(val) + " test_items=76") ==
      std::string::npos)
    problems.push_back("split counts");
  std::string detail = "defaults 64x64 gray /255, 30 epochs, Adam 0.001, plateau 4; 11061 -> 9959/1102; "
                       "38-class compare table emitted";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "bdsl_acceptance").string();
  std::vector<std::string> only;
  app.add_option("--workdir", workdir, "Scratch directory (recreated)");
  app.add_option("--only", only, "Criteria to run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(const fs::path&)>>> criteria = {
      {"gradient-suite", gradient_suite}, {"optimizer-oracle", optimizer_oracle}, {"cold-start-loss", cold_start},
      {"overfit-sanity", overfit},        {"fusion-benefit", fusion},            {"determinism", determinism},
      {"formats", formats},               {"protocol-fidelity", protocol}};

  fs::remove_all(workdir);
  fs::create_directories(workdir);
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const fs::path dir = fs::path(workdir) / name;
    fs::create_directories(dir);
    Outcome o;
    try {
      o = check(dir);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
