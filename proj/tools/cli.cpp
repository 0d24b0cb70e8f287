#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "bdsl/dataset.hpp"
#include "bdsl/errors.hpp"
#include "bdsl/evaluation.hpp"
#include "bdsl/gradcheck.hpp"
#include "bdsl/image_io.hpp"
#include "bdsl/model.hpp"
#include "bdsl/protocol.hpp"
#include "bdsl/synthetic.hpp"
#include "bdsl/training.hpp"

namespace bdsl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Every command echoes its effective settings as '#'-prefixed JSON.
void print_config(std::ostream& out, const json& config) {
  std::istringstream lines(config.dump(2));
  out << "# resolved config\n";
  for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
}

void print_epoch(std::ostream& out, const std::string& tag, const HistoryRow& r) {
  out << tag << "epoch " << r.epoch << " train_loss=" << fixed6(r.train_loss)
      << " train_acc=" << fixed6(r.train_acc) << " val_loss=" << fixed6(r.val_loss)
      << " val_acc=" << fixed6(r.val_acc) << " lr=" << r.lr << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// Settings shared by train and compare. Layering: defaults < config file < flags.
struct RunSettings {
  ModelConfig model;
  TrainConfig train;
  std::optional<std::size_t> val_count;
  std::optional<double> val_frac;
  std::uint64_t split_seed = 0;

  json to_json() const {
    json j;
    j["model"] = json::parse(model.to_json());
    j["train"] = json::parse(train.to_json());
    j["split_seed"] = split_seed;
    if (val_count) j["val_count"] = *val_count;
    if (val_frac) j["val_frac"] = *val_frac;
    return j;
  }
};

RunSettings load_settings(const std::string& path) {
  RunSettings s;
  if (path.empty()) return s;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  try {
    const json j = json::parse(buf.str());
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "model") s.model = ModelConfig::from_json(value.dump());
      else if (key == "train") s.train = TrainConfig::from_json(value.dump());
      else if (key == "val_count") s.val_count = value.get<std::size_t>();
      else if (key == "val_frac") s.val_frac = value.get<double>();
      else if (key == "split_seed") s.split_seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

std::size_t resolve_val_count(const RunSettings& s, std::size_t items) {
  if (s.val_count) return *s.val_count;
  if (s.val_frac) {
    if (!(*s.val_frac > 0.0 && *s.val_frac < 1.0)) throw ConfigError("val_frac must lie in (0, 1)");
    return static_cast<std::size_t>(std::llround(*s.val_frac * static_cast<double>(items)));
  }
  return default_val_count(items);
}

// Options common to train and compare.
struct RunFlags {
  std::string config_file;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::size_t val_count = 0;
  double val_frac = 0;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* val_count_opt = nullptr;
  CLI::Option* val_frac_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON file with model/train/val_count/val_frac/split_seed")
        ->check(CLI::ExistingFile);
    epochs_opt = cmd->add_option("--epochs", epochs, "Maximum epochs")->check(CLI::PositiveNumber);
    seed_opt = cmd->add_option("--seed", seed, "Seed for init, shuffling and the validation split");
    val_count_opt = cmd->add_option("--val-count", val_count, "Validation items");
    val_frac_opt = cmd->add_option("--val-frac", val_frac, "Validation share in (0,1)");
    val_count_opt->excludes(val_frac_opt);
  }

  RunSettings resolve() const {
    RunSettings s = load_settings(config_file);
    if (epochs_opt->count()) s.train.max_epochs = epochs;
    if (seed_opt->count()) {
      s.model.seed = seed;
      s.train.seed = seed;
      s.split_seed = seed;
    }
    if (val_count_opt->count()) {
      s.val_count = val_count;
      s.val_frac.reset();
    }
    if (val_frac_opt->count()) {
      s.val_frac = val_frac;
      s.val_count.reset();
    }
    return s;
  }
};

int cmd_synth(const SyntheticConfig& config, const std::string& out_dir, std::ostream& out) {
  json j = json::parse(config.to_json());
  j["command"] = "synth";
  j["out"] = out_dir;
  print_config(out, j);
  generate_synthetic(config, out_dir);
  out << "wrote " << config.train_count << " train and " << config.test_count << " test items ("
      << config.classes << " classes, " << config.ambiguous_pairs << " ambiguous pairs) to "
      << out_dir << '\n';
  out << "image_only_bayes_ceiling=" << fixed6(image_only_bayes_ceiling(config)) << '\n';
  return kOk;
}

int cmd_train(const std::string& data, const std::string& model_name, const std::string& ckpt,
              const RunFlags& flags, std::ostream& out) {
  RunSettings s = flags.resolve();
  const Topology topology = topology_from_string(model_name);
  const DatasetManifest all = scan_dataset(*split_root(data, Split::train), Split::train);
  s.model.num_classes = all.classes.size();
  const std::size_t val_count = resolve_val_count(s, all.size());

  json j = s.to_json();
  j["command"] = "train";
  j["data"] = data;
  j["topology"] = to_string(topology);
  j["out"] = ckpt;
  j["resolved_val_count"] = val_count;
  print_config(out, j);

  s.model.validate();
  s.train.validate();
  auto [train_m, val_m] = split_train_val(all, val_count, s.split_seed);
  const bool need_kp = topology == Topology::concatenated;
  const LoadedDataset train = load_dataset(train_m, need_kp, s.model.input_height, s.model.input_width);
  const LoadedDataset val = load_dataset(val_m, need_kp, s.model.input_height, s.model.input_width);
  out << "train_items=" << train.size() << " val_items=" << val.size()
      << " classes=" << all.classes.size() << '\n';

  Network net(s.model, topology);
  net.set_labels(all.classes);
  out << "parameters=" << net.parameter_count() << '\n';
  const FitResult fr = fit(net, train, val, s.train, [&](const HistoryRow& r) { print_epoch(out, "", r); });

  const fs::path ckpt_path(ckpt);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  save_checkpoint(net, ckpt_path);
  const fs::path history = ckpt_path.parent_path() / "history.csv";
  write_history_csv(fr.history, history);
  out << "best_epoch=" << fr.best_epoch << (fr.stopped_early ? " (stopped early)" : "") << '\n';
  out << "checkpoint=" << ckpt_path.string() << '\n';
  out << "history=" << history.string() << '\n';
  return kOk;
}

int cmd_eval(const std::string& data, const std::string& ckpt, const std::string& report_dir,
             std::ostream& out) {
  json j;
  j["command"] = "eval";
  j["data"] = data;
  j["ckpt"] = ckpt;
  j["report"] = report_dir;
  Network net = load_checkpoint(ckpt);
  j["topology"] = to_string(net.topology());
  j["model"] = json::parse(net.config().to_json());
  const auto root = split_root(data, Split::test).value_or(fs::path(data));
  j["resolved_data"] = root.string();
  print_config(out, j);

  const DatasetManifest manifest = scan_dataset(root, Split::test);
  if (!net.labels().empty() && net.labels() != manifest.classes)
    throw TopologyError("dataset classes differ from the checkpoint's labels");
  const bool have_kp = manifest.missing_keypoints().empty();
  if (net.topology() == Topology::concatenated && !have_kp)
    throw TopologyError("concatenated checkpoint needs keypoint sidecars; " +
                        std::to_string(manifest.missing_keypoints().size()) + " items lack one");
  const LoadedDataset dataset =
      load_dataset(manifest, false, net.config().input_height, net.config().input_width);
  const EvalReport report = evaluate(net, dataset, have_kp);
  write_report(report, report_dir);
  out << "accuracy=" << fixed6(report.accuracy) << '\n';
  return kOk;
}

int cmd_predict(const std::string& ckpt, const std::string& image, const std::string& keypoints,
                bool full, std::ostream& out, std::ostream& err) {
  Network net = load_checkpoint(ckpt);
  json j;
  j["command"] = "predict";
  j["ckpt"] = ckpt;
  j["image"] = image;
  j["keypoints"] = keypoints.empty() ? json(nullptr) : json(keypoints);
  j["topology"] = to_string(net.topology());
  j["full"] = full;
  print_config(out, j);
  if (net.topology() == Topology::concatenated && keypoints.empty()) {
    err << "error: concatenated checkpoint requires --keypoints\n";
    return kUsage;
  }
  const auto& mc = net.config();
  Tensor img = load_image(image, mc.input_height, mc.input_width);
  img.reshape({1, mc.image_channels, mc.input_height, mc.input_width});
  std::optional<Tensor> kp;
  if (net.topology() == Topology::concatenated) {
    kp = load_keypoints(keypoints).values;
    kp->reshape({1, kKeypointDim});
  }
  const Tensor probs = net.forward(img, kp ? &*kp : nullptr, nn::Mode::infer);
  const auto ranked = top_k(probs.values(), full ? mc.num_classes : 5);
  for (const auto& r : ranked) {
    const std::string label =
        net.labels().empty() ? std::to_string(r.label) : net.labels()[static_cast<std::size_t>(r.label)];
    out << label << ' ' << fixed6(r.probability) << '\n';
  }
  return kOk;
}

int cmd_gradcheck(const GradCheckOptions& options, std::ostream& out, std::ostream& err) {
  const auto& kinds = gradcheck_layers();
  if (!options.fault_layer.empty() &&
      std::find(kinds.begin(), kinds.end(), options.fault_layer) == kinds.end()) {
    err << "error: unknown layer '" << options.fault_layer << "'\n";
    return kUsage;
  }
  json j;
  j["command"] = "gradcheck";
  j["seed"] = options.seed;
  j["seeds"] = options.seeds;
  j["tolerance"] = options.tolerance;
  print_config(out, j);
  const GradCheckReport report = run_gradcheck(options);
  for (const auto& layer : report.layers) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-13s cases=%-3zu max_rel_err=%.3e %s", layer.layer.c_str(),
                  layer.cases, layer.max_relative_error, layer.passed ? "PASS" : "FAIL");
    out << buf << '\n';
  }
  const bool ok = report.passed();
  out << (ok ? "gradcheck: all layers pass" : "gradcheck: FAILED") << '\n';
  return ok ? kOk : kRuntime;
}

int cmd_compare(const std::string& data, const std::string& out_dir, const RunFlags& flags,
                std::ostream& out) {
  RunSettings s = flags.resolve();
  const DatasetManifest all = scan_dataset(*split_root(data, Split::train), Split::train);
  s.model.num_classes = all.classes.size();
  ProtocolConfig pc;
  pc.model = s.model;
  pc.train = s.train;
  pc.val_count = resolve_val_count(s, all.size());
  pc.split_seed = s.split_seed;

  json j = s.to_json();
  j["command"] = "compare";
  j["data"] = data;
  j["out"] = out_dir;
  j["resolved_val_count"] = *pc.val_count;
  print_config(out, j);

  const ProtocolResult result = run_protocol(data, pc, [&](Topology t, const HistoryRow& r) {
    print_epoch(out, "[" + to_string(t) + "] ", r);
  });
  const fs::path dir(out_dir);
  write_text(dir / "comparison.md", comparison_markdown(result));
  write_text(dir / "comparison.csv", comparison_csv(result));
  for (const auto& run : result.runs)
    write_history_csv(run.history, dir / ("history_" + to_string(run.topology) + ".csv"));
  out << "train_items=" << result.train_items << " val_items=" << result.val_items
      << " test_items=" << result.test_items << '\n';
  out << comparison_markdown(result);
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const PreconditionError*>(&e) ||
      dynamic_cast<const InputError*>(&e))
    return kUsage;
  if (dynamic_cast<const DatasetError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const DecodeError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const TopologyError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const LabelError*>(&e))
    return kData;
  return kRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concatenated image + hand-keypoint sign classifier", "bdsl"};
  app.require_subcommand(1);
  app.footer("Settings layer as: built-in defaults < --config file < command-line flags.\n"
             "Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime failure or divergence.");

  SyntheticConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the ambiguous-pairs synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--pairs", synth.ambiguous_pairs, "Ambiguous pairs")->capture_default_str();
  synth_cmd->add_option("--train", synth.train_count, "Train items")->capture_default_str();
  synth_cmd->add_option("--test", synth.test_count, "Test items")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Keypoint noise sigma")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  std::string train_data, train_model, train_out;
  RunFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a folder dataset");
  train_cmd->add_option("--data", train_data, "Dataset root (uses <root>/train when present)")->required();
  train_cmd->add_option("--model", train_model, "concat | image-only")
      ->required()
      ->check(CLI::IsMember({"concat", "image-only"}));
  train_cmd->add_option("--out", train_out, "Checkpoint path; history.csv is written beside it")->required();
  train_flags.attach(train_cmd);

  std::string eval_data, eval_ckpt, eval_report;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_data, "Dataset root (uses <root>/test when present)")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", eval_report, "Report directory")->required();

  std::string pred_ckpt, pred_image, pred_kp;
  bool pred_full = false;
  auto* pred_cmd = app.add_subcommand("predict", "Top-5 classes for one image");
  pred_cmd->add_option("--ckpt", pred_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--image", pred_image, "PNG or JPEG image")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--keypoints", pred_kp, "Keypoint sidecar (.kp.json)")->check(CLI::ExistingFile);
  pred_cmd->add_flag("--full", pred_full, "Print every class");

  GradCheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every layer");
  gc_cmd->add_option("--seed", gc.seed, "Base seed")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc.fault_layer)->group("");

  std::string cmp_data, cmp_out;
  RunFlags cmp_flags;
  auto* cmp_cmd = app.add_subcommand("compare", "Train both topologies and write a comparison table");
  cmp_cmd->add_option("--data", cmp_data, "Dataset root with train/ and optional test/")->required();
  cmp_cmd->add_option("--out", cmp_out, "Output directory")->required();
  cmp_flags.attach(cmp_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, synth_out, out);
    if (*train_cmd) return cmd_train(train_data, train_model, train_out, train_flags, out);
    if (*eval_cmd) return cmd_eval(eval_data, eval_ckpt, eval_report, out);
    if (*pred_cmd) return cmd_predict(pred_ckpt, pred_image, pred_kp, pred_full, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
    if (*cmp_cmd) return cmd_compare(cmp_data, cmp_out, cmp_flags, out);
  } catch (const DivergenceError& e) {
    err << "error: diverged at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace bdsl::cli
