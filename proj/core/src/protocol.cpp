#include "bdsl/protocol.hpp"

#include <cstdio>
#include <sstream>

#include "bdsl/errors.hpp"
#include "bdsl/evaluation.hpp"

namespace bdsl {

namespace {

std::string column_name(Topology t) {
  return t == Topology::concatenated ? "Concatenated BdSL Network" : "Only Image Network Model";
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::vector<std::vector<std::string>> table_rows(const ProtocolResult& r) {
  std::vector<std::vector<std::string>> rows{{""}, {"Training"}, {"Validation"}, {"Testing"},
                                             {"Image size"}, {"Epoch"}, {"GPU"}};
  for (const auto& run : r.runs) {
    rows[0].push_back(column_name(run.topology));
    rows[1].push_back(percent(run.train_accuracy));
    rows[2].push_back(percent(run.val_accuracy));
    rows[3].push_back(run.test_accuracy ? percent(*run.test_accuracy) : "n/a");
    rows[4].push_back(std::to_string(r.image_height) + "*" + std::to_string(r.image_width));
    rows[5].push_back(std::to_string(run.epochs_run));
    rows[6].push_back("No");
  }
  return rows;
}

}  // namespace

ProtocolResult run_protocol(const std::filesystem::path& root, const ProtocolConfig& config,
                            const ProtocolProgress& progress) {
  const auto train_root = split_root(root, Split::train);
  const DatasetManifest all = scan_dataset(*train_root, Split::train);
  const std::size_t n = all.items.size();
  const std::size_t val_count = config.val_count.value_or(default_val_count(n));
  auto [train_m, val_m] = split_train_val(all, val_count, config.split_seed);

  const auto& mc = config.model;
  if (mc.num_classes != all.classes.size())
    throw ConfigError("model predicts " + std::to_string(mc.num_classes) + " classes, dataset has " +
                      std::to_string(all.classes.size()));
  const LoadedDataset train = load_dataset(train_m, true, mc.input_height, mc.input_width);
  const LoadedDataset val = load_dataset(val_m, true, mc.input_height, mc.input_width);
  std::optional<LoadedDataset> test;
  if (const auto test_root = split_root(root, Split::test)) {
    DatasetManifest tm = scan_dataset(*test_root, Split::test);
    if (tm.classes != all.classes) throw DatasetError("test classes differ from train classes");
    test = load_dataset(tm, true, mc.input_height, mc.input_width);
  }

  ProtocolResult result;
  result.train_items = train.size();
  result.val_items = val.size();
  result.test_items = test ? test->size() : 0;
  result.classes = all.classes.size();
  result.image_height = mc.input_height;
  result.image_width = mc.input_width;
  for (Topology t : {Topology::concatenated, Topology::image_only}) {
    Network net(mc, t);
    net.set_labels(all.classes);
    const FitResult fr = fit(net, train, val, config.train, [&](const HistoryRow& row) {
      if (progress) progress(t, row);
    });
    ProtocolRun run;
    run.topology = t;
    run.train_accuracy = measure(net, train).accuracy;
    run.val_accuracy = measure(net, val).accuracy;
    if (test) run.test_accuracy = evaluate(net, *test).accuracy;
    run.epochs_run = fr.history.size();
    run.best_epoch = fr.best_epoch;
    run.parameter_count = net.parameter_count();
    run.history = fr.history;
    result.runs.push_back(std::move(run));
  }
  return result;
}

std::string comparison_markdown(const ProtocolResult& result) {
  const auto rows = table_rows(result);
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << '|';
    for (const auto& cell : rows[i]) os << ' ' << cell << " |";
    os << '\n';
    if (i == 0) {
      os << '|';
      for (std::size_t c = 0; c < rows[0].size(); ++c) os << "---|";
      os << '\n';
    }
  }
  return os.str();
}

std::string comparison_csv(const ProtocolResult& result) {
  std::ostringstream os;
  for (const auto& row : table_rows(result)) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << '\n';
  }
  return os.str();
}

}  // namespace bdsl
