#include "bdsl/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bdsl/training.hpp"

namespace bdsl {

using nlohmann::json;

EvalReport make_report(std::span<const int> truths, std::span<const int> predictions,
                       std::vector<std::string> classes) {
  if (truths.size() != predictions.size())
    throw ShapeError("truth and prediction counts differ");
  const std::size_t k = classes.size();
  EvalReport r;
  r.classes = std::move(classes);
  r.total = truths.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k)
      throw LabelError("label outside [0," + std::to_string(k) + ")");
    ++r.confusion[t][p];
  }
  std::size_t trace = 0;
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    trace += r.confusion[c][c];
    const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    std::size_t col = 0;
    for (std::size_t t = 0; t < k; ++t) col += r.confusion[t][c];
    r.per_class[c].support = row;
    r.per_class[c].recall = row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row) : 0.0;
    r.per_class[c].precision = col ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(col) : 0.0;
  }
  r.accuracy = r.total ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t p = 0; p < k; ++p)
      if (t != p && r.confusion[t][p] > 0)
        r.confused_pairs.push_back({static_cast<int>(t), static_cast<int>(p), r.confusion[t][p]});
  std::stable_sort(r.confused_pairs.begin(), r.confused_pairs.end(),
                   [](const ConfusedPair& a, const ConfusedPair& b) { return a.count > b.count; });
  return r;
}

EvalReport evaluate(Network& net, const LoadedDataset& data, bool keypoints_available) {
  if (data.size() == 0) throw PreconditionError("cannot evaluate an empty dataset");
  if (net.topology() == Topology::concatenated && !keypoints_available)
    throw TopologyError("concatenated checkpoint needs keypoint sidecars for every item");
  if (data.num_classes() != net.config().num_classes)
    throw TopologyError("dataset has " + std::to_string(data.num_classes()) +
                        " classes but the model predicts " + std::to_string(net.config().num_classes));
  const Tensor probs = predict_all(net, data);
  const std::size_t k = probs.dim(1);
  std::vector<int> preds(data.size());
  double loss = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float* row = probs.data() + i * k;
    preds[i] = static_cast<int>(std::max_element(row, row + k) - row);
    loss -= std::log(std::max(static_cast<double>(row[data.labels[i]]), 1e-30));
  }
  EvalReport r = make_report(data.labels, preds, data.classes);
  r.mean_loss = loss / static_cast<double>(data.size());
  return r;
}

std::string report_json(const EvalReport& report, std::size_t top_pairs) {
  json j;
  j["accuracy"] = report.accuracy;
  j["total"] = report.total;
  j["mean_loss"] = report.mean_loss;
  json classes = json::array();
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& m = report.per_class[c];
    classes.push_back({{"label", report.classes[c]},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"support", m.support}});
  }
  j["per_class"] = std::move(classes);
  json pairs = json::array();
  for (std::size_t i = 0; i < std::min(top_pairs, report.confused_pairs.size()); ++i) {
    const auto& p = report.confused_pairs[i];
    pairs.push_back({{"true", report.classes[p.truth]},
                     {"predicted", report.classes[p.predicted]},
                     {"count", p.count},
                     {"true_total", report.per_class[p.truth].support}});
  }
  j["confused_pairs"] = std::move(pairs);
  return j.dump(2) + "\n";
}

std::string confusion_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "true\\predicted";
  for (const auto& c : report.classes) os << ',' << c;
  os << '\n';
  for (std::size_t t = 0; t < report.classes.size(); ++t) {
    os << report.classes[t];
    for (auto v : report.confusion[t]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
  };
  write(dir / "report.json", report_json(report));
  write(dir / "confusion.csv", confusion_csv(report));
}

std::vector<RankedClass> top_k(std::span<const float> probs, std::size_t k) {
  std::vector<RankedClass> all;
  for (std::size_t i = 0; i < probs.size(); ++i) all.push_back({static_cast<int>(i), probs[i]});
  std::stable_sort(all.begin(), all.end(), [](const RankedClass& a, const RankedClass& b) {
    return a.probability > b.probability;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace bdsl
