#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bdsl/dataset.hpp"
#include "bdsl/model.hpp"

namespace bdsl {

struct ClassMetrics {
  double precision = 0;  // 0 when the class is never predicted
  double recall = 0;     // 0 when the class never occurs
  std::size_t support = 0;
};

struct ConfusedPair {
  int truth = 0;
  int predicted = 0;
  std::size_t count = 0;
};

/// Confusion matrix rows are true classes, columns predicted classes.
struct EvalReport {
  std::vector<std::string> classes;
  std::size_t total = 0;
  double accuracy = 0;
  double mean_loss = 0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;
  /// Non-zero off-diagonal cells, count descending then (truth, predicted).
  std::vector<ConfusedPair> confused_pairs;
};

/// Builds a report from parallel truth / prediction vectors.
EvalReport make_report(std::span<const int> truths, std::span<const int> predictions,
                       std::vector<std::string> classes);

/// Inference over every item; throws TopologyError when the dataset cannot
/// feed the network (keypoints absent for the concatenated topology).
EvalReport evaluate(Network& net, const LoadedDataset& data, bool keypoints_available = true);

std::string report_json(const EvalReport& report, std::size_t top_pairs = 10);
/// K x K counts, header row and column holding class labels.
std::string confusion_csv(const EvalReport& report);
/// Writes report.json and confusion.csv into `dir` (created if needed).
void write_report(const EvalReport& report, const std::filesystem::path& dir);

struct RankedClass {
  int label = 0;
  float probability = 0;
};
/// Classes by descending probability (ties by label), at most `k` entries.
std::vector<RankedClass> top_k(std::span<const float> probs, std::size_t k);

}  // namespace bdsl
