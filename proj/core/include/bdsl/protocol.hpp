#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bdsl/model.hpp"
#include "bdsl/training.hpp"

namespace bdsl {

/// Reference experiment: both topologies trained on one folder dataset with
/// identical data, split and optimiser settings.
struct ProtocolConfig {
  ModelConfig model;
  TrainConfig train;
  /// Validation items; defaults to default_val_count(train items).
  std::optional<std::size_t> val_count;
  std::uint64_t split_seed = 0;
};

struct ProtocolRun {
  Topology topology = Topology::concatenated;
  double train_accuracy = 0;
  double val_accuracy = 0;
  std::optional<double> test_accuracy;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t parameter_count = 0;
  std::vector<HistoryRow> history;
};

struct ProtocolResult {
  std::size_t train_items = 0;
  std::size_t val_items = 0;
  std::size_t test_items = 0;
  std::size_t classes = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<ProtocolRun> runs;  // concatenated, then image-only
};

using ProtocolProgress = std::function<void(Topology, const HistoryRow&)>;

/// Scans `root` (with train/ and optional test/ subdirectories, or class
/// folders directly), splits, and trains both topologies.
ProtocolResult run_protocol(const std::filesystem::path& root, const ProtocolConfig& config,
                            const ProtocolProgress& progress = {});

/// Rows Training, Validation, Testing (percent, two decimals), Image size,
/// Epoch, GPU; one column per topology.
std::string comparison_markdown(const ProtocolResult& result);
std::string comparison_csv(const ProtocolResult& result);

}  // namespace bdsl
