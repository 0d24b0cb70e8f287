#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bdsl/dataset.hpp"
#include "bdsl/model.hpp"

namespace bdsl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct PlateauConfig {
  std::size_t patience = 4;
  double factor = 0.1;
  double min_lr = 1e-6;
};

struct TrainConfig {
  double lr0 = 0.001;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  PlateauConfig plateau;
  std::size_t early_stop_patience = 8;
  /// Absolute margin a validation loss must beat the best by to count.
  double improvement_tolerance = 1e-7;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  /// Keys absent from `text` keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const std::string& text);
};

/// First and second moment estimates per parameter name.
template <typename T>
struct AdamState {
  std::map<std::string, std::pair<BasicTensor<T>, BasicTensor<T>>> moments;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its `grad`.
/// Throws OptimizerError when a gradient does not match its parameter.
template <typename T>
void adam_step(std::span<BasicParameter<T>* const> params, AdamState<T>& state,
               const AdamConfig& config, double lr);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;
};

struct TrainState {
  AdamState<float> adam;
  double lr = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t plateau_wait = 0;
  std::size_t epochs_since_best = 0;
  std::vector<HistoryRow> history;

  static TrainState initial(const TrainConfig& config);
};

/// Records one validation loss. Returns true if it improved on the best.
/// After `patience` consecutive non-improving epochs the learning rate drops
/// by `factor`, never below `min_lr`, and the plateau counter restarts.
bool plateau_update(TrainState& state, double val_loss, const TrainConfig& config);

enum class StopDecision { proceed, stop };
StopDecision early_stop_check(const TrainState& state, const TrainConfig& config);

/// Batches of `batch_size` over `order`; a trailing batch of one joins the
/// previous batch so batch normalisation always sees at least two rows.
std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> order,
                                                       std::size_t batch_size);

struct FitResult {
  Archive best_state;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

/// Trains `net` on `train`, validating on `val` after every epoch. On return
/// `net` holds the parameters of the epoch with the lowest validation loss.
FitResult fit(Network& net, const LoadedDataset& train, const LoadedDataset& val,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Loads both manifests (keypoints required for the concatenated topology)
/// and calls fit.
FitResult fit(Network& net, const DatasetManifest& train, const DatasetManifest& val,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean cross-entropy and accuracy over a dataset in inference mode.
struct LossAccuracy {
  double loss = 0;
  double accuracy = 0;
};
LossAccuracy measure(Network& net, const LoadedDataset& data, std::size_t batch_size = 64);

/// Inference-mode class probabilities for every item, [N, num_classes].
Tensor predict_all(Network& net, const LoadedDataset& data, std::size_t batch_size = 64);

/// epoch,train_loss,train_acc,val_loss,val_acc,lr with six decimals.
std::string history_csv(std::span<const HistoryRow> rows);
void write_history_csv(std::span<const HistoryRow> rows, const std::filesystem::path& path);

}  // namespace bdsl
