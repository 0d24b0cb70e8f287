#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bdsl/archive.hpp"
#include "bdsl/tensor.hpp"

namespace bdsl {

enum class Split : std::uint8_t { train, val, test };
std::string to_string(Split s);

struct ManifestItem {
  std::filesystem::path image;
  std::optional<std::filesystem::path> keypoints;
  int label = 0;
};

/// Folder-per-class dataset listing. Class ids are dense and follow the
/// lexicographic order of folder names; items are sorted by path.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestItem> items;
  Split split = Split::train;

  std::size_t size() const noexcept { return items.size(); }
  std::size_t num_classes() const noexcept { return classes.size(); }
  /// Items lacking a keypoint sidecar.
  std::vector<std::filesystem::path> missing_keypoints() const;
};

/// Sidecar schema, version 1:
///   {"version": 1, "detected": bool, "points": [[x, y] x 21]}
/// with coordinates normalised to [0, 1] by image width/height.
inline constexpr int kSidecarVersion = 1;
inline constexpr const char* kSidecarSuffix = ".kp.json";

struct KeypointRecord {
  Tensor values;  // [42], x then y per point
  bool detected = false;
};

/// Throws SchemaError on any schema violation.
KeypointRecord parse_keypoints(const std::string& text);
KeypointRecord load_keypoints(const std::filesystem::path& path);
std::string format_keypoints(std::span<const float> xy, bool detected);

/// Throws DatasetError for a missing root, zero classes, or an empty class.
DatasetManifest scan_dataset(const std::filesystem::path& root, Split split = Split::train);

/// `root/train` or `root/test` when that directory exists, else `root`
/// itself for the train split and nothing for test.
std::optional<std::filesystem::path> split_root(const std::filesystem::path& root, Split split);

enum class SplitStrategy : std::uint8_t { uniform, stratified };

/// Seeded shuffle, first `val_count` items become validation. Both halves
/// keep the manifest's path ordering.
std::pair<DatasetManifest, DatasetManifest> split_train_val(
    const DatasetManifest& manifest, std::size_t val_count, std::uint64_t seed,
    SplitStrategy strategy = SplitStrategy::uniform);

/// Validation share matching a 1102-of-11061 hold-out, rounded to nearest.
std::size_t default_val_count(std::size_t items);

struct Sample {
  Tensor image;      // [1,64,64] in [0,1]
  Tensor keypoints;  // [42] in [0,1]
  bool detected = false;
  int label = 0;
};

/// Preprocessed dataset held in memory as stacked tensors.
struct LoadedDataset {
  std::vector<std::string> classes;
  Tensor images;     // [N,1,H,W]
  Tensor keypoints;  // [N,42]
  std::vector<std::uint8_t> detected;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_classes() const noexcept { return classes.size(); }
  Sample sample(std::size_t i) const;
  /// Gathers rows into batch tensors ([B,1,H,W] and [B,42]).
  void gather(std::span<const std::size_t> rows, Tensor& images_out, Tensor& keypoints_out,
              std::vector<int>& labels_out) const;
};

/// Decodes and preprocesses every item. With `require_keypoints`, any item
/// without a sidecar is a DatasetError naming the first ten offenders;
/// otherwise missing sidecars become zero keypoints with detected = false.
LoadedDataset load_dataset(const DatasetManifest& manifest, bool require_keypoints,
                           std::size_t height = 64, std::size_t width = 64);

/// Precomputed-tensor form of a loaded dataset: images, keypoints, labels,
/// detected. Class names are not stored.
Archive dataset_to_archive(const LoadedDataset& data);
LoadedDataset dataset_from_archive(const Archive& archive, std::vector<std::string> classes);

/// Per-epoch visiting order, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);

}  // namespace bdsl
