#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bdsl/archive.hpp"
#include "bdsl/layers.hpp"

namespace bdsl {

enum class Topology : std::uint8_t { concatenated, image_only };
enum class BnOrder : std::uint8_t { act_then_bn, bn_then_act };

std::string to_string(Topology t);
Topology topology_from_string(const std::string& s);
std::string to_string(BnOrder o);
BnOrder bn_order_from_string(const std::string& s);

inline constexpr std::size_t kKeypointCount = 21;
inline constexpr std::size_t kKeypointDim = 2 * kKeypointCount;
/// Shrinks the Glorot limit of the softmax layer so fresh models start near uniform.
inline constexpr double kClassifierInitGain = 0.1;

/// Declarative description of both network variants.
///
/// The image branch is ten 3x3 same-padded convolutions, each followed by its
/// activation and batch normalisation (order per `bn_order`), with 2x2 max
/// pools after the convolutions listed in `pool_after` (zero-based).
struct ModelConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t image_channels = 1;
  std::vector<std::size_t> conv_channels{32, 32, 64, 64, 128, 128, 256, 256, 512, 512};
  std::vector<std::size_t> pool_after{1, 3, 5, 7};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> image_fc_widths{256, 128};
  std::size_t pose_input_dim = kKeypointDim;
  std::vector<std::size_t> pose_fc_widths{128, 128};
  std::vector<std::size_t> head_widths{128, 64};
  std::size_t num_classes = 38;
  BnOrder bn_order = BnOrder::act_then_bn;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  /// conv_channels.back() * (H / 2^pools) * (W / 2^pools).
  std::size_t flatten_width() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// The concatenated image + keypoint network, or its image-only ablation.
class Network {
 public:
  Network(ModelConfig config, Topology topology);

  Topology topology() const noexcept { return topology_; }
  const ModelConfig& config() const noexcept { return config_; }

  /// Records the full forward pass on `tape` and returns the [B, num_classes]
  /// logits. `keypoints` must be non-null exactly for the concatenated topology.
  Var forward_logits(Tape& tape, const Tensor& images, const Tensor* keypoints, nn::Mode mode);

  /// Class probabilities [B, num_classes].
  Tensor forward(const Tensor& images, const Tensor* keypoints, nn::Mode mode);

  /// Class names for reporting; empty or exactly num_classes entries.
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  void set_labels(std::vector<std::string> labels);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// Parameters and batch-norm running statistics under their stable names.
  Archive state() const;
  /// Inverse of state(); every expected name must be present with its shape.
  void load_state(const Archive& archive);

 private:
  struct ConvBlock {
    nn::Conv2dParams<float> conv;
    nn::BatchNormParams<float> bn;
    bool pool_after = false;
  };

  void initialise();

  ModelConfig config_;
  Topology topology_;
  std::vector<std::string> labels_;
  std::vector<ConvBlock> conv_blocks_;
  std::vector<nn::DenseParams<float>> image_fc_;
  std::vector<nn::DenseParams<float>> pose_fc_;
  std::vector<nn::DenseParams<float>> head_;
};

Network build_concatenated(const ModelConfig& config);
Network build_image_only(const ModelConfig& config);

/// Checkpoint layout (little-endian):
///   "BDSL" | version u16 | json_len u32 | header JSON (UTF-8: topology,
///   model config, optional class labels) | tensor archive | crc32 u32 over every preceding byte
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Network& net);
Network decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);
/// load_checkpoint plus a TopologyError if the stored topology differs.
Network load_checkpoint(const std::filesystem::path& path, Topology expected);

}  // namespace bdsl
