#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdsl/model.hpp"

namespace bdsl {

/// Generator for a desk-scale dataset with "ambiguous pairs": the two classes
/// of a pair draw their images from the same skeleton template while their
/// keypoint sidecars keep distinct templates.
struct SyntheticConfig {
  std::size_t classes = 8;
  std::size_t ambiguous_pairs = 4;
  std::size_t train_count = 1600;
  std::size_t test_count = 400;
  double noise = 0.015;
  std::uint64_t seed = 42;
  std::size_t image_size = 64;

  /// Throws ConfigError when 2P > K or a split has fewer items than classes.
  void validate() const;
  std::string to_json() const;
  static SyntheticConfig from_json(const std::string& text);
};

using KeypointTemplate = std::array<float, kKeypointDim>;

/// The 20 bones of the 21-point hand skeleton (wrist plus four joints per finger).
const std::array<std::pair<int, int>, 20>& hand_bones();

/// Per-class keypoint templates, uniform in [0.1, 0.9]^2.
std::vector<KeypointTemplate> class_templates(const SyntheticConfig& config);

/// Class whose template is rendered into this class's images: the first
/// member of its ambiguous pair, otherwise the class itself. Pairs are
/// (0,1), (2,3), ... up to 2P-1.
std::size_t image_template_class(const SyntheticConfig& config, std::size_t cls);

/// Anti-aliased skeleton rendering of normalised keypoints, 8-bit grayscale,
/// `size` x `size`, white strokes on black.
std::vector<std::uint8_t> render_skeleton(std::span<const float> xy, std::size_t size);

/// Best achievable accuracy from images alone: unambiguous classes are
/// separable, paired classes are a coin flip.
double image_only_bayes_ceiling(const SyntheticConfig& config);

std::string synthetic_class_name(std::size_t cls);

/// Writes out_root/{train,test}/<class>/<name>.png with .kp.json sidecars and
/// out_root/synth.json holding the generation parameters.
void generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_root);

}  // namespace bdsl
