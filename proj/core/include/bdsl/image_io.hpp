#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bdsl/tensor.hpp"

namespace bdsl {

/// Decoded 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// PNG or JPEG, chosen by signature. Throws DecodeError.
Image8 decode_image(std::span<const std::uint8_t> bytes);
Image8 decode_image_file(const std::filesystem::path& path);

/// Lossless 8-bit grayscale PNG encoding.
std::vector<std::uint8_t> encode_png_gray(std::size_t width, std::size_t height,
                                          std::span<const std::uint8_t> pixels);

/// Luminance 0.299 R + 0.587 G + 0.114 B on the 0..255 scale; gray input is
/// passed through unchanged.
std::vector<float> to_luminance(const Image8& image);

/// Bilinear resampling with half-pixel centres and edge clamping.
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                   std::size_t dst_w, std::size_t dst_h);

/// Grayscale, bilinear resize to `height` x `width`, divide by 255.
/// Returns [1, height, width] with values in [0, 1].
Tensor preprocess_image(const Image8& image, std::size_t height = 64, std::size_t width = 64);
Tensor load_image(const std::filesystem::path& path, std::size_t height = 64, std::size_t width = 64);

}  // namespace bdsl
