#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bdsl/tensor.hpp"

namespace bdsl {

/// An archive entry keeps its on-disk dtype.
using ArchiveTensor = std::variant<Tensor, TensorF64>;
/// Named tensors; serialised in name order.
using Archive = std::map<std::string, ArchiveTensor>;

/// Binary layout (little-endian):
///
///   "CTNS" | version u16 | count u32 |
///   count x ( name_len u16 | name | dtype u8 | ndim u8 | dims u32... | raw data ) |
///   crc32 u32 over every preceding byte
///
/// dtype 0 = f32, 1 = f64.
inline constexpr std::uint16_t kArchiveVersion = 1;

std::vector<std::uint8_t> encode_archive(const Archive& archive);
/// Throws FormatError on any malformed, truncated or corrupted input.
Archive decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

/// Convenience: fetches an f32 entry or throws FormatError.
const Tensor& archive_f32(const Archive& archive, const std::string& name);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bdsl
