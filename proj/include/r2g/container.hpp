// SPDX-License-Identifier: Apache-2.0
//
// R2FT binary container.
//
//   "R2FT" | u16 version (=1) | u8 dtype (0=f64, 1=f32) | u8 tensor count
//   per tensor: u8 rank | rank x u64 extents | row-major payload
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "r2g/tensor.hpp"

namespace r2g {

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

inline constexpr std::uint16_t kR2ftVersion = 1;

struct RawTensor {
  Shape shape;
  std::vector<double> values;

  bool operator==(const RawTensor&) const = default;
};

struct R2ftFile {
  DType dtype = DType::F64;
  std::vector<RawTensor> tensors;
};

std::vector<std::byte> encode_r2ft(const R2ftFile& file);
/// Throws FormatError naming the offending field.
R2ftFile decode_r2ft(std::span<const std::byte> bytes);

void write_r2ft(const std::filesystem::path& path, const R2ftFile& file);
R2ftFile read_r2ft(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace r2g
