#pragma once

// DGWT tensor container, version 1 (all integers little-endian):
//
//   offset 0   "DGWT"
//   offset 4   u16 version = 1
//   offset 6   u16 rank (<= 8)
//   offset 8   rank x u32 extents
//   then       prod(extents) x f64 payload, row-major
//
// No padding, no checksum.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mvdgw/tensor.hpp"

namespace mvdgw {

inline constexpr std::uint16_t kDgwtVersion = 1;
inline constexpr std::size_t kDgwtMaxRank = 8;

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);

/// Throws FormatError naming the byte offset of the first problem.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

Tensor matrix_to_tensor(const Matrix& m);
Tensor vector_to_tensor(std::span<const double> v);
/// Rank-2 tensor to a matrix; throws FormatError for any other rank.
Matrix tensor_to_matrix(const Tensor& t);
std::vector<double> tensor_to_vector(const Tensor& t);

}  // namespace mvdgw
