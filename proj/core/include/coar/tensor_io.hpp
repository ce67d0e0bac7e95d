#pragma once

// Binary tensor file format:
//
//   bytes 0..3   "COAR"
//   u8           rank (0..4)
//   rank x u32   dims, little-endian
//   u8           dtype tag (0 = f32, 1 = f64, 2 = i32)
//   payload      row-major, little-endian
//
// Nothing may follow the payload.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coar/tensor.hpp"

namespace coar {

class TensorIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public TensorIoError {
 public:
  using TensorIoError::TensorIoError;
};

/// Rank above 4, or dims whose element count cannot be addressed.
class DimOverflowError : public TensorIoError {
 public:
  using TensorIoError::TensorIoError;
};

class BadDTypeError : public TensorIoError {
 public:
  using TensorIoError::TensorIoError;
};

/// Header or payload shorter than declared.
class TruncatedPayloadError : public TensorIoError {
 public:
  using TensorIoError::TensorIoError;
};

class TrailingBytesError : public TensorIoError {
 public:
  using TensorIoError::TensorIoError;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace coar
