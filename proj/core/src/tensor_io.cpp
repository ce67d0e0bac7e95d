#include "coar/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace coar {
namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'O', 'A', 'R'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::size_t dtype_width(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I32: return 4;
  }
  return 0;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.rank() > 4) throw DimOverflowError("rank " + std::to_string(tensor.rank()) + " exceeds 4");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(4 + 1 + 4 * tensor.shape().size() + 1 + tensor.size() * dtype_width(tensor.dtype()));
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (int d : tensor.shape()) append_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.push_back(static_cast<std::uint8_t>(tensor.dtype()));
  for (double v : tensor.values()) {
    switch (tensor.dtype()) {
      case DType::F32: append_le<float>(out, static_cast<float>(v)); break;
      case DType::F64: append_le<double>(out, v); break;
      case DType::I32: append_le<std::int32_t>(out, static_cast<std::int32_t>(std::lround(v))); break;
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncatedPayloadError("file shorter than magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("bad magic, expected \"COAR\"");
  std::size_t pos = 4;
  if (bytes.size() < pos + 1) throw TruncatedPayloadError("missing rank byte");
  const int rank = bytes[pos++];
  if (rank > 4) throw DimOverflowError("rank " + std::to_string(rank) + " exceeds 4");
  if (bytes.size() < pos + 4 * static_cast<std::size_t>(rank) + 1) {
    throw TruncatedPayloadError("header shorter than declared rank");
  }
  std::vector<int> shape;
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto d = load_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    if (d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
      throw DimOverflowError("dimension " + std::to_string(d) + " too large");
    }
    count *= d;
    if (count > kMaxElements) throw DimOverflowError("element count overflows addressable size");
    shape.push_back(static_cast<int>(d));
  }
  const std::uint8_t tag = bytes[pos++];
  if (tag > 2) throw BadDTypeError("unknown dtype tag " + std::to_string(tag));
  const auto dtype = static_cast<DType>(tag);
  const std::size_t width = dtype_width(dtype);
  const std::uint64_t need = count * width;
  const std::size_t have = bytes.size() - pos;
  if (have < need) {
    throw TruncatedPayloadError("payload has " + std::to_string(have) + " bytes, expected " +
                                std::to_string(need));
  }
  if (have > need) throw TrailingBytesError("unexpected bytes after payload");

  std::vector<double> values(static_cast<std::size_t>(count));
  const std::uint8_t* p = bytes.data() + pos;
  for (std::size_t i = 0; i < values.size(); ++i, p += width) {
    switch (dtype) {
      case DType::F32: values[i] = load_le<float>(p); break;
      case DType::F64: values[i] = load_le<double>(p); break;
      case DType::I32: values[i] = load_le<std::int32_t>(p); break;
    }
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw TensorIoError("read failed for " + path.string());
  }
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorIoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw TensorIoError("write failed for " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_bytes(path, encode_tensor(tensor));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path));
}

}  // namespace coar
