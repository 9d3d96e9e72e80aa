#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovrd {

/// Binary tensor format, v1:
///   "OVRD" | version u8 = 1 | dtype u8 = 0 (float32) | ndim u32 LE |
///   ndim x u64 LE dims | payload (row-major float32 LE)
/// Write->read round-trips are bit-identical. Only float32 exists in v1; the
/// version byte is reserved for future dtypes.

struct TensorIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : TensorIoError {
  using TensorIoError::TensorIoError;
};
struct BadVersionError : TensorIoError {
  using TensorIoError::TensorIoError;
};
struct BadDtypeError : TensorIoError {
  using TensorIoError::TensorIoError;
};
struct TruncatedError : TensorIoError {
  using TensorIoError::TensorIoError;
};

struct TensorData {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  /// Rows of a 2-d tensor (1 for 1-d).
  std::uint64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::uint64_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Serializes a tensor to the v1 byte layout.
inline std::string encode_tensor(std::span<const std::uint64_t> shape,
                                 std::span<const float> values) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != values.size())
    throw std::invalid_argument("encode_tensor: shape/value length mismatch (" +
                                std::to_string(n) + " vs " +
                                std::to_string(values.size()) + ")");
  std::string out;
  out.reserve(10 + 8 * shape.size() + 4 * values.size());
  out += "OVRD";
  out.push_back(1);  // version
  out.push_back(0);  // dtype float32
  detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) detail::put_u64(out, d);
  for (float f : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(out, bits);
  }
  return out;
}

/// Parses the v1 byte layout. Bad magic, unsupported version, unsupported
/// dtype and truncated/oversized payloads raise distinct error types.
inline TensorData decode_tensor(std::span<const unsigned char> bytes,
                                const std::string& origin = "<memory>") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "OVRD", 4) != 0)
    throw BadMagicError(origin + ": not an OVRD tensor (bad magic)");
  if (bytes.size() < 10)
    throw TruncatedError(origin + ": truncated tensor header");
  if (bytes[4] != 1)
    throw BadVersionError(origin + ": unsupported tensor version " +
                          std::to_string(bytes[4]));
  if (bytes[5] != 0)
    throw BadDtypeError(origin + ": unsupported dtype " +
                        std::to_string(bytes[5]));
  std::uint32_t ndim = detail::get_u32(bytes.data() + 6);
  std::size_t off = 10;
  if (bytes.size() < off + 8ull * ndim)
    throw TruncatedError(origin + ": truncated dimension list");
  TensorData t;
  t.shape.resize(ndim);
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    t.shape[i] = detail::get_u64(bytes.data() + off);
    if (t.shape[i] != 0 && n > (1ull << 61) / t.shape[i])
      throw TruncatedError(origin + ": dimension product overflows");
    n *= t.shape[i];
    off += 8;
  }
  if (bytes.size() != off + 4 * n)
    throw TruncatedError(origin + ": payload size mismatch (expected " +
                         std::to_string(4 * n) + " bytes, found " +
                         std::to_string(bytes.size() - off) + ")");
  t.values.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t bits = detail::get_u32(bytes.data() + off + 4 * i);
    std::memcpy(&t.values[i], &bits, 4);
  }
  return t;
}

inline void write_tensor(const std::filesystem::path& path,
                         std::span<const std::uint64_t> shape,
                         std::span<const float> values) {
  std::string bytes = encode_tensor(shape, values);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TensorIoError("write_tensor: cannot open " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw TensorIoError("write_tensor: write failed for " + path.string());
}

inline TensorData read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorIoError("read_tensor: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

/// Training runs in double precision; tensors on disk stay float32 and are
/// widened on load.
inline std::vector<double> widen(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}
inline std::vector<float> narrow(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace ovrd
