// SPDX-License-Identifier: Apache-2.0
//
// CSA1 tensor files. Layout (all integers little-endian):
//
//   offset  size      field
//   0       4         magic "CSA1"
//   4       4         u32 format version (1)
//   8       1         u8 dtype (1 = float32, 2 = float64)
//   9       1         u8 ndim
//   10      8*ndim    u64 dims
//   ...     N*size    payload, row-major, IEEE-754 little-endian
//   end-4   4         u32 CRC-32 (IEEE 802.3) of the payload bytes

#pragma once

#include "csl/core.hpp"

#include <boost/crc.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <unistd.h>
#include <vector>

namespace csl::io {

inline constexpr char kMagic[4] = {'C', 'S', 'A', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

enum class TensorErrc {
  Io,
  BadMagic,
  UnsupportedVersion,
  UnsupportedDtype,
  Truncated,
  TrailingBytes,
  CrcMismatch,
  BadShape,
};

inline const char* to_string(TensorErrc e) {
  switch (e) {
    case TensorErrc::Io: return "io";
    case TensorErrc::BadMagic: return "bad-magic";
    case TensorErrc::UnsupportedVersion: return "unsupported-version";
    case TensorErrc::UnsupportedDtype: return "unsupported-dtype";
    case TensorErrc::Truncated: return "truncated";
    case TensorErrc::TrailingBytes: return "trailing-bytes";
    case TensorErrc::CrcMismatch: return "crc-mismatch";
    case TensorErrc::BadShape: return "bad-shape";
  }
  return "io";
}

class TensorError : public DataError {
 public:
  TensorError(TensorErrc code, const std::string& what)
      : DataError(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}
  TensorErrc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  TensorErrc code_;
  std::string detail_;
};

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // row-major
  DType stored = DType::Float64;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline std::uint32_t crc32(const void* bytes, std::size_t size) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes, size);
  return crc.checksum();
}

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <class T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t checked_elements(const std::vector<std::uint64_t>& dims, std::uint64_t elem_size) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d)
      throw TensorError(TensorErrc::BadShape, "dimension product overflows");
    n *= d;
  }
  if (n > std::numeric_limits<std::uint64_t>::max() / elem_size)
    throw TensorError(TensorErrc::BadShape, "payload size overflows");
  return n;
}

}  // namespace detail

/// Serialises as float64.
inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw ParameterError("tensor: at most 255 dimensions");
  if (detail::checked_elements(t.dims, 8) != t.data.size())
    throw ParameterError("tensor: data length does not match dims");
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  out.push_back(static_cast<unsigned char>(DType::Float64));
  out.push_back(static_cast<unsigned char>(t.dims.size()));
  for (auto d : t.dims) detail::put_le<std::uint64_t>(out, d);
  const std::size_t payload_at = out.size();
  for (double v : t.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  detail::put_le<std::uint32_t>(out, crc32(out.data() + payload_at, out.size() - payload_at));
  return out;
}

inline Tensor decode_tensor(const unsigned char* p, std::size_t size) {
  if (size < 10) {
    if (size >= 4 && std::memcmp(p, kMagic, 4) != 0) throw TensorError(TensorErrc::BadMagic, "not a CSA1 file");
    throw TensorError(TensorErrc::Truncated, "file shorter than the fixed header");
  }
  if (std::memcmp(p, kMagic, 4) != 0) throw TensorError(TensorErrc::BadMagic, "not a CSA1 file");
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kFormatVersion)
    throw TensorError(TensorErrc::UnsupportedVersion, "format version " + std::to_string(version));
  const auto dtype = p[8];
  if (dtype != 1 && dtype != 2) throw TensorError(TensorErrc::UnsupportedDtype, "dtype code " + std::to_string(dtype));
  const std::size_t ndim = p[9];
  const std::size_t header = 10 + 8 * ndim;
  if (size < header) throw TensorError(TensorErrc::Truncated, "dims cut short");
  Tensor t;
  t.stored = static_cast<DType>(dtype);
  for (std::size_t i = 0; i < ndim; ++i) t.dims.push_back(detail::get_le<std::uint64_t>(p + 10 + 8 * i));
  const std::uint64_t elem = dtype == 1 ? 4 : 8;
  const std::uint64_t count = detail::checked_elements(t.dims, elem);
  const std::uint64_t payload = count * elem;
  if (payload > size || size - header < payload + 4) throw TensorError(TensorErrc::Truncated, "payload cut short");
  if (size - header > payload + 4) throw TensorError(TensorErrc::TrailingBytes, "bytes after the checksum");
  const unsigned char* body = p + header;
  const auto stored_crc = detail::get_le<std::uint32_t>(body + payload);
  if (crc32(body, payload) != stored_crc) throw TensorError(TensorErrc::CrcMismatch, "payload checksum mismatch");
  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == 2) {
      t.data[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(body + 8 * i));
    } else {
      t.data[i] = static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(body + 4 * i)));
    }
  }
  return t;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError(TensorErrc::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw TensorError(TensorErrc::Io, "read failed for " + path.string());
  return bytes;
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_bytes_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorError(TensorErrc::Io, "cannot create " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw TensorError(TensorErrc::Io, "write failed for " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw TensorError(TensorErrc::Io, "rename to " + path.string() + " failed: " + ec.message());
  }
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_tensor(bytes.data(), bytes.size());
  } catch (const TensorError& e) {
    throw TensorError(e.code(), path.string() + ": " + e.detail());
  }
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_bytes_atomic(path, encode_tensor(t));
}

inline Tensor to_tensor(const Matrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

inline Tensor to_tensor(const Vector& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

/// 2-D view; a 1-D tensor becomes a column.
inline Matrix to_matrix(const Tensor& t) {
  if (t.dims.size() == 1) {
    Matrix m(static_cast<Index>(t.dims[0]), 1);
    std::copy(t.data.begin(), t.data.end(), m.data());
    return m;
  }
  if (t.dims.size() != 2) throw TensorError(TensorErrc::BadShape, "expected a 1-D or 2-D tensor");
  Matrix m(static_cast<Index>(t.dims[0]), static_cast<Index>(t.dims[1]));
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) { write_tensor(path, to_tensor(m)); }
inline Matrix read_matrix(const std::filesystem::path& path) { return to_matrix(read_tensor(path)); }

/// CRC-32 of a whole file, for provenance records.
inline std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return crc32(bytes.data(), bytes.size());
}

}  // namespace csl::io
