#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fluxop/error.hpp"

namespace fluxop {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double d : v) f64(d);
  }

  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Running past the end raises
/// TruncatedError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    if (n > remaining() / 8) throw TruncatedError("array length exceeds remaining payload");
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    if (remaining() < static_cast<std::size_t>(n)) throw TruncatedError("unexpected end of data");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < data.size()) {
    const std::size_t n = std::min<std::size_t>(data.size() - off, 1u << 30);
    crc = crc32(crc, data.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

/// FNV-1a over a byte string; used for configuration fingerprints.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Container layout (all integers little-endian):
//   magic[8] | u32 version | u64 payload_size | payload | u32 crc32
// The CRC covers every byte before it.
inline constexpr std::size_t kContainerHeader = 8 + 4 + 8;

inline std::vector<std::uint8_t> wrap_container(std::string_view magic, std::uint32_t version,
                                                std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.bytes(magic.substr(0, 8));
  for (std::size_t i = magic.size(); i < 8; ++i) w.u8(0);
  w.u32(version);
  w.u64(payload.size());
  auto out = w.take();
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint32_t crc = crc32_of(out);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return out;
}

/// Validates framing and returns the payload span. Errors are reported in
/// this order: bad magic, version, truncation, checksum.
inline std::span<const std::uint8_t> unwrap_container(std::span<const std::uint8_t> file,
                                                      std::string_view magic, std::uint32_t version) {
  if (file.size() < kContainerHeader) throw TruncatedError("file shorter than container header");
  std::array<char, 8> expect{};
  std::memcpy(expect.data(), magic.data(), std::min<std::size_t>(magic.size(), 8));
  if (std::memcmp(file.data(), expect.data(), 8) != 0) throw FormatError("bad magic number");
  ByteReader r(file.subspan(8, 12));
  const std::uint32_t got = r.u32();
  if (got != version)
    throw VersionError("unsupported version " + std::to_string(got) + " (expected " + std::to_string(version) + ")");
  const std::uint64_t size = r.u64();
  if (file.size() - kContainerHeader < 4 || size > file.size() - kContainerHeader - 4)
    throw TruncatedError("payload shorter than declared size");
  const std::size_t body = kContainerHeader + static_cast<std::size_t>(size);
  if (file.size() != body + 4) throw ChecksumError("trailing bytes after payload");
  ByteReader tail(file.subspan(body, 4));
  if (tail.u32() != crc32_of(file.first(body))) throw ChecksumError("checksum mismatch");
  return file.subspan(kContainerHeader, size);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename into '" + path.string() + "': " + ec.message());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace fluxop
