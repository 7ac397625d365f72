#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace ess::io {

using Bytes = std::vector<std::uint8_t>;

/// Appends little-endian encodings to a byte buffer.
class Writer {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);

  const Bytes& bytes() const noexcept { return buf_; }

 private:
  Bytes buf_;
};

/// Reads little-endian values from a byte span; any read past the end throws
/// FormatError(kTruncated) naming `what`.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  /// Throws FormatError(kBadMagic) when the next bytes differ from `tag`.
  void expect_magic(std::string_view tag);
  std::uint8_t u8(const char* what);
  std::uint32_t u32(const char* what);
  std::uint64_t u64(const char* what);
  float f32(const char* what);

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ess::io
