#include "ess/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ess/error.hpp"

namespace ess::io {

void Writer::magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }

void Writer::u8(std::uint8_t v) { buf_.push_back(v); }

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Reader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(FormatIssue::kTruncated,
                      std::string("truncated input while reading ") + what);
  }
}

void Reader::expect_magic(std::string_view tag) {
  if (remaining() < tag.size() ||
      std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
    throw FormatError(FormatIssue::kBadMagic,
                      "bad magic: expected '" + std::string(tag) + "'");
  }
  pos_ += tag.size();
}

std::uint8_t Reader::u8(const char* what) {
  need(1, what);
  return data_[pos_++];
}

std::uint32_t Reader::u32(const char* what) {
  need(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64(const char* what) {
  need(8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float Reader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

}  // namespace ess::io
