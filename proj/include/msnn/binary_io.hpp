#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace msnn {

// Failures reading the EPCH / RCRD / MSNN containers. Each kind is distinct so
// callers can tell a foreign file from a damaged one.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, ChecksumMismatch, MissingSection, Invalid };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f64(double v);
  void raw(std::string_view s);
  void f64_array(std::span<const double> xs);
  // u16 length prefix followed by the bytes.
  void short_string(std::string_view s);

  // Appends CRC32 of everything written so far.
  void seal();

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader; running past the end is a Truncated error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  std::string raw(std::size_t n);
  std::vector<double> f64_array(std::size_t n);
  std::string short_string();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Container framing shared by all binary formats: magic, u16 version,
// payload, trailing CRC32 over everything before it. `begin_container`
// checks magic and version; parse the payload, then `end_container` checks
// that exactly the CRC remains and that it matches.
ByteReader begin_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           std::uint16_t version, std::string_view what);
void end_container(const ByteReader& reader, std::span<const std::uint8_t> bytes,
                   std::string_view what);

}  // namespace msnn
