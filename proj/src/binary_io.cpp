#include "msnn/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>

namespace msnn {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks to stay in range.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::u16(std::uint16_t v) {
  bytes_.push_back(static_cast<std::uint8_t>(v & 0xFF));
  bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

void ByteWriter::raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

void ByteWriter::f64_array(std::span<const double> xs) {
  const std::size_t at = bytes_.size();
  bytes_.resize(at + xs.size() * sizeof(double));
  if (!xs.empty()) std::memcpy(bytes_.data() + at, xs.data(), xs.size() * sizeof(double));
}

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("string too long for u16 length prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s);
}

void ByteWriter::seal() { u32(crc32(bytes_)); }

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError(FormatError::Kind::Truncated,
                      "truncated input: needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(bits);
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f64_array(std::size_t n) {
  if (n > remaining() / sizeof(double)) need(n * sizeof(double));
  std::vector<double> out(n);
  if (n != 0) std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
  pos_ += n * sizeof(double);
  return out;
}

std::string ByteReader::short_string() { return raw(u16()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ByteReader begin_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           std::uint16_t version, std::string_view what) {
  const std::string prefix(what);
  if (bytes.size() < magic.size() ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw FormatError(FormatError::Kind::BadMagic,
                      prefix + ": bad magic (expected \"" + std::string(magic) + "\")");
  }
  ByteReader reader(bytes);
  reader.raw(magic.size());
  const std::uint16_t found = reader.u16();
  if (found != version) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      prefix + ": format version " + std::to_string(found) + ", expected " +
                          std::to_string(version));
  }
  return reader;
}

void end_container(const ByteReader& reader, std::span<const std::uint8_t> bytes,
                   std::string_view what) {
  const std::string prefix(what);
  if (reader.remaining() < 4) {
    throw FormatError(FormatError::Kind::Truncated, prefix + ": truncated (missing CRC32)");
  }
  if (reader.remaining() > 4) {
    throw FormatError(FormatError::Kind::Invalid,
                      prefix + ": " + std::to_string(reader.remaining() - 4) +
                          " unexpected bytes before CRC32");
  }
  const std::size_t body = reader.position();
  ByteReader tail(bytes.subspan(body));
  const std::uint32_t stored = tail.u32();
  if (stored != crc32(bytes.first(body))) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, prefix + ": checksum mismatch");
  }
}

}  // namespace msnn
