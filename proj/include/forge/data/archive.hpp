#pragma once

// Flat ustar archive of named byte blobs, plus CRC-32 helpers. Entries are
// written in the given order with zeroed owner/mtime fields so equal inputs
// produce byte-identical files. Only regular files at the top level.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "forge/core/error.hpp"

namespace forge {

using Bytes = std::vector<unsigned char>;

inline std::uint32_t crc32_of(const Bytes& data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string crc32_hex(const Bytes& data) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32_of(data));
  return buf;
}

inline Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

struct ArchiveEntry {
  std::string name;
  Bytes data;
};

namespace detail {

inline constexpr std::size_t kTarBlock = 512;

inline void put_octal(unsigned char* field, std::size_t width, std::uint64_t value) {
  // width includes the trailing NUL
  std::string digits(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0; value >>= 3) digits[i] = static_cast<char>('0' + (value & 7));
  if (value != 0) throw FormatError("archive: value too large for header field");
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = 0;
}

inline std::uint64_t get_octal(const unsigned char* field, std::size_t width) {
  std::uint64_t v = 0;
  std::size_t i = 0;
  while (i < width && (field[i] == ' ' || field[i] == 0)) ++i;
  for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
  if (i < width && field[i] != 0 && field[i] != ' ') throw FormatError("archive: malformed numeric header field");
  return v;
}

inline unsigned header_checksum(const unsigned char* h) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kTarBlock; ++i) sum += (i >= 148 && i < 156) ? ' ' : h[i];
  return sum;
}

}  // namespace detail

inline Bytes pack_archive(const std::vector<ArchiveEntry>& entries) {
  using namespace detail;
  Bytes out;
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 99) throw FormatError("archive: entry name must be 1..99 bytes");
    std::array<unsigned char, kTarBlock> h{};
    std::memcpy(h.data(), e.name.data(), e.name.size());
    put_octal(h.data() + 100, 8, 0644);
    put_octal(h.data() + 108, 8, 0);
    put_octal(h.data() + 116, 8, 0);
    put_octal(h.data() + 124, 12, e.data.size());
    put_octal(h.data() + 136, 12, 0);
    h[156] = '0';
    std::memcpy(h.data() + 257, "ustar", 6);
    h[263] = '0';
    h[264] = '0';
    put_octal(h.data() + 148, 7, header_checksum(h.data()));
    h[155] = ' ';
    out.insert(out.end(), h.begin(), h.end());
    out.insert(out.end(), e.data.begin(), e.data.end());
    out.resize(out.size() + (kTarBlock - e.data.size() % kTarBlock) % kTarBlock, 0);
  }
  out.resize(out.size() + 2 * kTarBlock, 0);
  return out;
}

/// Entries by name. Truncation, bad header checksums and duplicate names are format errors.
inline std::map<std::string, Bytes> unpack_archive(const Bytes& raw, const std::string& what = "archive") {
  using namespace detail;
  std::map<std::string, Bytes> out;
  std::size_t off = 0;
  bool terminated = false;
  while (off + kTarBlock <= raw.size()) {
    const unsigned char* h = raw.data() + off;
    if (std::all_of(h, h + kTarBlock, [](unsigned char c) { return c == 0; })) {
      terminated = true;
      break;
    }
    if (get_octal(h + 148, 8) != header_checksum(h)) throw FormatError(what + ": corrupt entry header");
    const std::string name(reinterpret_cast<const char*>(h), strnlen(reinterpret_cast<const char*>(h), 100));
    const auto size = static_cast<std::size_t>(get_octal(h + 124, 12));
    off += kTarBlock;
    if (off + size > raw.size()) throw FormatError(what + ": truncated entry '" + name + "'");
    if (h[156] == '0' || h[156] == 0) {
      if (!out.emplace(name, Bytes(raw.begin() + static_cast<std::ptrdiff_t>(off),
                                   raw.begin() + static_cast<std::ptrdiff_t>(off + size)))
               .second) {
        throw FormatError(what + ": duplicate entry '" + name + "'");
      }
    }
    off += (size + kTarBlock - 1) / kTarBlock * kTarBlock;
  }
  if (!terminated) throw FormatError(what + ": truncated (missing end-of-archive marker)");
  return out;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes through a sibling temporary and renames, so readers never see partial files.
inline void write_file(const std::filesystem::path& path, const Bytes& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file(path, to_bytes(text)); }

inline const Bytes& require_entry(const std::map<std::string, Bytes>& entries, const std::string& name,
                                  const std::string& what) {
  const auto it = entries.find(name);
  if (it == entries.end()) throw FormatError(what + ": missing entry '" + name + "'");
  return it->second;
}

}  // namespace forge
