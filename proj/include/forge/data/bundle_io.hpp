#pragma once

// Bundle container: an archive holding
//   manifest.json  format_version, shape, channels, spacing_mm, label_names, checksums
//   image.raw      float32 little-endian, [C, spatial...] row-major
//   labels.raw     uint16 little-endian, [spatial...] row-major
// Checksums are CRC-32 (lowercase hex) of each raw entry.

#include <json.hpp>

#include <filesystem>
#include <string>

#include "forge/data/archive.hpp"
#include "forge/data/raw.hpp"
#include "forge/data/volume.hpp"

namespace forge {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kBundleExtension = ".bundle";

inline Bytes serialize_bundle(const VolumeBundle& b) {
  b.validate();
  const Bytes image = encode_f32(b.image);
  const Bytes labels = encode_u16(b.labels);
  nlohmann::ordered_json m;
  m["format_version"] = kBundleFormatVersion;
  m["shape"] = b.spatial;
  m["channels"] = b.channels;
  m["spacing_mm"] = b.spacing;
  nlohmann::ordered_json names = nlohmann::ordered_json::object();
  for (const auto& [id, name] : b.label_names) names[std::to_string(id)] = name;
  m["label_names"] = names;
  m["checksums"] = {{"image.raw", crc32_hex(image)}, {"labels.raw", crc32_hex(labels)}};
  return pack_archive({{"manifest.json", to_bytes(m.dump(2) + "\n")}, {"image.raw", image}, {"labels.raw", labels}});
}

inline VolumeBundle deserialize_bundle(const Bytes& raw, const std::string& what = "bundle") {
  const auto entries = unpack_archive(raw, what);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(to_string(require_entry(entries, "manifest.json", what)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(what + ": manifest is not valid JSON (" + e.what() + ")");
  }
  VolumeBundle b;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kBundleFormatVersion) {
      throw VersionError(what + ": unsupported format_version " + std::to_string(version));
    }
    b.spatial = m.at("shape").get<Shape>();
    b.channels = m.at("channels").get<std::size_t>();
    b.spacing = m.at("spacing_mm").get<std::vector<double>>();
    for (const auto& [key, value] : m.at("label_names").items()) b.label_names[std::stoi(key)] = value.get<std::string>();
    const auto& sums = m.at("checksums");
    for (const char* name : {"image.raw", "labels.raw"}) {
      if (crc32_hex(require_entry(entries, name, what)) != sums.at(name).get<std::string>()) {
        throw FormatError(what + ": checksum mismatch for " + std::string(name));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed manifest (" + e.what() + ")");
  } catch (const std::invalid_argument&) {
    throw FormatError(what + ": label_names keys must be integers");
  }
  if (b.spatial.empty()) throw FormatError(what + ": empty shape");
  b.image = decode_f32(require_entry(entries, "image.raw", what), b.channels * numel(b.spatial), what + " image.raw");
  b.labels = decode_u16(require_entry(entries, "labels.raw", what), numel(b.spatial), what + " labels.raw");
  try {
    b.validate();
  } catch (const DataError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return b;
}

inline void save_bundle(const VolumeBundle& b, const std::filesystem::path& path) {
  write_file(path, serialize_bundle(b));
}

inline VolumeBundle load_bundle(const std::filesystem::path& path) {
  return deserialize_bundle(read_file(path), path.string());
}

}  // namespace forge
