#pragma once

// RunManifest: what a command was asked to do, with every default resolved,
// plus checksums of the inputs it read. Deterministic runs leave the
// timestamps null so that the manifest itself is reproducible.

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "forge/data/archive.hpp"

namespace forge {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kRunManifestName = "run_manifest.json";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv, bool deterministic)
      : deterministic_(deterministic) {
    j_["command"] = std::move(command);
    j_["argv"] = std::move(argv);
    j_["tool_version"] = kToolVersion;
    j_["deterministic"] = deterministic;
    j_["seed"] = nullptr;
    j_["config"] = nlohmann::ordered_json::object();
    j_["inputs"] = nlohmann::ordered_json::array();
    j_["outputs"] = nlohmann::ordered_json::array();
    j_["started"] = deterministic ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(utc_timestamp());
    j_["finished"] = nullptr;
  }

  void set_seed(std::uint64_t seed) { j_["seed"] = seed; }
  nlohmann::ordered_json& config() { return j_["config"]; }
  nlohmann::ordered_json& extra(const std::string& key) { return j_[key]; }

  /// Records a file the command read, with its CRC-32.
  void add_input(const std::filesystem::path& path, const Bytes& content) {
    j_["inputs"].push_back({{"path", path.string()}, {"crc32", crc32_hex(content)}});
  }
  void add_output(const std::filesystem::path& path) { j_["outputs"].push_back(path.string()); }

  void write(const std::filesystem::path& path) {
    if (!deterministic_) j_["finished"] = utc_timestamp();
    write_text(path, j_.dump(2) + "\n");
  }

  const nlohmann::ordered_json& json() const { return j_; }

 private:
  bool deterministic_;
  nlohmann::ordered_json j_;
};

}  // namespace forge
