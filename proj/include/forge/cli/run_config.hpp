#pragma once

// Run configuration file shared by `forge train` and `forge finetune`:
//
//   {
//     "train":      { TrainConfig keys },
//     "network":    { "kernels", "strides", "channels", "patch_size", ... },
//     "planner":    { "base_channels", "max_channels", "max_levels", ... },
//     "preprocess": { "target_spacing", "crop", "crop_margin", "normalization" },
//     "split":      { "ratio", "seed" }
//   }
//
// Every section is optional; `network` is mandatory for the manual U-Nets.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "forge/data/archive.hpp"
#include "forge/net/plan.hpp"
#include "forge/train/trainer.hpp"

namespace forge {

struct SplitSettings {
  double ratio = 0.8;
  std::optional<std::uint64_t> seed;  // default: the run seed
};

struct RunConfig {
  TrainConfig train;
  std::optional<NetworkPlan> network;
  PlannerOptions planner;
  PreprocessSettings preprocess;
  SplitSettings split;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

/// Manual U-Net hyperparameters. Dimensionality follows the kernel rank.
inline NetworkPlan network_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"kernels", "strides", "channels", "patch_size", "batch_size", "norm"}, "config.network");
  NetworkPlan p;
  for (const char* key : {"kernels", "strides", "channels"})
    if (!j.contains(key)) throw ConfigError(std::string("config.network: missing '") + key + "'");
  p.kernels = j["kernels"].get<std::vector<Extents>>();
  p.strides = j["strides"].get<std::vector<Extents>>();
  p.channels = j["channels"].get<std::vector<std::size_t>>();
  if (p.kernels.empty()) throw ConfigError("config.network: at least one level required");
  p.dims = static_cast<int>(p.kernels.front().size());
  p.norm = p.dims == 3 ? NormKind::Instance : NormKind::Batch;
  if (j.contains("norm")) p.norm = norm_kind_from_string(j["norm"].get<std::string>());
  if (j.contains("patch_size")) {
    const auto& ps = j["patch_size"];
    if (ps.is_string()) {
      if (ps.get<std::string>() != "full-slice") throw ConfigError("config.network: patch_size must be a list or \"full-slice\"");
    } else {
      p.patch_size = ps.get<Extents>();
    }
  }
  if (p.dims == 3 && p.patch_size.empty()) throw ConfigError("config.network: 3D U-Net needs an explicit patch_size");
  if (j.contains("batch_size")) p.batch_size = j["batch_size"].get<std::size_t>();
  return p;
}

inline nlohmann::ordered_json planner_to_json(const PlannerOptions& o) {
  return {{"base_channels", o.base_channels},
          {"max_channels", o.max_channels},
          {"max_levels", o.max_levels},
          {"min_feature_map", o.min_feature_map},
          {"anisotropy_threshold", o.anisotropy_threshold}};
}

}  // namespace detail

/// Overlays the sections present in `j` onto `base`.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  detail::reject_unknown(j, {"train", "network", "planner", "preprocess", "split"}, "config");
  try {
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    if (j.contains("network")) c.network = detail::network_from_json(j["network"]);
    if (j.contains("planner")) {
      const auto& p = j["planner"];
      detail::reject_unknown(p, {"base_channels", "max_channels", "max_levels", "min_feature_map", "anisotropy_threshold"},
                             "config.planner");
      c.planner.base_channels = p.value("base_channels", c.planner.base_channels);
      c.planner.max_channels = p.value("max_channels", c.planner.max_channels);
      c.planner.max_levels = p.value("max_levels", c.planner.max_levels);
      c.planner.min_feature_map = p.value("min_feature_map", c.planner.min_feature_map);
      c.planner.anisotropy_threshold = p.value("anisotropy_threshold", c.planner.anisotropy_threshold);
      if (c.planner.base_channels < 1 || c.planner.max_channels < c.planner.base_channels || c.planner.max_levels < 1 ||
          !(c.planner.anisotropy_threshold >= 1.0)) {
        throw ConfigError("config.planner: values out of range");
      }
    }
    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      detail::reject_unknown(p, {"target_spacing", "crop", "crop_margin", "normalization"}, "config.preprocess");
      if (p.contains("target_spacing")) {
        c.preprocess.target_spacing =
            p["target_spacing"].is_null() ? std::vector<double>{} : p["target_spacing"].get<std::vector<double>>();
        for (double s : c.preprocess.target_spacing)
          if (!(s > 0.0)) throw ConfigError("config.preprocess: target_spacing entries must be > 0");
      }
      c.preprocess.crop = p.value("crop", c.preprocess.crop);
      c.preprocess.crop_margin = p.value("crop_margin", c.preprocess.crop_margin);
      c.preprocess.normalization = p.value("normalization", c.preprocess.normalization);
      if (c.preprocess.normalization != "nonzero_zscore" && c.preprocess.normalization != "none") {
        throw ConfigError("config.preprocess: normalization must be nonzero_zscore or none");
      }
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      detail::reject_unknown(s, {"ratio", "seed"}, "config.split");
      c.split.ratio = s.value("ratio", c.split.ratio);
      if (s.contains("seed")) c.split.seed = s["seed"].is_null() ? std::nullopt : std::optional(s["seed"].get<std::uint64_t>());
      if (!(c.split.ratio > 0.0 && c.split.ratio < 1.0)) throw ConfigError("config.split: ratio must lie in (0, 1)");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(to_string(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j, std::move(base));
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["train"] = to_json(c.train);
  j["network"] = c.network ? plan_to_json(*c.network) : nlohmann::ordered_json(nullptr);
  j["planner"] = detail::planner_to_json(c.planner);
  j["preprocess"] = {{"target_spacing", c.preprocess.target_spacing},
                     {"crop", c.preprocess.crop},
                     {"crop_margin", c.preprocess.crop_margin},
                     {"normalization", c.preprocess.normalization}};
  j["split"] = {{"ratio", c.split.ratio},
                {"seed", c.split.seed ? nlohmann::ordered_json(*c.split.seed) : nlohmann::ordered_json(nullptr)}};
  return j;
}

}  // namespace forge
