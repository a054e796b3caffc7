#pragma once

// Synthetic multi-structure phantoms with parametric domain shift.
//
// Each structure is an axis-aligned ellipsoid given by a nominal centre (as a
// fraction of the volume extent) and nominal radii in millimetres. Per volume,
// morphology jitter j perturbs radii by a factor 1 + j * U(-0.25, 0.25) and
// centres by j * U(-0.15, 0.15) of the extent; j = 0 reproduces the nominal
// layout exactly. Structures are placed in order; a candidate that overlaps an
// earlier structure or leaves the volume is redrawn.
//
// Intensities: clean = per-volume base drawn from the structure's band (or the
// background level), then image = scale * clean + shift + N(0, noise^2 + extra^2).

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/volume.hpp"

namespace forge {

struct StructureSpec {
  std::string name;
  std::vector<double> center;     // fractions of the extent, one per axis
  std::vector<double> radius_mm;  // one per axis
  double intensity_lo = 1.0;
  double intensity_hi = 1.0;
};

struct PhantomSpec {
  Shape shape{24, 64, 64};
  std::vector<double> spacing{1.0, 1.0, 1.0};
  std::vector<StructureSpec> structures;
  double background_level = 0.2;
  double noise_std = 0.1;
  // domain knobs
  double intensity_scale = 1.0;
  double intensity_shift = 0.0;
  std::optional<std::vector<double>> spacing_override;
  double morphology_jitter = 0.5;
  double extra_noise_std = 0.0;
  std::vector<int> label_subset;  // empty: all structures labelled
  std::size_t max_retries = 200;

  const std::vector<double>& effective_spacing() const { return spacing_override ? *spacing_override : spacing; }

  void validate() const {
    const std::size_t nd = shape.size();
    if (nd < 2 || nd > 3) throw ConfigError("phantom: shape must have 2 or 3 axes");
    for (auto e : shape)
      if (e == 0) throw ConfigError("phantom: shape extents must be positive");
    auto check_spacing = [&](const std::vector<double>& s, const char* what) {
      if (s.size() != nd) throw ConfigError(std::string("phantom: ") + what + " needs one entry per axis");
      for (double v : s)
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("phantom: ") + what + " entries must be finite and > 0");
    };
    check_spacing(spacing, "spacing");
    if (spacing_override) check_spacing(*spacing_override, "spacing_override");
    if (structures.empty()) throw ConfigError("phantom: at least one structure required");
    for (const auto& s : structures) {
      if (s.center.size() != nd || s.radius_mm.size() != nd) {
        throw ConfigError("phantom: structure '" + s.name + "' needs one centre and radius entry per axis");
      }
      for (double r : s.radius_mm)
        if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("phantom: radii must be finite and > 0");
      for (double c : s.center)
        if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("phantom: centres are fractions in [0, 1]");
      if (!(s.intensity_lo <= s.intensity_hi) || !std::isfinite(s.intensity_lo) || !std::isfinite(s.intensity_hi)) {
        throw ConfigError("phantom: structure '" + s.name + "' has an invalid intensity band");
      }
    }
    for (double v : {background_level, noise_std, intensity_scale, intensity_shift, morphology_jitter, extra_noise_std})
      if (!std::isfinite(v)) throw ConfigError("phantom: knobs must be finite");
    if (noise_std < 0.0 || extra_noise_std < 0.0) throw ConfigError("phantom: noise levels must be >= 0");
    if (morphology_jitter < 0.0) throw ConfigError("phantom: morphology_jitter must be >= 0");
    for (int id : label_subset)
      if (id < 1 || id > static_cast<int>(structures.size())) {
        throw ConfigError("phantom: label_subset id " + std::to_string(id) + " outside 1.." +
                          std::to_string(structures.size()));
      }
  }

  /// Label ids kept, ascending (all structures when no subset is set).
  std::vector<int> kept_labels() const {
    std::vector<int> out = label_subset;
    if (out.empty())
      for (int i = 1; i <= static_cast<int>(structures.size()); ++i) out.push_back(i);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Output label names; kept structures are renumbered 1..M in ascending source order.
  std::map<int, std::string> label_names() const {
    std::map<int, std::string> names{{0, "background"}};
    int next = 1;
    for (int id : kept_labels()) names[next++] = structures[static_cast<std::size_t>(id - 1)].name;
    return names;
  }
};

/// Four well-separated structures in a 24 x 64 x 64 volume.
inline PhantomSpec default_phantom_spec() {
  PhantomSpec s;
  s.structures = {
      {"alpha", {0.5, 0.3, 0.3}, {6.0, 9.0, 9.0}, 0.9, 1.1},
      {"beta", {0.5, 0.3, 0.72}, {5.0, 8.0, 9.0}, 1.4, 1.6},
      {"gamma", {0.5, 0.72, 0.28}, {6.0, 9.0, 8.0}, 0.5, 0.7},
      {"delta", {0.5, 0.72, 0.72}, {5.0, 7.0, 7.0}, 1.9, 2.1},
  };
  return s;
}

struct PhantomShift {
  double intensity_scale = 0.0;
  double intensity_shift = 0.0;
  std::optional<std::vector<double>> spacing_override;
  double morphology_jitter = 0.0;
  double extra_noise_std = 0.0;
  std::vector<int> label_subset;
};

/// Target-domain spec: knob deltas added to `spec`.
inline PhantomSpec shifted(const PhantomSpec& spec, const PhantomShift& d) {
  PhantomSpec out = spec;
  out.intensity_scale += d.intensity_scale;
  out.intensity_shift += d.intensity_shift;
  if (d.spacing_override) out.spacing_override = d.spacing_override;
  out.morphology_jitter += d.morphology_jitter;
  out.extra_noise_std += d.extra_noise_std;
  if (!d.label_subset.empty()) out.label_subset = d.label_subset;
  out.validate();
  return out;
}

template <typename Rng>
VolumeBundle generate_volume(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t nd = spec.shape.size(), vol = numel(spec.shape);
  const auto& sp = spec.effective_spacing();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  // Source-id map; 0 is background.
  std::vector<std::uint16_t> owner(vol, 0);
  Shape strides(nd, 1);
  for (std::size_t a = nd - 1; a-- > 0;) strides[a] = strides[a + 1] * spec.shape[a + 1];

  for (std::size_t s = 0; s < spec.structures.size(); ++s) {
    const auto& st = spec.structures[s];
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      std::vector<double> c(nd), r(nd);
      for (std::size_t a = 0; a < nd; ++a) {
        const double extent = static_cast<double>(spec.shape[a]);
        c[a] = (st.center[a] + spec.morphology_jitter * 0.15 * unit(rng)) * extent - 0.5;
        r[a] = st.radius_mm[a] * (1.0 + spec.morphology_jitter * 0.25 * unit(rng)) / sp[a];
      }
      bool inside = true;
      std::vector<std::size_t> lo(nd), hi(nd);
      for (std::size_t a = 0; a < nd && inside; ++a) {
        const double l = std::ceil(c[a] - r[a]), h = std::floor(c[a] + r[a]);
        inside = l >= 0.0 && h <= static_cast<double>(spec.shape[a]) - 1.0 && r[a] > 0.0;
        lo[a] = inside ? static_cast<std::size_t>(l) : 0;
        hi[a] = inside ? static_cast<std::size_t>(h) + 1 : 0;
      }
      if (!inside) continue;
      std::vector<std::size_t> voxels;
      bool clash = false;
      std::vector<std::size_t> idx(lo);
      for (bool done = false; !done && !clash;) {
        double q = 0.0;
        std::size_t off = 0;
        for (std::size_t a = 0; a < nd; ++a) {
          const double d = (static_cast<double>(idx[a]) - c[a]) / r[a];
          q += d * d;
          off += idx[a] * strides[a];
        }
        if (q <= 1.0) {
          if (owner[off] != 0) clash = true;
          voxels.push_back(off);
        }
        for (std::size_t a = nd;;) {
          if (a == 0) {
            done = true;
            break;
          }
          --a;
          if (++idx[a] < hi[a]) break;
          idx[a] = lo[a];
        }
      }
      if (clash || voxels.empty()) continue;
      for (auto off : voxels) owner[off] = static_cast<std::uint16_t>(s + 1);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("phantom: could not place structure '" + st.name + "' after " +
                            std::to_string(spec.max_retries) + " attempts; use smaller radii or less jitter");
    }
  }

  std::vector<double> base(spec.structures.size() + 1, spec.background_level);
  for (std::size_t s = 0; s < spec.structures.size(); ++s) {
    const auto& st = spec.structures[s];
    base[s + 1] = std::uniform_real_distribution<double>(st.intensity_lo, std::nextafter(st.intensity_hi, INFINITY))(rng);
  }
  const auto kept = spec.kept_labels();
  std::vector<std::uint16_t> relabel(spec.structures.size() + 1, 0);
  for (std::size_t i = 0; i < kept.size(); ++i) relabel[static_cast<std::size_t>(kept[i])] = static_cast<std::uint16_t>(i + 1);

  VolumeBundle b;
  b.channels = 1;
  b.spatial = spec.shape;
  b.spacing = sp;
  b.label_names = spec.label_names();
  b.image.resize(vol);
  b.labels.resize(vol);
  const double sigma = std::sqrt(spec.noise_std * spec.noise_std + spec.extra_noise_std * spec.extra_noise_std);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (std::size_t v = 0; v < vol; ++v) {
    const std::uint16_t o = owner[v];
    const std::uint16_t lab = relabel[o];
    // Structures outside the subset are painted as background.
    const double clean = (o != 0 && lab != 0) ? base[o] : spec.background_level;
    const double n = sigma > 0.0 ? noise(rng) : 0.0;
    b.image[v] = static_cast<float>(spec.intensity_scale * clean + spec.intensity_shift + n);
    b.labels[v] = lab;
  }
  return b;
}

/// n volumes, volume i seeded from (seed, i).
inline std::vector<VolumeBundle> generate_dataset(const PhantomSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw UsageError("generate_dataset: n must be >= 1");
  std::vector<VolumeBundle> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    out.push_back(generate_volume(spec, rng));
  }
  return out;
}

// ---- JSON sidecar -----------------------------------------------------------

inline nlohmann::ordered_json to_json(const PhantomSpec& s) {
  nlohmann::ordered_json j;
  j["shape"] = s.shape;
  j["spacing"] = s.spacing;
  nlohmann::ordered_json st = nlohmann::ordered_json::array();
  for (const auto& x : s.structures) {
    st.push_back({{"name", x.name},
                  {"center", x.center},
                  {"radius_mm", x.radius_mm},
                  {"intensity", {x.intensity_lo, x.intensity_hi}}});
  }
  j["structures"] = st;
  j["background_level"] = s.background_level;
  j["noise_std"] = s.noise_std;
  j["intensity_scale"] = s.intensity_scale;
  j["intensity_shift"] = s.intensity_shift;
  j["spacing_override"] = s.spacing_override ? nlohmann::ordered_json(*s.spacing_override) : nlohmann::ordered_json(nullptr);
  j["morphology_jitter"] = s.morphology_jitter;
  j["extra_noise_std"] = s.extra_noise_std;
  j["label_subset"] = s.label_subset;
  j["max_retries"] = s.max_retries;
  return j;
}

/// Keys absent from `j` keep the values of `base`.
inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j, PhantomSpec s = default_phantom_spec()) {
  try {
    if (j.contains("shape")) s.shape = j["shape"].get<Shape>();
    if (j.contains("spacing")) s.spacing = j["spacing"].get<std::vector<double>>();
    if (j.contains("structures")) {
      s.structures.clear();
      for (const auto& x : j["structures"]) {
        const auto band = x.at("intensity").get<std::vector<double>>();
        if (band.size() != 2) throw ConfigError("phantom: intensity band needs [lo, hi]");
        s.structures.push_back({x.at("name").get<std::string>(), x.at("center").get<std::vector<double>>(),
                                x.at("radius_mm").get<std::vector<double>>(), band[0], band[1]});
      }
    }
    s.background_level = j.value("background_level", s.background_level);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.intensity_scale = j.value("intensity_scale", s.intensity_scale);
    s.intensity_shift = j.value("intensity_shift", s.intensity_shift);
    if (j.contains("spacing_override")) {
      s.spacing_override = j["spacing_override"].is_null()
                               ? std::nullopt
                               : std::optional(j["spacing_override"].get<std::vector<double>>());
    }
    s.morphology_jitter = j.value("morphology_jitter", s.morphology_jitter);
    s.extra_noise_std = j.value("extra_noise_std", s.extra_noise_std);
    if (j.contains("label_subset")) s.label_subset = j["label_subset"].get<std::vector<int>>();
    s.max_retries = j.value("max_retries", s.max_retries);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace forge
