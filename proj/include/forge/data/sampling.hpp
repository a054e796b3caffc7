#pragma once

// Training patches. A draw is positive with probability `positive_fraction`
// (default 3:1): its center voxel is uniform over foreground-labeled voxels.
// Otherwise the center is uniform over the volume. Regions outside the volume
// are zero-filled (label 0).

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/core/log.hpp"
#include "forge/data/preprocess.hpp"
#include "forge/data/volume.hpp"

namespace forge {

struct Sample {
  std::size_t channels = 1;
  Shape spatial;
  std::vector<float> image;  // [C, spatial...]
  LabelMap labels;           // [spatial...]
  bool positive = false;

  std::size_t voxels() const { return numel(spatial); }
};

inline Sample as_sample(const VolumeBundle& b) { return {b.channels, b.spatial, b.image, b.labels, false}; }

inline constexpr double kDefaultPositiveFraction = 0.75;

class PatchSampler {
 public:
  PatchSampler(const VolumeBundle& bundle, Shape patch, double positive_fraction = kDefaultPositiveFraction)
      : bundle_(&bundle), patch_(std::move(patch)), positive_fraction_(positive_fraction) {
    if (patch_.size() != bundle.spatial.size()) throw DimensionError("PatchSampler: patch rank differs from volume rank");
    for (auto e : patch_)
      if (e == 0) throw DimensionError("PatchSampler: patch extents must be positive");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
      throw ConfigError("PatchSampler: positive fraction must lie in [0, 1]");
    }
    for (std::size_t v = 0; v < bundle.labels.size(); ++v)
      if (bundle.labels[v] != 0) foreground_.push_back(v);
    if (foreground_.empty() && positive_fraction_ > 0.0) {
      warn("PatchSampler: volume has no foreground; drawing negative patches only");
    }
  }

  const std::vector<std::size_t>& foreground() const { return foreground_; }
  const Shape& patch() const { return patch_; }

  template <typename Rng>
  Sample draw(Rng& rng) const {
    std::bernoulli_distribution coin(positive_fraction_);
    const bool positive = coin(rng) && !foreground_.empty();
    std::size_t center;
    if (positive) {
      std::uniform_int_distribution<std::size_t> pick(0, foreground_.size() - 1);
      center = foreground_[pick(rng)];
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, bundle_->voxels() - 1);
      center = pick(rng);
    }
    Sample s = extract(center);
    s.positive = positive;
    return s;
  }

  /// Patch whose voxel patch/2 (per axis) is the volume voxel `center`.
  Sample extract(std::size_t center) const {
    const auto& b = *bundle_;
    const std::size_t nd = patch_.size(), vol = b.voxels(), pvol = numel(patch_);
    const auto ss = row_major_strides(b.spatial);
    std::vector<std::ptrdiff_t> start(nd);
    for (std::size_t a = 0; a < nd; ++a) {
      start[a] = static_cast<std::ptrdiff_t>((center / ss[a]) % b.spatial[a]) - static_cast<std::ptrdiff_t>(patch_[a] / 2);
    }
    Sample s;
    s.channels = b.channels;
    s.spatial = patch_;
    s.image.assign(b.channels * pvol, 0.0f);
    s.labels.assign(pvol, 0);
    std::vector<std::size_t> idx(nd);
    for (std::size_t v = 0; v < pvol; ++v) {
      std::size_t rem = v, off = 0;
      bool inside = true;
      for (std::size_t a = nd; a-- > 0;) {
        idx[a] = rem % patch_[a];
        rem /= patch_[a];
      }
      for (std::size_t a = 0; a < nd && inside; ++a) {
        const std::ptrdiff_t p = start[a] + static_cast<std::ptrdiff_t>(idx[a]);
        inside = p >= 0 && p < static_cast<std::ptrdiff_t>(b.spatial[a]);
        off += static_cast<std::size_t>(p) * ss[a];
      }
      if (!inside) continue;
      s.labels[v] = b.labels[off];
      for (std::size_t c = 0; c < b.channels; ++c) s.image[c * pvol + v] = b.image[c * vol + off];
    }
    return s;
  }

 private:
  const VolumeBundle* bundle_;
  Shape patch_;
  double positive_fraction_;
  std::vector<std::size_t> foreground_;
};

template <typename Rng>
std::vector<Sample> sample_patches(const VolumeBundle& b, const Shape& patch, std::size_t n, Rng& rng,
                                   double positive_fraction = kDefaultPositiveFraction) {
  PatchSampler sampler(b, patch, positive_fraction);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace forge
