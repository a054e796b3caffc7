#pragma once

// Volume preprocessing: foreground crop -> resample to target spacing ->
// per-channel z-score over nonzero voxels. Also dataset fingerprinting, slice
// selection and the train/validation split.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/core/log.hpp"
#include "forge/data/volume.hpp"

namespace forge {

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t a = shape.size(); a-- > 1;) s[a - 1] = s[a] * shape[a];
  return s;
}

/// Half-open box [lo, hi) per spatial axis.
struct BBox {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;

  Shape extent() const {
    Shape e(lo.size());
    for (std::size_t a = 0; a < lo.size(); ++a) e[a] = hi[a] - lo[a];
    return e;
  }
  bool operator==(const BBox&) const = default;
};

/// Copies the region `box` of a [C, spatial...] array.
template <typename V>
std::vector<V> extract_region(const std::vector<V>& src, std::size_t channels, const Shape& shape, const BBox& box) {
  const Shape ext = box.extent();
  const auto ss = row_major_strides(shape);
  const std::size_t nd = shape.size(), vol = numel(shape), out_vol = numel(ext);
  std::vector<V> out(channels * out_vol);
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t v = 0; v < out_vol; ++v) {
    std::size_t rem = v, off = 0;
    for (std::size_t a = nd; a-- > 0;) {
      idx[a] = rem % ext[a];
      rem /= ext[a];
    }
    for (std::size_t a = 0; a < nd; ++a) off += (idx[a] + box.lo[a]) * ss[a];
    for (std::size_t c = 0; c < channels; ++c) out[c * out_vol + v] = src[c * vol + off];
  }
  return out;
}

inline VolumeBundle crop_bundle(const VolumeBundle& b, const BBox& box) {
  VolumeBundle out;
  out.channels = b.channels;
  out.spatial = box.extent();
  out.image = extract_region(b.image, b.channels, b.spatial, box);
  out.labels = extract_region(b.labels, 1, b.spatial, box);
  out.spacing = b.spacing;
  out.label_names = b.label_names;
  return out;
}

/// Tight box around voxels with intensity > 0 in any channel, grown by `margin` and clamped.
inline BBox foreground_bbox(const VolumeBundle& b, std::size_t margin = 0) {
  const std::size_t nd = b.spatial.size(), vol = b.voxels();
  BBox box{std::vector<std::size_t>(nd, SIZE_MAX), std::vector<std::size_t>(nd, 0)};
  const auto ss = row_major_strides(b.spatial);
  bool any = false;
  for (std::size_t v = 0; v < vol; ++v) {
    bool fg = false;
    for (std::size_t c = 0; c < b.channels && !fg; ++c) fg = b.image[c * vol + v] > 0.0f;
    if (!fg) continue;
    any = true;
    for (std::size_t a = 0; a < nd; ++a) {
      const std::size_t i = (v / ss[a]) % b.spatial[a];
      box.lo[a] = std::min(box.lo[a], i);
      box.hi[a] = std::max(box.hi[a], i + 1);
    }
  }
  if (!any) throw DegenerateInputError("crop_foreground: no foreground (all voxels <= 0)");
  for (std::size_t a = 0; a < nd; ++a) {
    box.lo[a] = box.lo[a] > margin ? box.lo[a] - margin : 0;
    box.hi[a] = std::min(b.spatial[a], box.hi[a] + margin);
  }
  return box;
}

struct CropResult {
  VolumeBundle bundle;
  BBox bbox;
};

inline CropResult crop_foreground(const VolumeBundle& b, std::size_t margin = 0) {
  auto box = foreground_bbox(b, margin);
  return {crop_bundle(b, box), std::move(box)};
}

enum class Interp { Linear, Nearest };

/// Resamples one axis of a [C, spatial...] array to `n_out` samples by
/// aligning voxel centers: source coordinate (j + 0.5) * n_in / n_out - 0.5.
template <typename V>
std::vector<V> resample_axis(const std::vector<V>& src, std::size_t channels, const Shape& shape, std::size_t axis,
                             std::size_t n_out, Interp interp) {
  const std::size_t n_in = shape[axis];
  if (n_in == n_out) return src;
  std::size_t outer = channels, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  std::vector<V> out(outer * n_out * inner);
  const double ratio = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const double x = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    if (interp == Interp::Nearest) {
      const auto i = std::min(n_in - 1, static_cast<std::size_t>(std::max(0.0, std::floor(x + 0.5))));
      for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * n_in + i) * inner), inner,
                    out.begin() + static_cast<std::ptrdiff_t>((o * n_out + j) * inner));
      continue;
    }
    const double xc = std::clamp(x, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(xc));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    const double t = xc - static_cast<double>(i0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < inner; ++k) {
        const double a = src[(o * n_in + i0) * inner + k], b = src[(o * n_in + i1) * inner + k];
        out[(o * n_out + j) * inner + k] = static_cast<V>(a + (b - a) * t);
      }
  }
  return out;
}

template <typename V>
std::vector<V> resample_array(std::vector<V> data, std::size_t channels, Shape shape, const Shape& target,
                              Interp interp) {
  for (std::size_t a = 0; a < shape.size(); ++a) {
    data = resample_axis(data, channels, shape, a, target[a], interp);
    shape[a] = target[a];
  }
  return data;
}

inline Shape resampled_shape(const Shape& shape, const std::vector<double>& spacing, const std::vector<double>& target) {
  Shape out(shape.size());
  for (std::size_t a = 0; a < shape.size(); ++a) {
    const double n = std::round(static_cast<double>(shape[a]) * spacing[a] / target[a]);
    out[a] = n < 1.0 ? 1 : static_cast<std::size_t>(n);
  }
  return out;
}

/// Image by (multi)linear interpolation, labels by nearest neighbour.
inline VolumeBundle resample(const VolumeBundle& b, const std::vector<double>& target_spacing) {
  if (target_spacing.size() != b.spatial.size()) throw ConfigError("resample: target spacing rank mismatch");
  for (double s : target_spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("resample: target spacing entries must be > 0");
  const Shape shape = resampled_shape(b.spatial, b.spacing, target_spacing);
  VolumeBundle out;
  out.channels = b.channels;
  out.spatial = shape;
  out.image = resample_array(b.image, b.channels, b.spatial, shape, Interp::Linear);
  out.labels = resample_array(b.labels, 1, b.spatial, shape, Interp::Nearest);
  out.spacing = target_spacing;
  out.label_names = b.label_names;
  return out;
}

/// Per channel, z-scores the nonzero voxels with their own mean and
/// (population) standard deviation. Exactly-zero voxels stay zero.
inline VolumeBundle normalize_intensity(VolumeBundle b) {
  const std::size_t vol = b.voxels();
  for (std::size_t c = 0; c < b.channels; ++c) {
    auto first = b.image.begin() + static_cast<std::ptrdiff_t>(c * vol);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(vol); ++it) {
      if (*it == 0.0f) continue;
      sum += *it;
      ++n;
    }
    if (n < 2) {
      warn("normalize_intensity: channel " + std::to_string(c) + " has fewer than 2 nonzero voxels; left unscaled");
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(vol); ++it)
      if (*it != 0.0f) sq += (*it - mean) * (*it - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 0.0)) {
      warn("normalize_intensity: channel " + std::to_string(c) + " has zero variance; left unscaled");
      continue;
    }
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(vol); ++it) {
      if (*it == 0.0f) continue;
      *it = static_cast<float>((*it - mean) / sd);
    }
  }
  return b;
}

struct PreprocessSettings {
  std::vector<double> target_spacing;
  std::size_t crop_margin = 0;
  bool crop = true;
  std::string normalization = "nonzero_zscore";
};

/// Geometry needed to map a prediction back onto the raw volume.
struct PreprocessTrace {
  Shape original_shape;
  BBox bbox;
};

struct PreprocessedVolume {
  VolumeBundle bundle;
  PreprocessTrace trace;
};

inline PreprocessedVolume preprocess(const VolumeBundle& raw, const PreprocessSettings& s) {
  raw.validate();
  PreprocessedVolume out;
  out.trace.original_shape = raw.spatial;
  VolumeBundle b;
  if (s.crop) {
    auto c = crop_foreground(raw, s.crop_margin);
    b = std::move(c.bundle);
    out.trace.bbox = std::move(c.bbox);
  } else {
    b = raw;
    out.trace.bbox = {std::vector<std::size_t>(raw.spatial.size(), 0), raw.spatial};
  }
  if (!s.target_spacing.empty()) b = resample(b, s.target_spacing);
  if (s.normalization == "nonzero_zscore") {
    b = normalize_intensity(std::move(b));
  } else if (s.normalization != "none") {
    throw ConfigError("unknown normalization mode '" + s.normalization + "'");
  }
  out.bundle = std::move(b);
  return out;
}

/// Maps a label map in preprocessed space back to the raw geometry
/// (nearest-neighbour onto the crop box, background outside it).
inline LabelMap restore_geometry(const LabelMap& pred, const Shape& pred_shape, const PreprocessTrace& trace) {
  const Shape box = trace.bbox.extent();
  const LabelMap in_box = resample_array(pred, 1, pred_shape, box, Interp::Nearest);
  LabelMap out(numel(trace.original_shape), 0);
  const auto ss = row_major_strides(trace.original_shape);
  const std::size_t nd = box.size();
  std::vector<std::size_t> idx(nd);
  for (std::size_t v = 0; v < in_box.size(); ++v) {
    std::size_t rem = v, off = 0;
    for (std::size_t a = nd; a-- > 0;) {
      idx[a] = rem % box[a];
      rem /= box[a];
    }
    for (std::size_t a = 0; a < nd; ++a) off += (idx[a] + trace.bbox.lo[a]) * ss[a];
    out[off] = in_box[v];
  }
  return out;
}

/// Lower of the two middle elements for even counts.
template <typename V>
V lower_median(std::vector<V> values) {
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

inline DatasetFingerprint compute_fingerprint(const std::vector<VolumeBundle>& bundles) {
  if (bundles.empty()) throw UsageError("compute_fingerprint: no volumes");
  const std::size_t nd = bundles.front().spatial.size();
  DatasetFingerprint fp;
  fp.n_volumes = bundles.size();
  for (std::size_t a = 0; a < nd; ++a) {
    std::vector<double> sp;
    std::vector<std::size_t> sh;
    for (const auto& b : bundles) {
      if (b.spatial.size() != nd) throw DataError("compute_fingerprint: volumes differ in dimensionality");
      sp.push_back(b.spacing[a]);
      sh.push_back(b.spatial[a]);
    }
    fp.median_spacing.push_back(lower_median(sp));
    fp.median_shape.push_back(lower_median(sh));
  }
  fp.target_spacing = fp.median_spacing;
  return fp;
}

/// Slices along the first axis holding foreground, dilated by +-surround.
inline std::vector<std::size_t> select_slices(const VolumeBundle& b, std::size_t surround = 1) {
  if (b.spatial.size() != 3) throw DimensionError("select_slices: 3D volume required");
  const std::size_t n = b.spatial[0], per = b.spatial[1] * b.spatial[2];
  std::vector<bool> keep(n, false);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = b.labels.begin() + static_cast<std::ptrdiff_t>(i * per);
    if (std::any_of(first, first + static_cast<std::ptrdiff_t>(per), [](std::uint16_t l) { return l != 0; })) {
      any = true;
      const std::size_t lo = i > surround ? i - surround : 0, hi = std::min(n - 1, i + surround);
      for (std::size_t j = lo; j <= hi; ++j) keep[j] = true;
    }
  }
  if (!any) warn("select_slices: volume has no foreground slices");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

/// Slice i along the first axis as a 2D bundle.
inline VolumeBundle extract_slice(const VolumeBundle& b, std::size_t i) {
  if (b.spatial.size() != 3 || i >= b.spatial[0]) throw DimensionError("extract_slice: index out of range");
  BBox box{{i, 0, 0}, {i + 1, b.spatial[1], b.spatial[2]}};
  auto s = crop_bundle(b, box);
  s.spatial = {b.spatial[1], b.spatial[2]};
  s.spacing = {b.spacing[1], b.spacing[2]};
  return s;
}

/// Seeded shuffle, then the first round(ratio * N) items (at least one per side) train.
template <typename V>
std::pair<std::vector<V>, std::vector<V>> split_dataset(const std::vector<V>& items, double ratio, std::uint64_t seed) {
  const std::size_t n = items.size();
  if (n < 2) throw UsageError("split_dataset: at least 2 volumes required, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split_dataset: ratio must be in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))), 1, n - 1);
  std::pair<std::vector<V>, std::vector<V>> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  return out;
}

}  // namespace forge
