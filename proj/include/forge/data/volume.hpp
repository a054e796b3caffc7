#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/tensor/tensor.hpp"

namespace forge {

using LabelMap = std::vector<std::uint16_t>;

/// One study: a multi-channel image [C, spatial...], an integer label map over
/// the same spatial grid (0 = background), voxel spacing in mm, label names.
struct VolumeBundle {
  std::size_t channels = 1;
  Shape spatial;
  std::vector<float> image;
  LabelMap labels;
  std::vector<double> spacing;
  std::map<int, std::string> label_names;

  std::size_t voxels() const { return numel(spatial); }

  float& at(std::size_t c, std::size_t v) { return image[c * voxels() + v]; }
  float at(std::size_t c, std::size_t v) const { return image[c * voxels() + v]; }

  /// Number of classes including background (max declared id + 1).
  std::size_t num_classes() const { return label_names.empty() ? 1 : static_cast<std::size_t>(label_names.rbegin()->first) + 1; }

  void validate() const {
    if (spatial.empty() || spatial.size() > 3) throw DataError("bundle: 1 to 3 spatial axes required");
    for (std::size_t a = 0; a < spatial.size(); ++a)
      if (spatial[a] == 0) throw DataError("bundle: spatial axis " + std::to_string(a) + " is empty");
    if (channels == 0) throw DataError("bundle: at least one image channel required");
    if (image.size() != channels * voxels()) throw DataError("bundle: image size does not match [C, spatial]");
    if (labels.size() != voxels()) throw DataError("bundle: label map size does not match image spatial dims");
    if (spacing.size() != spatial.size()) throw DataError("bundle: spacing needs one entry per spatial axis");
    for (double s : spacing)
      if (!(s > 0.0)) throw DataError("bundle: spacing entries must be > 0");
    int expected = 0;
    for (const auto& [id, name] : label_names) {
      if (id != expected++) throw DataError("bundle: label ids must form the contiguous range 0..K");
    }
    const auto k = num_classes();
    for (auto l : labels)
      if (l >= k) throw DataError("bundle: label id " + std::to_string(l) + " not declared in label_names");
  }

  std::set<std::uint16_t> label_ids_present() const { return {labels.begin(), labels.end()}; }
};

/// Per-axis medians over a training set, and the spacing the pipeline resamples to.
struct DatasetFingerprint {
  std::vector<double> median_spacing;
  std::vector<std::size_t> median_shape;
  std::size_t n_volumes = 0;
  std::vector<double> target_spacing;
};

}  // namespace forge
