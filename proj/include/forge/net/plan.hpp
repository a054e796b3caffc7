#pragma once

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/volume.hpp"

namespace forge {

enum class NormKind { Instance, Batch };

inline const char* to_string(NormKind k) { return k == NormKind::Instance ? "instance" : "batch"; }

inline NormKind norm_kind_from_string(const std::string& s) {
  if (s == "instance") return NormKind::Instance;
  if (s == "batch") return NormKind::Batch;
  throw ConfigError("unknown norm kind '" + s + "'");
}

using Extents = std::vector<std::size_t>;

/// Full description of an encoder-decoder instance. strides[0] is the stem
/// stride; strides[l] (l >= 1) downsamples from level l-1 into level l.
struct NetworkPlan {
  int dims = 3;
  std::vector<Extents> kernels;
  std::vector<Extents> strides;
  std::vector<std::size_t> channels;
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  NormKind norm = NormKind::Instance;
  Extents patch_size;  // empty: whole slices (2D)
  std::size_t batch_size = 2;

  std::size_t levels() const { return channels.size(); }
  bool full_slice() const { return patch_size.empty(); }

  /// Product of strides over levels 0..level, per axis.
  Extents cumulative_stride(std::size_t level) const {
    Extents c(static_cast<std::size_t>(dims), 1);
    for (std::size_t l = 0; l <= level && l < strides.size(); ++l)
      for (std::size_t a = 0; a < c.size(); ++a) c[a] *= strides[l][a];
    return c;
  }
  Extents total_stride() const { return cumulative_stride(levels() ? levels() - 1 : 0); }

  /// Number of freeze groups: one per encoder and decoder resolution block.
  std::size_t group_count() const { return 2 * levels() - 1; }

  void validate() const {
    if (dims != 2 && dims != 3) throw ConfigError("plan: dims must be 2 or 3");
    const auto nd = static_cast<std::size_t>(dims);
    const std::size_t L = levels();
    if (L < 1) throw ConfigError("plan: at least one level required");
    if (kernels.size() != L || strides.size() != L) {
      throw ConfigError("plan: kernels, strides and channels must all have one entry per level");
    }
    if (in_channels < 1) throw ConfigError("plan: in_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("plan: num_classes must be >= 2 (background + foreground)");
    if (batch_size < 1) throw ConfigError("plan: batch_size must be >= 1");
    for (std::size_t l = 0; l < L; ++l) {
      if (kernels[l].size() != nd || strides[l].size() != nd) {
        throw ConfigError("plan: level " + std::to_string(l) + " needs " + std::to_string(nd) + " kernel/stride entries");
      }
      for (std::size_t a = 0; a < nd; ++a) {
        if (kernels[l][a] < 1 || kernels[l][a] % 2 == 0) {
          throw ConfigError("plan: level " + std::to_string(l) + " axis " + std::to_string(a) +
                            " kernel must be odd and >= 1");
        }
        if (strides[l][a] < 1) throw ConfigError("plan: strides must be >= 1");
      }
      if (channels[l] < 1) throw ConfigError("plan: channel widths must be >= 1");
      if (l > 0 && channels[l] < channels[l - 1]) {
        throw ConfigError("plan: channel widths must be non-decreasing down the encoder");
      }
    }
    if (!patch_size.empty()) {
      if (patch_size.size() != nd) throw ConfigError("plan: patch_size needs one entry per spatial axis");
      const auto total = total_stride();
      for (std::size_t a = 0; a < nd; ++a) {
        if (patch_size[a] == 0 || patch_size[a] % total[a] != 0) {
          throw ConfigError("plan: patch extent " + std::to_string(patch_size[a]) + " on axis " + std::to_string(a) +
                            " is not divisible by the cumulative stride " + std::to_string(total[a]));
        }
      }
    }
  }

  bool operator==(const NetworkPlan&) const = default;
};

/// Abstract memory allowance in cost units (see estimate_memory).
struct MemoryBudget {
  double units = 5.0e7;
  std::size_t max_batch = 8;
};

/// Stored activations per feature-map element and level, in cost units.
inline constexpr double kActivationCost = 8.0;

inline double estimate_memory(const NetworkPlan& plan, const Extents& patch, std::size_t batch) {
  if (patch.size() != static_cast<std::size_t>(plan.dims)) {
    throw ConfigError("estimate_memory: patch needs one extent per axis");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < plan.levels(); ++l) {
    const auto cum = plan.cumulative_stride(l);
    double vox = 1.0;
    for (std::size_t a = 0; a < patch.size(); ++a) vox *= static_cast<double>(patch[a] / cum[a]);
    total += vox * static_cast<double>(plan.channels[l]) * kActivationCost;
  }
  return total * static_cast<double>(batch);
}

/// Sum over levels of feature-map voxels x channels x kActivationCost, times batch size.
inline double estimate_memory(const NetworkPlan& plan) {
  if (plan.full_slice()) throw ConfigError("estimate_memory: plan has no fixed patch size");
  return estimate_memory(plan, plan.patch_size, plan.batch_size);
}

struct PlannerOptions {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t base_channels = 32;
  std::size_t max_channels = 320;
  std::size_t max_levels = 6;
  std::size_t min_feature_map = 4;     // a strided axis must stay above this extent
  double anisotropy_threshold = 2.0;   // coarse axis: spacing > threshold * finest
};

/// Self-configuring topology, patch and batch selection from a dataset fingerprint.
inline NetworkPlan plan_dynunet(const DatasetFingerprint& fp, const MemoryBudget& mem, const PlannerOptions& opt = {}) {
  if (fp.n_volumes < 1 || fp.median_shape.empty()) throw UsageError("plan_dynunet: empty fingerprint");
  const std::size_t nd = fp.median_shape.size();
  if (nd != 2 && nd != 3) throw ConfigError("plan_dynunet: fingerprint must describe 2D or 3D volumes");
  const auto& target = fp.target_spacing.empty() ? fp.median_spacing : fp.target_spacing;
  if (target.size() != nd) throw ConfigError("plan_dynunet: spacing and shape rank differ");

  NetworkPlan plan;
  plan.dims = static_cast<int>(nd);
  plan.in_channels = opt.in_channels;
  plan.num_classes = opt.num_classes;
  plan.norm = nd == 3 ? NormKind::Instance : NormKind::Batch;

  std::vector<double> spacing = target;
  std::vector<std::size_t> extent = fp.median_shape;
  auto kernels_for = [&](const std::vector<double>& sp) {
    const double finest = *std::min_element(sp.begin(), sp.end());
    Extents k(nd);
    for (std::size_t a = 0; a < nd; ++a) k[a] = sp[a] > opt.anisotropy_threshold * finest ? 1 : 3;
    return k;
  };
  auto width = [&](std::size_t level) {
    std::size_t c = opt.base_channels;
    for (std::size_t i = 0; i < level && c < opt.max_channels; ++i) c *= 2;
    return std::min(c, opt.max_channels);
  };

  plan.kernels.push_back(kernels_for(spacing));
  plan.strides.push_back(Extents(nd, 1));
  plan.channels.push_back(width(0));
  while (plan.levels() < opt.max_levels) {
    const double finest = *std::min_element(spacing.begin(), spacing.end());
    Extents stride(nd, 1);
    bool any = false;
    for (std::size_t a = 0; a < nd; ++a) {
      if (spacing[a] <= opt.anisotropy_threshold * finest && extent[a] / 2 > opt.min_feature_map) {
        stride[a] = 2;
        any = true;
      }
    }
    if (!any) break;
    for (std::size_t a = 0; a < nd; ++a) {
      spacing[a] *= static_cast<double>(stride[a]);
      extent[a] /= stride[a];
    }
    plan.kernels.push_back(kernels_for(spacing));
    plan.strides.push_back(stride);
    plan.channels.push_back(width(plan.levels()));
  }

  const Extents step = plan.total_stride();
  Extents cap(nd);
  for (std::size_t a = 0; a < nd; ++a) {
    cap[a] = std::max(step[a], (fp.median_shape[a] + step[a] - 1) / step[a] * step[a]);
  }
  Extents patch = step;
  const double minimal = estimate_memory(plan, patch, 1);
  if (minimal > mem.units) {
    std::ostringstream os;
    os << "memory budget " << mem.units << " is below the minimal patch requirement of " << minimal << " units";
    throw ConfigError(os.str());
  }
  if (estimate_memory(plan, patch, 2) <= mem.units) {
    // Grow the relatively smallest axis one stride step at a time; stop at the
    // first step that would not fit a batch of two.
    for (;;) {
      std::size_t best = nd;
      double best_ratio = 2.0;
      for (std::size_t a = 0; a < nd; ++a) {
        if (patch[a] >= cap[a]) continue;
        const double ratio = static_cast<double>(patch[a]) / static_cast<double>(cap[a]);
        if (ratio < best_ratio) {
          best_ratio = ratio;
          best = a;
        }
      }
      if (best == nd) break;
      Extents grown = patch;
      grown[best] += step[best];
      if (estimate_memory(plan, grown, 2) > mem.units) break;
      patch = grown;
    }
  }
  plan.patch_size = patch;
  plan.batch_size = 1;
  for (std::size_t b = std::max<std::size_t>(mem.max_batch, 1); b >= 2; --b) {
    if (estimate_memory(plan, patch, b) <= mem.units) {
      plan.batch_size = b;
      break;
    }
  }
  plan.validate();
  return plan;
}

}  // namespace forge
