#pragma once

// Dense prediction. Patch-based plans tile the volume with a regular grid of
// windows (fractional overlap, last window flush with the far edge) and average
// softmax probabilities uniformly; volumes smaller than the patch are
// zero-padded. Full-slice 2D plans run each first-axis slice whole.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/preprocess.hpp"
#include "forge/data/volume.hpp"
#include "forge/net/network.hpp"

namespace forge {

/// Window origins along one axis of extent n for a window of extent p.
inline std::vector<std::size_t> window_starts(std::size_t n, std::size_t p, double overlap) {
  if (p == 0) throw DimensionError("window_starts: window extent must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("sliding window overlap must be in [0, 1)");
  if (n <= p) return {0};
  const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(p) * (1.0 - overlap))));
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + p < n; s += step) out.push_back(s);
  out.push_back(n - p);
  return out;
}

namespace detail {

// Copies window [start, start + size) of a [C, shape...] array, zero outside.
inline std::vector<float> read_window(const std::vector<float>& img, std::size_t channels, const Shape& shape,
                                      const std::vector<std::size_t>& start, const Shape& size) {
  const std::size_t nd = shape.size(), vol = numel(shape), wvol = numel(size);
  const auto ss = row_major_strides(shape);
  std::vector<float> out(channels * wvol, 0.0f);
  std::vector<std::size_t> idx(nd);
  for (std::size_t v = 0; v < wvol; ++v) {
    std::size_t rem = v, off = 0;
    bool inside = true;
    for (std::size_t a = nd; a-- > 0;) {
      idx[a] = rem % size[a];
      rem /= size[a];
    }
    for (std::size_t a = 0; a < nd && inside; ++a) {
      const std::size_t p = start[a] + idx[a];
      inside = p < shape[a];
      off += p * ss[a];
    }
    if (!inside) continue;
    for (std::size_t c = 0; c < channels; ++c) out[c * wvol + v] = img[c * vol + off];
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const std::vector<float>& data, Shape shape) {
  std::vector<T> v(data.begin(), data.end());
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace detail

/// Class probabilities [K, shape...] for one [C, shape...] image whose rank
/// equals the plan's dimensionality.
template <typename T>
std::vector<float> predict_probabilities(Network<T>& net, const std::vector<float>& image, std::size_t channels,
                                         const Shape& shape, double overlap = 0.5) {
  const auto& plan = net.plan();
  if (shape.size() != static_cast<std::size_t>(plan.dims)) throw DimensionError("predict: image rank differs from plan");
  if (channels != plan.in_channels) throw DimensionError("predict: image channel count differs from plan");
  const std::size_t k = plan.num_classes, vol = numel(shape);
  const bool was_training = net.training();
  net.set_training(false);
  NoGradGuard no_grad;
  std::vector<float> probs(k * vol, 0.0f);

  if (plan.full_slice()) {
    Shape xs{1, channels};
    xs.insert(xs.end(), shape.begin(), shape.end());
    const auto p = softmax_channels(net.forward_padded(detail::to_tensor<T>(image, xs)));
    std::transform(p.values().begin(), p.values().end(), probs.begin(), [](T v) { return static_cast<float>(v); });
    net.set_training(was_training);
    return probs;
  }

  const Shape& patch = plan.patch_size;
  const std::size_t nd = shape.size(), pvol = numel(patch);
  std::vector<std::vector<std::size_t>> starts(nd);
  for (std::size_t a = 0; a < nd; ++a) starts[a] = window_starts(shape[a], patch[a], overlap);
  std::vector<double> acc(k * vol, 0.0);
  std::vector<std::uint32_t> count(vol, 0);
  const auto ss = row_major_strides(shape);
  Shape xs{1, channels};
  xs.insert(xs.end(), patch.begin(), patch.end());
  std::vector<std::size_t> pick(nd, 0), start(nd), idx(nd);
  for (bool done = false; !done;) {
    for (std::size_t a = 0; a < nd; ++a) start[a] = starts[a][pick[a]];
    const auto window = detail::read_window(image, channels, shape, start, patch);
    const auto p = softmax_channels(net.forward(detail::to_tensor<T>(window, xs)));
    const auto& pv = p.values();
    for (std::size_t v = 0; v < pvol; ++v) {
      std::size_t rem = v, off = 0;
      bool inside = true;
      for (std::size_t a = nd; a-- > 0;) {
        idx[a] = rem % patch[a];
        rem /= patch[a];
      }
      for (std::size_t a = 0; a < nd && inside; ++a) {
        inside = start[a] + idx[a] < shape[a];
        off += (start[a] + idx[a]) * ss[a];
      }
      if (!inside) continue;
      ++count[off];
      for (std::size_t c = 0; c < k; ++c) acc[c * vol + off] += static_cast<double>(pv[c * pvol + v]);
    }
    for (std::size_t a = nd;;) {
      if (a == 0) {
        done = true;
        break;
      }
      --a;
      if (++pick[a] < starts[a].size()) break;
      pick[a] = 0;
    }
  }
  for (std::size_t v = 0; v < vol; ++v) {
    if (count[v] == 0) throw NumericError("sliding window left a voxel uncovered");
    for (std::size_t c = 0; c < k; ++c) probs[c * vol + v] = static_cast<float>(acc[c * vol + v] / count[v]);
  }
  net.set_training(was_training);
  return probs;
}

/// Per-voxel argmax over classes (lowest class id on ties).
inline LabelMap argmax_labels(const std::vector<float>& probs, std::size_t classes, std::size_t vol) {
  LabelMap out(vol, 0);
  for (std::size_t v = 0; v < vol; ++v) {
    float best = probs[v];
    for (std::size_t c = 1; c < classes; ++c)
      if (probs[c * vol + v] > best) {
        best = probs[c * vol + v];
        out[v] = static_cast<std::uint16_t>(c);
      }
  }
  return out;
}

/// Class probabilities for a preprocessed bundle. A bundle one rank above the
/// plan is processed slice by slice along its first axis.
template <typename T>
std::vector<float> predict_bundle_probabilities(Network<T>& net, const VolumeBundle& b, double overlap = 0.5) {
  const auto nd = static_cast<std::size_t>(net.plan().dims);
  if (b.spatial.size() == nd) return predict_probabilities(net, b.image, b.channels, b.spatial, overlap);
  if (b.spatial.size() != nd + 1) throw DimensionError("predict: bundle rank incompatible with network");
  const std::size_t k = net.plan().num_classes, n = b.spatial[0], vol = b.voxels();
  const Shape plane(b.spatial.begin() + 1, b.spatial.end());
  const std::size_t pv = numel(plane);
  std::vector<float> probs(k * vol);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> img(b.channels * pv);
    for (std::size_t c = 0; c < b.channels; ++c)
      std::copy_n(b.image.begin() + static_cast<std::ptrdiff_t>(c * vol + i * pv), pv,
                  img.begin() + static_cast<std::ptrdiff_t>(c * pv));
    const auto p = predict_probabilities(net, img, b.channels, plane, overlap);
    for (std::size_t c = 0; c < k; ++c)
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(c * pv), pv,
                  probs.begin() + static_cast<std::ptrdiff_t>(c * vol + i * pv));
  }
  return probs;
}

template <typename T>
LabelMap sliding_window_infer(Network<T>& net, const VolumeBundle& b, double overlap = 0.5) {
  return argmax_labels(predict_bundle_probabilities(net, b, overlap), net.plan().num_classes, b.voxels());
}

}  // namespace forge
