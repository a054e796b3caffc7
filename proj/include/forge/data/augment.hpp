#pragma once

// Spatial augmentation applied identically to image and labels, plus image-only
// Gaussian noise. Rotations act on the last two (in-plane) axes.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/preprocess.hpp"
#include "forge/data/sampling.hpp"

namespace forge {

struct AugmentPolicy {
  bool flip = false;
  bool rotate90 = false;
  double zoom_lo = 1.0;
  double zoom_hi = 1.0;
  double gaussian_noise_std = 0.0;

  bool zoom_enabled() const { return zoom_lo != 1.0 || zoom_hi != 1.0; }

  void validate() const {
    if (!std::isfinite(zoom_lo) || !std::isfinite(zoom_hi) || !std::isfinite(gaussian_noise_std)) {
      throw ConfigError("augment: parameters must be finite");
    }
    if (zoom_enabled() && !(zoom_lo > 0.0 && zoom_lo <= 1.0 && 1.0 <= zoom_hi)) {
      throw ConfigError("augment: zoom range must be positive and contain 1.0");
    }
    if (gaussian_noise_std < 0.0) throw ConfigError("augment: noise std must be >= 0");
  }

  static AugmentPolicy none() { return {}; }
  static AugmentPolicy scratch() { return {false, true, 0.9, 1.1, 0.05}; }
  static AugmentPolicy finetune() { return {false, false, 0.9, 1.1, 0.05}; }

  bool operator==(const AugmentPolicy&) const = default;
};

namespace detail {

// out[j] along `axis` = src at coordinate map(j); zero outside [0, n - 1].
template <typename V, typename F>
std::vector<V> remap_axis(const std::vector<V>& src, std::size_t channels, const Shape& shape, std::size_t axis,
                          F&& map, Interp interp) {
  const std::size_t n = shape[axis];
  std::size_t outer = channels, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  std::vector<V> out(src.size(), V(0));
  const double last = static_cast<double>(n) - 1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double x = map(static_cast<double>(j), static_cast<double>(n));
    if (interp == Interp::Nearest) {
      const double r = std::floor(x + 0.5);
      if (r < 0.0 || r > last) continue;
      const auto i = static_cast<std::size_t>(r);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < inner; ++k) out[(o * n + j) * inner + k] = src[(o * n + i) * inner + k];
      continue;
    }
    const double f = std::floor(x);
    const double t = x - f;
    const auto fetch = [&](double i, std::size_t o, std::size_t k) -> double {
      if (i < 0.0 || i > last) return 0.0;
      return static_cast<double>(src[(o * n + static_cast<std::size_t>(i)) * inner + k]);
    };
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < inner; ++k) {
        const double a = fetch(f, o, k);
        const double v = t == 0.0 ? a : a + (fetch(f + 1.0, o, k) - a) * t;
        out[(o * n + j) * inner + k] = static_cast<V>(v);
      }
  }
  return out;
}

}  // namespace detail

inline Sample flip_axis(Sample s, std::size_t axis) {
  const auto rev = [](double j, double n) { return n - 1.0 - j; };
  s.image = detail::remap_axis(s.image, s.channels, s.spatial, axis, rev, Interp::Nearest);
  s.labels = detail::remap_axis(s.labels, 1, s.spatial, axis, rev, Interp::Nearest);
  return s;
}

/// Counter-clockwise quarter turns in the last two axes. Odd turns need a square plane.
inline Sample rot90(Sample s, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return s;
  const std::size_t nd = s.spatial.size();
  if (nd < 2) throw DimensionError("rot90: at least two spatial axes required");
  const std::size_t h = s.spatial[nd - 2], w = s.spatial[nd - 1];
  if (k % 2 == 1 && h != w) throw DimensionError("rot90: odd quarter turns need a square in-plane extent");
  const std::size_t plane = h * w, outer = numel(s.spatial) / plane;
  auto turn = [&](auto& data, std::size_t ch) {
    auto out = data;
    for (std::size_t o = 0; o < outer * ch; ++o)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          std::size_t si, sj;
          if (k == 1) {
            si = j, sj = w - 1 - i;
          } else if (k == 2) {
            si = h - 1 - i, sj = w - 1 - j;
          } else {
            si = h - 1 - j, sj = i;
          }
          out[o * plane + i * w + j] = data[o * plane + si * w + sj];
        }
    data = std::move(out);
  };
  turn(s.image, s.channels);
  turn(s.labels, 1);
  return s;
}

/// Scales content about the patch center by `factor` on every spatial axis,
/// keeping the extent: zoom-in crops, zoom-out zero-pads.
inline Sample zoom(Sample s, double factor) {
  if (factor == 1.0) return s;
  if (!(factor > 0.0)) throw ConfigError("zoom: factor must be > 0");
  const auto map = [factor](double j, double n) {
    const double c = (n - 1.0) / 2.0;
    return (j - c) / factor + c;
  };
  for (std::size_t a = 0; a < s.spatial.size(); ++a) {
    s.image = detail::remap_axis(s.image, s.channels, s.spatial, a, map, Interp::Linear);
    s.labels = detail::remap_axis(s.labels, 1, s.spatial, a, map, Interp::Nearest);
  }
  return s;
}

template <typename Rng>
Sample augment(Sample s, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  const std::size_t nd = s.spatial.size();
  if (policy.flip) {
    std::bernoulli_distribution coin(0.5);
    for (std::size_t a = 0; a < nd; ++a)
      if (coin(rng)) s = flip_axis(std::move(s), a);
  }
  if (policy.rotate90 && nd >= 2) {
    const bool square = s.spatial[nd - 2] == s.spatial[nd - 1];
    std::uniform_int_distribution<int> turns(0, square ? 3 : 1);
    const int k = turns(rng);
    s = rot90(std::move(s), square ? k : 2 * k);
  }
  if (policy.zoom_enabled()) {
    std::uniform_real_distribution<double> u(policy.zoom_lo, policy.zoom_hi);
    s = zoom(std::move(s), u(rng));
  }
  if (policy.gaussian_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, policy.gaussian_noise_std);
    for (auto& v : s.image) v += static_cast<float>(noise(rng));
  }
  return s;
}

}  // namespace forge
