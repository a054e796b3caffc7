#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "forge/tensor/tensor.hpp"

namespace forge {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// [N, C, spatial...] -> spatial element count per (n, c) slab.
inline std::size_t spatial_size(const Shape& s) {
  std::size_t v = 1;
  for (std::size_t i = 2; i < s.size(); ++i) v *= s[i];
  return v;
}

inline void require_batched(const Shape& s, const char* op) {
  if (s.size() < 2) throw DimensionError(std::string(op) + ": expected [N, C, ...] input, got " + shape_str(s));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& n) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [factor](detail::Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  return make_result<T>({1}, {s}, {a.node()}, [](detail::Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (auto& v : g) v += n.grad[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.data[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = a.values()[i];
    out[i] = v > T(0) ? v : slope * v;
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [slope](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p.data[i] > T(0) ? n.grad[i] : slope * n.grad[i];
  });
}

/// Softmax over axis 1 of an [N, C, spatial...] tensor.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& a) {
  detail::require_batched(a.shape(), "softmax");
  const std::size_t batch = a.dim(0), channels = a.dim(1), vol = detail::spatial_size(a.shape());
  std::vector<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t base = n * channels * vol;
    for (std::size_t v = 0; v < vol; ++v) {
      T mx = x[base + v];
      for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, x[base + c * vol + v]);
      T total = T(0);
      for (std::size_t c = 0; c < channels; ++c) {
        const T e = std::exp(x[base + c * vol + v] - mx);
        out[base + c * vol + v] = e;
        total += e;
      }
      for (std::size_t c = 0; c < channels; ++c) out[base + c * vol + v] /= total;
    }
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [batch, channels, vol](detail::Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const auto& p = n.data;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * channels * vol;
      for (std::size_t v = 0; v < vol; ++v) {
        T dot = T(0);
        for (std::size_t c = 0; c < channels; ++c) dot += p[base + c * vol + v] * n.grad[base + c * vol + v];
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t i = base + c * vol + v;
          g[i] += p[i] * (n.grad[i] - dot);
        }
      }
    }
  });
}

enum class ActivationKind { Relu, LeakyRelu, Softmax };

struct Activation {
  ActivationKind kind = ActivationKind::LeakyRelu;
  double slope = 0.01;
};

template <typename T>
Tensor<T> activation(const Tensor<T>& a, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Relu:
      return relu(a);
    case ActivationKind::LeakyRelu:
      return leaky_relu(a, static_cast<T>(act.slope));
    case ActivationKind::Softmax:
      return softmax_channels(a);
  }
  throw UsageError("unknown activation");
}

/// Channel concatenation of two [N, C, spatial...] tensors with equal N and spatial extents.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_batched(a.shape(), "concat");
  detail::require_batched(b.shape(), "concat");
  if (a.rank() != b.rank() || a.dim(0) != b.dim(0)) {
    throw DimensionError("concat: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  for (std::size_t ax = 2; ax < a.rank(); ++ax) {
    if (a.dim(ax) != b.dim(ax)) {
      throw DimensionError("concat: spatial axis " + std::to_string(ax - 2) + " differs (" +
                           std::to_string(a.dim(ax)) + " vs " + std::to_string(b.dim(ax)) + ")");
    }
  }
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), vol = detail::spatial_size(a.shape());
  Shape shape = a.shape();
  shape[1] = ca + cb;
  std::vector<T> out(numel(shape));
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.values().begin() + n * ca * vol, ca * vol, out.begin() + n * (ca + cb) * vol);
    std::copy_n(b.values().begin() + n * cb * vol, cb * vol, out.begin() + (n * (ca + cb) + ca) * vol);
  }
  return make_result<T>(std::move(shape), std::move(out), {a.node(), b.node()},
                        [batch, ca, cb, vol](detail::Node<T>& n) {
                          auto& pa = n.parents[0];
                          auto& pb = n.parents[1];
                          for (std::size_t k = 0; k < batch; ++k) {
                            const auto src = n.grad.begin() + k * (ca + cb) * vol;
                            if (pa->requires_grad) {
                              auto dst = pa->grad_buffer().begin() + k * ca * vol;
                              for (std::size_t i = 0; i < ca * vol; ++i) dst[i] += src[i];
                            }
                            if (pb->requires_grad) {
                              auto dst = pb->grad_buffer().begin() + k * cb * vol;
                              for (std::size_t i = 0; i < cb * vol; ++i) dst[i] += src[ca * vol + i];
                            }
                          }
                        });
}

namespace detail {

template <typename T>
void require_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const char* op) {
  require_batched(x.shape(), op);
  const Shape want{x.dim(1)};
  if (gamma.shape() != want || beta.shape() != want) {
    throw DimensionError(std::string(op) + ": affine parameters must have shape " + shape_str(want));
  }
}

// Shared backward for normalizations: given xhat = (x - mean) * inv_std over
// groups of `count` elements, push dL/dy back through y = gamma * xhat + beta.
template <typename T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;  // one per statistics group
};

}  // namespace detail

/// Per-sample, per-channel standardization followed by a channel affine map.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_affine(x, gamma, beta, "instance_norm");
  const std::size_t batch = x.dim(0), channels = x.dim(1), vol = detail::spatial_size(x.shape());
  if (vol == 0) throw DimensionError("instance_norm: zero spatial extent");
  auto cache = std::make_shared<detail::NormCache<T>>();
  cache->xhat.resize(x.numel());
  cache->inv_std.resize(batch * channels);
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * vol;
      T mean = T(0);
      for (std::size_t v = 0; v < vol; ++v) mean += xv[base + v];
      mean /= static_cast<T>(vol);
      T var = T(0);
      for (std::size_t v = 0; v < vol; ++v) var += (xv[base + v] - mean) * (xv[base + v] - mean);
      var /= static_cast<T>(vol);
      const T inv = T(1) / std::sqrt(var + eps);
      cache->inv_std[n * channels + c] = inv;
      const T g = gamma.values()[c], b = beta.values()[c];
      for (std::size_t v = 0; v < vol; ++v) {
        const T xh = (xv[base + v] - mean) * inv;
        cache->xhat[base + v] = xh;
        out[base + v] = g * xh + b;
      }
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                        [cache, batch, channels, vol](detail::Node<T>& n) {
                          auto& px = n.parents[0];
                          auto& pg = n.parents[1];
                          auto& pb = n.parents[2];
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t c = 0; c < channels; ++c) {
                              const std::size_t base = (b * channels + c) * vol;
                              T sum_g = T(0), sum_gx = T(0);
                              for (std::size_t v = 0; v < vol; ++v) {
                                sum_g += n.grad[base + v];
                                sum_gx += n.grad[base + v] * cache->xhat[base + v];
                              }
                              if (pg->requires_grad) pg->grad_buffer()[c] += sum_gx;
                              if (pb->requires_grad) pb->grad_buffer()[c] += sum_g;
                              if (px->requires_grad) {
                                auto& gx = px->grad_buffer();
                                const T gam = pg->data[c];
                                const T inv = cache->inv_std[b * channels + c];
                                const T m1 = sum_g / static_cast<T>(vol), m2 = sum_gx / static_cast<T>(vol);
                                for (std::size_t v = 0; v < vol; ++v) {
                                  gx[base + v] +=
                                      gam * inv * (n.grad[base + v] - m1 - cache->xhat[base + v] * m2);
                                }
                              }
                            }
                          }
                        });
}

/// Running statistics owned by a batch-norm layer; they are buffers, not parameters.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  T momentum = T(0.1);
};

/// Per-channel standardization over (batch, spatial). In training mode uses the
/// batch statistics and updates `stats`; otherwise normalizes with `stats`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training, T eps = T(1e-5)) {
  detail::require_affine(x, gamma, beta, "batch_norm");
  const std::size_t batch = x.dim(0), channels = x.dim(1), vol = detail::spatial_size(x.shape());
  if (vol == 0) throw DimensionError("batch_norm: zero spatial extent");
  if (stats.mean.size() != channels || stats.var.size() != channels) {
    throw DimensionError("batch_norm: running statistics sized for " + std::to_string(stats.mean.size()) +
                         " channels, input has " + std::to_string(channels));
  }
  const std::size_t count = batch * vol;
  auto cache = std::make_shared<detail::NormCache<T>>();
  cache->xhat.resize(x.numel());
  cache->inv_std.resize(channels);
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t c = 0; c < channels; ++c) {
    T mean, var;
    if (training) {
      mean = T(0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t v = 0; v < vol; ++v) mean += xv[(b * channels + c) * vol + v];
      mean /= static_cast<T>(count);
      var = T(0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t v = 0; v < vol; ++v) {
          const T d = xv[(b * channels + c) * vol + v] - mean;
          var += d * d;
        }
      var /= static_cast<T>(count);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      stats.mean[c] = (T(1) - stats.momentum) * stats.mean[c] + stats.momentum * mean;
      stats.var[c] = (T(1) - stats.momentum) * stats.var[c] + stats.momentum * unbiased;
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    const T inv = T(1) / std::sqrt(var + eps);
    cache->inv_std[c] = inv;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t v = 0; v < vol; ++v) {
        const std::size_t i = (b * channels + c) * vol + v;
        cache->xhat[i] = (xv[i] - mean) * inv;
        out[i] = gamma.values()[c] * cache->xhat[i] + beta.values()[c];
      }
  }
  return make_result<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                        [cache, batch, channels, vol, training](detail::Node<T>& n) {
                          auto& px = n.parents[0];
                          auto& pg = n.parents[1];
                          auto& pb = n.parents[2];
                          const T count = static_cast<T>(batch * vol);
                          for (std::size_t c = 0; c < channels; ++c) {
                            T sum_g = T(0), sum_gx = T(0);
                            for (std::size_t b = 0; b < batch; ++b)
                              for (std::size_t v = 0; v < vol; ++v) {
                                const std::size_t i = (b * channels + c) * vol + v;
                                sum_g += n.grad[i];
                                sum_gx += n.grad[i] * cache->xhat[i];
                              }
                            if (pg->requires_grad) pg->grad_buffer()[c] += sum_gx;
                            if (pb->requires_grad) pb->grad_buffer()[c] += sum_g;
                            if (!px->requires_grad) continue;
                            auto& gx = px->grad_buffer();
                            const T k = pg->data[c] * cache->inv_std[c];
                            for (std::size_t b = 0; b < batch; ++b)
                              for (std::size_t v = 0; v < vol; ++v) {
                                const std::size_t i = (b * channels + c) * vol + v;
                                gx[i] += training ? k * (n.grad[i] - sum_g / count - cache->xhat[i] * sum_gx / count)
                                                  : k * n.grad[i];
                              }
                          }
                        });
}

/// out[i] = x[src[i]] over a new shape; gradients scatter-add back through `src`.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape shape, std::vector<std::size_t> src) {
  if (src.size() != numel(shape)) throw DimensionError("gather: index map does not match output shape");
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.values()[src[i]];
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, [src = std::move(src)](detail::Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += n.grad[i];
  });
}

namespace detail {

// Index map for a spatial window [offset, offset + extent) of x; `source(a, j)`
// maps output coordinate j on axis a to an input coordinate.
template <typename T, typename F>
Tensor<T> spatial_remap(const Tensor<T>& x, const std::vector<std::size_t>& extent, F&& source) {
  const Shape& xs = x.shape();
  require_batched(xs, "spatial_remap");
  const std::size_t nd = xs.size() - 2;
  if (extent.size() != nd) throw DimensionError("spatial_remap: one extent per spatial axis required");
  Shape ys{xs[0], xs[1]};
  ys.insert(ys.end(), extent.begin(), extent.end());
  std::vector<std::size_t> src(numel(ys));
  std::vector<std::size_t> idx(nd, 0);
  const std::size_t vol = spatial_size(ys);
  const std::size_t xvol = spatial_size(xs);
  for (std::size_t v = 0; v < vol; ++v) {
    std::size_t rem = v, off = 0;
    for (std::size_t a = nd; a-- > 0;) {
      idx[a] = rem % extent[a];
      rem /= extent[a];
    }
    for (std::size_t a = 0; a < nd; ++a) off = off * xs[2 + a] + source(a, idx[a]);
    for (std::size_t bc = 0; bc < xs[0] * xs[1]; ++bc) src[bc * vol + v] = bc * xvol + off;
  }
  return gather(x, std::move(ys), std::move(src));
}

}  // namespace detail

/// Mirror-pads the trailing edge of every spatial axis up to `extent` (edge voxel not repeated).
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, const std::vector<std::size_t>& extent) {
  const Shape& xs = x.shape();
  for (std::size_t a = 0; a < extent.size() && a + 2 < xs.size(); ++a) {
    if (extent[a] < xs[2 + a]) throw DimensionError("reflect_pad: target smaller than input on axis " + std::to_string(a));
  }
  return detail::spatial_remap(x, extent, [&](std::size_t a, std::size_t j) {
    const std::size_t n = xs[2 + a];
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    j %= period;
    return j < n ? j : period - j;
  });
}

/// Leading-corner crop of every spatial axis to `extent`.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<std::size_t>& extent) {
  const Shape& xs = x.shape();
  for (std::size_t a = 0; a < extent.size() && a + 2 < xs.size(); ++a) {
    if (extent[a] > xs[2 + a] || extent[a] == 0) throw DimensionError("crop: invalid extent on axis " + std::to_string(a));
  }
  return detail::spatial_remap(x, extent, [](std::size_t, std::size_t j) { return j; });
}

}  // namespace forge
