#pragma once

// N-D (1-3 spatial dims) convolution and transposed convolution. Both share
// three kernels on a geometry padded out to three spatial axes:
//   correlate     y[n,o,q]            += w[o,i,k] * x[n,i,q*s+k-p]
//   scatter       x[n,i,q*s+k-p]      += w[o,i,k] * y[n,o,q]
//   weight_grad   w[o,i,k]            += y[n,o,q] * x[n,i,q*s+k-p]
// A transposed convolution is `scatter` with the roles of x and y exchanged,
// which is why its weight layout is [C_in, C_out, k...].

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "forge/tensor/tensor.hpp"

namespace forge {

struct ConvSpec {
  int dims = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
  bool transposed = false;

  void validate() const {
    if (dims < 1 || dims > 3) throw DimensionError("conv: dims must be 1, 2 or 3, got " + std::to_string(dims));
    if (in_channels == 0 || out_channels == 0) throw DimensionError("conv: channel counts must be positive");
    const auto nd = static_cast<std::size_t>(dims);
    if (kernel.size() != nd || stride.size() != nd || padding.size() != nd) {
      throw DimensionError("conv: kernel/stride/padding must each have " + std::to_string(dims) + " entries");
    }
    for (std::size_t a = 0; a < nd; ++a) {
      if (kernel[a] < 1) throw DimensionError("conv: kernel extent on axis " + std::to_string(a) + " must be >= 1");
      if (stride[a] < 1) throw DimensionError("conv: stride on axis " + std::to_string(a) + " must be >= 1");
    }
  }

  std::size_t kernel_volume() const {
    std::size_t v = 1;
    for (auto k : kernel) v *= k;
    return v;
  }

  Shape weight_shape() const {
    Shape s = transposed ? Shape{in_channels, out_channels} : Shape{out_channels, in_channels};
    s.insert(s.end(), kernel.begin(), kernel.end());
    return s;
  }

  /// Output spatial extents for the given input extents.
  Shape output_spatial(const Shape& in) const {
    Shape out(in.size());
    for (std::size_t a = 0; a < in.size(); ++a) {
      const auto s = static_cast<std::int64_t>(in[a]), k = static_cast<std::int64_t>(kernel[a]),
                 st = static_cast<std::int64_t>(stride[a]), p = static_cast<std::int64_t>(padding[a]);
      const std::int64_t o = transposed ? (s - 1) * st + k - 2 * p : (s + 2 * p - k) / st + 1;
      if ((!transposed && s + 2 * p < k) || o < 1) {
        throw DimensionError("conv: spatial axis " + std::to_string(a) + " of extent " + std::to_string(s) +
                             " yields an empty output");
      }
      out[a] = static_cast<std::size_t>(o);
    }
    return out;
  }
};

namespace detail {

struct ConvGeometry {
  std::size_t batch = 1, ci = 1, co = 1;  // correlate-side channel counts
  std::array<std::int64_t, 3> in{1, 1, 1}, out{1, 1, 1}, k{1, 1, 1}, s{1, 1, 1}, p{0, 0, 0};

  std::int64_t in_vol() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_vol() const { return out[0] * out[1] * out[2]; }
  std::int64_t k_vol() const { return k[0] * k[1] * k[2]; }

  // Output indices q with 0 <= q*s + kk - p < in, as a half-open range.
  std::pair<std::int64_t, std::int64_t> valid(int axis, std::int64_t kk) const {
    const std::int64_t off = kk - p[axis];
    std::int64_t lo = off >= 0 ? 0 : (-off + s[axis] - 1) / s[axis];
    std::int64_t hi = in[axis] - 1 - off < 0 ? 0 : (in[axis] - 1 - off) / s[axis] + 1;
    if (hi > out[axis]) hi = out[axis];
    if (lo > hi) lo = hi;
    return {lo, hi};
  }
};

// Calls body(y_index_base, x_index_base, count, x_step) for every contiguous
// run along the last axis, for one kernel offset (kz, ky, kx).
template <typename F>
inline void for_each_run(const ConvGeometry& g, std::int64_t kz, std::int64_t ky, std::int64_t kx, F&& body) {
  const auto [z0, z1] = g.valid(0, kz);
  const auto [y0, y1] = g.valid(1, ky);
  const auto [x0, x1] = g.valid(2, kx);
  if (x0 >= x1) return;
  for (std::int64_t qz = z0; qz < z1; ++qz) {
    const std::int64_t iz = qz * g.s[0] + kz - g.p[0];
    for (std::int64_t qy = y0; qy < y1; ++qy) {
      const std::int64_t iy = qy * g.s[1] + ky - g.p[1];
      const std::int64_t ybase = (qz * g.out[1] + qy) * g.out[2] + x0;
      const std::int64_t xbase = (iz * g.in[1] + iy) * g.in[2] + x0 * g.s[2] + kx - g.p[2];
      body(ybase, xbase, x1 - x0, g.s[2]);
    }
  }
}

template <typename T>
void correlate(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::int64_t iv = g.in_vol(), ov = g.out_vol(), kv = g.k_vol();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.co; ++o) {
      T* yo = y + (n * g.co + o) * ov;
      for (std::size_t i = 0; i < g.ci; ++i) {
        const T* xi = x + (n * g.ci + i) * iv;
        const T* wk = w + (o * g.ci + i) * kv;
        for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
          for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
            for (std::int64_t kx = 0; kx < g.k[2]; ++kx) {
              const T wv = wk[(kz * g.k[1] + ky) * g.k[2] + kx];
              if (wv == T(0)) continue;
              for_each_run(g, kz, ky, kx, [&](std::int64_t yb, std::int64_t xb, std::int64_t cnt, std::int64_t st) {
                T* yr = yo + yb;
                const T* xr = xi + xb;
                if (st == 1) {
                  for (std::int64_t q = 0; q < cnt; ++q) yr[q] += wv * xr[q];
                } else {
                  for (std::int64_t q = 0; q < cnt; ++q) yr[q] += wv * xr[q * st];
                }
              });
            }
      }
    }
}

template <typename T>
void scatter(const ConvGeometry& g, const T* y, const T* w, T* x) {
  const std::int64_t iv = g.in_vol(), ov = g.out_vol(), kv = g.k_vol();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t i = 0; i < g.ci; ++i) {
      T* xi = x + (n * g.ci + i) * iv;
      for (std::size_t o = 0; o < g.co; ++o) {
        const T* yo = y + (n * g.co + o) * ov;
        const T* wk = w + (o * g.ci + i) * kv;
        for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
          for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
            for (std::int64_t kx = 0; kx < g.k[2]; ++kx) {
              const T wv = wk[(kz * g.k[1] + ky) * g.k[2] + kx];
              if (wv == T(0)) continue;
              for_each_run(g, kz, ky, kx, [&](std::int64_t yb, std::int64_t xb, std::int64_t cnt, std::int64_t st) {
                const T* yr = yo + yb;
                T* xr = xi + xb;
                if (st == 1) {
                  for (std::int64_t q = 0; q < cnt; ++q) xr[q] += wv * yr[q];
                } else {
                  for (std::int64_t q = 0; q < cnt; ++q) xr[q * st] += wv * yr[q];
                }
              });
            }
      }
    }
}

template <typename T>
void weight_grad(const ConvGeometry& g, const T* x, const T* y, T* w) {
  const std::int64_t iv = g.in_vol(), ov = g.out_vol(), kv = g.k_vol();
  for (std::size_t o = 0; o < g.co; ++o)
    for (std::size_t i = 0; i < g.ci; ++i) {
      T* wk = w + (o * g.ci + i) * kv;
      for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
        for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
          for (std::int64_t kx = 0; kx < g.k[2]; ++kx) {
            T acc = T(0);
            for (std::size_t n = 0; n < g.batch; ++n) {
              const T* yo = y + (n * g.co + o) * ov;
              const T* xi = x + (n * g.ci + i) * iv;
              for_each_run(g, kz, ky, kx, [&](std::int64_t yb, std::int64_t xb, std::int64_t cnt, std::int64_t st) {
                const T* yr = yo + yb;
                const T* xr = xi + xb;
                T run = T(0);
                if (st == 1) {
                  for (std::int64_t q = 0; q < cnt; ++q) run += yr[q] * xr[q];
                } else {
                  for (std::int64_t q = 0; q < cnt; ++q) run += yr[q] * xr[q * st];
                }
                acc += run;
              });
            }
            wk[(kz * g.k[1] + ky) * g.k[2] + kx] += acc;
          }
    }
}

// Geometry of the correlate-side view. For a standard conv, correlate-in is the
// layer input; for a transposed conv, correlate-in is the layer *output*.
inline ConvGeometry make_geometry(const ConvSpec& spec, std::size_t batch, const Shape& corr_in,
                                  const Shape& corr_out) {
  ConvGeometry g;
  g.batch = batch;
  g.ci = spec.transposed ? spec.out_channels : spec.in_channels;
  g.co = spec.transposed ? spec.in_channels : spec.out_channels;
  const int off = 3 - spec.dims;
  for (int a = 0; a < spec.dims; ++a) {
    g.in[off + a] = static_cast<std::int64_t>(corr_in[a]);
    g.out[off + a] = static_cast<std::int64_t>(corr_out[a]);
    g.k[off + a] = static_cast<std::int64_t>(spec.kernel[a]);
    g.s[off + a] = static_cast<std::int64_t>(spec.stride[a]);
    g.p[off + a] = static_cast<std::int64_t>(spec.padding[a]);
  }
  return g;
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                     const std::optional<Tensor<T>>& bias) {
  spec.validate();
  const auto nd = static_cast<std::size_t>(spec.dims);
  if (input.rank() != nd + 2) {
    throw DimensionError("conv: input must have rank " + std::to_string(nd + 2) + " ([N, C, spatial...]), got " +
                         shape_str(input.shape()));
  }
  if (input.dim(1) != spec.in_channels) {
    throw DimensionError("conv: input channel axis has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  }
  const Shape want = spec.weight_shape();
  if (weight.shape() != want) {
    for (std::size_t a = 0; a < want.size(); ++a) {
      if (a >= weight.rank() || weight.dim(a) != want[a]) {
        throw DimensionError("conv: weight axis " + std::to_string(a) + " is " +
                             (a < weight.rank() ? std::to_string(weight.dim(a)) : std::string("missing")) +
                             ", expected " + std::to_string(want[a]) + " (weight layout " + shape_str(want) + ")");
      }
    }
    throw DimensionError("conv: weight has rank " + std::to_string(weight.rank()) + ", expected " +
                         std::to_string(want.size()));
  }
  if (bias && bias->shape() != Shape{spec.out_channels}) {
    throw DimensionError("conv: bias must have shape [" + std::to_string(spec.out_channels) + "]");
  }
}

template <typename T>
void add_bias(std::vector<T>& out, std::size_t batch, std::size_t channels, std::size_t vol, const T* bias) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      std::fill_n(out.begin() + (n * channels + c) * vol, vol, bias[c]);
}

template <typename T>
void bias_grad(const std::vector<T>& gy, std::size_t batch, std::size_t channels, std::size_t vol,
               std::vector<T>& gb) {
  for (std::size_t c = 0; c < channels; ++c) {
    T acc = T(0);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* p = gy.data() + (n * channels + c) * vol;
      for (std::size_t v = 0; v < vol; ++v) acc += p[v];
    }
    gb[c] += acc;
  }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of an [N, C_in, spatial...] input with a
/// [C_out, C_in, k...] weight, zero padding, per-axis stride.
template <typename T>
Tensor<T> conv_nd(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                  const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt) {
  if (spec.transposed) throw UsageError("conv_nd called with a transposed spec; use conv_transpose_nd");
  detail::check_conv_args(input, spec, weight, bias);
  const Shape in_sp(input.shape().begin() + 2, input.shape().end());
  const Shape out_sp = spec.output_spatial(in_sp);
  const auto g = detail::make_geometry(spec, input.dim(0), in_sp, out_sp);
  Shape out_shape{input.dim(0), spec.out_channels};
  out_shape.insert(out_shape.end(), out_sp.begin(), out_sp.end());
  std::vector<T> out(numel(out_shape), T(0));
  if (bias) detail::add_bias(out, g.batch, g.co, static_cast<std::size_t>(g.out_vol()), bias->values().data());
  detail::correlate(g, input.values().data(), weight.values().data(), out.data());

  std::vector<typename Tensor<T>::NodePtr> parents{input.node(), weight.node()};
  if (bias) parents.push_back(bias->node());
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents), [g](detail::Node<T>& n) {
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    if (px->requires_grad) detail::scatter(g, n.grad.data(), pw->data.data(), px->grad_buffer().data());
    if (pw->requires_grad) detail::weight_grad(g, px->data.data(), n.grad.data(), pw->grad_buffer().data());
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      detail::bias_grad(n.grad, g.batch, g.co, static_cast<std::size_t>(g.out_vol()), n.parents[2]->grad_buffer());
    }
  });
}

/// Transposed convolution (adjoint of conv_nd w.r.t. its input) with weight
/// layout [C_in, C_out, k...]; spatial' = (s - 1) * stride + k - 2 * pad.
template <typename T>
Tensor<T> conv_transpose_nd(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                            const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt) {
  if (!spec.transposed) throw UsageError("conv_transpose_nd called with a non-transposed spec");
  detail::check_conv_args(input, spec, weight, bias);
  const Shape in_sp(input.shape().begin() + 2, input.shape().end());
  const Shape out_sp = spec.output_spatial(in_sp);
  // Correlate-side view: correlate-in = layer output, correlate-out = layer input.
  const auto g = detail::make_geometry(spec, input.dim(0), out_sp, in_sp);
  Shape out_shape{input.dim(0), spec.out_channels};
  out_shape.insert(out_shape.end(), out_sp.begin(), out_sp.end());
  std::vector<T> out(numel(out_shape), T(0));
  if (bias) detail::add_bias(out, g.batch, spec.out_channels, static_cast<std::size_t>(g.in_vol()), bias->values().data());
  detail::scatter(g, input.values().data(), weight.values().data(), out.data());

  std::vector<typename Tensor<T>::NodePtr> parents{input.node(), weight.node()};
  if (bias) parents.push_back(bias->node());
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents), [g](detail::Node<T>& n) {
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    if (px->requires_grad) detail::correlate(g, n.grad.data(), pw->data.data(), px->grad_buffer().data());
    if (pw->requires_grad) detail::weight_grad(g, n.grad.data(), px->data.data(), pw->grad_buffer().data());
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      detail::bias_grad(n.grad, g.batch, g.ci, static_cast<std::size_t>(g.in_vol()), n.parents[2]->grad_buffer());
    }
  });
}

/// Dispatches on spec.transposed.
template <typename T>
Tensor<T> convolve(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                   const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt) {
  return spec.transposed ? conv_transpose_nd(input, spec, weight, bias) : conv_nd(input, spec, weight, bias);
}

}  // namespace forge
