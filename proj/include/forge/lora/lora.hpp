#pragma once

// Low-rank adaptation of N-D convolution weights by channel-wise factorization.
// For every kernel offset k the update is a rank-r product
//     dW[:, :, k] = (alpha / r) * A[k] . B[k],   A[k]: C_out x r,  B[k]: r x C_in
// permuted into [C_out, C_in, k...] for standard and [C_in, C_out, k...] for
// transposed layers. The frozen weight and the update are applied as two
// separate convolutions, y = conv(x, W) + conv(x, dW).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/tensor/conv.hpp"
#include "forge/tensor/ops.hpp"

namespace forge {

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 8.0;
  bool adapt_head = true;              // output head included unless switched off
  std::vector<std::string> exclude;    // layer names left untouched

  double scale() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("lora: alpha must be finite and > 0");
  }

  bool targets(const std::string& layer, bool is_head) const {
    if (is_head && !adapt_head) return false;
    return std::find(exclude.begin(), exclude.end(), layer) == exclude.end();
  }
};

/// Adapter attached to one convolution. `frozen_weight` aliases the layer weight.
template <typename T>
struct LoraState {
  ConvSpec spec;
  std::size_t rank = 1;
  double alpha = 1.0;
  Tensor<T> a;              // [k..., C_out, r]
  Tensor<T> b;              // [k..., r, C_in]
  Tensor<T> frozen_weight;  // native layout, requires_grad = false
};

/// Trainable scalars created by an adapter: (prod k) * r * (C_out + C_in).
inline std::size_t lora_param_count(const LoraConfig& cfg, const ConvSpec& spec) {
  return spec.kernel_volume() * cfg.rank * (spec.out_channels + spec.in_channels);
}

inline Shape lora_a_shape(const ConvSpec& spec, std::size_t rank) {
  Shape s(spec.kernel.begin(), spec.kernel.end());
  s.push_back(spec.out_channels);
  s.push_back(rank);
  return s;
}

inline Shape lora_b_shape(const ConvSpec& spec, std::size_t rank) {
  Shape s(spec.kernel.begin(), spec.kernel.end());
  s.push_back(rank);
  s.push_back(spec.in_channels);
  return s;
}

/// Differentiable composition of the weight update in the layer's native layout.
template <typename T>
Tensor<T> lora_delta(const Tensor<T>& a, const Tensor<T>& b, const ConvSpec& spec, std::size_t rank, double alpha) {
  const std::size_t kv = spec.kernel_volume(), co = spec.out_channels, ci = spec.in_channels;
  if (a.shape() != lora_a_shape(spec, rank)) {
    throw DimensionError("lora: A has shape " + shape_str(a.shape()) + ", expected " +
                         shape_str(lora_a_shape(spec, rank)));
  }
  if (b.shape() != lora_b_shape(spec, rank)) {
    throw DimensionError("lora: B has shape " + shape_str(b.shape()) + ", expected " +
                         shape_str(lora_b_shape(spec, rank)));
  }
  const T s = static_cast<T>(alpha / static_cast<double>(rank));
  const bool transposed = spec.transposed;
  // Native-layout flat index of (o, i, k).
  auto at = [=](std::size_t o, std::size_t i, std::size_t k) {
    return transposed ? (i * co + o) * kv + k : (o * ci + i) * kv + k;
  };
  std::vector<T> out(kv * co * ci, T(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t k = 0; k < kv; ++k)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ci; ++i) {
        T acc = T(0);
        for (std::size_t r = 0; r < rank; ++r) acc += av[(k * co + o) * rank + r] * bv[(k * rank + r) * ci + i];
        out[at(o, i, k)] = s * acc;
      }
  return make_result<T>(spec.weight_shape(), std::move(out), {a.node(), b.node()},
                        [=](detail::Node<T>& n) {
                          auto& pa = n.parents[0];
                          auto& pb = n.parents[1];
                          for (std::size_t k = 0; k < kv; ++k) {
                            if (pa->requires_grad) {
                              auto& ga = pa->grad_buffer();
                              for (std::size_t o = 0; o < co; ++o)
                                for (std::size_t r = 0; r < rank; ++r) {
                                  T acc = T(0);
                                  for (std::size_t i = 0; i < ci; ++i)
                                    acc += n.grad[at(o, i, k)] * pb->data[(k * rank + r) * ci + i];
                                  ga[(k * co + o) * rank + r] += s * acc;
                                }
                            }
                            if (pb->requires_grad) {
                              auto& gb = pb->grad_buffer();
                              for (std::size_t r = 0; r < rank; ++r)
                                for (std::size_t i = 0; i < ci; ++i) {
                                  T acc = T(0);
                                  for (std::size_t o = 0; o < co; ++o)
                                    acc += pa->data[(k * co + o) * rank + r] * n.grad[at(o, i, k)];
                                  gb[(k * rank + r) * ci + i] += s * acc;
                                }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> compose_delta(const LoraState<T>& state) {
  return lora_delta(state.a, state.b, state.spec, state.rank, state.alpha);
}

/// conv(x, W_frozen, bias) + conv(x, dW).
template <typename T>
Tensor<T> adapted_forward(const LoraState<T>& state, const Tensor<T>& x,
                          const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt) {
  const auto base = convolve(x, state.spec, state.frozen_weight, bias);
  const auto update = convolve(x, state.spec, compose_delta(state));
  return add(base, update);
}

/// Fresh adapter: A = 0, B ~ N(0, 1 / sqrt(C_in * prod k)). Marks `weight` frozen.
template <typename T, typename Rng>
LoraState<T> make_lora_state(const ConvSpec& spec, Tensor<T> weight, const LoraConfig& cfg, Rng& rng) {
  cfg.validate();
  LoraState<T> st;
  st.spec = spec;
  st.rank = cfg.rank;
  st.alpha = cfg.alpha;
  st.a = Tensor<T>::zeros(lora_a_shape(spec, cfg.rank), true);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.in_channels * spec.kernel_volume()));
  std::normal_distribution<double> normal(0.0, stddev);
  const Shape bs = lora_b_shape(spec, cfg.rank);
  std::vector<T> bvals(numel(bs));
  for (auto& v : bvals) v = static_cast<T>(normal(rng));
  st.b = Tensor<T>(bs, std::move(bvals), true);
  weight.set_requires_grad(false);
  st.frozen_weight = std::move(weight);
  return st;
}

}  // namespace forge
