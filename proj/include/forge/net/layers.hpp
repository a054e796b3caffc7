#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "forge/lora/lora.hpp"
#include "forge/net/plan.hpp"
#include "forge/tensor/conv.hpp"
#include "forge/tensor/ops.hpp"

namespace forge {

template <typename T>
struct ConvLayer {
  std::string name;
  ConvSpec spec;
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
  std::optional<LoraState<T>> lora;
  std::size_t group = 0;
  bool is_head = false;

  Tensor<T> forward(const Tensor<T>& x) const {
    if (lora) return adapted_forward(*lora, x, bias);
    return convolve(x, spec, weight, bias);
  }
};

template <typename T>
struct NormLayer {
  std::string name;
  NormKind kind = NormKind::Instance;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;  // used by batch norm only
  std::size_t group = 0;

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (kind == NormKind::Instance) return instance_norm(x, gamma, beta);
    return batch_norm(x, gamma, beta, stats, training);
  }
};

}  // namespace forge
