#pragma once

#include <algorithm>
#include <string>

#include "forge/core/log.hpp"
#include "forge/net/layers.hpp"

namespace forge {

/// Attaches a fresh adapter to `layer` and freezes its weight.
template <typename T, typename Rng>
void inject(ConvLayer<T>& layer, const LoraConfig& cfg, Rng& rng) {
  if (layer.lora) throw UsageError("lora: layer '" + layer.name + "' is already adapted");
  cfg.validate();
  if (cfg.rank >= std::min(layer.spec.in_channels, layer.spec.out_channels)) {
    warn("lora: rank " + std::to_string(cfg.rank) + " on layer '" + layer.name +
         "' is not below min(C_in, C_out); no compression benefit");
  }
  layer.lora = make_lora_state(layer.spec, layer.weight, cfg, rng);
}

/// Folds the adapter into a plain trainable weight W + dW and detaches it.
template <typename T>
void merge(ConvLayer<T>& layer) {
  if (!layer.lora) throw UsageError("lora: layer '" + layer.name + "' has no adapter to merge");
  NoGradGuard no_grad;
  const auto delta = compose_delta(*layer.lora);
  const auto merged = add(layer.lora->frozen_weight, delta);
  layer.weight = merged.detach(true);
  layer.lora.reset();
}

/// The plain layer a merge would produce, leaving `layer` untouched.
template <typename T>
ConvLayer<T> merged_copy(const ConvLayer<T>& layer) {
  ConvLayer<T> out = layer;
  out.weight = layer.weight.detach(true);
  if (layer.bias) out.bias = layer.bias->detach(true);
  if (layer.lora) {
    out.lora = layer.lora;
    out.lora->frozen_weight = out.weight;
    merge(out);
  }
  return out;
}

}  // namespace forge
