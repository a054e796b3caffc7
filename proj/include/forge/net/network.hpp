#pragma once

// U-Net style encoder-decoder assembled from a NetworkPlan.
//
//   enc{l}: conv_a (stride = strides[l]) -> norm_a -> act -> conv_b -> norm_b -> act
//   dec{l}: up (transposed, kernel = stride = strides[l+1]) -> concat(skip l)
//           -> conv_a -> norm_a -> act -> conv_b -> norm_b -> act
//   head:   1x1 conv to num_classes
//
// Convolutions followed by a norm carry no bias. Layers are grouped into
// 2L - 1 resolution blocks ordered input -> output: enc0..enc{L-1}, then
// dec{L-2}..dec0 (+ head). The group index doubles as the depth index.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forge/lora/adapter.hpp"
#include "forge/net/layers.hpp"
#include "forge/net/plan.hpp"

namespace forge {

enum class LayerKind { Conv, TransposedConv, Norm, Activation };

struct LayerInfo {
  std::string name;
  LayerKind kind;
  std::size_t depth_index;
};

enum class ParamRole { Weight, Bias, NormScale, NormShift, LoraA, LoraB };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  ParamRole role;
  std::string layer;
  std::size_t group;

  bool is_norm() const { return role == ParamRole::NormScale || role == ParamRole::NormShift; }
};

template <typename T>
class Network {
 public:
  explicit Network(NetworkPlan plan) : plan_(std::move(plan)) {
    plan_.validate();
    build();
  }

  const NetworkPlan& plan() const { return plan_; }
  const std::vector<LayerInfo>& layers() const { return infos_; }
  std::vector<ConvLayer<T>>& convs() { return convs_; }
  const std::vector<ConvLayer<T>>& convs() const { return convs_; }
  std::vector<NormLayer<T>>& norms() { return norms_; }
  const std::vector<NormLayer<T>>& norms() const { return norms_; }
  std::size_t group_count() const { return plan_.group_count(); }

  bool training() const { return training_; }
  void set_training(bool flag) { training_ = flag; }

  ConvLayer<T>& conv(const std::string& name) { return convs_.at(conv_index_.at(name)); }
  const ConvLayer<T>& conv(const std::string& name) const { return convs_.at(conv_index_.at(name)); }
  NormLayer<T>& norm(const std::string& name) { return norms_.at(norm_index_.at(name)); }
  ConvLayer<T>& head() { return convs_.back(); }

  /// He-normal conv weights, zero biases, unit norm scale.
  template <typename Rng>
  void init_random(Rng& rng) {
    for (auto& c : convs_) {
      const double fan_in = static_cast<double>(c.spec.in_channels * c.spec.kernel_volume());
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      auto w = c.weight.mutable_data();
      for (auto& v : w) v = static_cast<T>(normal(rng));
      if (c.bias) {
        auto b = c.bias->mutable_data();
        std::fill(b.begin(), b.end(), T(0));
      }
    }
    for (auto& n : norms_) {
      auto g = n.gamma.mutable_data();
      std::fill(g.begin(), g.end(), T(1));
      auto b = n.beta.mutable_data();
      std::fill(b.begin(), b.end(), T(0));
    }
  }

  /// Replaces the output head with a freshly initialized one for `num_classes`.
  template <typename Rng>
  void reset_head(std::size_t num_classes, Rng& rng) {
    plan_.num_classes = num_classes;
    auto& h = convs_.back();
    h.lora.reset();
    h.spec.out_channels = num_classes;
    const double fan_in = static_cast<double>(h.spec.in_channels * h.spec.kernel_volume());
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    std::vector<T> w(numel(h.spec.weight_shape()));
    for (auto& v : w) v = static_cast<T>(normal(rng));
    h.weight = Tensor<T>(h.spec.weight_shape(), std::move(w), true);
    h.bias = Tensor<T>::zeros({num_classes}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const auto nd = static_cast<std::size_t>(plan_.dims);
    if (x.rank() != nd + 2) {
      throw DimensionError("network: input must be [N, C, " + std::to_string(nd) + " spatial axes], got " +
                           shape_str(x.shape()));
    }
    if (x.dim(1) != plan_.in_channels) {
      throw DimensionError("network: expected " + std::to_string(plan_.in_channels) + " input channels, got " +
                           std::to_string(x.dim(1)));
    }
    const auto total = plan_.total_stride();
    for (std::size_t a = 0; a < nd; ++a) {
      if (x.dim(2 + a) % total[a] != 0) {
        throw DimensionError("network: spatial axis " + std::to_string(a) + " extent " + std::to_string(x.dim(2 + a)) +
                             " is not a multiple of the cumulative stride " + std::to_string(total[a]));
      }
    }
    const std::size_t L = plan_.levels();
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < L; ++l) {
      h = block(enc_name(l), h);
      skips.push_back(h);
    }
    for (std::size_t l = L - 1; l-- > 0;) {
      const auto up = conv(dec_name(l) + ".up").forward(h);
      h = block(dec_name(l), concat_channels(up, skips[l]));
    }
    return head().forward(h);
  }

  /// Forward on arbitrary spatial extents: reflect-pads up to the stride multiple
  /// and crops the logits back to the input extents.
  Tensor<T> forward_padded(const Tensor<T>& x) {
    const auto nd = static_cast<std::size_t>(plan_.dims);
    if (x.rank() != nd + 2) {
      throw DimensionError("network: input must be [N, C, " + std::to_string(nd) + " spatial axes], got " +
                           shape_str(x.shape()));
    }
    const auto total = plan_.total_stride();
    Extents orig(nd), padded(nd);
    bool needs = false;
    for (std::size_t a = 0; a < nd; ++a) {
      orig[a] = x.dim(2 + a);
      padded[a] = (orig[a] + total[a] - 1) / total[a] * total[a];
      needs = needs || padded[a] != orig[a];
    }
    if (!needs) return forward(x);
    return crop(forward(reflect_pad(x, padded)), orig);
  }

  /// Every parameter tensor (handles share storage with the network).
  std::vector<ParamRef<T>> parameters() const {
    std::vector<ParamRef<T>> out;
    for (const auto& c : convs_) {
      out.push_back({c.name + ".weight", c.weight, ParamRole::Weight, c.name, c.group});
      if (c.bias) out.push_back({c.name + ".bias", *c.bias, ParamRole::Bias, c.name, c.group});
      if (c.lora) {
        out.push_back({c.name + ".lora_a", c.lora->a, ParamRole::LoraA, c.name, c.group});
        out.push_back({c.name + ".lora_b", c.lora->b, ParamRole::LoraB, c.name, c.group});
      }
    }
    for (const auto& n : norms_) {
      out.push_back({n.name + ".gamma", n.gamma, ParamRole::NormScale, n.name, n.group});
      out.push_back({n.name + ".beta", n.beta, ParamRole::NormShift, n.name, n.group});
    }
    return out;
  }

  bool has_lora() const {
    for (const auto& c : convs_)
      if (c.lora) return true;
    return false;
  }

  /// Adapts every targeted conv / transposed conv. Returns the adapted layer names.
  template <typename Rng>
  std::vector<std::string> inject_lora(const LoraConfig& cfg, Rng& rng) {
    std::vector<std::string> names;
    for (auto& c : convs_) {
      if (!cfg.targets(c.name, c.is_head)) continue;
      inject(c, cfg, rng);
      names.push_back(c.name);
    }
    return names;
  }

  void merge_lora() {
    for (auto& c : convs_)
      if (c.lora) merge(c);
  }

  /// Deep copy: parameters and buffers are duplicated, not shared.
  Network clone() const {
    Network out = *this;
    for (auto& c : out.convs_) {
      c.weight = c.weight.detach(c.weight.requires_grad());
      if (c.bias) c.bias = c.bias->detach(c.bias->requires_grad());
      if (c.lora) {
        c.lora->frozen_weight = c.weight;
        c.lora->a = c.lora->a.detach(c.lora->a.requires_grad());
        c.lora->b = c.lora->b.detach(c.lora->b.requires_grad());
      }
    }
    for (auto& n : out.norms_) {
      n.gamma = n.gamma.detach(n.gamma.requires_grad());
      n.beta = n.beta.detach(n.beta.requires_grad());
    }
    return out;
  }

  static std::string enc_name(std::size_t l) { return "enc" + std::to_string(l); }
  static std::string dec_name(std::size_t l) { return "dec" + std::to_string(l); }

 private:
  std::size_t enc_group(std::size_t l) const { return l; }
  std::size_t dec_group(std::size_t l) const { return 2 * plan_.levels() - 2 - l; }

  Tensor<T> block(const std::string& prefix, const Tensor<T>& x) {
    Tensor<T> h = conv(prefix + ".conv_a").forward(x);
    h = leaky_relu(norm(prefix + ".norm_a").forward(h, training_), T(0.01));
    h = conv(prefix + ".conv_b").forward(h);
    return leaky_relu(norm(prefix + ".norm_b").forward(h, training_), T(0.01));
  }

  ConvSpec spec(std::size_t cin, std::size_t cout, const Extents& k, const Extents& s, bool transposed) const {
    ConvSpec sp;
    sp.dims = plan_.dims;
    sp.in_channels = cin;
    sp.out_channels = cout;
    sp.kernel = k;
    sp.stride = s;
    sp.padding.resize(k.size());
    for (std::size_t a = 0; a < k.size(); ++a) sp.padding[a] = transposed ? 0 : k[a] / 2;
    sp.transposed = transposed;
    return sp;
  }

  void add_conv(const std::string& name, ConvSpec sp, bool with_bias, std::size_t group, bool head = false) {
    ConvLayer<T> c;
    c.name = name;
    c.weight = Tensor<T>::zeros(sp.weight_shape(), true);
    if (with_bias) c.bias = Tensor<T>::zeros({sp.out_channels}, true);
    c.spec = std::move(sp);
    c.group = group;
    c.is_head = head;
    conv_index_[name] = convs_.size();
    infos_.push_back({name, c.spec.transposed ? LayerKind::TransposedConv : LayerKind::Conv, group});
    convs_.push_back(std::move(c));
  }

  void add_norm(const std::string& name, std::size_t channels, std::size_t group) {
    NormLayer<T> n;
    n.name = name;
    n.kind = plan_.norm;
    n.gamma = Tensor<T>::full({channels}, T(1), true);
    n.beta = Tensor<T>::zeros({channels}, true);
    n.stats.mean.assign(channels, T(0));
    n.stats.var.assign(channels, T(1));
    n.group = group;
    norm_index_[name] = norms_.size();
    infos_.push_back({name, LayerKind::Norm, group});
    norms_.push_back(std::move(n));
  }

  void add_block(const std::string& prefix, std::size_t cin, std::size_t cout, const Extents& k, const Extents& s,
                 std::size_t group) {
    const Extents one(k.size(), 1);
    add_conv(prefix + ".conv_a", spec(cin, cout, k, s, false), false, group);
    add_norm(prefix + ".norm_a", cout, group);
    infos_.push_back({prefix + ".act_a", LayerKind::Activation, group});
    add_conv(prefix + ".conv_b", spec(cout, cout, k, one, false), false, group);
    add_norm(prefix + ".norm_b", cout, group);
    infos_.push_back({prefix + ".act_b", LayerKind::Activation, group});
  }

  void build() {
    const std::size_t L = plan_.levels();
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t cin = l == 0 ? plan_.in_channels : plan_.channels[l - 1];
      add_block(enc_name(l), cin, plan_.channels[l], plan_.kernels[l], plan_.strides[l], enc_group(l));
    }
    for (std::size_t l = L - 1; l-- > 0;) {
      const auto& s = plan_.strides[l + 1];
      add_conv(dec_name(l) + ".up", spec(plan_.channels[l + 1], plan_.channels[l], s, s, true), true, dec_group(l));
      add_block(dec_name(l), 2 * plan_.channels[l], plan_.channels[l], plan_.kernels[l], Extents(s.size(), 1),
                dec_group(l));
    }
    const Extents one(static_cast<std::size_t>(plan_.dims), 1);
    add_conv("head", spec(plan_.channels[0], plan_.num_classes, one, one, false), true, plan_.group_count() - 1, true);
  }

  NetworkPlan plan_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<NormLayer<T>> norms_;
  std::vector<LayerInfo> infos_;
  std::map<std::string, std::size_t> conv_index_;
  std::map<std::string, std::size_t> norm_index_;
  bool training_ = true;
};

/// Classic U-Net from user-defined hyperparameters.
template <typename T>
Network<T> build_unet(const NetworkPlan& plan) {
  return Network<T>(plan);
}

}  // namespace forge
