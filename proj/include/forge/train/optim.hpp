#pragma once

// AdamW with decoupled weight decay:
//   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * w)
// Moment state is created lazily per parameter name, with its own step count,
// so groups that become trainable late start from fresh bias correction.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/tensor/tensor.hpp"

namespace forge {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }

  /// Updates every tensor in `params`; a missing gradient counts as zero.
  void step(const std::vector<NamedTensor<T>>& params, double lr) {
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T g : p.tensor.grad())
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    for (const auto& p : params) {
      auto& st = state_[p.name];
      Tensor<T> handle = p.tensor;  // shares storage
      auto w = handle.mutable_data();
      if (st.m.empty()) {
        st.m.assign(w.size(), 0.0);
        st.v.assign(w.size(), 0.0);
      }
      if (st.m.size() != w.size()) throw DimensionError("AdamW: parameter '" + p.name + "' changed size");
      ++st.t;
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      const auto grad = p.tensor.grad();
      const bool has = !grad.empty();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = has ? static_cast<double>(grad[i]) : 0.0;
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
        const double wi = static_cast<double>(w[i]);
        w[i] = static_cast<T>(wi - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wi));
      }
    }
  }

  void forget(const std::string& name) { state_.erase(name); }
  std::size_t tracked() const { return state_.size(); }

 private:
  struct State {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace forge
