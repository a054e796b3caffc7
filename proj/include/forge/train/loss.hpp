#pragma once

// Soft Dice loss over foreground classes, fused with the channel softmax:
//   p = softmax(logits), t = one_hot(labels)
//   D_k = (2 sum p_k t_k + eps) / (sum p_k + sum t_k + eps),   k = 1..K-1
//   loss = 1 - mean_k D_k
// Sums run over the batch and all spatial positions.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/volume.hpp"
#include "forge/tensor/ops.hpp"

namespace forge {

inline constexpr double kDiceEps = 1e-5;

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const LabelMap& labels, double eps = kDiceEps) {
  const Shape& s = logits.shape();
  if (s.size() < 3) throw DimensionError("dice_loss: logits must be [N, K, spatial...], got " + shape_str(s));
  const std::size_t batch = s[0], k_classes = s[1], vol = detail::spatial_size(s);
  if (k_classes < 2) throw DimensionError("dice_loss: need at least 2 classes (background + foreground)");
  if (labels.size() != batch * vol) {
    throw DimensionError("dice_loss: label count " + std::to_string(labels.size()) + " does not match logits " +
                         shape_str(s));
  }
  for (auto l : labels)
    if (l >= k_classes) {
      throw DataError("dice_loss: label id " + std::to_string(l) + " >= number of classes " + std::to_string(k_classes));
    }

  const auto& z = logits.values();
  auto p = std::make_shared<std::vector<T>>(z.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t v = 0; v < vol; ++v) {
      T mx = z[(b * k_classes) * vol + v];
      for (std::size_t k = 1; k < k_classes; ++k) mx = std::max(mx, z[(b * k_classes + k) * vol + v]);
      T den = T(0);
      for (std::size_t k = 0; k < k_classes; ++k) {
        const T e = std::exp(z[(b * k_classes + k) * vol + v] - mx);
        (*p)[(b * k_classes + k) * vol + v] = e;
        den += e;
      }
      for (std::size_t k = 0; k < k_classes; ++k) (*p)[(b * k_classes + k) * vol + v] /= den;
    }

  std::vector<double> inter(k_classes, 0.0), denom(k_classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 1; k < k_classes; ++k)
      for (std::size_t v = 0; v < vol; ++v) {
        const double pk = (*p)[(b * k_classes + k) * vol + v];
        const bool t = labels[b * vol + v] == k;
        denom[k] += pk + (t ? 1.0 : 0.0);
        if (t) inter[k] += pk;
      }
  const double fg = static_cast<double>(k_classes - 1);
  double mean_dice = 0.0;
  std::vector<double> dice(k_classes, 0.0);
  for (std::size_t k = 1; k < k_classes; ++k) {
    dice[k] = (2.0 * inter[k] + eps) / (denom[k] + eps);
    mean_dice += dice[k] / fg;
  }

  return make_result<T>({1}, {static_cast<T>(1.0 - mean_dice)}, {logits.node()},
                        [=, labels = labels](detail::Node<T>& n) {
                          auto& g = n.parents[0]->grad_buffer();
                          const double up = n.grad[0];
                          std::vector<double> gp(k_classes);
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t v = 0; v < vol; ++v) {
                              // dL/dp_k, then through the softmax Jacobian.
                              double dot = 0.0;
                              gp[0] = 0.0;
                              for (std::size_t k = 1; k < k_classes; ++k) {
                                const double t = labels[b * vol + v] == k ? 1.0 : 0.0;
                                gp[k] = -(2.0 * t - dice[k]) / ((denom[k] + eps) * fg);
                              }
                              for (std::size_t k = 0; k < k_classes; ++k) dot += (*p)[(b * k_classes + k) * vol + v] * gp[k];
                              for (std::size_t k = 0; k < k_classes; ++k) {
                                const std::size_t i = (b * k_classes + k) * vol + v;
                                g[i] += static_cast<T>(up * (*p)[i] * (gp[k] - dot));
                              }
                            }
                        });
}

}  // namespace forge
