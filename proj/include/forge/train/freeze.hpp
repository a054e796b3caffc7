#pragma once

// Layer-freezing schedules over G resolution groups, indexed 0 (input-most)
// to G-1 (output-most).
//
//   none       every group trainable
//   static(f)  the ceil(f * G) input-most groups frozen for the whole run
//   gradual    epoch 0: only group G-1; one more group (moving toward the input)
//              every ceil(interval * T_max) epochs; all groups from
//              floor(full_unfreeze * T_max) on
//
// Normalization parameters stay trainable in every mode when
// norm_always_trainable is set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "forge/core/error.hpp"

namespace forge {

enum class FreezeMode { None, Static, Gradual };

struct FreezePolicy {
  FreezeMode mode = FreezeMode::None;
  double frozen_fraction = 0.0;
  double interval_fraction = 0.10;
  double full_unfreeze_fraction = 0.75;
  bool norm_always_trainable = true;

  void validate() const {
    if (!(frozen_fraction >= 0.0 && frozen_fraction <= 1.0)) throw ConfigError("freeze: fraction must be in [0, 1]");
    if (!(interval_fraction > 0.0 && interval_fraction <= 1.0)) {
      throw ConfigError("freeze: interval fraction must be in (0, 1]");
    }
    if (!(full_unfreeze_fraction >= 0.0 && full_unfreeze_fraction <= 1.0)) {
      throw ConfigError("freeze: full-unfreeze fraction must be in [0, 1]");
    }
  }

  /// "none", "gu" (or "gradual"), "static:<f>".
  static FreezePolicy parse(const std::string& s) {
    FreezePolicy p;
    if (s == "none") return p;
    if (s == "gu" || s == "gradual") {
      p.mode = FreezeMode::Gradual;
      return p;
    }
    if (s.rfind("static:", 0) == 0) {
      p.mode = FreezeMode::Static;
      try {
        std::size_t used = 0;
        p.frozen_fraction = std::stod(s.substr(7), &used);
        if (used != s.size() - 7) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("freeze: cannot parse fraction in '" + s + "'");
      }
      p.validate();
      return p;
    }
    throw ConfigError("unknown freeze strategy '" + s + "' (expected none, gu or static:<f>)");
  }

  std::string str() const {
    switch (mode) {
      case FreezeMode::None:
        return "none";
      case FreezeMode::Gradual:
        return "gu";
      case FreezeMode::Static:
        break;
    }
    std::string f = std::to_string(frozen_fraction);
    f.erase(f.find_last_not_of('0') + 1);
    if (!f.empty() && f.back() == '.') f.pop_back();
    return "static:" + f;
  }

  bool operator==(const FreezePolicy&) const = default;
};

class FreezeSchedule {
 public:
  FreezeSchedule(FreezePolicy policy, std::size_t groups, std::size_t t_max)
      : policy_(policy), groups_(groups), t_max_(t_max) {
    policy_.validate();
    if (groups_ < 1) throw ConfigError("freeze: at least one layer group required");
    if (t_max_ < 1) throw ConfigError("freeze: T_max must be >= 1");
    interval_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(policy_.interval_fraction * static_cast<double>(t_max_) - 1e-9)));
    full_ = static_cast<std::size_t>(std::floor(policy_.full_unfreeze_fraction * static_cast<double>(t_max_) + 1e-9));
    static_frozen_ = std::min(groups_, static_cast<std::size_t>(std::ceil(policy_.frozen_fraction * static_cast<double>(groups_) - 1e-9)));
  }

  const FreezePolicy& policy() const { return policy_; }
  std::size_t groups() const { return groups_; }
  std::size_t interval() const { return interval_; }
  std::size_t full_unfreeze_epoch() const { return full_; }

  /// Number of trainable groups (counted from the output end) at a 0-based epoch.
  std::size_t trainable_count(std::size_t epoch) const {
    switch (policy_.mode) {
      case FreezeMode::None:
        return groups_;
      case FreezeMode::Static:
        return groups_ - static_frozen_;
      case FreezeMode::Gradual:
        break;
    }
    if (epoch >= full_) return groups_;
    return std::min(groups_, 1 + epoch / interval_);
  }

  bool group_trainable(std::size_t group, std::size_t epoch) const {
    return group + trainable_count(epoch) >= groups_;
  }

  bool norm_trainable(std::size_t group, std::size_t epoch) const {
    return policy_.norm_always_trainable || group_trainable(group, epoch);
  }

  /// Epochs at which the trainable set grows (epoch 0 always listed).
  std::vector<std::size_t> unfreeze_epochs() const {
    std::vector<std::size_t> out{0};
    if (policy_.mode != FreezeMode::Gradual) return out;
    std::size_t prev = trainable_count(0);
    for (std::size_t e = 1; e < t_max_ && prev < groups_; ++e) {
      const std::size_t c = trainable_count(e);
      if (c != prev) out.push_back(e);
      prev = c;
    }
    return out;
  }

 private:
  FreezePolicy policy_;
  std::size_t groups_;
  std::size_t t_max_;
  std::size_t interval_ = 1;
  std::size_t full_ = 0;
  std::size_t static_frozen_ = 0;
};

}  // namespace forge
