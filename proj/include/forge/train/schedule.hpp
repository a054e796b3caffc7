#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "forge/core/error.hpp"

namespace forge {

enum class LrScheduleKind { Cosine, Constant };

inline LrScheduleKind lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrScheduleKind::Cosine;
  if (s == "constant") return LrScheduleKind::Constant;
  throw ConfigError("unknown lr_schedule '" + s + "' (expected cosine or constant)");
}

inline const char* to_string(LrScheduleKind k) { return k == LrScheduleKind::Cosine ? "cosine" : "constant"; }

/// eta(t) = eta_min + (lr0 - eta_min) * (1 + cos(pi * t / T_max)) / 2, for 0 <= t <= T_max.
inline double cosine_lr(double t, double lr0, double lr_min, double t_max) {
  return lr_min + (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t / t_max)) / 2.0;
}

inline double scheduled_lr(LrScheduleKind kind, double t, double lr0, double lr_min, double t_max) {
  return kind == LrScheduleKind::Constant ? lr0 : cosine_lr(t, lr0, lr_min, t_max);
}

}  // namespace forge
