#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace forge {

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
inline WarningHandler& warning_handler() {
  static WarningHandler handler = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return handler;
}
}  // namespace detail

inline void warn(const std::string& msg) {
  if (auto& h = detail::warning_handler()) h(msg);
}

/// Installs `handler` for the lifetime of the guard; restores the previous one on exit.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler handler)
      : previous_(std::exchange(detail::warning_handler(), std::move(handler))) {}
  ~ScopedWarningHandler() { detail::warning_handler() = std::move(previous_); }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace forge
