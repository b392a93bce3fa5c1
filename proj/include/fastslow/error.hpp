#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fastslow {

// Thrown when an input violates a documented precondition or invariant.
class Rejected : public std::invalid_argument {
 public:
  explicit Rejected(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown when an iteration produces a non-finite state.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Rejected(message);
}

}  // namespace detail
}  // namespace fastslow
