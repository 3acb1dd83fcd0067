#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace loomsched {

using Index = std::uint64_t;
/// Virtual or wall-clock duration in integer nanoseconds.
using Nanos = std::uint64_t;

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A chunk was requested from a loop (or chunk) with no remaining iterations.
class LoopExhausted : public Error {
 public:
  using Error::Error;
};

/// Half-open iteration range [begin, end).
struct Range {
  Index begin = 0;
  Index end = 0;

  [[nodiscard]] constexpr Index size() const noexcept { return end - begin; }
  [[nodiscard]] constexpr bool empty() const noexcept { return end <= begin; }
  friend constexpr bool operator==(const Range&, const Range&) = default;
};

constexpr Index ceil_div(Index num, Index den) noexcept {
  return num / den + (num % den != 0 ? 1 : 0);
}

}  // namespace loomsched
