#pragma once

// Iteration kernels and per-iteration cost vectors.
//
// Randomized costs come from SplitMix64 (Steele, Lea & Flood 2014) used as a
// counter-based generator: draw i of a stream seeded with s is
//   mix(s + (i + 1) * 0x9E3779B97F4A7C15)
// with the standard mix64 finalizer. For seed 1234567 the first outputs are
// 6457827717110365317, 3203168211198807973, 9817491932198370423.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "loomsched/common.hpp"

namespace loomsched {

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Mandelbrot

struct MandelbrotSpec {
  Index width = 256;
  Index height = 256;
  std::uint32_t max_iterations = 10000;
  double x_min = -2.0;
  double x_max = 1.0;
  double y_min = -1.5;
  double y_max = 1.5;

  [[nodiscard]] Index pixels() const noexcept { return width * height; }
};

/// Escape-time count of pixel `index` (row-major). Pixel columns/rows map onto
/// the window with both edges included.
inline std::uint32_t mandelbrot_kernel(Index index, const MandelbrotSpec& spec) noexcept {
  const Index row = index / spec.width;
  const Index col = index % spec.width;
  const double cx = spec.width > 1 ? spec.x_min + static_cast<double>(col) * (spec.x_max - spec.x_min) /
                                                      static_cast<double>(spec.width - 1)
                                   : spec.x_min;
  const double cy = spec.height > 1 ? spec.y_min + static_cast<double>(row) * (spec.y_max - spec.y_min) /
                                                       static_cast<double>(spec.height - 1)
                                    : spec.y_min;
  double zx = 0.0, zy = 0.0;
  std::uint32_t count = 0;
  while (count < spec.max_iterations) {
    const double zx2 = zx * zx, zy2 = zy * zy;
    if (zx2 + zy2 > 4.0) break;
    zy = 2.0 * zx * zy + cy;
    zx = zx2 - zy2 + cx;
    ++count;
  }
  return count;
}

/// Serial reference image.
inline std::vector<std::uint32_t> mandelbrot_serial(const MandelbrotSpec& spec) {
  std::vector<std::uint32_t> out(spec.pixels());
  for (Index i = 0; i < out.size(); ++i) out[i] = mandelbrot_kernel(i, spec);
  return out;
}

/// Cost vector for the simulator: escape count times `ns_per_step`, at least 1.
inline std::vector<Nanos> mandelbrot_costs(const MandelbrotSpec& spec, Nanos ns_per_step = 1) {
  std::vector<Nanos> costs(spec.pixels());
  for (Index i = 0; i < costs.size(); ++i) {
    costs[i] = std::max<Nanos>(1, mandelbrot_kernel(i, spec) * ns_per_step);
  }
  return costs;
}

// ---------------------------------------------------------------------------
// Synthetic cost generators

enum class Distribution { Constant, Uniform, Gaussian, Exponential };

inline Distribution parse_distribution(std::string_view s) {
  if (s == "constant") return Distribution::Constant;
  if (s == "uniform") return Distribution::Uniform;
  if (s == "gaussian") return Distribution::Gaussian;
  if (s == "exponential") return Distribution::Exponential;
  throw ConfigError("unknown distribution '" + std::string(s) +
                    "'; accepted: constant, uniform, gaussian, exponential");
}

constexpr std::string_view to_string(Distribution d) noexcept {
  switch (d) {
    case Distribution::Constant: return "constant";
    case Distribution::Uniform: return "uniform";
    case Distribution::Gaussian: return "gaussian";
    case Distribution::Exponential: return "exponential";
  }
  return "?";
}

struct SyntheticSpec {
  Distribution distribution = Distribution::Gaussian;
  double mean = 1000.0;   ///< nanoseconds
  double stddev = 300.0;  ///< nanoseconds
  std::uint64_t seed = 42;
};

/// Low-imbalance profile: gaussian costs with c.o.v. 0.3.
inline SyntheticSpec smooth_profile(std::uint64_t seed, double mean = 1000.0) {
  return {Distribution::Gaussian, mean, 0.3 * mean, seed};
}

/// High-imbalance profile: exponential costs with c.o.v. 1.0.
inline SyntheticSpec irregular_profile(std::uint64_t seed, double mean = 1000.0) {
  return {Distribution::Exponential, mean, mean, seed};
}

/// Deterministic cost vector of `n` entries.
///   constant:    every entry is round(mean)
///   uniform:     U[mean - sqrt(3) sd, mean + sqrt(3) sd]; requires sqrt(3) sd <= mean
///   gaussian:    Box-Muller normal(mean, sd), clamped at 0
///   exponential: (mean - sd) + Exp(sd); requires sd <= mean, sd = mean is pure Exp
inline std::vector<Nanos> generate_costs(const SyntheticSpec& spec, Index n) {
  if (n == 0) throw ConfigError("cost vector needs at least one entry");
  if (!(spec.mean > 0.0) || !std::isfinite(spec.mean)) throw ConfigError("mean must be positive");
  if (!(spec.stddev >= 0.0) || !std::isfinite(spec.stddev)) {
    throw ConfigError("stddev must be non-negative");
  }
  const double half_width = std::sqrt(3.0) * spec.stddev;
  if (spec.distribution == Distribution::Uniform && half_width > spec.mean) {
    throw ConfigError("uniform costs would go negative: sqrt(3)*stddev > mean");
  }
  if (spec.distribution == Distribution::Exponential && spec.stddev > spec.mean) {
    throw ConfigError("shifted exponential needs stddev <= mean");
  }

  auto to_ns = [](double v) { return static_cast<Nanos>(std::llround(std::max(0.0, v))); };
  std::vector<Nanos> costs(n);
  SplitMix64 rng(spec.seed);
  switch (spec.distribution) {
    case Distribution::Constant:
      std::fill(costs.begin(), costs.end(), to_ns(spec.mean));
      break;
    case Distribution::Uniform:
      for (auto& c : costs) c = to_ns(spec.mean - half_width + 2.0 * half_width * rng.next_unit());
      break;
    case Distribution::Gaussian:
      for (Index i = 0; i < n; i += 2) {
        const double u1 = 1.0 - rng.next_unit();  // (0, 1]
        const double u2 = rng.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        costs[i] = to_ns(spec.mean + spec.stddev * r * std::cos(theta));
        if (i + 1 < n) costs[i + 1] = to_ns(spec.mean + spec.stddev * r * std::sin(theta));
      }
      break;
    case Distribution::Exponential:
      for (auto& c : costs) {
        c = to_ns(spec.mean - spec.stddev - spec.stddev * std::log(1.0 - rng.next_unit()));
      }
      break;
  }
  return costs;
}

// ---------------------------------------------------------------------------
// Cost files: one non-negative integer (ns) per line, '#' lines are comments.

inline std::vector<Nanos> parse_costs(std::string_view text) {
  std::vector<Nanos> costs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.remove_suffix(1);
    }
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty() || line.front() == '#') continue;
    Nanos value = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), value);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw ConfigError("cost file line " + std::to_string(line_no) + ": expected a non-negative integer");
    }
    costs.push_back(value);
  }
  if (costs.empty()) throw ConfigError("cost file holds no entries");
  return costs;
}

inline std::vector<Nanos> read_cost_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read cost file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_costs(buf.str());
}

inline std::string format_costs(const std::vector<Nanos>& costs) {
  std::string out;
  for (auto c : costs) {
    out += std::to_string(c);
    out += '\n';
  }
  return out;
}

/// Busy-waits for `ns` of wall-clock time; the real backend's synthetic kernel.
inline void spin_kernel(Nanos ns) {
  if (ns == 0) return;
  const auto until = std::chrono::steady_clock::now() + std::chrono::nanoseconds(ns);
  while (std::chrono::steady_clock::now() < until) {
  }
}

enum class WorkloadKind { Mandelbrot, Synthetic, File };

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::Synthetic;
  MandelbrotSpec mandelbrot;
  SyntheticSpec synthetic;
  std::string path;
};

/// Cost vector of length `n` for any workload kind. Mandelbrot and file
/// workloads fix their own length and reject a different `n`.
inline std::vector<Nanos> costs_for(const WorkloadSpec& spec, Index n) {
  switch (spec.kind) {
    case WorkloadKind::Mandelbrot: {
      if (n != spec.mandelbrot.pixels()) {
        throw ConfigError("mandelbrot " + std::to_string(spec.mandelbrot.width) + "x" +
                          std::to_string(spec.mandelbrot.height) + " has " +
                          std::to_string(spec.mandelbrot.pixels()) + " iterations, not " +
                          std::to_string(n));
      }
      return mandelbrot_costs(spec.mandelbrot);
    }
    case WorkloadKind::Synthetic: return generate_costs(spec.synthetic, n);
    case WorkloadKind::File: {
      auto costs = read_cost_file(spec.path);
      if (costs.size() != n) {
        throw ConfigError("cost file '" + spec.path + "' has " + std::to_string(costs.size()) +
                          " entries, not " + std::to_string(n));
      }
      return costs;
    }
  }
  return {};
}

}  // namespace loomsched
