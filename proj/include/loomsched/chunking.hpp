#pragma once

// Chunk-size rules for the five self-scheduling techniques.
//
// Every rule is a pure function of the queue state (scheduling step, iterations
// already scheduled), the loop size and the number of claimants at that level.
// Because the state is all a claimant needs, any linearizable interleaving of
// concurrent claims reproduces the sequence produced by a single claimant.

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "loomsched/common.hpp"

namespace loomsched {

enum class TechniqueKind { Static, SS, GSS, TSS, FAC2 };

inline constexpr std::array<TechniqueKind, 5> kAllTechniques = {
    TechniqueKind::Static, TechniqueKind::SS, TechniqueKind::GSS,
    TechniqueKind::TSS, TechniqueKind::FAC2};

inline constexpr std::string_view kTechniqueNames = "static, ss, gss, tss, fac2";

constexpr std::string_view to_string(TechniqueKind kind) noexcept {
  switch (kind) {
    case TechniqueKind::Static: return "static";
    case TechniqueKind::SS: return "ss";
    case TechniqueKind::GSS: return "gss";
    case TechniqueKind::TSS: return "tss";
    case TechniqueKind::FAC2: return "fac2";
  }
  return "?";
}

/// First/last chunk overrides for trapezoid self-scheduling.
struct TssParams {
  Index first = 0;
  Index last = 1;
  friend bool operator==(const TssParams&, const TssParams&) = default;
};

struct Technique {
  TechniqueKind kind = TechniqueKind::Static;
  std::optional<TssParams> tss;

  Technique() = default;
  constexpr Technique(TechniqueKind k) : kind(k) {}  // NOLINT: implicit by intent
  Technique(TechniqueKind k, TssParams params) : kind(k), tss(params) {
    if (k != TechniqueKind::TSS) {
      throw ConfigError("first/last chunk overrides only apply to tss");
    }
    if (params.last < 1 || params.first < params.last) {
      throw ConfigError("tss overrides require first >= last >= 1");
    }
  }

  friend bool operator==(const Technique&, const Technique&) = default;
};

inline std::string to_string(const Technique& t) { return std::string(to_string(t.kind)); }

/// Case-insensitive parse of a technique name. Throws ConfigError listing the
/// accepted names on anything else.
inline Technique parse_technique(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto kind : kAllTechniques) {
    if (lower == to_string(kind)) return Technique{kind};
  }
  throw ConfigError("unknown technique '" + std::string(name) +
                    "'; accepted: " + std::string(kTechniqueNames));
}

/// The (step, scheduled) pair stored by each work queue.
struct SchedulerState {
  Index step = 0;       ///< index of the next scheduling step
  Index scheduled = 0;  ///< iterations already handed out
  friend constexpr bool operator==(const SchedulerState&, const SchedulerState&) = default;
};

/// A claimed contiguous range together with the step that produced it.
struct Chunk {
  Index start = 0;
  Index size = 0;
  Index step = 0;

  [[nodiscard]] constexpr Index end() const noexcept { return start + size; }
  [[nodiscard]] constexpr Range range() const noexcept { return {start, start + size}; }
  friend constexpr bool operator==(const Chunk&, const Chunk&) = default;
};

namespace detail {

inline Index tss_size(const Technique& t, Index step, Index n, Index p) {
  const Index first = t.tss ? t.tss->first : ceil_div(n, 2 * p);
  const Index last = t.tss ? t.tss->last : 1;
  const Index steps = ceil_div(2 * n, first + last);
  const Index delta = steps > 1 ? (first - last) / (steps - 1) : 0;
  if (delta == 0) return first;
  // Clamp before multiplying so large steps cannot overflow.
  const Index span = first - last;
  if (step >= span / delta + 1) return last;
  const Index dec = step * delta;
  return dec >= span ? last : first - dec;
}

// FAC2: every batch of p chunks hands out half of what remained when the batch
// started. Batch sizes depend only on (n, p), so the size at a given step is
// recovered by replaying the batch recurrence up to that step's batch.
inline Index fac2_size(Index step, Index n, Index p) {
  const Index batch = step / p;
  Index remaining = n;
  Index size = std::max<Index>(1, ceil_div(remaining, 2 * p));
  for (Index b = 0; b < batch && remaining > 0; ++b) {
    remaining -= std::min(remaining, size * p);
    size = std::max<Index>(1, ceil_div(remaining, 2 * p));
  }
  return size;
}

}  // namespace detail

/// Size of the next chunk for `technique` given the queue state, the number of
/// iterations `n` governed by the queue and `p` claimants. The result is in
/// [1, n - state.scheduled].
inline Index compute_chunk_size(const Technique& technique, SchedulerState state, Index n,
                                Index p) {
  if (n == 0) throw ConfigError("loop must have at least one iteration");
  if (p == 0) throw ConfigError("worker count must be at least one");
  if (state.scheduled >= n) throw LoopExhausted("no iterations left to schedule");

  const Index remaining = n - state.scheduled;
  Index size = 1;
  switch (technique.kind) {
    case TechniqueKind::Static: size = ceil_div(n, p); break;
    case TechniqueKind::SS: size = 1; break;
    case TechniqueKind::GSS: size = ceil_div(remaining, p); break;
    case TechniqueKind::TSS: size = detail::tss_size(technique, state.step, n, p); break;
    case TechniqueKind::FAC2: size = detail::fac2_size(state.step, n, p); break;
  }
  return std::clamp<Index>(size, 1, remaining);
}

/// Chunk sizes a single claimant obtains by repeatedly claiming until the loop
/// is exhausted. Reference sequence for the concurrent queues.
inline std::vector<Index> chunk_sequence_oracle(const Technique& technique, Index n, Index p) {
  if (n == 0) throw ConfigError("loop must have at least one iteration");
  if (p == 0) throw ConfigError("worker count must be at least one");
  std::vector<Index> sizes;
  SchedulerState state;
  while (state.scheduled < n) {
    const Index size = compute_chunk_size(technique, state, n, p);
    sizes.push_back(size);
    state.step += 1;
    state.scheduled += size;
  }
  return sizes;
}

}  // namespace loomsched
