#pragma once

// Two-level work queues.
//
// The global queue hands chunks of the whole iteration space to nodes; each
// node's local queue hands sub-chunks of its current chunk to the node's
// workers. Both levels store only a (step, scheduled) pair, packed into one
// 64-bit word and advanced by a single compare-and-swap, which is the
// linearization point of every claim.

#include <atomic>
#include <chrono>
#include <deque>
#include <limits>
#include <optional>
#include <thread>

#include "loomsched/chunking.hpp"
#include "loomsched/common.hpp"

namespace loomsched {

/// Largest loop size representable in the packed queue state.
inline constexpr Index kMaxIterations = std::numeric_limits<std::uint32_t>::max();

namespace detail {

constexpr std::uint64_t pack(SchedulerState s) noexcept { return (s.step << 32) | s.scheduled; }
constexpr SchedulerState unpack(std::uint64_t word) noexcept {
  return {word >> 32, word & 0xffffffffULL};
}

inline void spin_for(std::chrono::nanoseconds d) {
  if (d.count() <= 0) return;
  const auto until = std::chrono::steady_clock::now() + d;
  while (std::chrono::steady_clock::now() < until) {
  }
}

}  // namespace detail

/// Atomic claim cursor over one chunk: hands out sub-ranges of `chunk` sized by
/// `technique` for `claimants` workers. Also used as the per-node cursor in
/// barrier mode.
class ChunkCursor {
 public:
  ChunkCursor(Chunk chunk, Technique technique, Index claimants)
      : chunk_(chunk), technique_(technique), claimants_(claimants) {
    if (claimants == 0) throw ConfigError("worker count must be at least one");
  }

  ChunkCursor(const ChunkCursor&) = delete;
  ChunkCursor& operator=(const ChunkCursor&) = delete;

  /// Claims the next sub-range, or nullopt once the chunk is used up.
  std::optional<Range> try_claim() noexcept {
    std::uint64_t word = state_.load(std::memory_order_acquire);
    for (;;) {
      const SchedulerState s = detail::unpack(word);
      if (s.scheduled >= chunk_.size) return std::nullopt;
      const Index size = compute_chunk_size(technique_, s, chunk_.size, claimants_);
      const SchedulerState next{s.step + 1, s.scheduled + size};
      if (state_.compare_exchange_weak(word, detail::pack(next), std::memory_order_acq_rel,
                                       std::memory_order_acquire)) {
        return Range{chunk_.start + s.scheduled, chunk_.start + s.scheduled + size};
      }
    }
  }

  /// Re-targets the cursor. Not safe concurrently with try_claim.
  void reset(Chunk chunk) noexcept {
    chunk_ = chunk;
    state_.store(0, std::memory_order_release);
  }

  [[nodiscard]] const Chunk& chunk() const noexcept { return chunk_; }
  [[nodiscard]] SchedulerState state() const noexcept {
    return detail::unpack(state_.load(std::memory_order_acquire));
  }
  [[nodiscard]] Index remaining() const noexcept { return chunk_.size - state().scheduled; }

 private:
  Chunk chunk_;
  Technique technique_;
  Index claimants_;
  std::atomic<std::uint64_t> state_{0};
};

/// The queue over the whole iteration space, shared by all nodes.
class GlobalQueue {
 public:
  GlobalQueue(Index total_iterations, Technique technique, Index node_count,
              std::chrono::nanoseconds claim_latency = std::chrono::nanoseconds{0})
      : total_(total_iterations),
        technique_(technique),
        nodes_(node_count),
        latency_(claim_latency) {
    if (total_iterations == 0) throw ConfigError("loop must have at least one iteration");
    if (total_iterations > kMaxIterations) throw ConfigError("loop exceeds 2^32-1 iterations");
    if (node_count == 0) throw ConfigError("node count must be at least one");
  }

  GlobalQueue(const GlobalQueue&) = delete;
  GlobalQueue& operator=(const GlobalQueue&) = delete;

  /// Atomically claims the next chunk; nullopt when the loop is exhausted.
  std::optional<Chunk> claim() {
    detail::spin_for(latency_);
    std::uint64_t word = state_.load(std::memory_order_acquire);
    for (;;) {
      const SchedulerState s = detail::unpack(word);
      if (s.scheduled >= total_) return std::nullopt;
      const Index size = compute_chunk_size(technique_, s, total_, nodes_);
      const SchedulerState next{s.step + 1, s.scheduled + size};
      if (state_.compare_exchange_weak(word, detail::pack(next), std::memory_order_acq_rel,
                                       std::memory_order_acquire)) {
        return Chunk{s.scheduled, size, s.step};
      }
    }
  }

  [[nodiscard]] SchedulerState state() const noexcept {
    return detail::unpack(state_.load(std::memory_order_acquire));
  }
  [[nodiscard]] Index total_iterations() const noexcept { return total_; }
  [[nodiscard]] Index node_count() const noexcept { return nodes_; }
  [[nodiscard]] const Technique& technique() const noexcept { return technique_; }

 private:
  Index total_;
  Technique technique_;
  Index nodes_;
  std::chrono::nanoseconds latency_;
  std::atomic<std::uint64_t> state_{0};
};

inline std::optional<Chunk> claim_global(GlobalQueue& global) { return global.claim(); }

enum class ClaimOutcome { SubChunk, RefilledThenSubChunk, Exhausted };

struct ClaimResult {
  ClaimOutcome outcome = ClaimOutcome::Exhausted;
  Range range;           ///< the claimed sub-range (empty when exhausted)
  Chunk parent;          ///< global chunk the sub-range belongs to
  bool touched_global = false;  ///< this call performed a global claim attempt

  [[nodiscard]] bool exhausted() const noexcept { return outcome == ClaimOutcome::Exhausted; }
};

/// Per-node queue. Holds at most one active global chunk; whichever worker
/// first finds it used up refills it from the global queue.
class LocalQueue {
 public:
  LocalQueue(Index owner_node, Technique technique, Index worker_count)
      : owner_(owner_node), technique_(technique), workers_(worker_count) {
    if (worker_count == 0) throw ConfigError("worker count must be at least one");
    current_.store(&slots_.emplace_back(Chunk{}, technique_, workers_),
                   std::memory_order_release);
  }

  LocalQueue(const LocalQueue&) = delete;
  LocalQueue& operator=(const LocalQueue&) = delete;

  /// Two-stage claim: sub-chunk from the current chunk, otherwise refill from
  /// `global` and sub-claim from the fresh chunk in the same action.
  ClaimResult claim(GlobalQueue& global) {
    for (;;) {
      if (exhausted_.load(std::memory_order_acquire)) return {};
      Slot* slot = current_.load(std::memory_order_acquire);
      if (auto r = slot->cursor.try_claim()) {
        return {ClaimOutcome::SubChunk, *r, slot->cursor.chunk(), false};
      }
      bool expected = false;
      if (slot->retired.compare_exchange_strong(expected, true, std::memory_order_acq_rel)) {
        return refill(global);
      }
      // Another worker is refilling; retry against the chunk it installs.
      while (current_.load(std::memory_order_acquire) == slot &&
             !exhausted_.load(std::memory_order_acquire)) {
        std::this_thread::yield();
      }
    }
  }

  [[nodiscard]] Index owner_node() const noexcept { return owner_; }
  [[nodiscard]] Index worker_count() const noexcept { return workers_; }
  [[nodiscard]] const Technique& technique() const noexcept { return technique_; }
  [[nodiscard]] bool exhausted() const noexcept { return exhausted_.load(std::memory_order_acquire); }
  /// Number of global chunks installed so far.
  [[nodiscard]] Index refills() const noexcept { return refills_.load(std::memory_order_acquire); }
  /// Current chunk, if one has been installed.
  [[nodiscard]] std::optional<Chunk> current_chunk() const noexcept {
    if (refills() == 0) return std::nullopt;
    return current_.load(std::memory_order_acquire)->cursor.chunk();
  }
  /// Iterations of the current chunk not yet sub-claimed.
  [[nodiscard]] Index remaining() const noexcept {
    return current_.load(std::memory_order_acquire)->cursor.remaining();
  }

 private:
  struct Slot {
    Slot(Chunk c, Technique t, Index w) : cursor(c, t, w) {}
    ChunkCursor cursor;
    std::atomic<bool> retired{false};
  };

  // Only the worker holding the retirement of the current slot gets here, so
  // slots_ has a single writer at a time and existing slots never move.
  ClaimResult refill(GlobalQueue& global) {
    auto chunk = global.claim();
    if (!chunk) {
      exhausted_.store(true, std::memory_order_release);
      return {ClaimOutcome::Exhausted, {}, {}, true};
    }
    Slot& slot = slots_.emplace_back(*chunk, technique_, workers_);
    const auto first = slot.cursor.try_claim();  // chunk sizes are >= 1
    refills_.fetch_add(1, std::memory_order_acq_rel);
    current_.store(&slot, std::memory_order_release);
    return {ClaimOutcome::RefilledThenSubChunk, *first, *chunk, true};
  }

  Index owner_;
  Technique technique_;
  Index workers_;
  std::deque<Slot> slots_;
  std::atomic<Slot*> current_{nullptr};
  std::atomic<bool> exhausted_{false};
  std::atomic<Index> refills_{0};
};

inline ClaimResult claim_sub(LocalQueue& local, GlobalQueue& global) { return local.claim(global); }

/// Contention model for lock-protected local queues: a claim pays the grant
/// cost plus one attempt cost per other claimant holding or polling the lock
/// at the claim's linearization instant.
struct LockModel {
  Nanos attempt_cost = 0;
  Nanos granted_cost = 0;
};

struct LockedClaim {
  ClaimResult result;
  Nanos overhead = 0;
};

constexpr Nanos lock_overhead(const LockModel& lock, Index waiters) noexcept {
  return lock.granted_cost + lock.attempt_cost * waiters;
}

/// claim_sub with the modeled lock-polling overhead. `waiters` is the number of
/// simultaneous claimants supplied by the simulator's event order.
inline LockedClaim lock_model_claim(LocalQueue& local, GlobalQueue& global, const LockModel& lock,
                                    Index waiters) {
  return {local.claim(global), lock_overhead(lock, waiters)};
}

}  // namespace loomsched
