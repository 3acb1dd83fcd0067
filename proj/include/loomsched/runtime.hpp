#pragma once

// Threaded execution backend. Nodes are emulated as groups of threads in one
// process; the global queue's claim latency stands in for the interconnect.

#include <atomic>
#include <barrier>
#include <chrono>
#include <concepts>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#endif

#include "loomsched/config.hpp"
#include "loomsched/queue.hpp"
#include "loomsched/trace.hpp"

namespace loomsched {

/// A kernel threw while executing `iteration`; the run was aborted.
class KernelError : public Error {
 public:
  KernelError(Index iteration, const std::string& what)
      : Error("kernel failed at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  [[nodiscard]] Index iteration() const noexcept { return iteration_; }

 private:
  Index iteration_;
};

struct RunOptions {
  bool cpu_pinning = false;
  std::uint64_t seed = 0;  ///< echoed into the trace header
};

namespace detail {

class RunClock {
 public:
  RunClock() : origin_(std::chrono::steady_clock::now()) {}
  [[nodiscard]] Nanos now() const {
    return static_cast<Nanos>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                  std::chrono::steady_clock::now() - origin_)
                                  .count());
  }

 private:
  std::chrono::steady_clock::time_point origin_;
};

// Shared between workers of one run: the first failing iteration wins.
struct AbortState {
  std::atomic<bool> aborted{false};
  std::atomic<Index> iteration{0};
  std::string message;
  std::atomic_flag message_set = ATOMIC_FLAG_INIT;

  void fail(Index i, std::string what) {
    if (!message_set.test_and_set()) {
      iteration.store(i);
      message = std::move(what);
    }
    aborted.store(true, std::memory_order_release);
  }
  [[nodiscard]] bool is_aborted() const { return aborted.load(std::memory_order_acquire); }
};

struct WorkerContext {
  Index worker = 0;
  Index node = 0;
  Index local = 0;
  std::vector<Event> events;

  void push(EventKind kind, Nanos start, Nanos end, std::optional<Range> range = std::nullopt,
            std::optional<Index> chunk = std::nullopt) {
    events.push_back({worker, node, kind, start, end, range, chunk});
  }
};

template <class Kernel>
bool execute_range(Kernel& kernel, Range r, AbortState& abort) {
  for (Index i = r.begin; i < r.end; ++i) {
    try {
      kernel(i);
    } catch (const std::exception& ex) {
      abort.fail(i, ex.what());
      return false;
    } catch (...) {
      abort.fail(i, "unknown exception");
      return false;
    }
  }
  return true;
}

inline void pin_to_cpu(Index worker) {
#if defined(__linux__)
  const unsigned cpus = std::max(1u, std::thread::hardware_concurrency());
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(static_cast<int>(worker % cpus), &set);
  pthread_setaffinity_np(pthread_self(), sizeof(set), &set);
#else
  (void)worker;
#endif
}

template <class Kernel>
void queue_worker(WorkerContext& ctx, LocalQueue& local, GlobalQueue& global, Kernel& kernel,
                  AbortState& abort, const RunClock& clock) {
  while (!abort.is_aborted()) {
    const Nanos t0 = clock.now();
    const ClaimResult r = local.claim(global);
    const Nanos t1 = clock.now();
    if (r.exhausted()) {
      ctx.push(r.touched_global ? EventKind::ClaimGlobal : EventKind::ClaimLocal, t0, t1);
      ctx.push(EventKind::Exhausted, t1, t1);
      return;
    }
    if (r.outcome == ClaimOutcome::RefilledThenSubChunk) {
      ctx.push(EventKind::Refill, t0, t1, r.parent.range(), r.parent.step);
    } else {
      ctx.push(EventKind::ClaimLocal, t0, t1);
    }
    const Nanos t2 = clock.now();
    const bool ok = execute_range(kernel, r.range, abort);
    if (ok) ctx.push(EventKind::Execute, t2, clock.now(), r.range, r.parent.step);
  }
}

struct BarrierNode {
  BarrierNode(Technique intra, Index workers)
      : cursor(Chunk{}, intra, workers), sync(static_cast<std::ptrdiff_t>(workers)) {}
  ChunkCursor cursor;
  std::optional<Chunk> current;
  std::barrier<> sync;
};

template <class Kernel>
void barrier_worker(WorkerContext& ctx, BarrierNode& node, GlobalQueue& global, Kernel& kernel,
                    AbortState& abort, const RunClock& clock) {
  for (;;) {
    if (ctx.local == 0) {
      const Nanos t0 = clock.now();
      node.current = abort.is_aborted() ? std::nullopt : global.claim();
      const Nanos t1 = clock.now();
      if (node.current) {
        node.cursor.reset(*node.current);
        ctx.push(EventKind::ClaimGlobal, t0, t1, node.current->range(), node.current->step);
      } else {
        ctx.push(EventKind::ClaimGlobal, t0, t1);
      }
    }
    // Everyone waits for the lead's claim.
    const Nanos w0 = clock.now();
    node.sync.arrive_and_wait();
    const Nanos w1 = clock.now();
    if (ctx.local != 0) ctx.push(EventKind::Idle, w0, w1);
    if (!node.current) {
      ctx.push(EventKind::Exhausted, w1, w1);
      return;
    }
    const Index chunk_id = node.current->step;
    while (!abort.is_aborted()) {
      const Nanos t0 = clock.now();
      const auto r = node.cursor.try_claim();
      const Nanos t1 = clock.now();
      ctx.push(EventKind::ClaimLocal, t0, t1);
      if (!r) break;
      if (execute_range(kernel, *r, abort)) ctx.push(EventKind::Execute, t1, clock.now(), *r, chunk_id);
    }
    // Implicit end-of-chunk barrier: the lead may only fetch again once all
    // workers of the node are done.
    const Nanos b0 = clock.now();
    node.sync.arrive_and_wait();
    ctx.push(EventKind::BarrierWait, b0, clock.now());
  }
}

inline TraceHeader real_header(const ClusterConfig& config, const LoopSpec& loop,
                               const RunOptions& options) {
  TraceHeader h;
  h.config = config;
  h.backend = Backend::Real;
  h.seed = options.seed;
  h.total_iterations = loop.total_iterations;
  h.workload = loop.workload_id;
  h.oversubscribed = config.total_workers() > std::max(1u, std::thread::hardware_concurrency());
  h.cpu_pinning = options.cpu_pinning;
  return h;
}

template <class Body>
ExecutionTrace spawn_workers(const ClusterConfig& config, const LoopSpec& loop,
                             const RunOptions& options, Body body) {
  std::vector<WorkerContext> contexts(config.total_workers());
  {
    std::vector<std::jthread> threads;
    threads.reserve(contexts.size());
    for (Index w = 0; w < contexts.size(); ++w) {
      auto& ctx = contexts[w];
      ctx.worker = w;
      ctx.node = w / config.workers_per_node;
      ctx.local = w % config.workers_per_node;
      threads.emplace_back([&ctx, &body, pin = options.cpu_pinning] {
        if (pin) pin_to_cpu(ctx.worker);
        body(ctx);
      });
    }
  }
  ExecutionTrace trace;
  trace.header = real_header(config, loop, options);
  for (auto& ctx : contexts) {
    trace.events.insert(trace.events.end(), ctx.events.begin(), ctx.events.end());
  }
  return trace;
}

}  // namespace detail

/// Runs the loop in barrier mode: worker 0 of each node is the only global
/// claimant, and every node synchronizes after each chunk.
template <class Kernel>
  requires std::invocable<Kernel&, Index>
ExecutionTrace run_barrier_mode(const ClusterConfig& config, const LoopSpec& loop, Kernel&& kernel,
                                const RunOptions& options = {}) {
  config.validate();
  loop.validate();
  if (config.mode != Mode::Barrier) throw ConfigError("run_barrier_mode requires mode=barrier");

  GlobalQueue global(loop.total_iterations, config.inter, config.node_count,
                     std::chrono::nanoseconds(config.inter_claim_latency));
  std::vector<std::unique_ptr<detail::BarrierNode>> nodes;
  for (Index n = 0; n < config.node_count; ++n) {
    nodes.push_back(std::make_unique<detail::BarrierNode>(config.intra, config.workers_per_node));
  }
  detail::AbortState abort;
  detail::RunClock clock;
  auto trace = detail::spawn_workers(config, loop, options, [&](detail::WorkerContext& ctx) {
    detail::barrier_worker(ctx, *nodes[ctx.node], global, kernel, abort, clock);
  });
  if (abort.is_aborted()) throw KernelError(abort.iteration.load(), abort.message);
  return trace;
}

/// Executes every iteration of `loop` exactly once on node_count x
/// workers_per_node threads and returns the wall-clock trace (ns since start).
/// `kernel(i)` runs iteration i; an exception aborts the run with KernelError.
template <class Kernel>
  requires std::invocable<Kernel&, Index>
ExecutionTrace run(const ClusterConfig& config, const LoopSpec& loop, Kernel&& kernel,
                   const RunOptions& options = {}) {
  config.validate();
  loop.validate();
  if (config.mode == Mode::Barrier) return run_barrier_mode(config, loop, kernel, options);

  GlobalQueue global(loop.total_iterations, config.inter, config.node_count,
                     std::chrono::nanoseconds(config.inter_claim_latency));
  std::vector<std::unique_ptr<LocalQueue>> locals;
  for (Index n = 0; n < config.node_count; ++n) {
    locals.push_back(std::make_unique<LocalQueue>(n, config.intra, config.workers_per_node));
  }
  detail::AbortState abort;
  detail::RunClock clock;
  auto trace = detail::spawn_workers(config, loop, options, [&](detail::WorkerContext& ctx) {
    detail::queue_worker(ctx, *locals[ctx.node], global, kernel, abort, clock);
  });
  if (abort.is_aborted()) throw KernelError(abort.iteration.load(), abort.message);
  return trace;
}

}  // namespace loomsched
