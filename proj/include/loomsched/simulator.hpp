#pragma once

// Discrete-event replica of the runtime in integer virtual nanoseconds.
//
// Workers alternate between claiming (charged the modeled overhead) and
// executing (charged the exact sum of the claimed iterations' costs). Claims
// run the very same queue objects as the threaded backend, one at a time, in
// (time, node, worker) order, which makes every run fully deterministic.

#include <compare>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <tuple>
#include <vector>

#include "loomsched/config.hpp"
#include "loomsched/queue.hpp"
#include "loomsched/trace.hpp"

namespace loomsched {

struct OverheadModel {
  Nanos global_claim_cost = 0;  ///< every access to the global queue
  Nanos local_claim_cost = 0;   ///< every access to a node queue
  std::optional<LockModel> lock;  ///< contention on node queues

  /// Cost of a node-queue claim with `waiters` other claimants in flight.
  [[nodiscard]] Nanos local_cost(Index waiters) const noexcept {
    return local_claim_cost + (lock ? lock_overhead(*lock, waiters) : 0);
  }
};

struct SimOutcome {
  Nanos makespan = 0;
  std::vector<Nanos> per_worker_busy;
  std::vector<Nanos> per_worker_overhead;
  std::vector<Nanos> per_worker_idle;  ///< makespan - busy - overhead
  ExecutionTrace trace;
};

namespace detail {

class Simulation {
 public:
  Simulation(const ClusterConfig& config, std::span<const Nanos> costs, const OverheadModel& overheads)
      : config_(config),
        overheads_(overheads),
        global_(costs.size(), config.inter, config.node_count),
        prefix_(costs.size() + 1, 0),
        claim_until_(config.total_workers(), 0),
        claim_since_(config.total_workers(), 0),
        events_(config.total_workers()) {
    for (Index i = 0; i < costs.size(); ++i) prefix_[i + 1] = prefix_[i] + costs[i];
    for (Index n = 0; n < config.node_count; ++n) {
      if (config.mode == Mode::Queue) {
        locals_.push_back(std::make_unique<LocalQueue>(n, config.intra, config.workers_per_node));
      } else {
        barriers_.push_back(std::make_unique<BarrierState>(config));
      }
    }
  }

  std::vector<std::vector<Event>> run() {
    for (Index n = 0; n < config_.node_count; ++n) {
      if (config_.mode == Mode::Queue) {
        for (Index l = 0; l < config_.workers_per_node; ++l) schedule(0, n, l, Action::Claim);
      } else {
        schedule(0, n, 0, Action::LeadClaim);
      }
    }
    while (!agenda_.empty()) {
      const Pending p = agenda_.top();
      agenda_.pop();
      switch (p.action) {
        case Action::Claim: on_queue_claim(p); break;
        case Action::LeadClaim: on_lead_claim(p); break;
        case Action::SubClaim: on_barrier_sub_claim(p); break;
      }
    }
    return std::move(events_);
  }

 private:
  enum class Action { Claim, LeadClaim, SubClaim };

  struct Pending {
    Nanos time;
    Index node;
    Index local;
    Action action;
    // Min-heap on (time, node, worker).
    friend bool operator>(const Pending& a, const Pending& b) {
      return std::tie(a.time, a.node, a.local) > std::tie(b.time, b.node, b.local);
    }
  };

  struct BarrierState {
    explicit BarrierState(const ClusterConfig& c)
        : cursor(Chunk{}, c.intra, c.workers_per_node), arrival(c.workers_per_node, 0) {}
    ChunkCursor cursor;
    std::vector<Nanos> arrival;
    Index arrived = 0;
  };

  [[nodiscard]] Index worker_id(Index node, Index local) const {
    return node * config_.workers_per_node + local;
  }

  void schedule(Nanos t, Index node, Index local, Action a) { agenda_.push({t, node, local, a}); }

  void push(Index node, Index local, EventKind kind, Nanos start, Nanos end,
            std::optional<Range> range = std::nullopt, std::optional<Index> chunk = std::nullopt) {
    const Index w = worker_id(node, local);
    events_[w].push_back({w, node, kind, start, end, range, chunk});
  }

  [[nodiscard]] Nanos cost_of(Range r) const { return prefix_[r.end] - prefix_[r.begin]; }

  // Claimants of the same node whose claim interval covers instant t. Claims
  // already linearized at t (earlier in tie order) count; later ones do not.
  [[nodiscard]] Index waiters_at(Nanos t, Index node, Index self) const {
    Index count = 0;
    for (Index l = 0; l < config_.workers_per_node; ++l) {
      const Index w = worker_id(node, l);
      if (l != self && claim_since_[w] <= t && t < claim_until_[w]) ++count;
    }
    return count;
  }

  Nanos begin_local_claim(Nanos t, Index node, Index local, Nanos extra) {
    const Nanos overhead = overheads_.local_cost(waiters_at(t, node, local)) + extra;
    const Index w = worker_id(node, local);
    claim_since_[w] = t;
    claim_until_[w] = t + overhead;
    return overhead;
  }

  void on_queue_claim(const Pending& p) {
    const Index w = worker_id(p.node, p.local);
    const Nanos waiters_overhead = overheads_.local_cost(waiters_at(p.time, p.node, p.local));
    const ClaimResult r = locals_[p.node]->claim(global_);
    const Nanos overhead = waiters_overhead + (r.touched_global ? overheads_.global_claim_cost : 0);
    claim_since_[w] = p.time;
    claim_until_[w] = p.time + overhead;
    const Nanos ready = p.time + overhead;
    if (r.exhausted()) {
      push(p.node, p.local, r.touched_global ? EventKind::ClaimGlobal : EventKind::ClaimLocal,
           p.time, ready);
      push(p.node, p.local, EventKind::Exhausted, ready, ready);
      return;
    }
    if (r.outcome == ClaimOutcome::RefilledThenSubChunk) {
      push(p.node, p.local, EventKind::Refill, p.time, ready, r.parent.range(), r.parent.step);
    } else {
      push(p.node, p.local, EventKind::ClaimLocal, p.time, ready);
    }
    const Nanos done = ready + cost_of(r.range);
    push(p.node, p.local, EventKind::Execute, ready, done, r.range, r.parent.step);
    schedule(done, p.node, p.local, Action::Claim);
  }

  void on_lead_claim(const Pending& p) {
    auto& node = *barriers_[p.node];
    const auto chunk = global_.claim();
    const Nanos ready = p.time + overheads_.global_claim_cost;
    if (chunk) {
      push(p.node, 0, EventKind::ClaimGlobal, p.time, ready, chunk->range(), chunk->step);
    } else {
      push(p.node, 0, EventKind::ClaimGlobal, p.time, ready);
    }
    for (Index l = 1; l < config_.workers_per_node; ++l) {
      if (ready > p.time) push(p.node, l, EventKind::Idle, p.time, ready);
    }
    if (!chunk) {
      for (Index l = 0; l < config_.workers_per_node; ++l) {
        push(p.node, l, EventKind::Exhausted, ready, ready);
      }
      return;
    }
    node.cursor.reset(*chunk);
    node.arrived = 0;
    for (Index l = 0; l < config_.workers_per_node; ++l) schedule(ready, p.node, l, Action::SubClaim);
  }

  void on_barrier_sub_claim(const Pending& p) {
    auto& node = *barriers_[p.node];
    const Nanos overhead = begin_local_claim(p.time, p.node, p.local, 0);
    const auto r = node.cursor.try_claim();
    const Nanos ready = p.time + overhead;
    push(p.node, p.local, EventKind::ClaimLocal, p.time, ready);
    if (r) {
      const Nanos done = ready + cost_of(*r);
      push(p.node, p.local, EventKind::Execute, ready, done, *r, node.cursor.chunk().step);
      schedule(done, p.node, p.local, Action::SubClaim);
      return;
    }
    node.arrival[p.local] = ready;
    if (++node.arrived < config_.workers_per_node) return;
    Nanos release = 0;
    for (auto a : node.arrival) release = std::max(release, a);
    for (Index l = 0; l < config_.workers_per_node; ++l) {
      push(p.node, l, EventKind::BarrierWait, node.arrival[l], release);
    }
    schedule(release, p.node, 0, Action::LeadClaim);
  }

  const ClusterConfig& config_;
  const OverheadModel& overheads_;
  GlobalQueue global_;
  std::vector<Nanos> prefix_;
  std::vector<Nanos> claim_until_;
  std::vector<Nanos> claim_since_;
  std::vector<std::unique_ptr<LocalQueue>> locals_;
  std::vector<std::unique_ptr<BarrierState>> barriers_;
  std::vector<std::vector<Event>> events_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> agenda_;
};

}  // namespace detail

struct SimOptions {
  std::uint64_t seed = 0;  ///< echoed into the trace header
  std::string workload;
};

/// Simulates `config` over the per-iteration `costs` (one entry per iteration).
inline SimOutcome simulate(const ClusterConfig& config, std::span<const Nanos> costs,
                           const OverheadModel& overheads, const SimOptions& options = {}) {
  config.validate();
  if (costs.empty()) throw ConfigError("loop must have at least one iteration");
  if (costs.size() > kMaxIterations) throw ConfigError("loop exceeds 2^32-1 iterations");

  detail::Simulation sim(config, costs, overheads);
  auto per_worker = sim.run();

  SimOutcome out;
  auto& h = out.trace.header;
  h.config = config;
  h.backend = Backend::Sim;
  h.seed = options.seed;
  h.total_iterations = costs.size();
  h.workload = options.workload;
  h.global_claim_cost = overheads.global_claim_cost;
  h.local_claim_cost = overheads.local_claim_cost;
  if (overheads.lock) {
    h.lock_attempt_cost = overheads.lock->attempt_cost;
    h.lock_granted_cost = overheads.lock->granted_cost;
  }

  const Index workers = config.total_workers();
  out.per_worker_busy.assign(workers, 0);
  out.per_worker_overhead.assign(workers, 0);
  for (auto& events : per_worker) {
    for (const auto& e : events) {
      out.makespan = std::max(out.makespan, e.end);
      if (e.kind == EventKind::Execute) out.per_worker_busy[e.worker] += e.duration();
      if (is_claim(e.kind)) out.per_worker_overhead[e.worker] += e.duration();
    }
    out.trace.events.insert(out.trace.events.end(), events.begin(), events.end());
  }
  out.per_worker_idle.resize(workers);
  for (Index w = 0; w < workers; ++w) {
    out.per_worker_idle[w] = out.makespan - out.per_worker_busy[w] - out.per_worker_overhead[w];
  }
  return out;
}

/// simulate() with the loop size checked against the cost vector.
inline SimOutcome simulate(const ClusterConfig& config, const LoopSpec& loop,
                           std::span<const Nanos> costs, const OverheadModel& overheads,
                           const SimOptions& options = {}) {
  loop.validate();
  if (costs.size() != loop.total_iterations) {
    throw ConfigError("cost vector has " + std::to_string(costs.size()) + " entries but the loop has " +
                      std::to_string(loop.total_iterations) + " iterations");
  }
  return simulate(config, costs, overheads, options);
}

struct SweepKey {
  TechniqueKind inter = TechniqueKind::Static;
  TechniqueKind intra = TechniqueKind::Static;
  Index node_count = 1;
  Mode mode = Mode::Queue;
  friend auto operator<=>(const SweepKey&, const SweepKey&) = default;
};

inline SweepKey key_of(const ClusterConfig& c) {
  return {c.inter.kind, c.intra.kind, c.node_count, c.mode};
}

/// One simulation per config over the same cost vector, keyed by
/// (inter, intra, node_count, mode).
inline std::map<SweepKey, SimOutcome> sweep(std::span<const ClusterConfig> configs,
                                            std::span<const Nanos> costs,
                                            const OverheadModel& overheads,
                                            const SimOptions& options = {}) {
  std::map<SweepKey, SimOutcome> table;
  for (const auto& c : configs) {
    auto [it, inserted] = table.try_emplace(key_of(c));
    if (!inserted) throw ConfigError("duplicate sweep entry");
    it->second = simulate(c, costs, overheads, options);
  }
  return table;
}

/// The experiment grid: every inter technique except SS against every intra
/// technique, for each node count.
inline std::vector<ClusterConfig> experiment_grid(std::span<const Index> node_counts,
                                                  Index workers_per_node, Mode mode,
                                                  Nanos inter_claim_latency = 0) {
  std::vector<ClusterConfig> grid;
  for (auto inter : kAllTechniques) {
    if (inter == TechniqueKind::SS) continue;
    for (auto intra : kAllTechniques) {
      for (auto nodes : node_counts) {
        grid.push_back({nodes, workers_per_node, inter, intra, mode, inter_claim_latency});
      }
    }
  }
  return grid;
}

}  // namespace loomsched
