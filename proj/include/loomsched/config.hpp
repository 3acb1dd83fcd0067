#pragma once

#include <string>
#include <string_view>

#include "loomsched/chunking.hpp"
#include "loomsched/common.hpp"

namespace loomsched {

/// QUEUE: workers refill the node queue themselves and never wait for each
/// other. BARRIER: a lead worker fetches each chunk and the node synchronizes
/// after every chunk, the way a fork-join runtime does.
enum class Mode { Queue, Barrier };

constexpr std::string_view to_string(Mode m) noexcept {
  return m == Mode::Queue ? "queue" : "barrier";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "queue") return Mode::Queue;
  if (s == "barrier") return Mode::Barrier;
  throw ConfigError("unknown mode '" + std::string(s) + "'; accepted: queue, barrier");
}

struct ClusterConfig {
  Index node_count = 1;
  Index workers_per_node = 1;
  Technique inter = TechniqueKind::Static;
  Technique intra = TechniqueKind::Static;
  Mode mode = Mode::Queue;
  Nanos inter_claim_latency = 0;  ///< injected cost of every global claim (real backend)

  void validate() const {
    if (node_count == 0) throw ConfigError("node count must be at least one");
    if (workers_per_node == 0) throw ConfigError("workers per node must be at least one");
  }
  [[nodiscard]] Index total_workers() const noexcept { return node_count * workers_per_node; }
};

/// The iteration space of one loop.
struct LoopSpec {
  Index total_iterations = 0;
  std::string workload_id;

  void validate() const {
    if (total_iterations == 0) throw ConfigError("loop must have at least one iteration");
  }
};

}  // namespace loomsched
