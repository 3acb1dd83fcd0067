#pragma once

// Execution traces shared by the threaded runtime and the simulator, the
// load-balance metrics derived from them, and CSV / JSON / SVG exporters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "loomsched/config.hpp"

namespace loomsched {

class TraceError : public Error {
 public:
  using Error::Error;
};

enum class EventKind { ClaimGlobal, ClaimLocal, Refill, Execute, BarrierWait, Idle, Exhausted };

inline constexpr std::array<EventKind, 7> kAllEventKinds = {
    EventKind::ClaimGlobal, EventKind::ClaimLocal, EventKind::Refill,   EventKind::Execute,
    EventKind::BarrierWait, EventKind::Idle,       EventKind::Exhausted};

constexpr std::string_view to_string(EventKind k) noexcept {
  switch (k) {
    case EventKind::ClaimGlobal: return "CLAIM_GLOBAL";
    case EventKind::ClaimLocal: return "CLAIM_LOCAL";
    case EventKind::Refill: return "REFILL";
    case EventKind::Execute: return "EXECUTE";
    case EventKind::BarrierWait: return "BARRIER_WAIT";
    case EventKind::Idle: return "IDLE";
    case EventKind::Exhausted: return "EXHAUSTED";
  }
  return "?";
}

inline EventKind parse_event_kind(std::string_view s) {
  for (auto k : kAllEventKinds) {
    if (to_string(k) == s) return k;
  }
  throw TraceError("unknown event kind '" + std::string(s) + "'");
}

/// Time spent acquiring work, as opposed to executing or waiting.
constexpr bool is_claim(EventKind k) noexcept {
  return k == EventKind::ClaimGlobal || k == EventKind::ClaimLocal || k == EventKind::Refill;
}

enum class Backend { Real, Sim };

constexpr std::string_view to_string(Backend b) noexcept { return b == Backend::Real ? "REAL" : "SIM"; }

struct Event {
  Index worker = 0;  ///< global worker id: node * workers_per_node + local id
  Index node = 0;
  EventKind kind = EventKind::Idle;
  Nanos start = 0;
  Nanos end = 0;
  std::optional<Range> range;  ///< EXECUTE, REFILL and CLAIM_GLOBAL
  std::optional<Index> chunk;  ///< global scheduling step of the owning chunk

  [[nodiscard]] Nanos duration() const noexcept { return end - start; }
  friend bool operator==(const Event&, const Event&) = default;
};

struct TraceHeader {
  ClusterConfig config;
  Backend backend = Backend::Sim;
  std::string clock_unit = "ns";
  std::uint64_t seed = 0;
  Index total_iterations = 0;
  std::string workload;
  // Simulator overhead echo; zero for the real backend.
  Nanos global_claim_cost = 0;
  Nanos local_claim_cost = 0;
  Nanos lock_attempt_cost = 0;
  Nanos lock_granted_cost = 0;
  bool oversubscribed = false;
  bool cpu_pinning = false;
};

struct ExecutionTrace {
  TraceHeader header;
  std::vector<Event> events;  ///< grouped by worker, time-ordered within a worker
};

/// Throws TraceError naming the worker and instant of the first event that
/// starts before the previous event of the same worker ends.
inline void validate_timeline(const ExecutionTrace& trace) {
  const Index workers = trace.header.config.total_workers();
  std::vector<std::optional<Nanos>> last_end(workers);
  for (const auto& e : trace.events) {
    if (e.worker >= workers) {
      throw TraceError("worker " + std::to_string(e.worker) + " outside topology");
    }
    if (e.end < e.start) {
      throw TraceError("worker " + std::to_string(e.worker) + ": event at " +
                       std::to_string(e.start) + " ends before it starts");
    }
    auto& prev = last_end[e.worker];
    if (prev && e.start < *prev) {
      throw TraceError("worker " + std::to_string(e.worker) + ": event at " +
                       std::to_string(e.start) + " overlaps previous event ending at " +
                       std::to_string(*prev));
    }
    prev = e.end;
  }
}

/// Throws TraceError unless EXECUTE ranges partition [0, n) exactly.
inline void validate_partition(const ExecutionTrace& trace, Index n) {
  std::vector<std::pair<Range, Index>> ranges;
  for (const auto& e : trace.events) {
    if (e.kind != EventKind::Execute) continue;
    if (!e.range || e.range->empty()) {
      throw TraceError("worker " + std::to_string(e.worker) + ": EXECUTE at " +
                       std::to_string(e.start) + " without a range");
    }
    ranges.emplace_back(*e.range, e.worker);
  }
  std::sort(ranges.begin(), ranges.end(),
            [](const auto& a, const auto& b) { return a.first.begin < b.first.begin; });
  Index next = 0;
  for (const auto& [r, worker] : ranges) {
    if (r.begin > next) {
      throw TraceError("iterations [" + std::to_string(next) + ", " + std::to_string(r.begin) +
                       ") never executed");
    }
    if (r.begin < next) {
      throw TraceError("iteration " + std::to_string(r.begin) + " executed twice (worker " +
                       std::to_string(worker) + ")");
    }
    next = r.end;
  }
  if (next != n) {
    throw TraceError("iterations [" + std::to_string(next) + ", " + std::to_string(n) +
                     ") never executed");
  }
}

struct Metrics {
  Nanos parallel_time = 0;
  std::vector<Nanos> finish;  ///< per worker: end of its last event
  std::vector<Nanos> busy;    ///< per worker: sum of EXECUTE durations
  double cov_finish = 0.0;    ///< coefficient of variation of finish times
  double max_over_mean = 1.0;
  Nanos total_overhead = 0;      ///< claim events
  Nanos total_barrier_wait = 0;  ///< BARRIER_WAIT events
  Nanos total_idle = 0;          ///< IDLE events
};

/// Load-balance statistics of finish times (population c.o.v., max/mean).
inline std::pair<double, double> balance_of(const std::vector<Nanos>& finish) {
  if (finish.empty()) return {0.0, 1.0};
  double sum = 0.0;
  Nanos max = 0;
  for (auto f : finish) {
    sum += static_cast<double>(f);
    max = std::max(max, f);
  }
  const double mean = sum / static_cast<double>(finish.size());
  if (mean <= 0.0) return {0.0, 1.0};
  double var = 0.0;
  for (auto f : finish) {
    const double d = static_cast<double>(f) - mean;
    var += d * d;
  }
  var /= static_cast<double>(finish.size());
  return {std::sqrt(var) / mean, static_cast<double>(max) / mean};
}

/// Validates the trace (timeline, and coverage when the header names a loop
/// size) and derives the metrics.
inline Metrics compute_metrics(const ExecutionTrace& trace) {
  validate_timeline(trace);
  if (trace.header.total_iterations > 0) validate_partition(trace, trace.header.total_iterations);

  const Index workers = trace.header.config.total_workers();
  Metrics m;
  m.finish.assign(workers, 0);
  m.busy.assign(workers, 0);
  if (trace.events.empty()) return m;

  Nanos first = trace.events.front().start;
  Nanos last = 0;
  for (const auto& e : trace.events) {
    first = std::min(first, e.start);
    last = std::max(last, e.end);
    m.finish[e.worker] = std::max(m.finish[e.worker], e.end);
    if (e.kind == EventKind::Execute) m.busy[e.worker] += e.duration();
    if (is_claim(e.kind)) m.total_overhead += e.duration();
    if (e.kind == EventKind::BarrierWait) m.total_barrier_wait += e.duration();
    if (e.kind == EventKind::Idle) m.total_idle += e.duration();
  }
  m.parallel_time = last - first;
  std::tie(m.cov_finish, m.max_over_mean) = balance_of(m.finish);
  return m;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kCsvHeader = "worker,node,kind,start_ns,end_ns,range_start,range_end";

inline std::string to_csv(const ExecutionTrace& trace) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& e : trace.events) {
    out += std::to_string(e.worker) + ',' + std::to_string(e.node) + ',' +
           std::string(to_string(e.kind)) + ',' + std::to_string(e.start) + ',' +
           std::to_string(e.end) + ',';
    if (e.range) out += std::to_string(e.range->begin) + ',' + std::to_string(e.range->end);
    else out += ',';
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json header_to_json(const TraceHeader& h) {
  nlohmann::ordered_json config = {
      {"node_count", h.config.node_count},
      {"workers_per_node", h.config.workers_per_node},
      {"inter_technique", to_string(h.config.inter)},
      {"intra_technique", to_string(h.config.intra)},
      {"mode", std::string(to_string(h.config.mode))},
      {"inter_claim_latency", h.config.inter_claim_latency},
  };
  return {
      {"config", config},
      {"backend", std::string(to_string(h.backend))},
      {"clock_unit", h.clock_unit},
      {"seed", h.seed},
      {"total_iterations", h.total_iterations},
      {"workload", h.workload},
      {"overheads",
       {{"global_claim_cost", h.global_claim_cost},
        {"local_claim_cost", h.local_claim_cost},
        {"lock_attempt_cost", h.lock_attempt_cost},
        {"lock_granted_cost", h.lock_granted_cost}}},
      {"oversubscribed", h.oversubscribed},
      {"cpu_pinning", h.cpu_pinning},
  };
}

inline std::string to_json(const ExecutionTrace& trace) {
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  for (const auto& e : trace.events) {
    nlohmann::ordered_json ev = {
        {"worker", e.worker},
        {"node", e.node},
        {"kind", std::string(to_string(e.kind))},
        {"start", e.start},
        {"end", e.end},
    };
    ev["range"] = e.range ? nlohmann::ordered_json::array({e.range->begin, e.range->end})
                          : nlohmann::ordered_json(nullptr);
    ev["chunk"] = e.chunk ? nlohmann::ordered_json(*e.chunk) : nlohmann::ordered_json(nullptr);
    events.push_back(std::move(ev));
  }
  nlohmann::ordered_json doc = {
      {"schema_version", kSchemaVersion},
      {"header", header_to_json(trace.header)},
      {"events", std::move(events)},
  };
  return doc.dump() + '\n';
}

inline ExecutionTrace trace_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw TraceError(std::string("malformed trace JSON: ") + ex.what());
  }
  if (doc.value("schema_version", 0) != kSchemaVersion) {
    throw TraceError("unsupported trace schema_version");
  }
  try {
    ExecutionTrace trace;
    const auto& h = doc.at("header");
    const auto& c = h.at("config");
    auto& cfg = trace.header.config;
    cfg.node_count = c.at("node_count").get<Index>();
    cfg.workers_per_node = c.at("workers_per_node").get<Index>();
    cfg.inter = parse_technique(c.at("inter_technique").get<std::string>());
    cfg.intra = parse_technique(c.at("intra_technique").get<std::string>());
    cfg.mode = parse_mode(c.at("mode").get<std::string>());
    cfg.inter_claim_latency = c.at("inter_claim_latency").get<Nanos>();
    trace.header.backend = h.at("backend").get<std::string>() == "REAL" ? Backend::Real : Backend::Sim;
    trace.header.clock_unit = h.at("clock_unit").get<std::string>();
    trace.header.seed = h.at("seed").get<std::uint64_t>();
    trace.header.total_iterations = h.at("total_iterations").get<Index>();
    trace.header.workload = h.at("workload").get<std::string>();
    const auto& o = h.at("overheads");
    trace.header.global_claim_cost = o.at("global_claim_cost").get<Nanos>();
    trace.header.local_claim_cost = o.at("local_claim_cost").get<Nanos>();
    trace.header.lock_attempt_cost = o.at("lock_attempt_cost").get<Nanos>();
    trace.header.lock_granted_cost = o.at("lock_granted_cost").get<Nanos>();
    trace.header.oversubscribed = h.at("oversubscribed").get<bool>();
    trace.header.cpu_pinning = h.at("cpu_pinning").get<bool>();
    for (const auto& ev : doc.at("events")) {
      Event e;
      e.worker = ev.at("worker").get<Index>();
      e.node = ev.at("node").get<Index>();
      e.kind = parse_event_kind(ev.at("kind").get<std::string>());
      e.start = ev.at("start").get<Nanos>();
      e.end = ev.at("end").get<Nanos>();
      if (!ev.at("range").is_null()) e.range = Range{ev["range"][0].get<Index>(), ev["range"][1].get<Index>()};
      if (!ev.at("chunk").is_null()) e.chunk = ev["chunk"].get<Index>();
      trace.events.push_back(e);
    }
    return trace;
  } catch (const nlohmann::json::exception& ex) {
    throw TraceError(std::string("malformed trace JSON: ") + ex.what());
  }
}

namespace detail {

inline std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string chunk_color(std::optional<Index> chunk) {
  if (!chunk) return "#888888";
  return "hsl(" + std::to_string((*chunk * 137) % 360) + ",65%,55%)";
}

}  // namespace detail

/// Gantt chart: one lane per worker, EXECUTE bars colored by global chunk,
/// BARRIER_WAIT and IDLE hatched, claims dark. Each bar carries data-kind and
/// data-ns attributes with its event kind and duration.
inline std::string to_svg(const ExecutionTrace& trace) {
  constexpr double kLeft = 90.0, kWidth = 1200.0, kLane = 18.0, kTop = 24.0;
  const Index workers = trace.header.config.total_workers();
  Nanos t0 = 0, t1 = 1;
  if (!trace.events.empty()) {
    t0 = trace.events.front().start;
    for (const auto& e : trace.events) {
      t0 = std::min(t0, e.start);
      t1 = std::max(t1, e.end);
    }
  }
  const double span = static_cast<double>(std::max<Nanos>(1, t1 - t0));
  const double height = kTop + kLane * static_cast<double>(workers) + 20.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt_px(kLeft + kWidth + 10)
      << "\" height=\"" << detail::fmt_px(height) << "\">\n"
      << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
         "patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>"
         "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#c0392b\" stroke-width=\"2\"/>"
         "</pattern></defs>\n"
      << "<text x=\"4\" y=\"16\" font-family=\"monospace\" font-size=\"12\">"
      << to_string(trace.header.config.inter) << '+' << to_string(trace.header.config.intra) << ' '
      << to_string(trace.header.config.mode) << ' ' << to_string(trace.header.backend)
      << " span=" << (t1 - t0) << "ns</text>\n";
  for (Index w = 0; w < workers; ++w) {
    const double y = kTop + kLane * static_cast<double>(w);
    svg << "<text x=\"4\" y=\"" << detail::fmt_px(y + 13) << "\" font-family=\"monospace\" "
        << "font-size=\"11\">w" << w << " n" << w / trace.header.config.workers_per_node
        << "</text>\n";
  }
  for (const auto& e : trace.events) {
    if (e.duration() == 0) continue;
    const double x = kLeft + kWidth * static_cast<double>(e.start - t0) / span;
    const double w = kWidth * static_cast<double>(e.duration()) / span;
    const double y = kTop + kLane * static_cast<double>(e.worker) + 2;
    std::string fill;
    switch (e.kind) {
      case EventKind::Execute: fill = detail::chunk_color(e.chunk); break;
      case EventKind::BarrierWait:
      case EventKind::Idle: fill = "url(#hatch)"; break;
      default: fill = "#333333"; break;
    }
    svg << "<rect x=\"" << detail::fmt_px(x) << "\" y=\"" << detail::fmt_px(y) << "\" width=\""
        << detail::fmt_px(w) << "\" height=\"" << detail::fmt_px(kLane - 4) << "\" fill=\"" << fill
        << "\" data-kind=\"" << to_string(e.kind) << "\" data-ns=\"" << e.duration() << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

enum class ExportFormat { Csv, Json, Svg };

inline ExportFormat parse_export_format(std::string_view s) {
  if (s == "csv") return ExportFormat::Csv;
  if (s == "json") return ExportFormat::Json;
  if (s == "svg") return ExportFormat::Svg;
  throw ConfigError("unknown export format '" + std::string(s) + "'; accepted: csv, json, svg");
}

constexpr std::string_view extension(ExportFormat f) noexcept {
  switch (f) {
    case ExportFormat::Csv: return "csv";
    case ExportFormat::Json: return "json";
    case ExportFormat::Svg: return "svg";
  }
  return "";
}

inline std::string export_trace(const ExecutionTrace& trace, ExportFormat format) {
  switch (format) {
    case ExportFormat::Csv: return to_csv(trace);
    case ExportFormat::Json: return to_json(trace);
    case ExportFormat::Svg: return to_svg(trace);
  }
  return {};
}

/// Writes `bytes` to `path`; throws Error when the sink is unwritable.
inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace loomsched
