#pragma once

// Experiment driver behind the `loomsched` executable. Kept in a header so the
// test suites can drive it in-process.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "loomsched/runtime.hpp"
#include "loomsched/simulator.hpp"
#include "loomsched/trace.hpp"
#include "loomsched/workloads.hpp"

namespace loomsched {

enum class BackendChoice { Real, Sim };

/// One row of the experiment plan.
struct PlanEntry {
  ClusterConfig config;
  BackendChoice backend = BackendChoice::Sim;
  Index repetitions = 1;
};

struct ExperimentPlan {
  std::vector<PlanEntry> entries;
  WorkloadSpec workload;
  Index total_iterations = 0;
  std::uint64_t seed = 0;
  OverheadModel overheads;
  bool cpu_pinning = false;
};

/// Outcome of one plan entry over all repetitions.
struct RunRecord {
  PlanEntry entry;
  std::vector<Nanos> times;  ///< parallel time per repetition
  Metrics metrics;           ///< of the representative (median) repetition
  ExecutionTrace trace;      ///< of the representative repetition
};

/// Lower median, so the reported value is always one of the measured ones.
inline Nanos median_of(std::vector<Nanos> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

/// Global chunk sizes in scheduling-step order, read back from a trace.
inline std::vector<Index> global_chunk_sizes(const ExecutionTrace& trace) {
  std::map<Index, Index> by_step;
  for (const auto& e : trace.events) {
    if ((e.kind == EventKind::Refill || e.kind == EventKind::ClaimGlobal) && e.range && e.chunk) {
      by_step[*e.chunk] = e.range->size();
    }
  }
  std::vector<Index> sizes;
  for (const auto& [step, size] : by_step) sizes.push_back(size);
  return sizes;
}

inline std::string format_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline constexpr std::string_view kSummaryHeader =
    "inter,intra,nodes,workers,mode,backend,n,reps,median_ns,min_ns,max_ns,cov_finish,"
    "max_over_mean,overhead_ns,barrier_wait_ns";

inline std::string summary_csv(const std::vector<RunRecord>& records) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& r : records) {
    const auto& c = r.entry.config;
    const auto [lo, hi] = std::minmax_element(r.times.begin(), r.times.end());
    out += to_string(c.inter) + ',' + to_string(c.intra) + ',' + std::to_string(c.node_count) + ',' +
           std::to_string(c.workers_per_node) + ',' + std::string(to_string(c.mode)) + ',' +
           (r.entry.backend == BackendChoice::Real ? "real" : "sim") + ',' +
           std::to_string(r.trace.header.total_iterations) + ',' + std::to_string(r.times.size()) +
           ',' + std::to_string(median_of(r.times)) + ',' + std::to_string(*lo) + ',' +
           std::to_string(*hi) + ',' + format_ratio(r.metrics.cov_finish) + ',' +
           format_ratio(r.metrics.max_over_mean) + ',' + std::to_string(r.metrics.total_overhead) +
           ',' + std::to_string(r.metrics.total_barrier_wait) + '\n';
  }
  return out;
}

inline nlohmann::ordered_json record_to_json(const RunRecord& r) {
  const auto& c = r.entry.config;
  const auto [lo, hi] = std::minmax_element(r.times.begin(), r.times.end());
  return {
      {"inter", to_string(c.inter)},
      {"intra", to_string(c.intra)},
      {"nodes", c.node_count},
      {"workers_per_node", c.workers_per_node},
      {"mode", std::string(to_string(c.mode))},
      {"backend", r.entry.backend == BackendChoice::Real ? "real" : "sim"},
      {"n", r.trace.header.total_iterations},
      {"repetitions", r.times.size()},
      {"parallel_time_ns", {{"median", median_of(r.times)}, {"min", *lo}, {"max", *hi}}},
      {"cov_finish", r.metrics.cov_finish},
      {"max_over_mean", r.metrics.max_over_mean},
      {"overhead_ns", r.metrics.total_overhead},
      {"barrier_wait_ns", r.metrics.total_barrier_wait},
      {"global_chunks", global_chunk_sizes(r.trace)},
  };
}

/// Runs every plan entry. Real runs use the Mandelbrot kernel or spin for each
/// iteration's cost; sim runs use the cost vector directly.
inline std::vector<RunRecord> execute_plan(const ExperimentPlan& plan) {
  const Index n = plan.total_iterations;
  const std::vector<Nanos> costs = costs_for(plan.workload, n);
  const std::string workload_id = plan.workload.kind == WorkloadKind::Mandelbrot ? "mandelbrot"
                                  : plan.workload.kind == WorkloadKind::File     ? "file:" + plan.workload.path
                                                                                 : "synthetic";
  const LoopSpec loop{n, workload_id};

  std::vector<RunRecord> records;
  for (const auto& entry : plan.entries) {
    RunRecord record{entry, {}, {}, {}};
    std::vector<ExecutionTrace> traces;
    for (Index rep = 0; rep < entry.repetitions; ++rep) {
      ExecutionTrace trace;
      if (entry.backend == BackendChoice::Sim) {
        trace = simulate(entry.config, loop, costs, plan.overheads, {plan.seed, workload_id}).trace;
      } else {
        RunOptions options{plan.cpu_pinning, plan.seed};
        if (plan.workload.kind == WorkloadKind::Mandelbrot) {
          std::vector<std::uint32_t> image(n);
          const auto& spec = plan.workload.mandelbrot;
          trace = run(entry.config, loop, [&](Index i) { image[i] = mandelbrot_kernel(i, spec); }, options);
        } else {
          trace = run(entry.config, loop, [&](Index i) { spin_kernel(costs[i]); }, options);
        }
      }
      record.times.push_back(compute_metrics(trace).parallel_time);
      traces.push_back(std::move(trace));
    }
    // Representative repetition: the one whose time is the reported median.
    const Nanos med = median_of(record.times);
    const auto pos = std::find(record.times.begin(), record.times.end(), med) - record.times.begin();
    record.trace = std::move(traces[static_cast<std::size_t>(pos)]);
    record.metrics = compute_metrics(record.trace);
    records.push_back(std::move(record));
  }
  return records;
}

namespace detail {

inline WorkloadSpec parse_workload(const std::string& text, double mean, double stddev,
                                   std::uint32_t max_iter, std::uint64_t seed) {
  WorkloadSpec spec;
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (head == "mandelbrot") {
    spec.kind = WorkloadKind::Mandelbrot;
    spec.mandelbrot.max_iterations = max_iter;
    if (!arg.empty()) {
      const auto x = arg.find('x');
      try {
        if (x == std::string::npos) throw std::invalid_argument("missing x");
        spec.mandelbrot.width = std::stoull(arg.substr(0, x));
        spec.mandelbrot.height = std::stoull(arg.substr(x + 1));
      } catch (const std::exception&) {
        throw ConfigError("mandelbrot size must look like WIDTHxHEIGHT, got '" + arg + "'");
      }
      if (spec.mandelbrot.width == 0 || spec.mandelbrot.height == 0) {
        throw ConfigError("mandelbrot size must be positive");
      }
    }
  } else if (head == "synthetic") {
    spec.kind = WorkloadKind::Synthetic;
    spec.synthetic = {arg.empty() ? Distribution::Gaussian : parse_distribution(arg), mean, stddev, seed};
  } else if (head == "file") {
    if (arg.empty()) throw ConfigError("file workload needs a path: file:PATH");
    spec.kind = WorkloadKind::File;
    spec.path = arg;
  } else {
    throw ConfigError("unknown workload '" + text + "'; accepted: mandelbrot[:WxH], synthetic[:dist], file:PATH");
  }
  return spec;
}

inline std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace detail

/// Parses `args`, runs the plan and writes outputs. Returns the process exit
/// status: 0 on success, 2 on invalid usage, 1 on run or output failure.
/// stdout receives only the report; diagnostics go to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical loop self-scheduling experiments"};
  std::string inter = "gss", intra = "static", workload = "synthetic", backend = "sim", mode = "queue";
  std::string out_dir, exports = "json", sizes_text;
  Index nodes = 4, workers = std::max(1u, std::thread::hardware_concurrency()), n = 0, reps = 1;
  std::uint64_t seed = 42;
  double mean = 1000.0, stddev = 300.0;
  std::uint32_t max_iter = 10000;
  Nanos global_ns = 100, local_ns = 20, attempt_ns = 0, granted_ns = 0;
  bool do_sweep = false, pin = false;

  app.add_option("--inter", inter, "inter-node technique: static, ss, gss, tss, fac2");
  app.add_option("--intra", intra, "intra-node technique: static, ss, gss, tss, fac2");
  app.add_option("--nodes", nodes, "node count (largest size in a sweep)");
  app.add_option("--workers", workers, "workers per node");
  app.add_option("--n", n, "loop iterations (derived from the workload when omitted)");
  app.add_option("--workload", workload, "mandelbrot[:WxH] | synthetic[:dist] | file:PATH");
  app.add_option("--backend", backend, "real | sim");
  app.add_option("--mode", mode, "queue | barrier | both");
  app.add_option("--seed", seed, "seed for synthetic costs");
  app.add_option("--reps", reps, "repetitions per configuration");
  app.add_option("--out", out_dir, "output directory (default out/<timestamp>)");
  app.add_option("--export", exports, "trace formats: csv,json,svg (or none)");
  app.add_flag("--sweep", do_sweep, "run the full inter x intra grid");
  app.add_option("--sizes", sizes_text, "node counts for --sweep, e.g. 2,4,8,16");
  app.add_option("--global-claim-ns", global_ns, "cost of a global claim");
  app.add_option("--local-claim-ns", local_ns, "cost of a node-queue claim (sim)");
  app.add_option("--lock-attempt-ns", attempt_ns, "lock-polling cost per concurrent claimant (sim)");
  app.add_option("--lock-granted-ns", granted_ns, "cost of an uncontended lock grant (sim)");
  app.add_option("--mean-ns", mean, "synthetic cost mean");
  app.add_option("--stddev-ns", stddev, "synthetic cost standard deviation");
  app.add_option("--max-iter", max_iter, "mandelbrot escape limit");
  app.add_flag("--pin", pin, "pin worker threads to CPUs (real backend)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  ExperimentPlan plan;
  std::vector<ExportFormat> formats;
  std::size_t mode_count = 1;
  try {
    const Technique inter_t = parse_technique(inter);
    const Technique intra_t = parse_technique(intra);
    if (backend != "real" && backend != "sim") {
      throw ConfigError("unknown backend '" + backend + "'; accepted: real, sim");
    }
    const BackendChoice backend_choice = backend == "real" ? BackendChoice::Real : BackendChoice::Sim;
    std::vector<Mode> modes;
    if (mode == "both") modes = {Mode::Queue, Mode::Barrier};
    else modes = {parse_mode(mode)};
    mode_count = modes.size();
    if (nodes == 0 || workers == 0) throw ConfigError("--nodes and --workers must be positive");
    if (reps == 0) throw ConfigError("--reps must be at least 1");
    if (exports != "none") {
      for (const auto& f : detail::split_csv(exports)) formats.push_back(parse_export_format(f));
    }

    plan.workload = detail::parse_workload(workload, mean, stddev, max_iter, seed);
    if (plan.workload.kind == WorkloadKind::Mandelbrot) {
      if (n != 0 && n != plan.workload.mandelbrot.pixels()) {
        throw ConfigError("--n " + std::to_string(n) + " does not match mandelbrot " +
                          std::to_string(plan.workload.mandelbrot.width) + "x" +
                          std::to_string(plan.workload.mandelbrot.height));
      }
      n = plan.workload.mandelbrot.pixels();
    } else if (plan.workload.kind == WorkloadKind::File) {
      const Index entries = read_cost_file(plan.workload.path).size();
      if (n != 0 && n != entries) {
        throw ConfigError("--n " + std::to_string(n) + " does not match " + std::to_string(entries) +
                          " entries in " + plan.workload.path);
      }
      n = entries;
    } else if (n == 0) {
      n = 100000;
    }
    plan.total_iterations = n;
    plan.seed = seed;
    plan.cpu_pinning = pin;
    plan.overheads.global_claim_cost = global_ns;
    plan.overheads.local_claim_cost = local_ns;
    if (attempt_ns > 0 || granted_ns > 0) plan.overheads.lock = LockModel{attempt_ns, granted_ns};

    // Thread cap for the real backend.
    if (backend_choice == BackendChoice::Real) {
      if (const char* cap_env = std::getenv("LOOMSCHED_THREADS")) {
        const Index cap = std::max<Index>(1, std::strtoull(cap_env, nullptr, 10));
        if (nodes * workers > cap) {
          const Index capped_nodes = std::min(nodes, cap);
          const Index capped_workers = std::max<Index>(1, cap / capped_nodes);
          err << "LOOMSCHED_THREADS=" << cap << ": using " << capped_nodes << " nodes x "
              << capped_workers << " workers\n";
          nodes = capped_nodes;
          workers = capped_workers;
        }
      }
    }

    std::vector<Index> sizes;
    if (do_sweep) {
      if (!sizes_text.empty()) {
        for (const auto& s : detail::split_csv(sizes_text)) {
          const Index v = std::stoull(s);
          if (v == 0) throw ConfigError("--sizes entries must be positive");
          sizes.push_back(v);
        }
      } else {
        for (Index s = 1; s <= nodes; s *= 2) sizes.push_back(s);
      }
      for (auto m : modes) {
        for (const auto& c : experiment_grid(sizes, workers, m, global_ns)) {
          plan.entries.push_back({c, backend_choice, reps});
        }
      }
    } else {
      for (auto m : modes) {
        plan.entries.push_back({{nodes, workers, inter_t, intra_t, m, global_ns}, backend_choice, reps});
      }
    }
    if (backend_choice == BackendChoice::Sim) {
      for (auto& e : plan.entries) e.config.inter_claim_latency = 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    const auto records = execute_plan(plan);
    namespace fs = std::filesystem;
    const fs::path root = out_dir.empty() ? fs::path("out") / detail::timestamp() : fs::path(out_dir);
    fs::create_directories(root);
    const std::string summary = summary_csv(records);
    write_file((root / "summary.csv").string(), summary);
    for (const auto& r : records) {
      if (formats.empty()) continue;
      const auto& c = r.entry.config;
      fs::path dir = root / (to_string(c.inter) + "+" + to_string(c.intra));
      if (do_sweep) dir /= "nodes" + std::to_string(c.node_count);
      if (mode_count > 1) dir /= std::string(to_string(c.mode));
      fs::create_directories(dir);
      for (auto f : formats) {
        write_file((dir / ("trace." + std::string(extension(f)))).string(), export_trace(r.trace, f));
      }
    }
    if (do_sweep) {
      out << summary;
    } else {
      nlohmann::ordered_json report = {{"schema_version", kSchemaVersion}, {"runs", nlohmann::ordered_json::array()}};
      for (const auto& r : records) report["runs"].push_back(record_to_json(r));
      out << report.dump(2) << '\n';
    }
    err << "outputs written to " << root.string() << '\n';
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace loomsched
