#include <gtest/gtest.h>

#include <regex>
#include <string>

#include "loomsched/trace.hpp"

namespace loomsched {
namespace {

ExecutionTrace make_trace(Index nodes, Index workers, Index n) {
  ExecutionTrace t;
  t.header.config.node_count = nodes;
  t.header.config.workers_per_node = workers;
  t.header.config.inter = TechniqueKind::GSS;
  t.header.config.intra = TechniqueKind::SS;
  t.header.total_iterations = n;
  t.header.workload = "synthetic";
  return t;
}

Event exec(Index worker, Index node, Nanos s, Nanos e, Range r, Index chunk = 0) {
  return {worker, node, EventKind::Execute, s, e, r, chunk};
}

Event plain(Index worker, Index node, EventKind k, Nanos s, Nanos e) { return {worker, node, k, s, e, {}, {}}; }

// Two workers on one node; worker 1 waits at the barrier for worker 0.
ExecutionTrace barrier_example() {
  auto t = make_trace(1, 2, 10);
  t.header.config.mode = Mode::Barrier;
  t.events = {
      {0, 0, EventKind::ClaimGlobal, 0, 5, Range{0, 10}, 0},
      exec(0, 0, 5, 100, {0, 6}),
      plain(1, 0, EventKind::Idle, 0, 5),
      exec(1, 0, 5, 60, {6, 10}),
      plain(1, 0, EventKind::BarrierWait, 60, 100),
  };
  return t;
}

TEST(Metrics, PerfectBalance) {
  auto t = make_trace(1, 4, 4);
  for (Index w = 0; w < 4; ++w) t.events.push_back(exec(w, 0, 0, 100, {w, w + 1}));
  const auto m = compute_metrics(t);
  EXPECT_DOUBLE_EQ(m.cov_finish, 0.0);
  EXPECT_DOUBLE_EQ(m.max_over_mean, 1.0);
  EXPECT_EQ(m.parallel_time, 100u);
}

TEST(Metrics, ImbalancedPair) {
  auto t = make_trace(1, 2, 2);
  t.events = {exec(0, 0, 0, 100, {0, 1}), exec(1, 0, 0, 300, {1, 2})};
  const auto m = compute_metrics(t);
  EXPECT_DOUBLE_EQ(m.max_over_mean, 1.5);
  EXPECT_DOUBLE_EQ(m.cov_finish, 0.5);  // sd 100 over mean 200
}

TEST(Metrics, CategoryTotals) {
  const auto m = compute_metrics(barrier_example());
  EXPECT_EQ(m.total_overhead, 5u);
  EXPECT_EQ(m.total_idle, 5u);
  EXPECT_EQ(m.total_barrier_wait, 40u);
  EXPECT_EQ(m.busy, (std::vector<Nanos>{95, 55}));
  EXPECT_EQ(m.finish, (std::vector<Nanos>{100, 100}));
}

TEST(Validation, OverlapNamesWorkerAndInstant) {
  auto t = make_trace(1, 2, 2);
  t.events = {exec(1, 0, 0, 50, {0, 1}), exec(1, 0, 40, 60, {1, 2})};
  try {
    compute_metrics(t);
    FAIL() << "expected TraceError";
  } catch (const TraceError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("worker 1"), std::string::npos) << what;
    EXPECT_NE(what.find("40"), std::string::npos) << what;
  }
}

TEST(Validation, GapAndDuplicateCoverage) {
  auto gap = make_trace(1, 1, 4);
  gap.events = {exec(0, 0, 0, 1, {0, 2}), exec(0, 0, 1, 2, {3, 4})};
  EXPECT_THROW(compute_metrics(gap), TraceError);
  auto dup = make_trace(1, 1, 3);
  dup.events = {exec(0, 0, 0, 1, {0, 2}), exec(0, 0, 1, 2, {1, 3})};
  EXPECT_THROW(compute_metrics(dup), TraceError);
  auto shortfall = make_trace(1, 1, 3);
  shortfall.events = {exec(0, 0, 0, 1, {0, 2})};
  EXPECT_THROW(compute_metrics(shortfall), TraceError);
}

TEST(Validation, RejectsBackwardEventsAndUnknownWorkers) {
  auto t = make_trace(1, 1, 0);
  t.events = {plain(0, 0, EventKind::Idle, 10, 5)};
  EXPECT_THROW(validate_timeline(t), TraceError);
  t.events = {plain(3, 0, EventKind::Idle, 0, 5)};
  EXPECT_THROW(validate_timeline(t), TraceError);
}

TEST(Csv, SingleIterationHasOneExecuteRow) {
  auto t = make_trace(1, 1, 1);
  t.events = {{0, 0, EventKind::Refill, 0, 3, Range{0, 1}, 0}, exec(0, 0, 3, 10, {0, 1}),
              plain(0, 0, EventKind::Exhausted, 10, 10)};
  const auto csv = to_csv(t);
  EXPECT_EQ(csv,
            "worker,node,kind,start_ns,end_ns,range_start,range_end\n"
            "0,0,REFILL,0,3,0,1\n"
            "0,0,EXECUTE,3,10,0,1\n"
            "0,0,EXHAUSTED,10,10,,\n");
}

TEST(Export, RepeatedExportsAreByteIdentical) {
  const auto t = barrier_example();
  for (auto f : {ExportFormat::Csv, ExportFormat::Json, ExportFormat::Svg}) {
    EXPECT_EQ(export_trace(t, f), export_trace(t, f)) << extension(f);
  }
}

TEST(Json, RoundTripIsLossless) {
  auto t = barrier_example();
  t.header.seed = 77;
  t.header.global_claim_cost = 100;
  t.header.lock_granted_cost = 9;
  t.header.config.inter = Technique{TechniqueKind::TSS};
  const auto text = to_json(t);
  const auto back = trace_from_json(text);
  EXPECT_EQ(back.events, t.events);
  EXPECT_EQ(back.header.seed, 77u);
  EXPECT_EQ(back.header.config.mode, Mode::Barrier);
  EXPECT_EQ(to_json(back), text);
}

TEST(Json, HeaderFields) {
  const auto doc = nlohmann::json::parse(to_json(barrier_example()));
  EXPECT_EQ(doc["schema_version"], 1);
  EXPECT_EQ(doc["header"]["clock_unit"], "ns");
  EXPECT_EQ(doc["header"]["config"]["mode"], "barrier");
  EXPECT_EQ(doc["header"]["config"]["inter_technique"], "gss");
  EXPECT_EQ(doc["events"].size(), 5u);
}

TEST(Json, RejectsMalformedInput) {
  EXPECT_THROW(trace_from_json("{"), TraceError);
  EXPECT_THROW(trace_from_json(R"({"schema_version": 2})"), TraceError);
  EXPECT_THROW(trace_from_json(R"({"schema_version": 1, "header": {}})"), TraceError);
}

TEST(Svg, HatchedBarsSumToWaitTotals) {
  const auto t = barrier_example();
  const auto svg = to_svg(t);
  const std::regex bar(R"re(fill="url\(#hatch\)" data-kind="([A-Z_]+)" data-ns="(\d+)")re");
  Nanos hatched = 0;
  std::size_t bars = 0;
  for (std::sregex_iterator it(svg.begin(), svg.end(), bar), end; it != end; ++it) {
    hatched += std::stoull((*it)[2].str());
    ++bars;
  }
  const auto m = compute_metrics(t);
  EXPECT_EQ(bars, 2u);
  EXPECT_EQ(hatched, m.total_barrier_wait + m.total_idle);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Export, ParsesFormats) {
  EXPECT_EQ(parse_export_format("svg"), ExportFormat::Svg);
  EXPECT_THROW(parse_export_format("xml"), ConfigError);
  EXPECT_THROW(write_file("/nonexistent-dir/x.csv", "a"), Error);
}

TEST(EventKind, NamesRoundTrip) {
  for (auto k : kAllEventKinds) EXPECT_EQ(parse_event_kind(to_string(k)), k);
  EXPECT_THROW(parse_event_kind("SLEEP"), TraceError);
}

}  // namespace
}  // namespace loomsched
