#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "loomsched/queue.hpp"
#include "model_check.hpp"

namespace loomsched {
namespace {

TEST(GlobalQueue, GssFirstClaim) {
  GlobalQueue g(100, TechniqueKind::GSS, 4);
  const auto c = g.claim();
  ASSERT_TRUE(c);
  EXPECT_EQ(c->range(), (Range{0, 25}));
  EXPECT_EQ(c->step, 0u);
  EXPECT_EQ(g.state(), (SchedulerState{1, 25}));
}

TEST(GlobalQueue, ExhaustedOnceEverythingScheduled) {
  for (auto kind : kAllTechniques) {
    GlobalQueue g(10, kind, 3);
    Index total = 0;
    while (auto c = g.claim()) total += c->size;
    EXPECT_EQ(total, 10u);
    EXPECT_FALSE(g.claim());
    EXPECT_FALSE(g.claim());
    EXPECT_EQ(g.state().scheduled, 10u);
  }
}

TEST(GlobalQueue, RejectsBadConstruction) {
  EXPECT_THROW(GlobalQueue(0, TechniqueKind::SS, 1), ConfigError);
  EXPECT_THROW(GlobalQueue(10, TechniqueKind::SS, 0), ConfigError);
  EXPECT_THROW(GlobalQueue(kMaxIterations + 1, TechniqueKind::SS, 1), ConfigError);
}

TEST(GlobalQueue, SelfSchedulingTwoClaimantsAllInterleavings) {
  // Three claims split between two claimants: every assignment of claims to
  // claimants yields exactly [0,1), [1,2), [2,3).
  for (unsigned mask = 0; mask < 8; ++mask) {
    GlobalQueue g(3, TechniqueKind::SS, 2);
    std::map<Index, std::vector<Range>> by_claimant;
    for (unsigned k = 0; k < 3; ++k) {
      const auto c = g.claim();
      ASSERT_TRUE(c);
      by_claimant[(mask >> k) & 1u].push_back(c->range());
    }
    std::vector<Range> all;
    for (auto& [who, ranges] : by_claimant) all.insert(all.end(), ranges.begin(), ranges.end());
    std::sort(all.begin(), all.end(), [](Range a, Range b) { return a.begin < b.begin; });
    EXPECT_EQ(all, (std::vector<Range>{{0, 1}, {1, 2}, {2, 3}}));
    EXPECT_FALSE(g.claim());
  }
}

TEST(GlobalQueue, ConcurrentClaimsMatchOracle) {
  for (auto kind : kAllTechniques) {
    GlobalQueue g(20000, kind, 8);
    std::mutex mu;
    std::vector<Chunk> chunks;
    {
      std::vector<std::jthread> threads;
      for (int t = 0; t < 6; ++t) {
        threads.emplace_back([&] {
          std::vector<Chunk> mine;
          while (auto c = g.claim()) mine.push_back(*c);
          std::lock_guard lock(mu);
          chunks.insert(chunks.end(), mine.begin(), mine.end());
        });
      }
    }
    std::sort(chunks.begin(), chunks.end(), [](const Chunk& a, const Chunk& b) { return a.step < b.step; });
    std::vector<Index> sizes;
    Index next = 0;
    for (const auto& c : chunks) {
      EXPECT_EQ(c.start, next);
      next = c.end();
      sizes.push_back(c.size);
    }
    EXPECT_EQ(sizes, chunk_sequence_oracle(kind, 20000, 8)) << to_string(kind);
  }
}

TEST(LocalQueue, FirstClaimRefills) {
  GlobalQueue g(100, TechniqueKind::GSS, 4);
  LocalQueue local(0, TechniqueKind::Static, 4);
  EXPECT_FALSE(local.current_chunk());
  const auto r = claim_sub(local, g);
  EXPECT_EQ(r.outcome, ClaimOutcome::RefilledThenSubChunk);
  EXPECT_TRUE(r.touched_global);
  EXPECT_EQ(r.parent.range(), (Range{0, 25}));
  EXPECT_EQ(r.range.begin, 0u);
  ASSERT_TRUE(local.current_chunk());
  EXPECT_EQ(local.current_chunk()->start, 0u);
  EXPECT_EQ(local.refills(), 1u);
}

TEST(LocalQueue, StaticSubChunksOfAChunk) {
  GlobalQueue g(100, TechniqueKind::GSS, 4);
  LocalQueue local(0, TechniqueKind::Static, 4);
  std::vector<Range> got;
  for (int k = 0; k < 4; ++k) got.push_back(claim_sub(local, g).range);
  EXPECT_EQ(got, (std::vector<Range>{{0, 7}, {7, 14}, {14, 21}, {21, 25}}));
  // Fifth claim moves on to the next global chunk.
  const auto next = claim_sub(local, g);
  EXPECT_EQ(next.outcome, ClaimOutcome::RefilledThenSubChunk);
  EXPECT_EQ(next.parent.range(), (Range{25, 44}));
}

TEST(LocalQueue, ExhaustionIsLatched) {
  GlobalQueue g(2, TechniqueKind::SS, 1);
  LocalQueue local(0, TechniqueKind::SS, 2);
  EXPECT_FALSE(claim_sub(local, g).exhausted());
  EXPECT_FALSE(claim_sub(local, g).exhausted());
  const auto r = claim_sub(local, g);
  EXPECT_TRUE(r.exhausted());
  EXPECT_TRUE(r.touched_global);
  // Later claims report exhaustion without consulting any global queue.
  GlobalQueue other(50, TechniqueKind::SS, 1);
  const auto again = claim_sub(local, other);
  EXPECT_TRUE(again.exhausted());
  EXPECT_FALSE(again.touched_global);
  EXPECT_EQ(other.state().scheduled, 0u);
}

TEST(LockModel, OverheadFormula) {
  GlobalQueue g(10, TechniqueKind::Static, 1);
  LocalQueue local(0, TechniqueKind::SS, 4);
  const LockModel lock{500, 1000};
  EXPECT_EQ(lock_model_claim(local, g, lock, 0).overhead, 1000u);
  const auto three = lock_model_claim(local, g, lock, 3);
  EXPECT_EQ(three.overhead, 2500u);
  EXPECT_EQ(three.result.outcome, ClaimOutcome::SubChunk);
  EXPECT_EQ(three.result.range, (Range{1, 2}));
}

TEST(Linearizability, ExhaustiveMicroInstances) {
  std::size_t histories = 0;
  for (Index n = 1; n <= 6; ++n) {
    for (Index nodes = 1; nodes <= 2; ++nodes) {
      for (Index workers = 1; workers <= 2; ++workers) {
        for (auto inter : kAllTechniques) {
          for (auto intra : kAllTechniques) {
            const auto stats = testing::check_all_interleavings({n, nodes, workers, inter, intra});
            ASSERT_TRUE(stats.first_failure.empty())
                << stats.first_failure << " n=" << n << " " << nodes << "x" << workers << " "
                << to_string(inter) << "+" << to_string(intra);
            histories += stats.histories;
          }
        }
      }
    }
  }
  EXPECT_GT(histories, 0u);
}

// Threads hammer one node pair; each global chunk must be installed exactly
// once and the sub-ranges must partition the loop.
TEST(LocalQueue, ConcurrentRefillRace) {
  for (auto intra : kAllTechniques) {
    constexpr Index kN = 30000, kNodes = 2, kWorkers = 4;
    GlobalQueue g(kN, TechniqueKind::GSS, kNodes);
    std::vector<std::unique_ptr<LocalQueue>> locals;
    for (Index n = 0; n < kNodes; ++n) locals.push_back(std::make_unique<LocalQueue>(n, intra, kWorkers));
    std::mutex mu;
    std::vector<ClaimResult> results;
    {
      std::vector<std::jthread> threads;
      for (Index w = 0; w < kNodes * kWorkers; ++w) {
        threads.emplace_back([&, w] {
          std::vector<ClaimResult> mine;
          for (;;) {
            auto r = claim_sub(*locals[w / kWorkers], g);
            if (r.exhausted()) break;
            mine.push_back(r);
          }
          std::lock_guard lock(mu);
          results.insert(results.end(), mine.begin(), mine.end());
        });
      }
    }
    std::map<Index, int> refills;
    std::vector<Range> ranges;
    for (const auto& r : results) {
      if (r.outcome == ClaimOutcome::RefilledThenSubChunk) ++refills[r.parent.step];
      ranges.push_back(r.range);
    }
    for (const auto& [step, count] : refills) EXPECT_EQ(count, 1) << "chunk " << step;
    EXPECT_EQ(refills.size(), chunk_sequence_oracle(TechniqueKind::GSS, kN, kNodes).size());
    std::sort(ranges.begin(), ranges.end(), [](Range a, Range b) { return a.begin < b.begin; });
    Index next = 0;
    for (auto r : ranges) {
      ASSERT_EQ(r.begin, next);
      next = r.end;
    }
    EXPECT_EQ(next, kN);
    EXPECT_EQ(locals[0]->refills() + locals[1]->refills(), refills.size());
  }
}

}  // namespace
}  // namespace loomsched
