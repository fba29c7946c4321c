// Copyright 2024 The Converge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "converge/rng.hpp"
#include "converge/taxonomy.hpp"
#include "oracles/interleaving.hpp"

namespace converge::hiersched {
namespace {

resgraph::ClusterSpec nodes(int n) {
  resgraph::ClusterSpec spec;
  spec.node_count = n;
  spec.cores_per_node = 16;
  return spec;
}

std::vector<Job> random_workload(std::uint64_t seed, int jobs, int max_gang) {
  sim::RngStream rng(seed, "workload");
  std::vector<Job> out;
  double t = 0.0;
  for (int i = 0; i < jobs; ++i) {
    Job j;
    j.request = {static_cast<int>(rng.uniform_int(1, max_gang)), 16, true, false};
    j.fixed_duration = rng.uniform() * 20.0;
    j.submit = t;
    t += rng.uniform() * 2.0;
    out.push_back(j);
  }
  return out;
}

TEST(Taxonomy, ModeNamesRoundTrip) {
  for (auto mode : kAllTaxonomyModes) EXPECT_EQ(parse_taxonomy_mode(to_string(mode)), mode);
  EXPECT_FALSE(parse_taxonomy_mode("omega").has_value());
}

TEST(Taxonomy, EmptyWorkloadRejected) {
  EXPECT_THROW(run_taxonomy(TaxonomyMode::shared_state, {}, nodes(4)), std::invalid_argument);
}

TEST(Taxonomy, HierarchicalNeverConflicts) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    TaxonomyOptions opts;
    opts.seed = seed;
    const auto m = run_taxonomy(TaxonomyMode::hierarchical, random_workload(seed, 150, 8), nodes(16), opts);
    EXPECT_EQ(m.conflict_fraction, 0.0);
    EXPECT_EQ(m.conflicts, 0u);
    EXPECT_EQ(m.completed, 150u);
  }
}

TEST(Taxonomy, MetricsStayInUnitRange) {
  for (auto mode : kAllTaxonomyModes) {
    const auto m = run_taxonomy(mode, random_workload(3, 100, 6), nodes(16));
    EXPECT_GE(m.conflict_fraction, 0.0);
    EXPECT_LE(m.conflict_fraction, 1.0);
    EXPECT_GE(m.busyness, 0.0);
    EXPECT_LE(m.busyness, 1.0);
    EXPECT_FALSE(m.deadlocked);
  }
}

TEST(Taxonomy, TwoLevelHoardingDeadlocks) {
  GangWorkload w;
  w.jobs = 2;
  w.gang_size = 9;
  const auto m = run_taxonomy(TaxonomyMode::two_level, make_gang_workload(w), nodes(16));
  EXPECT_TRUE(m.deadlocked);
  EXPECT_EQ(m.completed, 0u);
}

TEST(Taxonomy, TwoLevelWithoutHoardingFinishes) {
  GangWorkload w;
  w.jobs = 2;
  w.gang_size = 9;
  TaxonomyOptions opts;
  opts.hoarding = false;
  const auto m = run_taxonomy(TaxonomyMode::two_level, make_gang_workload(w), nodes(16), opts);
  EXPECT_FALSE(m.deadlocked);
  EXPECT_EQ(m.completed, 2u);
}

TEST(Taxonomy, StaticHalvesRejectOversizedGangs) {
  GangWorkload w;
  w.jobs = 2;
  w.gang_size = 9;
  for (auto mode : {TaxonomyMode::hierarchical, TaxonomyMode::monolithic_partition}) {
    const auto m = run_taxonomy(mode, make_gang_workload(w), nodes(16));
    EXPECT_EQ(m.rejected, 2u);
  }
}

TEST(Taxonomy, InterleavingOracleMatchesClosedForm) {
  // 1 - C(n-g, g) / C(n, g)
  auto choose = [](int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  };
  for (int g = 1; g <= 4; ++g) {
    EXPECT_NEAR(oracle::first_round_conflict_probability(4, g), 1.0 - choose(4 - g, g) / choose(4, g), 1e-12);
  }
  EXPECT_DOUBLE_EQ(oracle::first_round_conflict_probability(4, 1), 0.25);
}

// Two gangs racing on a 4-node cluster: the share of seeds with a conflict
// should match the exhaustive oracle.
TEST(Taxonomy, SharedStateMatchesInterleavingOracle) {
  const int trials = 4000;
  double previous = -1.0;
  for (int g = 1; g <= 4; ++g) {
    GangWorkload w;
    w.jobs = 2;
    w.gang_size = g;
    const auto workload = make_gang_workload(w);
    int conflicted = 0;
    for (int s = 0; s < trials; ++s) {
      TaxonomyOptions opts;
      opts.seed = static_cast<std::uint64_t>(s) + 1;
      conflicted += run_taxonomy(TaxonomyMode::shared_state, workload, nodes(4), opts).conflicts > 0;
    }
    const double p = oracle::first_round_conflict_probability(4, g);
    const double observed = static_cast<double>(conflicted) / trials;
    const double sigma = std::sqrt(p * (1 - p) / trials);
    EXPECT_NEAR(observed, p, 4 * sigma + 1e-12) << "gang " << g;
    EXPECT_GE(observed, previous);
    previous = observed;
  }
}

TEST(Taxonomy, SharedStateConflictsGrowWithGangSize) {
  double previous = 0.0;
  for (int g = 1; g <= 8; ++g) {
    GangWorkload w;
    w.jobs = 200;
    w.gang_size = g;
    const auto m = run_taxonomy(TaxonomyMode::shared_state, make_gang_workload(w), nodes(16));
    EXPECT_GE(m.conflict_fraction, previous) << "gang " << g;
    previous = m.conflict_fraction;
  }
  EXPECT_GT(previous, 0.0);
}

TEST(Taxonomy, SameSeedSameMetrics) {
  const auto w = random_workload(11, 120, 5);
  for (auto mode : kAllTaxonomyModes) {
    const auto a = run_taxonomy(mode, w, nodes(16));
    const auto b = run_taxonomy(mode, w, nodes(16));
    EXPECT_EQ(a.conflicts, b.conflicts);
    EXPECT_EQ(a.makespan, b.makespan);
    EXPECT_EQ(a.busyness, b.busyness);
  }
}

}  // namespace
}  // namespace converge::hiersched
