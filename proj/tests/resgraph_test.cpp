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

#include "converge/resgraph.hpp"
#include "oracles/allocation_audit.hpp"

namespace converge::resgraph {
namespace {

ClusterSpec cluster(int nodes, int cores) {
  ClusterSpec spec;
  spec.node_count = nodes;
  spec.cores_per_node = cores;
  return spec;
}

ResourceRequest whole_nodes(int n, int cores = 16) { return {n, cores, true, false}; }

TEST(ResourceGraph, DefaultClusterOwnsEverything) {
  ResourceGraph g(cluster(33, 16));
  EXPECT_EQ(g.nodes().size(), 33u);
  EXPECT_EQ(g.total_cores(), 528);
  EXPECT_EQ(g.free_cores(g.root()), 528);
  EXPECT_EQ(g.node(0).hostname, "node0");
  EXPECT_EQ(g.find_hostname("node32"), NodeId{32});
}

TEST(ResourceGraph, SingleCoreCluster) {
  ResourceGraph g(cluster(1, 1));
  EXPECT_EQ(g.total_cores(), 1);
}

TEST(ResourceGraph, ZeroNodesRejected) {
  EXPECT_THROW(ResourceGraph(cluster(0, 16)), ResourceError);
  EXPECT_THROW(ResourceGraph(cluster(4, 0)), ResourceError);
}

TEST(ResourceGraph, CarvingThirtyTwoLeavesOne) {
  ResourceGraph g(cluster(33, 16));
  g.carve(g.root(), whole_nodes(32));
  EXPECT_EQ(g.fully_free_nodes(g.root()), 1u);
}

TEST(ResourceGraph, ExhaustionFailsSecondCarve) {
  ResourceGraph g(cluster(33, 16));
  g.carve(g.root(), whole_nodes(33));
  EXPECT_FALSE(g.try_carve(g.root(), whole_nodes(1)).has_value());
  try {
    g.carve(g.root(), whole_nodes(1));
    FAIL();
  } catch (const ResourceError& e) {
    EXPECT_EQ(e.code(), ResourceErrc::insufficient_capacity);
  }
}

TEST(ResourceGraph, UnknownParentRejected) {
  ResourceGraph g(cluster(4, 4));
  try {
    g.carve(AllocationId{999}, whole_nodes(1, 4));
    FAIL();
  } catch (const ResourceError& e) {
    EXPECT_EQ(e.code(), ResourceErrc::unknown_allocation);
  }
}

TEST(ResourceGraph, ReleaseRestoresCapacityExactly) {
  ResourceGraph g(cluster(8, 16));
  const auto before = g.free_cores(g.root());
  const auto a = g.carve(g.root(), {3, 5, false, false});
  EXPECT_EQ(g.free_cores(g.root()), before - 15);
  g.release(a);
  EXPECT_EQ(g.free_cores(g.root()), before);
  EXPECT_EQ(g.live_allocations(), 1u);
}

TEST(ResourceGraph, ReleaseErrors) {
  ResourceGraph g(cluster(4, 4));
  const auto a = g.carve(g.root(), whole_nodes(2, 4));
  const auto b = g.carve(a, whole_nodes(1, 4));
  try {
    g.release(a);
    FAIL();
  } catch (const ResourceError& e) {
    EXPECT_EQ(e.code(), ResourceErrc::live_children);
  }
  g.release(b);
  g.release(a);
  try {
    g.release(a);
    FAIL();
  } catch (const ResourceError& e) {
    EXPECT_EQ(e.code(), ResourceErrc::unknown_allocation);
  }
  EXPECT_THROW(g.release(g.root()), ResourceError);
}

TEST(ResourceGraph, BypassRequirementFiltersNodes) {
  ClusterSpec spec = cluster(4, 4);
  spec.has_bypass_nic = {false, true, false, true};
  ResourceGraph g(spec);
  const auto a = g.carve(g.root(), {2, 4, true, true});
  EXPECT_EQ(g.allocation(a).node_set(), (std::set<NodeId>{1, 3}));
  EXPECT_FALSE(g.try_carve(g.root(), {1, 1, false, true}).has_value());
}

TEST(ResourceGraph, ExclusiveTakesParentSlice) {
  ResourceGraph g(cluster(2, 8));
  const auto a = g.carve(g.root(), {2, 6, false, false});
  const auto b = g.carve(a, {1, 1, true, false});
  EXPECT_EQ(g.allocation(b).total_cores(), 6);
}

// Every nesting root -> A -> B over a 4-node graph: B stays inside A and the
// audit holds for every combination of request sizes.
TEST(ResourceGraph, ExhaustiveFourNodeNesting) {
  for (int a_nodes = 1; a_nodes <= 4; ++a_nodes) {
    for (int a_cores = 1; a_cores <= 2; ++a_cores) {
      for (int b_nodes = 1; b_nodes <= 4; ++b_nodes) {
        for (int b_cores = 1; b_cores <= 2; ++b_cores) {
          for (int pre = 0; pre <= 3; ++pre) {
            ResourceGraph g(cluster(4, 2));
            if (pre > 0) g.carve(g.root(), {pre, 1, false, false});
            const auto a = g.try_carve(g.root(), {a_nodes, a_cores, false, false});
            if (!a) continue;
            const auto b = g.try_carve(*a, {b_nodes, b_cores, false, false});
            const bool should_fit = b_nodes <= a_nodes && b_cores <= a_cores;
            EXPECT_EQ(b.has_value(), should_fit);
            if (b) {
              const auto an = g.allocation(*a).node_set();
              for (NodeId n : g.allocation(*b).node_set()) EXPECT_TRUE(an.count(n));
            }
            EXPECT_FALSE(oracle::audit_graph(g).has_value());
            g.check_invariants();
          }
        }
      }
    }
  }
}

TEST(ResourceGraph, RandomCarveReleaseConserves) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto result = oracle::run_contention_oracle(seed, 1000);
    EXPECT_FALSE(result.violation.has_value()) << *result.violation;
    EXPECT_TRUE(result.root_free_at_end);
    EXPECT_GT(result.carves, 0u);
  }
}

}  // namespace
}  // namespace converge::resgraph
