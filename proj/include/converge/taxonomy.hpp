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

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "converge/hiersched.hpp"
#include "converge/resgraph.hpp"

namespace converge::hiersched {

// Scheduler architectures compared against the hierarchical model. All of
// them run two schedulers by default and place whole nodes.
enum class TaxonomyMode { hierarchical, monolithic_partition, two_level, shared_state };

std::string_view to_string(TaxonomyMode mode);
std::optional<TaxonomyMode> parse_taxonomy_mode(std::string_view text);
inline constexpr TaxonomyMode kAllTaxonomyModes[] = {
    TaxonomyMode::hierarchical, TaxonomyMode::monolithic_partition, TaxonomyMode::two_level,
    TaxonomyMode::shared_state};

struct TaxonomyOptions {
  sim::SimTime decision_cost = 1.0 / 800.0;
  /// two_level: gang jobs keep partial offers while waiting for the rest.
  bool hoarding = true;
  /// two_level: no placement for this long while offers are hoarded means deadlock.
  sim::SimTime deadlock_horizon = 60.0;
  std::uint64_t seed = 1;
  int schedulers = 2;
};

/// Runs `workload` under one architecture. Job::submit is the arrival time;
/// Job::request.nodes is the gang size; Job::fixed_duration the runtime.
SchedMetrics run_taxonomy(TaxonomyMode mode, const std::vector<Job>& workload,
                          const resgraph::ClusterSpec& cluster, const TaxonomyOptions& options = {});

struct GangWorkload {
  int jobs = 200;
  int gang_size = 1;
  sim::SimTime duration = 10.0;
  /// Arrival spacing; 0 submits everything at t=0.
  sim::SimTime arrival_gap = 0.0;
};

std::vector<Job> make_gang_workload(const GangWorkload& params);

}  // namespace converge::hiersched
