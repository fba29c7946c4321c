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
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "converge/resgraph.hpp"
#include "converge/workloads.hpp"

namespace converge::orchestrator {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Experiment { scaling_study, taxonomy, hybrid };

std::string_view to_string(Experiment e);
std::optional<Experiment> parse_experiment(std::string_view text);

struct ScalingParams {
  std::vector<int> sizes{4, 8, 16, 32};
  int iterations = 20;
  std::vector<workloads::Environment> environments{workloads::kAllEnvironments.begin(),
                                                   workloads::kAllEnvironments.end()};
  int ranks_per_node = 16;
  /// Message sizes for the OSU series: powers of two between these bounds.
  double osu_min_bytes = 1.0;
  double osu_max_bytes = 4194304.0;
};

struct TaxonomyParams {
  int nodes = 16;
  std::vector<int> gang_sizes{1, 2, 3, 4, 5, 6, 7, 8};
  int jobs = 200;
  double duration = 10.0;
  double arrival_gap = 0.0;
  double decision_cost = 1.0 / 800.0;
  bool hoarding = true;
  double deadlock_horizon = 60.0;
  /// Gang size of the two-job oversized scenario; 0 means nodes/2 + 1.
  int oversized_gang = 0;
};

enum class MountKind { in_process, socket };

struct HybridParams {
  int train_count = 1000;
  int test_count = 250;
  int dim_min = 1;
  int dim_max = 8;
  int job_nodes = 4;
  int ranks_per_node = 16;
  /// Simulation jobs kept in flight at once.
  int width = 1;
  double noise_sigma = 0.05;
  workloads::Environment environment = workloads::Environment::bare_metal;
  MountKind mount = MountKind::in_process;

  double sgd_learning_rate = 0.01;
  double bayes_alpha = 1.0;
  double bayes_beta = 1.0;
  bool bayes_fit_intercept = true;
  double pa_c = 1.0;
  double pa_epsilon = 0.1;
  bool pa_fit_intercept = true;
};

struct ScenarioConfig {
  Experiment experiment = Experiment::scaling_study;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";
  resgraph::ClusterSpec cluster;
  ScalingParams scaling;
  TaxonomyParams taxonomy;
  HybridParams hybrid;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  std::uint64_t required_seed() const;

  static ScenarioConfig parse(std::string_view ini_text);
  static ScenarioConfig load(const std::filesystem::path& file);
};

}  // namespace converge::orchestrator
