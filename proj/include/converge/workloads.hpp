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

#include <array>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "converge/netmodel.hpp"
#include "converge/rng.hpp"

namespace converge::workloads {

enum class Environment {
  bare_metal,
  bare_metal_with_usernetes,
  bare_metal_container,
  container_with_usernetes,
  usernetes,
};

/// Reference-table order.
inline constexpr std::array<Environment, 5> kAllEnvironments = {
    Environment::bare_metal, Environment::bare_metal_with_usernetes, Environment::bare_metal_container,
    Environment::container_with_usernetes, Environment::usernetes};

std::string_view to_string(Environment env);
std::optional<Environment> parse_environment(std::string_view text);

/// Whether a Usernetes stack runs in the allocation (in front or background).
bool runs_usernetes(Environment env);
/// MPI traffic crosses the TAP relay only when the application runs in pods.
netmodel::NetworkPath network_path(Environment env);
netmodel::OverheadState overhead_state(Environment env);

class WorkloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LammpsProblem {
  int x = 16;
  int y = 16;
  int z = 8;

  long volume() const { return static_cast<long>(x) * y * z; }
  void validate() const;
  bool operator==(const LammpsProblem&) const = default;
};

struct LammpsRow {
  Environment environment;
  int nodes;
  int ranks;
  double mean_s;
  double stddev_s;
  double cpu_pct;
};

// Strong-scaling reference walltimes for the 16x16x8 problem.
class LammpsTable {
 public:
  /// The table compiled into the library (data/lammps_table.csv).
  static LammpsTable defaults();
  static LammpsTable parse_csv(std::string_view text);
  static LammpsTable load(const std::filesystem::path& file);

  const std::vector<LammpsRow>& rows() const { return rows_; }
  const LammpsRow* find(Environment env, int nodes) const;
  const LammpsRow& at(Environment env, int nodes) const;
  std::vector<int> node_counts() const;

 private:
  std::vector<LammpsRow> rows_;
};

// T(ranks, V) = serial + per_volume * V * (reference_ranks / ranks), fitted
// through the bare-metal rows at the smallest and largest rank counts.
struct VolumetricModel {
  double serial_seconds = 0.0;
  double seconds_per_unit_volume = 0.0;
  int reference_ranks = 64;
  double noise_sigma = 0.05;

  static VolumetricModel fit(const LammpsTable& table, const LammpsProblem& reference = {});
  double mean_walltime(const LammpsProblem& problem, int ranks) const;
};

enum class DurationMode { table, model };

enum class OsuBenchmark { bandwidth, latency, barrier, allreduce };
std::string_view to_string(OsuBenchmark bench);

/// Draw from N(mu, sigma) conditioned on >= floor, with mu placed so the
/// conditional mean equals `mean`.
double truncated_normal(sim::RngStream& rng, double mean, double stddev, double floor);

class WorkloadModel {
 public:
  WorkloadModel();
  WorkloadModel(LammpsTable table, netmodel::CalibratedPaths paths);

  const LammpsTable& table() const { return table_; }
  const VolumetricModel& volumetric() const { return volumetric_; }
  VolumetricModel& volumetric() { return volumetric_; }
  const netmodel::CalibratedPaths& paths() const { return paths_; }

  /// Table mode replays the reference row (problem must be the reference
  /// problem); model mode evaluates the volumetric model with lognormal noise.
  double lammps_walltime(Environment env, int nodes, int ranks, const LammpsProblem& problem,
                         sim::RngStream& rng, DurationMode mode) const;

  /// Environment slowdown relative to bare metal at the same node count
  /// (1 when the table has no row for that size).
  double environment_ratio(Environment env, int nodes) const;

  /// Seconds for latency/barrier/allreduce, bytes/s for bandwidth.
  double osu_replay(Environment env, OsuBenchmark bench, int nodes, double message_bytes) const;

  double cpu_utilization(Environment env, int nodes) const;

 private:
  LammpsTable table_;
  netmodel::CalibratedPaths paths_;
  VolumetricModel volumetric_;
};

}  // namespace converge::workloads
