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
#include <string>
#include <vector>

#include "converge/config.hpp"
#include "converge/workloads.hpp"

namespace converge::orchestrator {

struct RawSample {
  std::string environment;
  int nodes = 0;
  int ranks = 0;
  int iteration = 0;
  double value = 0.0;
};

/// One cell of the strong-scaling table, aggregated from raw samples.
struct AggregateRow {
  std::string environment;
  int nodes = 0;
  int ranks = 0;
  double mean_s = 0.0;
  double stddev_s = 0.0;
  double cpu_pct = 0.0;
  int samples = 0;
};

struct OsuPoint {
  std::string environment;
  int nodes = 0;
  std::string benchmark;
  double message_bytes = 0.0;
  double value = 0.0;
};

struct TaxonomyRow {
  std::string scenario;  // "sweep" or "oversized_gang"
  std::string mode;
  int gang_size = 0;
  int jobs = 0;
  double conflict_fraction = 0.0;
  double busyness = 0.0;
  bool deadlocked = false;
  double throughput = 0.0;
  double makespan = 0.0;
  std::uint64_t completed = 0;
  std::uint64_t rejected = 0;
};

struct HybridPoint {
  int index = 0;
  int x = 0;
  int y = 0;
  int z = 0;
  double y_true = 0.0;
  double y_pred = 0.0;
};

struct HybridSeries {
  std::string model;
  std::string type;
  std::optional<double> r_squared;
  std::uint64_t samples_seen = 0;
  std::vector<HybridPoint> points;
};

struct ReportBundle {
  std::string experiment;
  std::uint64_t seed = 0;
  int iterations = 0;
  double virtual_seconds = 0.0;
  std::vector<RawSample> samples;
  std::vector<AggregateRow> aggregates;
  std::vector<OsuPoint> osu;
  std::vector<TaxonomyRow> taxonomy;
  std::vector<HybridSeries> hybrid;

  std::string to_json() const;
  static ReportBundle from_json(std::string_view text);
  static ReportBundle load(const std::filesystem::path& file);
};

/// Mean and sample standard deviation per (environment, nodes) in first-seen
/// order. CPU utilization comes from the reference table.
std::vector<AggregateRow> aggregate(const std::vector<RawSample>& samples, const workloads::WorkloadModel& model);

/// Every cell has `iterations` samples and the stored aggregates match a
/// recomputation from the raw samples.
bool bundle_consistent(const ReportBundle& bundle, const workloads::WorkloadModel& model);

ReportBundle run_scaling_study(const ScenarioConfig& cfg, const workloads::WorkloadModel& model = {});
ReportBundle run_taxonomy(const ScenarioConfig& cfg);
ReportBundle run_hybrid(const ScenarioConfig& cfg, const workloads::WorkloadModel& model = {});
/// Dispatches on cfg.experiment after validating the config.
ReportBundle run(const ScenarioConfig& cfg);

enum class ReportFormat { csv, json, svg };
std::optional<ReportFormat> parse_report_format(std::string_view text);

/// Writes the files for `format` into `dir` (created if missing) and returns
/// their paths in write order. Identical bundles give identical bytes.
std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, ReportFormat format,
                                               const std::filesystem::path& dir);

}  // namespace converge::orchestrator
