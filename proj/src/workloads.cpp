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

#include "converge/workloads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "embedded_data.hpp"

namespace converge::workloads {

std::string_view to_string(Environment env) {
  switch (env) {
    case Environment::bare_metal: return "bare_metal";
    case Environment::bare_metal_with_usernetes: return "bare_metal_with_usernetes";
    case Environment::bare_metal_container: return "bare_metal_container";
    case Environment::container_with_usernetes: return "container_with_usernetes";
    case Environment::usernetes: return "usernetes";
  }
  return "unknown";
}

std::optional<Environment> parse_environment(std::string_view text) {
  for (Environment env : kAllEnvironments) {
    if (to_string(env) == text) return env;
  }
  return std::nullopt;
}

bool runs_usernetes(Environment env) {
  return env == Environment::usernetes || env == Environment::bare_metal_with_usernetes ||
         env == Environment::container_with_usernetes;
}

netmodel::NetworkPath network_path(Environment env) {
  return env == Environment::usernetes ? netmodel::NetworkPath::tap_relay : netmodel::NetworkPath::os_bypass;
}

netmodel::OverheadState overhead_state(Environment env) {
  netmodel::OverheadState state;
  state.usernetes_running =
      env == Environment::bare_metal_with_usernetes || env == Environment::container_with_usernetes;
  return state;
}

std::string_view to_string(OsuBenchmark bench) {
  switch (bench) {
    case OsuBenchmark::bandwidth: return "bw";
    case OsuBenchmark::latency: return "latency";
    case OsuBenchmark::barrier: return "barrier";
    case OsuBenchmark::allreduce: return "allreduce";
  }
  return "unknown";
}

void LammpsProblem::validate() const {
  if (x < 1 || y < 1 || z < 1) throw WorkloadError("problem dimensions must be positive");
}

// ---------------------------------------------------------------------------

LammpsTable LammpsTable::parse_csv(std::string_view text) {
  LammpsTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header_seen = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "environment,nodes,ranks,mean_s,stddev_s,cpu_pct") {
        throw WorkloadError("unexpected LAMMPS table header: " + line);
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw WorkloadError("LAMMPS table line " + std::to_string(line_no) + " needs 6 columns");
    }
    auto env = parse_environment(cells[0]);
    if (!env) throw WorkloadError("unknown environment '" + cells[0] + "'");
    try {
      LammpsRow r{*env, std::stoi(cells[1]), std::stoi(cells[2]), std::stod(cells[3]),
                  std::stod(cells[4]), std::stod(cells[5])};
      if (r.nodes < 1 || r.ranks < 1 || !(r.mean_s > 0.0) || r.stddev_s < 0.0) {
        throw WorkloadError("LAMMPS table line " + std::to_string(line_no) + " has invalid values");
      }
      table.rows_.push_back(r);
    } catch (const std::logic_error&) {
      throw WorkloadError("LAMMPS table line " + std::to_string(line_no) + " is not numeric");
    }
  }
  if (table.rows_.empty()) throw WorkloadError("LAMMPS table is empty");
  return table;
}

LammpsTable LammpsTable::defaults() { return parse_csv(data::kLammpsTableCsv); }

LammpsTable LammpsTable::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw WorkloadError("cannot read " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_csv(text.str());
}

const LammpsRow* LammpsTable::find(Environment env, int nodes) const {
  for (const auto& r : rows_) {
    if (r.environment == env && r.nodes == nodes) return &r;
  }
  return nullptr;
}

const LammpsRow& LammpsTable::at(Environment env, int nodes) const {
  const LammpsRow* row = find(env, nodes);
  if (!row) {
    throw WorkloadError("no reference row for " + std::string(to_string(env)) + " at " +
                        std::to_string(nodes) + " nodes");
  }
  return *row;
}

std::vector<int> LammpsTable::node_counts() const {
  std::set<int> counts;
  for (const auto& r : rows_) counts.insert(r.nodes);
  return {counts.begin(), counts.end()};
}

// ---------------------------------------------------------------------------

VolumetricModel VolumetricModel::fit(const LammpsTable& table, const LammpsProblem& reference) {
  std::vector<const LammpsRow*> bare;
  for (const auto& r : table.rows()) {
    if (r.environment == Environment::bare_metal) bare.push_back(&r);
  }
  if (bare.size() < 2) throw WorkloadError("volumetric fit needs two bare-metal rows");
  const auto [lo, hi] = std::minmax_element(bare.begin(), bare.end(),
                                            [](const LammpsRow* a, const LammpsRow* b) { return a->ranks < b->ranks; });
  const double p1 = (*lo)->ranks;
  const double p2 = (*hi)->ranks;
  // T(p) = t_s + t_p / p through both points.
  const double parallel = ((*lo)->mean_s - (*hi)->mean_s) / (1.0 / p1 - 1.0 / p2);
  VolumetricModel m;
  m.reference_ranks = (*lo)->ranks;
  m.serial_seconds = (*lo)->mean_s - parallel / p1;
  m.seconds_per_unit_volume = parallel / (p1 * static_cast<double>(reference.volume()));
  if (!(m.serial_seconds > 0.0) || !(m.seconds_per_unit_volume > 0.0)) {
    throw WorkloadError("volumetric fit produced non-positive coefficients");
  }
  return m;
}

double VolumetricModel::mean_walltime(const LammpsProblem& problem, int ranks) const {
  problem.validate();
  if (ranks < 1) throw WorkloadError("ranks must be positive");
  return serial_seconds + seconds_per_unit_volume * static_cast<double>(problem.volume()) *
                              (static_cast<double>(reference_ranks) / ranks);
}

// ---------------------------------------------------------------------------

namespace {

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
double std_normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double truncated_mean(double mu, double sigma, double floor) {
  const double alpha = (floor - mu) / sigma;
  return mu + sigma * std_normal_pdf(alpha) / std_normal_sf(alpha);
}

}  // namespace

double truncated_normal(sim::RngStream& rng, double mean, double stddev, double floor) {
  if (stddev <= 0.0) return std::max(mean, floor);
  if (floor >= mean) throw WorkloadError("truncation floor must lie below the mean");
  // The conditional mean is increasing in mu; bisect for the location.
  double lo = mean - 10.0 * stddev;
  double hi = mean;
  for (int i = 0; i < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(mean)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (truncated_mean(mid, stddev, floor) < mean ? lo : hi) = mid;
  }
  const double mu = 0.5 * (lo + hi);
  for (;;) {
    const double draw = rng.normal(mu, stddev);
    if (draw >= floor) return draw;
  }
}

WorkloadModel::WorkloadModel()
    : WorkloadModel(LammpsTable::defaults(), netmodel::calibrate(netmodel::AnchorSet::defaults())) {}

WorkloadModel::WorkloadModel(LammpsTable table, netmodel::CalibratedPaths paths)
    : table_(std::move(table)), paths_(std::move(paths)), volumetric_(VolumetricModel::fit(table_)) {}

double WorkloadModel::environment_ratio(Environment env, int nodes) const {
  const LammpsRow* row = table_.find(env, nodes);
  const LammpsRow* bare = table_.find(Environment::bare_metal, nodes);
  if (!row || !bare) return 1.0;
  return row->mean_s / bare->mean_s;
}

double WorkloadModel::lammps_walltime(Environment env, int nodes, int ranks, const LammpsProblem& problem,
                                      sim::RngStream& rng, DurationMode mode) const {
  problem.validate();
  if (mode == DurationMode::table) {
    if (problem != LammpsProblem{}) {
      throw WorkloadError("table mode only replays the 16x16x8 reference problem");
    }
    const LammpsRow& row = table_.at(env, nodes);
    if (row.ranks != ranks) {
      throw WorkloadError("reference row at " + std::to_string(nodes) + " nodes ran " +
                          std::to_string(row.ranks) + " ranks, not " + std::to_string(ranks));
    }
    return truncated_normal(rng, row.mean_s, row.stddev_s, 0.5 * row.mean_s);
  }
  const double mean = volumetric_.mean_walltime(problem, ranks) * environment_ratio(env, nodes);
  if (volumetric_.noise_sigma <= 0.0) return mean;
  return mean * std::exp(volumetric_.noise_sigma * rng.normal());
}

double WorkloadModel::osu_replay(Environment env, OsuBenchmark bench, int nodes, double message_bytes) const {
  const auto& params = paths_.get(network_path(env));
  const auto overhead = overhead_state(env);
  switch (bench) {
    case OsuBenchmark::bandwidth: return netmodel::p2p_bandwidth(params, message_bytes);
    case OsuBenchmark::latency: return netmodel::p2p_latency(params, message_bytes);
    case OsuBenchmark::barrier: return netmodel::barrier_time(params, nodes, overhead);
    case OsuBenchmark::allreduce: return netmodel::allreduce_time(params, message_bytes, nodes, overhead);
  }
  throw WorkloadError("unknown OSU benchmark");
}

double WorkloadModel::cpu_utilization(Environment env, int nodes) const { return table_.at(env, nodes).cpu_pct; }

}  // namespace converge::workloads
