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

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace converge::netmodel {

enum class NetworkPath { os_bypass, tap_relay };

std::string_view to_string(NetworkPath path);

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Measured values the models are solved against. Units: seconds, bytes,
// bytes per second.
struct PathAnchors {
  double latency_1b = 0.0;
  double bandwidth_1b = 0.0;
  double bandwidth_large = 0.0;
  double large_message_bytes = 4194304.0;
};

struct BarrierAnchors {
  double tap_minus_bypass_4node = 0.0;
  /// (tap - bypass) / bypass at 4 nodes.
  double tap_relative_excess_4node = 0.0;
};

struct AllreduceAnchors {
  double small_message_bytes = 4.0;
  double large_message_bytes = 4194304.0;
  double mu_min_4node = 0.0;
  double mu_max_4node = 0.0;
  double mu_min_32node = 0.0;
  double mu_max_32node = 0.0;
};

struct AnchorSet {
  PathAnchors os_bypass;
  PathAnchors tap_relay;
  BarrierAnchors barrier;
  AllreduceAnchors allreduce;

  /// The anchor table compiled into the library (data/anchors.ini).
  static AnchorSet defaults();
  static AnchorSet parse_ini(std::string_view text);
  static AnchorSet load(const std::filesystem::path& file);
};

struct MultiplierRange {
  double mu_min = 1.0;
  double mu_max = 1.0;
};

struct NetworkPathParams {
  NetworkPath path = NetworkPath::os_bypass;
  double base_latency = 0.0;          // L0, seconds
  double asymptotic_bandwidth = 0.0;  // BW_inf, bytes/s
  double half_saturation_bytes = 0.0; // m_half
  double barrier_base_4node = 0.0;    // seconds
  /// Tap/bypass AllReduce slowdown per node count. Empty on the bypass path.
  std::map<int, MultiplierRange> allreduce_multiplier;
  double allreduce_small_bytes = 4.0;
  double allreduce_large_bytes = 4194304.0;
  /// Bypass-path L0 and BW_inf; every path's AllReduce is a multiple of it.
  double allreduce_base_latency = 0.0;
  double allreduce_base_bandwidth = 0.0;
};

struct CalibratedPaths {
  NetworkPathParams os_bypass;
  NetworkPathParams tap_relay;

  const NetworkPathParams& get(NetworkPath path) const {
    return path == NetworkPath::os_bypass ? os_bypass : tap_relay;
  }
};

/// Solves the model parameters from the anchors. Throws CalibrationError
/// when a solution is non-positive or the tap path would beat the bypass path.
CalibratedPaths calibrate(const AnchorSet& anchors);

/// Tap path over plain ethernet (no bypass device anywhere): half the
/// asymptotic bandwidth of the calibrated tap path.
NetworkPathParams ethernet_tap_preset(const NetworkPathParams& tap);

// Extra cost on collectives while a Usernetes stack runs in the background.
struct OverheadState {
  bool usernetes_running = false;
  /// Step function over node count: the largest key <= p applies; below the
  /// smallest key the factor is 1.
  std::map<int, double> penalty_steps{{8, 1.0}, {16, 1.15}, {32, 1.3}};

  double collective_penalty(int node_count) const;
};

double p2p_latency(const NetworkPathParams& params, double message_bytes);
double p2p_bandwidth(const NetworkPathParams& params, double message_bytes);
double barrier_time(const NetworkPathParams& params, int node_count, const OverheadState& overhead = {});
/// Tap-over-bypass slowdown for AllReduce; 1 on the bypass path.
double allreduce_multiplier(const NetworkPathParams& params, double message_bytes, int node_count);
double allreduce_time(const NetworkPathParams& params, double message_bytes, int node_count,
                      const OverheadState& overhead = {});

/// Latency of the first message of a flow addressed by hostname: lookup
/// cost plus the point-to-point latency.
double first_message_latency(const NetworkPathParams& params, double message_bytes,
                             double lookup_overhead_seconds);

}  // namespace converge::netmodel
