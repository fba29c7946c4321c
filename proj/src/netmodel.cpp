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

#include "converge/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "embedded_data.hpp"

namespace converge::netmodel {

std::string_view to_string(NetworkPath path) {
  return path == NetworkPath::os_bypass ? "os_bypass" : "tap_relay";
}

namespace {

namespace pt = boost::property_tree;

double require(const pt::ptree& tree, const std::string& key) {
  auto value = tree.get_optional<double>(key);
  if (!value) throw CalibrationError("anchor table is missing '" + key + "'");
  return *value;
}

PathAnchors read_path(const pt::ptree& tree, const std::string& section) {
  PathAnchors a;
  a.latency_1b = require(tree, section + ".latency_1b");
  a.bandwidth_1b = require(tree, section + ".bandwidth_1b");
  a.bandwidth_large = require(tree, section + ".bandwidth_large");
  a.large_message_bytes = tree.get<double>(section + ".large_message_bytes", 4194304.0);
  return a;
}

void check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw CalibrationError(std::string("calibration produced non-positive ") + what);
  }
}

NetworkPathParams fit_path(NetworkPath path, const PathAnchors& a) {
  check_positive(a.latency_1b, "base latency");
  check_positive(a.bandwidth_1b, "1-byte bandwidth");
  check_positive(a.bandwidth_large, "large-message bandwidth");
  NetworkPathParams p;
  p.path = path;
  p.base_latency = a.latency_1b;
  p.asymptotic_bandwidth = a.bandwidth_large;
  // BW(1) = BW_inf / (1 + m_half) holds exactly at the 1-byte anchor.
  p.half_saturation_bytes = a.bandwidth_large / a.bandwidth_1b - 1.0;
  check_positive(p.half_saturation_bytes, "half-saturation size");
  return p;
}

double clamp_log2(double v, double lo, double hi) { return std::log2(std::clamp(v, lo, hi)); }

// std::lerp is exact at both ends, so sweeps never step outside the band.
double range_at(const MultiplierRange& r, double t) { return std::lerp(r.mu_max, r.mu_min, t); }

}  // namespace

AnchorSet AnchorSet::parse_ini(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw CalibrationError(std::string("malformed anchor table: ") + e.what());
  } catch (const pt::ptree_bad_data& e) {
    throw CalibrationError(std::string("malformed anchor table: ") + e.what());
  }
  AnchorSet set;
  set.os_bypass = read_path(tree, "os_bypass");
  set.tap_relay = read_path(tree, "tap_relay");
  set.barrier.tap_minus_bypass_4node = require(tree, "barrier.tap_minus_bypass_4node");
  set.barrier.tap_relative_excess_4node = require(tree, "barrier.tap_relative_excess_4node");
  set.allreduce.small_message_bytes = tree.get<double>("allreduce.small_message_bytes", 4.0);
  set.allreduce.large_message_bytes = tree.get<double>("allreduce.large_message_bytes", 4194304.0);
  set.allreduce.mu_min_4node = require(tree, "allreduce.mu_min_4node");
  set.allreduce.mu_max_4node = require(tree, "allreduce.mu_max_4node");
  set.allreduce.mu_min_32node = require(tree, "allreduce.mu_min_32node");
  set.allreduce.mu_max_32node = require(tree, "allreduce.mu_max_32node");
  return set;
}

AnchorSet AnchorSet::defaults() { return parse_ini(data::kAnchorsIni); }

AnchorSet AnchorSet::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw CalibrationError("cannot read anchor table " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_ini(text.str());
}

CalibratedPaths calibrate(const AnchorSet& anchors) {
  CalibratedPaths out;
  out.os_bypass = fit_path(NetworkPath::os_bypass, anchors.os_bypass);
  out.tap_relay = fit_path(NetworkPath::tap_relay, anchors.tap_relay);

  // bypass + gap = (1 + excess) * bypass
  const auto& b = anchors.barrier;
  check_positive(b.tap_minus_bypass_4node, "barrier gap");
  check_positive(b.tap_relative_excess_4node, "barrier relative excess");
  out.os_bypass.barrier_base_4node = b.tap_minus_bypass_4node / b.tap_relative_excess_4node;
  out.tap_relay.barrier_base_4node = out.os_bypass.barrier_base_4node + b.tap_minus_bypass_4node;

  const auto& ar = anchors.allreduce;
  check_positive(ar.small_message_bytes, "AllReduce small size");
  if (!(ar.large_message_bytes > ar.small_message_bytes)) {
    throw CalibrationError("AllReduce large size must exceed small size");
  }
  for (double mu : {ar.mu_min_4node, ar.mu_max_4node, ar.mu_min_32node, ar.mu_max_32node}) {
    check_positive(mu, "AllReduce multiplier");
    if (mu < 1.0) throw CalibrationError("AllReduce multiplier below 1 would make the tap path faster");
  }
  if (ar.mu_min_4node > ar.mu_max_4node || ar.mu_min_32node > ar.mu_max_32node) {
    throw CalibrationError("AllReduce multiplier range is inverted");
  }
  for (NetworkPathParams* p : {&out.os_bypass, &out.tap_relay}) {
    p->allreduce_small_bytes = ar.small_message_bytes;
    p->allreduce_large_bytes = ar.large_message_bytes;
    p->allreduce_base_latency = out.os_bypass.base_latency;
    p->allreduce_base_bandwidth = out.os_bypass.asymptotic_bandwidth;
  }
  out.tap_relay.allreduce_multiplier = {{4, {ar.mu_min_4node, ar.mu_max_4node}},
                                        {32, {ar.mu_min_32node, ar.mu_max_32node}}};

  if (out.tap_relay.base_latency < out.os_bypass.base_latency ||
      out.tap_relay.asymptotic_bandwidth > out.os_bypass.asymptotic_bandwidth) {
    throw CalibrationError("anchors make the tap relay path faster than OS bypass");
  }
  return out;
}

NetworkPathParams ethernet_tap_preset(const NetworkPathParams& tap) {
  NetworkPathParams p = tap;
  p.asymptotic_bandwidth *= 0.5;
  return p;
}

double OverheadState::collective_penalty(int node_count) const {
  if (!usernetes_running) return 1.0;
  double factor = 1.0;
  for (const auto& [threshold, value] : penalty_steps) {
    if (threshold <= node_count) factor = value;
  }
  return factor;
}

double p2p_latency(const NetworkPathParams& params, double message_bytes) {
  const double m = std::max(message_bytes, 1.0);
  return params.base_latency + m / params.asymptotic_bandwidth;
}

double p2p_bandwidth(const NetworkPathParams& params, double message_bytes) {
  const double m = std::max(message_bytes, 1.0);
  return params.asymptotic_bandwidth * m / (m + params.half_saturation_bytes);
}

double barrier_time(const NetworkPathParams& params, int node_count, const OverheadState& overhead) {
  if (node_count < 2) throw std::invalid_argument("barrier needs at least two nodes");
  const double scale = std::log2(static_cast<double>(node_count)) / 2.0;
  return params.barrier_base_4node * scale * overhead.collective_penalty(node_count);
}

double allreduce_multiplier(const NetworkPathParams& params, double message_bytes, int node_count) {
  const auto& curves = params.allreduce_multiplier;
  if (curves.empty()) return 1.0;
  // Position along the message axis: 0 at the small size, 1 at the large.
  const double lo = std::log2(params.allreduce_small_bytes);
  const double hi = std::log2(params.allreduce_large_bytes);
  const double t =
      (clamp_log2(message_bytes, params.allreduce_small_bytes, params.allreduce_large_bytes) - lo) /
      (hi - lo);

  const double p = std::log2(static_cast<double>(std::max(node_count, 1)));
  auto upper = curves.lower_bound(node_count);
  if (upper == curves.begin()) return range_at(upper->second, t);
  if (upper == curves.end()) return range_at(std::prev(upper)->second, t);
  if (upper->first == node_count) return range_at(upper->second, t);
  auto lower = std::prev(upper);
  const double p_lo = std::log2(static_cast<double>(lower->first));
  const double p_hi = std::log2(static_cast<double>(upper->first));
  const double s = (p - p_lo) / (p_hi - p_lo);
  const double mu_lo = range_at(lower->second, t);
  const double mu_hi = range_at(upper->second, t);
  return std::lerp(mu_lo, mu_hi, s);
}

double allreduce_time(const NetworkPathParams& params, double message_bytes, int node_count,
                      const OverheadState& overhead) {
  if (node_count < 2) throw std::invalid_argument("AllReduce needs at least two nodes");
  const double m = std::max(message_bytes, 1.0);
  const double baseline = std::log2(static_cast<double>(node_count)) *
                          (params.allreduce_base_latency + m / params.allreduce_base_bandwidth);
  return baseline * allreduce_multiplier(params, m, node_count) * overhead.collective_penalty(node_count);
}

double first_message_latency(const NetworkPathParams& params, double message_bytes,
                             double lookup_overhead_seconds) {
  return lookup_overhead_seconds + p2p_latency(params, message_bytes);
}

}  // namespace converge::netmodel
