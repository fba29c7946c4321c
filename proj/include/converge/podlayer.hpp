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
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "converge/netmodel.hpp"
#include "converge/resgraph.hpp"

namespace converge::podlayer {

using resgraph::AllocationId;
using resgraph::NodeId;

enum class PodKind { job_set, deployment, daemonset };

enum class PodErrc {
  too_few_nodes,
  invalid_spec,
  replicas_exceed_workers,
  missing_bypass_device,
  insufficient_cpu,
  unknown_hostname,
  unknown_pod_set,
};

class PodError : public std::runtime_error {
 public:
  PodError(PodErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  PodErrc code() const { return code_; }

 private:
  PodErrc code_;
};

struct PodSpec {
  std::string name;
  double cpu_request = 0.0;
  std::optional<double> cpu_limit;
  bool requires_bypass_nic = false;
  PodKind kind = PodKind::job_set;
  int replicas = 1;
  /// One pod per node. Always true for daemonsets.
  bool anti_affinity = true;
  /// A daemonset with this flag exposes the bypass device to pods on its nodes.
  bool exposes_bypass_device = false;

  void validate() const;
};

struct PodPlacement {
  std::uint64_t pod_id;
  std::string pod_set;
  std::string hostname;
  NodeId node_id;
  int node_cores;
  std::optional<double> cpu_limit;
  double effective_cpu_fraction = 1.0;
  netmodel::NetworkPath network_path = netmodel::NetworkPath::tap_relay;
};

struct CpuEffect {
  double fraction;
  double runtime_inflation;
};

struct UsernetesOptions {
  /// Allow a single-node cluster whose control plane also runs workloads.
  bool control_plane_schedulable = false;
  /// Seconds added per hostname resolution through the headless service.
  double lookup_overhead_seconds = 0.0;
  std::string service_domain = "svc";
};

// User-space Kubernetes inside one allocation: the first node runs the
// control plane, the rest are workers.
class KubeCluster {
 public:
  KubeCluster(AllocationId allocation, NodeId control_plane, std::vector<NodeId> workers,
              std::map<NodeId, int> node_cores, std::map<NodeId, bool> bypass_devices,
              UsernetesOptions options);

  AllocationId allocation() const { return allocation_; }
  NodeId control_plane_node() const { return control_plane_; }
  const std::vector<NodeId>& worker_nodes() const { return workers_; }
  const std::map<std::string, NodeId>& hostname_table() const { return hostnames_; }
  const UsernetesOptions& options() const { return options_; }
  void set_lookup_overhead(double seconds) { options_.lookup_overhead_seconds = seconds; }

  /// Places every replica of `spec` and registers its hostnames.
  std::vector<PodPlacement> apply(const PodSpec& spec);
  /// Deletes a pod set; deleting the device daemonset turns later placements
  /// back onto the TAP relay.
  void remove(const std::string& name);

  bool bypass_daemonset_deployed() const;
  const std::vector<PodPlacement>& placements() const { return placements_; }
  std::vector<PodPlacement> placements_of(const std::string& name) const;

  std::pair<NodeId, double> resolve(const std::string& hostname) const;

 private:
  struct PodSet {
    PodSpec spec;
    std::vector<std::uint64_t> pods;
  };

  netmodel::NetworkPath path_for(const PodSpec& spec, NodeId node) const;
  double free_request(NodeId node) const;

  AllocationId allocation_;
  NodeId control_plane_;
  std::vector<NodeId> workers_;
  std::map<NodeId, int> node_cores_;
  std::map<NodeId, bool> bypass_;
  UsernetesOptions options_;
  std::map<std::string, PodSet> sets_;
  std::map<std::string, NodeId> hostnames_;
  std::map<NodeId, double> requested_cpu_;
  std::vector<PodPlacement> placements_;
  std::uint64_t next_pod_ = 1;
};

/// Boots the control plane on the allocation's first node. Needs at least
/// two nodes unless the control plane is schedulable.
KubeCluster start_usernetes(const resgraph::ResourceGraph& graph, AllocationId alloc,
                            UsernetesOptions options = {});

/// CPU limits cap the cycle share (no bursting past the limit).
CpuEffect effective_cpu(const PodPlacement& pod, double demand_cores);

/// The device-plugin daemonset the scaling study deploys.
PodSpec bypass_device_daemonset();

}  // namespace converge::podlayer
