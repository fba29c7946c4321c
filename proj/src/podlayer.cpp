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

#include "converge/podlayer.hpp"

#include <algorithm>
#include <cmath>

namespace converge::podlayer {

void PodSpec::validate() const {
  if (name.empty()) throw PodError(PodErrc::invalid_spec, "pod set needs a name");
  if (cpu_request < 0.0) throw PodError(PodErrc::invalid_spec, "cpu request must be non-negative");
  if (cpu_limit && (*cpu_limit <= 0.0 || cpu_request > *cpu_limit)) {
    throw PodError(PodErrc::invalid_spec, "cpu request must not exceed a positive cpu limit");
  }
  if (kind != PodKind::daemonset && replicas < 1) {
    throw PodError(PodErrc::invalid_spec, "replicas must be at least 1");
  }
}

KubeCluster::KubeCluster(AllocationId allocation, NodeId control_plane, std::vector<NodeId> workers,
                         std::map<NodeId, int> node_cores, std::map<NodeId, bool> bypass_devices,
                         UsernetesOptions options)
    : allocation_(allocation), control_plane_(control_plane), workers_(std::move(workers)),
      node_cores_(std::move(node_cores)), bypass_(std::move(bypass_devices)), options_(std::move(options)) {}

KubeCluster start_usernetes(const resgraph::ResourceGraph& graph, AllocationId alloc,
                            UsernetesOptions options) {
  const auto& a = graph.allocation(alloc);
  const std::size_t minimum = options.control_plane_schedulable ? 1 : 2;
  if (a.node_count() < minimum) {
    throw PodError(PodErrc::too_few_nodes, "Usernetes needs " + std::to_string(minimum) +
                                               " node(s), allocation has " + std::to_string(a.node_count()));
  }
  std::map<NodeId, int> cores;
  std::map<NodeId, bool> bypass;
  std::vector<NodeId> workers;
  for (const auto& [node, granted] : a.node_slices) {
    cores.emplace(node, granted);
    bypass.emplace(node, graph.node(node).has_bypass_nic);
    workers.push_back(node);
  }
  const NodeId control_plane = workers.front();
  // The control plane is labeled to refuse workloads.
  if (!options.control_plane_schedulable) workers.erase(workers.begin());
  return KubeCluster(alloc, control_plane, std::move(workers), std::move(cores), std::move(bypass),
                     std::move(options));
}

bool KubeCluster::bypass_daemonset_deployed() const {
  return std::any_of(sets_.begin(), sets_.end(), [](const auto& kv) {
    return kv.second.spec.kind == PodKind::daemonset && kv.second.spec.exposes_bypass_device;
  });
}

netmodel::NetworkPath KubeCluster::path_for(const PodSpec& spec, NodeId node) const {
  if (spec.requires_bypass_nic && bypass_.at(node) && bypass_daemonset_deployed()) {
    return netmodel::NetworkPath::os_bypass;
  }
  return netmodel::NetworkPath::tap_relay;
}

double KubeCluster::free_request(NodeId node) const {
  auto it = requested_cpu_.find(node);
  return node_cores_.at(node) - (it == requested_cpu_.end() ? 0.0 : it->second);
}

std::vector<PodPlacement> KubeCluster::apply(const PodSpec& spec_in) {
  PodSpec spec = spec_in;
  spec.validate();
  if (sets_.count(spec.name)) throw PodError(PodErrc::invalid_spec, "pod set '" + spec.name + "' already exists");

  std::vector<NodeId> targets;
  if (spec.kind == PodKind::daemonset) {
    spec.anti_affinity = true;
    for (NodeId w : workers_) {
      if (!spec.requires_bypass_nic || bypass_.at(w)) targets.push_back(w);
    }
    spec.replicas = static_cast<int>(targets.size());
  } else {
    if (spec.anti_affinity && spec.replicas > static_cast<int>(workers_.size())) {
      throw PodError(PodErrc::replicas_exceed_workers,
                     std::to_string(spec.replicas) + " replicas cannot spread over " +
                         std::to_string(workers_.size()) + " workers");
    }
    std::map<NodeId, double> budget;
    for (NodeId w : workers_) budget[w] = free_request(w);
    std::size_t cursor = 0;
    for (int r = 0; r < spec.replicas; ++r) {
      std::optional<NodeId> chosen;
      bool lacked_device = false;
      for (std::size_t k = 0; k < workers_.size(); ++k) {
        const NodeId w = workers_[(cursor + k) % workers_.size()];
        const bool taken = std::find(targets.begin(), targets.end(), w) != targets.end();
        if (spec.anti_affinity && taken) continue;
        if (spec.requires_bypass_nic && !bypass_.at(w)) {
          lacked_device = true;
          continue;
        }
        if (budget[w] + 1e-9 < spec.cpu_request) continue;
        chosen = w;
        cursor = (cursor + k + 1) % workers_.size();
        break;
      }
      if (!chosen && lacked_device) {
        throw PodError(PodErrc::missing_bypass_device,
                       "no worker with a bypass device left for replica " + std::to_string(r) + " of '" + spec.name + "'");
      }
      if (!chosen) {
        throw PodError(PodErrc::insufficient_cpu, "no worker can host replica " + std::to_string(r) +
                                                      " of '" + spec.name + "'");
      }
      budget[*chosen] -= spec.cpu_request;
      targets.push_back(*chosen);
    }
  }
  if (spec.requires_bypass_nic) {
    for (NodeId n : targets) {
      if (!bypass_.at(n)) {
        throw PodError(PodErrc::missing_bypass_device,
                       "node " + std::to_string(n) + " has no bypass device for '" + spec.name + "'");
      }
    }
  }

  PodSet set{spec, {}};
  std::vector<PodPlacement> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const NodeId node = targets[i];
    PodPlacement p;
    p.pod_id = next_pod_++;
    p.pod_set = spec.name;
    // Headless-service naming: <set>-<index>.<set>.<domain>
    p.hostname = spec.name + "-" + std::to_string(i) + "." + spec.name + "." + options_.service_domain;
    p.node_id = node;
    p.node_cores = node_cores_.at(node);
    p.cpu_limit = spec.cpu_limit;
    out.push_back(p);
    set.pods.push_back(p.pod_id);
  }
  sets_.emplace(spec.name, std::move(set));
  // Paths resolve after registration so a device daemonset covers itself.
  for (auto& p : out) {
    p.network_path = path_for(spec, p.node_id);
    if (spec.cpu_limit) {
      p.effective_cpu_fraction = std::min(1.0, *spec.cpu_limit / static_cast<double>(p.node_cores));
    }
    requested_cpu_[p.node_id] += spec.cpu_request;
    hostnames_.emplace(p.hostname, p.node_id);
    placements_.push_back(p);
  }
  return out;
}

void KubeCluster::remove(const std::string& name) {
  auto it = sets_.find(name);
  if (it == sets_.end()) throw PodError(PodErrc::unknown_pod_set, "no pod set '" + name + "'");
  for (auto p = placements_.begin(); p != placements_.end();) {
    if (p->pod_set == name) {
      requested_cpu_[p->node_id] -= it->second.spec.cpu_request;
      hostnames_.erase(p->hostname);
      p = placements_.erase(p);
    } else {
      ++p;
    }
  }
  sets_.erase(it);
}

std::vector<PodPlacement> KubeCluster::placements_of(const std::string& name) const {
  std::vector<PodPlacement> out;
  for (const auto& p : placements_) {
    if (p.pod_set == name) out.push_back(p);
  }
  return out;
}

std::pair<NodeId, double> KubeCluster::resolve(const std::string& hostname) const {
  auto it = hostnames_.find(hostname);
  if (it == hostnames_.end()) throw PodError(PodErrc::unknown_hostname, "cannot resolve '" + hostname + "'");
  return {it->second, options_.lookup_overhead_seconds};
}

CpuEffect effective_cpu(const PodPlacement& pod, double demand_cores) {
  if (!(demand_cores > 0.0)) return {1.0, 1.0};
  const double cap = pod.cpu_limit ? *pod.cpu_limit : static_cast<double>(pod.node_cores);
  return {std::min(1.0, cap / demand_cores), std::max(1.0, demand_cores / cap)};
}

PodSpec bypass_device_daemonset() {
  PodSpec spec;
  spec.name = "efa-device-plugin";
  spec.kind = PodKind::daemonset;
  spec.requires_bypass_nic = true;
  spec.exposes_bypass_device = true;
  return spec;
}

}  // namespace converge::podlayer
