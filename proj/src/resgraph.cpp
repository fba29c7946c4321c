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

#include "converge/resgraph.hpp"

#include <sstream>

namespace converge::resgraph {

void ClusterSpec::validate() const {
  if (node_count < 1) throw ResourceError(ResourceErrc::invalid_spec, "cluster needs at least one node");
  if (cores_per_node < 1) {
    throw ResourceError(ResourceErrc::invalid_spec, "cluster needs at least one core per node");
  }
  if (!has_bypass_nic.empty() && has_bypass_nic.size() != static_cast<std::size_t>(node_count)) {
    throw ResourceError(ResourceErrc::invalid_spec, "bypass NIC flags must cover every node");
  }
}

bool ClusterSpec::node_has_bypass(NodeId node) const {
  return has_bypass_nic.empty() ? true : static_cast<bool>(has_bypass_nic.at(node));
}

void ResourceRequest::validate() const {
  if (nodes < 1 || cores_per_node < 1) {
    throw ResourceError(ResourceErrc::invalid_request, "request needs nodes >= 1 and cores_per_node >= 1");
  }
}

int Allocation::total_cores() const {
  int total = 0;
  for (const auto& [node, cores] : node_slices) total += cores;
  return total;
}

std::set<NodeId> Allocation::node_set() const {
  std::set<NodeId> out;
  for (const auto& [node, cores] : node_slices) out.insert(node);
  return out;
}

ResourceGraph::ResourceGraph(const ClusterSpec& spec) : spec_(spec) {
  spec_.validate();
  Entry root_entry;
  root_entry.alloc.id = root_;
  nodes_.reserve(static_cast<std::size_t>(spec_.node_count));
  for (int i = 0; i < spec_.node_count; ++i) {
    const auto id = static_cast<NodeId>(i);
    NodeRecord rec{id, spec_.hostname_prefix + std::to_string(i), spec_.cores_per_node,
                   spec_.node_has_bypass(id)};
    by_hostname_.emplace(rec.hostname, id);
    nodes_.push_back(std::move(rec));
    root_entry.alloc.node_slices.emplace(id, spec_.cores_per_node);
  }
  allocs_.emplace(root_, std::move(root_entry));
}

std::optional<NodeId> ResourceGraph::find_hostname(const std::string& hostname) const {
  auto it = by_hostname_.find(hostname);
  if (it == by_hostname_.end()) return std::nullopt;
  return it->second;
}

ResourceGraph::Entry& ResourceGraph::entry(AllocationId id) {
  auto it = allocs_.find(id);
  if (it == allocs_.end()) {
    throw ResourceError(ResourceErrc::unknown_allocation,
                        "unknown allocation " + std::to_string(to_underlying(id)));
  }
  return it->second;
}

const ResourceGraph::Entry& ResourceGraph::entry(AllocationId id) const {
  return const_cast<ResourceGraph*>(this)->entry(id);
}

const Allocation& ResourceGraph::allocation(AllocationId id) const { return entry(id).alloc; }

std::vector<AllocationId> ResourceGraph::children(AllocationId id) const {
  const auto& kids = entry(id).children;
  return {kids.begin(), kids.end()};
}

int ResourceGraph::free_cores(AllocationId id, NodeId node) const {
  const Entry& e = entry(id);
  auto it = e.alloc.node_slices.find(node);
  if (it == e.alloc.node_slices.end()) return 0;
  auto used = e.granted_to_children.find(node);
  return it->second - (used == e.granted_to_children.end() ? 0 : used->second);
}

int ResourceGraph::free_cores(AllocationId id) const {
  const Entry& e = entry(id);
  int total = e.alloc.total_cores();
  for (const auto& [node, used] : e.granted_to_children) total -= used;
  return total;
}

std::size_t ResourceGraph::fully_free_nodes(AllocationId id) const {
  const Entry& e = entry(id);
  std::size_t count = 0;
  for (const auto& [node, cores] : e.alloc.node_slices) {
    auto used = e.granted_to_children.find(node);
    if (used == e.granted_to_children.end() || used->second == 0) ++count;
  }
  return count;
}

bool ResourceGraph::is_fully_free(AllocationId id) const { return entry(id).children.empty(); }

bool ResourceGraph::node_eligible(const Entry& parent, NodeId node, const ResourceRequest& request,
                                  bool ignore_children) const {
  if (request.require_bypass_nic && !nodes_[node].has_bypass_nic) return false;
  const int granted = parent.alloc.node_slices.at(node);
  int used = 0;
  if (!ignore_children) {
    auto it = parent.granted_to_children.find(node);
    if (it != parent.granted_to_children.end()) used = it->second;
  }
  if (request.exclusive) return used == 0 && granted >= request.cores_per_node;
  return granted - used >= request.cores_per_node;
}

bool ResourceGraph::satisfiable_ever(AllocationId id, const ResourceRequest& request) const {
  request.validate();
  const Entry& e = entry(id);
  int eligible = 0;
  for (const auto& [node, cores] : e.alloc.node_slices) {
    if (node_eligible(e, node, request, /*ignore_children=*/true)) ++eligible;
  }
  return eligible >= request.nodes;
}

AllocationId ResourceGraph::insert_child(Entry& parent, std::map<NodeId, int> slices,
                                         std::optional<sim::SimTime> lifetime) {
  const AllocationId id{next_id_++};
  for (const auto& [node, cores] : slices) parent.granted_to_children[node] += cores;
  parent.children.insert(id);
  Entry child;
  child.alloc = Allocation{id, parent.alloc.id, std::move(slices), lifetime};
  allocs_.emplace(id, std::move(child));
  return id;
}

std::optional<AllocationId> ResourceGraph::try_carve(AllocationId parent_id,
                                                     const ResourceRequest& request,
                                                     std::optional<sim::SimTime> lifetime) {
  request.validate();
  Entry& parent = entry(parent_id);
  std::map<NodeId, int> slices;
  for (const auto& [node, granted] : parent.alloc.node_slices) {
    if (static_cast<int>(slices.size()) == request.nodes) break;
    if (node_eligible(parent, node, request, /*ignore_children=*/false)) {
      slices.emplace(node, request.exclusive ? granted : request.cores_per_node);
    }
  }
  if (static_cast<int>(slices.size()) < request.nodes) return std::nullopt;
  return insert_child(parent, std::move(slices), lifetime);
}

AllocationId ResourceGraph::carve(AllocationId parent, const ResourceRequest& request,
                                  std::optional<sim::SimTime> lifetime) {
  auto id = try_carve(parent, request, lifetime);
  if (!id) {
    std::ostringstream msg;
    msg << "allocation " << to_underlying(parent) << " cannot grant " << request.nodes
        << " node(s) x " << request.cores_per_node << " core(s)";
    throw ResourceError(ResourceErrc::insufficient_capacity, msg.str());
  }
  return *id;
}

AllocationId ResourceGraph::carve_exact(AllocationId parent_id, const std::map<NodeId, int>& slices,
                                        std::optional<sim::SimTime> lifetime) {
  Entry& parent = entry(parent_id);
  if (slices.empty()) throw ResourceError(ResourceErrc::invalid_request, "empty slice map");
  for (const auto& [node, cores] : slices) {
    if (cores < 1) throw ResourceError(ResourceErrc::invalid_request, "slice needs at least one core");
    if (!parent.alloc.node_slices.count(node)) {
      throw ResourceError(ResourceErrc::insufficient_capacity,
                          "node " + std::to_string(node) + " is outside the parent allocation");
    }
    if (free_cores(parent_id, node) < cores) {
      throw ResourceError(ResourceErrc::insufficient_capacity,
                          "node " + std::to_string(node) + " lacks free cores");
    }
  }
  return insert_child(parent, slices, lifetime);
}

void ResourceGraph::release(AllocationId id) {
  if (id == root_) throw ResourceError(ResourceErrc::invalid_request, "the root allocation cannot be released");
  Entry& e = entry(id);
  if (!e.children.empty()) {
    throw ResourceError(ResourceErrc::live_children,
                        "allocation " + std::to_string(to_underlying(id)) + " still has live children");
  }
  Entry& parent = entry(*e.alloc.parent);
  for (const auto& [node, cores] : e.alloc.node_slices) {
    auto it = parent.granted_to_children.find(node);
    it->second -= cores;
    if (it->second == 0) parent.granted_to_children.erase(it);
  }
  parent.children.erase(id);
  allocs_.erase(id);
}

void ResourceGraph::check_invariants() const {
  for (const auto& [id, e] : allocs_) {
    std::map<NodeId, int> sums;
    for (AllocationId kid : e.children) {
      const Entry& child = entry(kid);
      if (child.alloc.parent != id) throw std::logic_error("child/parent link mismatch");
      for (const auto& [node, cores] : child.alloc.node_slices) {
        if (!e.alloc.node_slices.count(node)) {
          throw std::logic_error("child holds a node outside its parent");
        }
        sums[node] += cores;
      }
    }
    for (const auto& [node, granted] : e.alloc.node_slices) {
      const int used = sums.count(node) ? sums.at(node) : 0;
      auto recorded = e.granted_to_children.find(node);
      const int bookkept = recorded == e.granted_to_children.end() ? 0 : recorded->second;
      if (used != bookkept) throw std::logic_error("per-node child accounting drifted");
      if (used > granted) throw std::logic_error("children exceed parent grant on a node");
    }
  }
}

}  // namespace converge::resgraph
