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
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "converge/simkernel.hpp"

namespace converge::resgraph {

using NodeId = std::uint32_t;

enum class AllocationId : std::uint64_t {};

inline std::uint64_t to_underlying(AllocationId id) { return static_cast<std::uint64_t>(id); }

enum class ResourceErrc {
  invalid_spec,
  invalid_request,
  unknown_allocation,
  insufficient_capacity,
  live_children,
};

class ResourceError : public std::runtime_error {
 public:
  ResourceError(ResourceErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ResourceErrc code() const { return code_; }

 private:
  ResourceErrc code_;
};

struct ClusterSpec {
  int node_count = 33;
  // Inferred from a 16-vCPU instance type running 512 ranks on 32 nodes.
  int cores_per_node = 16;
  /// Per-node OS-bypass NIC flags. Empty means every node has one.
  std::vector<bool> has_bypass_nic;
  std::string hostname_prefix = "node";

  void validate() const;
  bool node_has_bypass(NodeId node) const;
};

struct NodeRecord {
  NodeId id;
  std::string hostname;
  int cores;
  bool has_bypass_nic;
};

struct ResourceRequest {
  int nodes = 1;
  int cores_per_node = 1;
  /// Take every core the parent holds on each chosen node.
  bool exclusive = false;
  bool require_bypass_nic = false;

  void validate() const;
};

struct Allocation {
  AllocationId id;
  std::optional<AllocationId> parent;
  /// Cores granted on each node, keyed by node id.
  std::map<NodeId, int> node_slices;
  std::optional<sim::SimTime> lifetime;

  int total_cores() const;
  std::size_t node_count() const { return node_slices.size(); }
  std::set<NodeId> node_set() const;
};

// Nested allocations over a fixed set of nodes. Each allocation may only
// grant its children cores it was granted itself, so the tree is bounded
// all the way to the root.
class ResourceGraph {
 public:
  explicit ResourceGraph(const ClusterSpec& spec);

  const ClusterSpec& spec() const { return spec_; }
  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const NodeRecord& node(NodeId id) const { return nodes_.at(id); }
  std::optional<NodeId> find_hostname(const std::string& hostname) const;
  int total_cores() const { return spec_.node_count * spec_.cores_per_node; }

  AllocationId root() const { return root_; }
  bool contains(AllocationId id) const { return allocs_.count(id) != 0; }
  const Allocation& allocation(AllocationId id) const;
  std::vector<AllocationId> children(AllocationId id) const;
  std::size_t live_allocations() const { return allocs_.size(); }

  /// Cores of `id` on `node` not yet granted to any child.
  int free_cores(AllocationId id, NodeId node) const;
  int free_cores(AllocationId id) const;
  /// Nodes of `id` with nothing granted to children.
  std::size_t fully_free_nodes(AllocationId id) const;
  bool is_fully_free(AllocationId id) const;

  /// Whether `request` could ever be met from `id` with no children present.
  bool satisfiable_ever(AllocationId id, const ResourceRequest& request) const;

  /// Grants a child allocation; nullopt when capacity is currently short.
  std::optional<AllocationId> try_carve(AllocationId parent, const ResourceRequest& request,
                                        std::optional<sim::SimTime> lifetime = std::nullopt);
  /// As try_carve, but throws ResourceError(insufficient_capacity) on shortfall.
  AllocationId carve(AllocationId parent, const ResourceRequest& request,
                     std::optional<sim::SimTime> lifetime = std::nullopt);
  /// Grants exactly the given slices; used when a scheduler has already
  /// picked nodes (e.g. random placement).
  AllocationId carve_exact(AllocationId parent, const std::map<NodeId, int>& slices,
                           std::optional<sim::SimTime> lifetime = std::nullopt);

  void release(AllocationId id);

  /// Verifies conservation and bounding over the whole tree; throws
  /// std::logic_error describing the first violation.
  void check_invariants() const;

 private:
  struct Entry {
    Allocation alloc;
    std::map<NodeId, int> granted_to_children;
    std::set<AllocationId> children;
  };

  Entry& entry(AllocationId id);
  const Entry& entry(AllocationId id) const;
  bool node_eligible(const Entry& parent, NodeId node, const ResourceRequest& request,
                     bool ignore_children) const;
  AllocationId insert_child(Entry& parent, std::map<NodeId, int> slices,
                            std::optional<sim::SimTime> lifetime);

  ClusterSpec spec_;
  std::vector<NodeRecord> nodes_;
  std::unordered_map<std::string, NodeId> by_hostname_;
  std::map<AllocationId, Entry> allocs_;
  AllocationId root_{0};
  std::uint64_t next_id_ = 1;
};

}  // namespace converge::resgraph
