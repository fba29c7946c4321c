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

// Brute-force checks over a resource graph and a scheduler trace, used by the
// unit tests and the acceptance binary. Everything here is recomputed from
// scratch through public accessors; nothing reuses the graph's own counters.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "converge/hiersched.hpp"
#include "converge/resgraph.hpp"
#include "converge/rng.hpp"
#include "converge/simkernel.hpp"

namespace converge::oracle {

using resgraph::AllocationId;
using resgraph::NodeId;

inline std::string id_text(AllocationId id) { return std::to_string(resgraph::to_underlying(id)); }

/// Walks the allocation tree. Children of each (allocation, node) are laid
/// out as consecutive core intervals; any interval poking past the parent's
/// slice is a sibling overlap. Also checks the graph's free counts against
/// the layout and per-node conservation at the root.
inline std::optional<std::string> audit_graph(const resgraph::ResourceGraph& graph) {
  const auto& spec = graph.spec();
  std::vector<AllocationId> stack{graph.root()};
  std::size_t visited = 0;
  while (!stack.empty()) {
    const AllocationId id = stack.back();
    stack.pop_back();
    ++visited;
    const auto& alloc = graph.allocation(id);
    if (id == graph.root()) {
      if (alloc.node_slices.size() != static_cast<std::size_t>(spec.node_count)) return "root lost nodes";
      for (const auto& [node, cores] : alloc.node_slices) {
        if (cores != spec.cores_per_node) return "root slice differs from node size";
      }
    }
    std::map<NodeId, int> cursor;  // next free core offset per node
    for (AllocationId child : graph.children(id)) {
      const auto& c = graph.allocation(child);
      if (c.parent != id) return "child " + id_text(child) + " has wrong parent";
      for (const auto& [node, cores] : c.node_slices) {
        auto parent_slice = alloc.node_slices.find(node);
        if (parent_slice == alloc.node_slices.end()) {
          return "allocation " + id_text(child) + " holds node " + std::to_string(node) + " outside its parent";
        }
        if (cores < 1) return "empty slice in " + id_text(child);
        const int begin = cursor[node];
        const int end = begin + cores;
        if (end > parent_slice->second) {
          return "siblings under " + id_text(id) + " overlap on node " + std::to_string(node);
        }
        cursor[node] = end;
      }
      stack.push_back(child);
    }
    for (const auto& [node, cores] : alloc.node_slices) {
      const int used = cursor.count(node) ? cursor.at(node) : 0;
      if (graph.free_cores(id, node) + used != cores) {
        return "conservation broken in " + id_text(id) + " on node " + std::to_string(node);
      }
    }
  }
  if (visited != graph.live_allocations()) return "allocation tree does not reach every live allocation";
  return std::nullopt;
}

/// Every placement lies inside the placing instance's allocation, and no two
/// jobs running at the same time share a core beyond the node's capacity.
/// Per-node core sweep over every placement. Placements on `containers`
/// (job allocations hosting a nested instance) hold cores on behalf of the
/// nested jobs, so only the nested placements are counted there.
inline std::optional<std::string> audit_placements(const hiersched::Scheduler& sched,
                                                   const resgraph::ResourceGraph& graph,
                                                   const std::map<hiersched::InstanceId, std::set<NodeId>>& instance_nodes,
                                                   const std::set<AllocationId>& containers = {}) {
  struct Edge {
    double t;
    int delta;
    NodeId node;
  };
  std::vector<Edge> edges;
  for (const auto& p : sched.placements()) {
    auto it = instance_nodes.find(p.instance);
    if (it == instance_nodes.end()) return "placement from an unknown instance";
    for (const auto& [node, cores] : p.slices) {
      if (!it->second.count(node)) return "placement escaped its instance allocation";
      if (p.end > p.start && !containers.count(p.alloc)) {
        edges.push_back({p.start, cores, node});
        edges.push_back({p.end, -cores, node});
      }
    }
  }
  // Releases before grants at equal times.
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.t != b.t ? a.t < b.t : a.delta < b.delta;
  });
  std::map<NodeId, int> load;
  for (const auto& e : edges) {
    load[e.node] += e.delta;
    if (load[e.node] > graph.spec().cores_per_node) return "cores oversubscribed on node " + std::to_string(e.node);
  }
  return std::nullopt;
}

struct ContentionResult {
  int events = 0;
  int audits = 0;
  std::size_t placements = 0;
  std::size_t carves = 0;
  std::size_t releases = 0;
  std::optional<std::string> violation;
  bool root_free_at_end = false;
};

/// Random nested carve / release / instance / submit / advance events with a
/// full audit after each one.
inline ContentionResult run_contention_oracle(std::uint64_t seed, int events) {
  ContentionResult out;
  resgraph::ClusterSpec spec;
  spec.node_count = 12;
  spec.cores_per_node = 4;
  spec.has_bypass_nic.assign(12, true);
  spec.has_bypass_nic[3] = spec.has_bypass_nic[7] = false;

  sim::Engine engine;
  resgraph::ResourceGraph graph(spec);
  hiersched::SchedulerOptions options;
  options.decision_cost = 0.01;
  hiersched::Scheduler sched(engine, graph, options);
  sim::RngStream rng(seed, "oracle/contention");

  std::map<AllocationId, std::optional<hiersched::InstanceId>> manual;  // carved by the driver
  std::map<hiersched::InstanceId, std::set<NodeId>> instance_nodes;
  std::map<AllocationId, hiersched::InstanceId> instance_of;
  const auto root_inst = sched.create_instance(graph.root());
  instance_of[graph.root()] = root_inst;
  instance_nodes[root_inst] = graph.allocation(graph.root()).node_set();

  auto pick_manual = [&]() -> std::optional<AllocationId> {
    if (manual.empty()) return std::nullopt;
    auto it = manual.begin();
    std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(manual.size()) - 1));
    return it->first;
  };
  auto nearest_instance = [&](AllocationId id) -> std::optional<hiersched::InstanceId> {
    std::optional<AllocationId> cursor = graph.allocation(id).parent;
    while (cursor) {
      if (instance_of.count(*cursor)) return instance_of.at(*cursor);
      cursor = graph.allocation(*cursor).parent;
    }
    return std::nullopt;
  };

  for (int e = 0; e < events && !out.violation; ++e) {
    const auto kind = rng.uniform_int(0, 9);
    if (kind <= 2) {
      AllocationId parent = graph.root();
      if (auto m = pick_manual(); m && rng.uniform() < 0.6) parent = *m;
      resgraph::ResourceRequest req;
      req.nodes = static_cast<int>(rng.uniform_int(1, 4));
      req.cores_per_node = static_cast<int>(rng.uniform_int(1, 4));
      req.exclusive = rng.uniform() < 0.3;
      req.require_bypass_nic = rng.uniform() < 0.2;
      if (auto id = graph.try_carve(parent, req)) {
        manual[*id] = std::nullopt;
        ++out.carves;
      }
    } else if (kind <= 4) {
      if (auto m = pick_manual()) {
        const AllocationId id = *m;
        auto bound = manual.at(id);
        if (bound) {
          const auto& inst = sched.instance(*bound);
          if (inst.queue.empty() && inst.running == 0 && inst.children.empty()) {
            sched.destroy_instance(*bound);
            instance_of.erase(id);
            manual[id] = std::nullopt;
          }
        } else if (graph.children(id).empty()) {
          const auto parent = graph.allocation(id).parent;
          graph.release(id);
          manual.erase(id);
          ++out.releases;
          if (parent && instance_of.count(*parent)) sched.wake(instance_of.at(*parent));
        } else {
          try {
            graph.release(id);
            out.violation = "released an allocation with live children";
          } catch (const resgraph::ResourceError&) {
          }
        }
      }
    } else if (kind == 5) {
      if (auto m = pick_manual(); m && !manual.at(*m)) {
        const auto inst = sched.create_instance(*m, hiersched::Policy::fcfs_first_fit, nearest_instance(*m));
        manual[*m] = inst;
        instance_of[*m] = inst;
        instance_nodes[inst] = graph.allocation(*m).node_set();
      }
    } else if (kind <= 7) {
      auto it = instance_of.begin();
      std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(instance_of.size()) - 1));
      hiersched::Job job;
      job.request.nodes = static_cast<int>(rng.uniform_int(1, 3));
      job.request.cores_per_node = static_cast<int>(rng.uniform_int(1, 4));
      job.request.exclusive = rng.uniform() < 0.25;
      job.fixed_duration = rng.uniform() * 3.0;
      job.gang = rng.uniform() < 0.8;
      try {
        sched.submit(it->second, std::move(job));
      } catch (const hiersched::SchedError&) {
      }
    } else {
      engine.run_until(engine.now() + rng.uniform() * 2.0);
    }
    ++out.events;
    ++out.audits;
    if (auto v = audit_graph(graph)) out.violation = v;
  }

  // Drain and tear down.
  if (!out.violation) {
    engine.run();
    while (!manual.empty() && !out.violation) {
      bool progressed = false;
      for (auto it = manual.begin(); it != manual.end();) {
        const AllocationId id = it->first;
        if (!graph.children(id).empty()) {
          ++it;
          continue;
        }
        if (it->second) {
          const auto& inst = sched.instance(*it->second);
          if (!inst.children.empty()) {
            ++it;
            continue;
          }
          sched.destroy_instance(*it->second);
          instance_of.erase(id);
        }
        graph.release(id);
        ++out.releases;
        it = manual.erase(it);
        progressed = true;
        // Freed capacity may unblock queued work elsewhere.
        for (const auto& [alloc, inst] : instance_of) sched.wake(inst);
        engine.run();
        if (auto v = audit_graph(graph)) {
          out.violation = v;
          break;
        }
      }
      if (!progressed) {
        out.violation = "teardown stuck";
        break;
      }
    }
  }
  if (!out.violation) out.violation = audit_placements(sched, graph, instance_nodes);
  out.placements = sched.placements().size();
  out.root_free_at_end = graph.is_fully_free(graph.root()) && graph.live_allocations() == 1;
  return out;
}

}  // namespace converge::oracle
