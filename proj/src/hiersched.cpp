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

#include "converge/hiersched.hpp"

#include <algorithm>

namespace converge::hiersched {

Scheduler::Scheduler(sim::Engine& engine, resgraph::ResourceGraph& graph, SchedulerOptions options)
    : engine_(engine), graph_(graph), options_(options) {}

Instance& Scheduler::instance_mut(InstanceId id) {
  auto it = instances_.find(id);
  if (it == instances_.end()) {
    throw SchedError(SchedErrc::unknown_instance, "unknown instance " + std::to_string(to_underlying(id)));
  }
  return it->second;
}

const Instance& Scheduler::instance(InstanceId id) const {
  return const_cast<Scheduler*>(this)->instance_mut(id);
}

Job& Scheduler::job_mut(JobId id) {
  auto it = jobs_.find(to_underlying(id));
  if (it == jobs_.end()) {
    throw SchedError(SchedErrc::unknown_job, "unknown job " + std::to_string(to_underlying(id)));
  }
  return it->second;
}

const Job& Scheduler::job(JobId id) const { return const_cast<Scheduler*>(this)->job_mut(id); }

InstanceId Scheduler::create_instance(AllocationId alloc, Policy policy, std::optional<InstanceId> parent) {
  if (!graph_.contains(alloc)) {
    throw SchedError(SchedErrc::unknown_allocation,
                     "unknown allocation " + std::to_string(resgraph::to_underlying(alloc)));
  }
  if (parent) {
    const AllocationId parent_alloc = instance(*parent).allocation;
    // The new allocation must descend from the parent's.
    std::optional<AllocationId> cursor = alloc;
    bool nested = false;
    while (cursor) {
      const auto& a = graph_.allocation(*cursor);
      if (a.parent == parent_alloc) {
        nested = true;
        break;
      }
      cursor = a.parent;
    }
    if (!nested) {
      throw SchedError(SchedErrc::not_within_parent, "child instance allocation is not carved from its parent");
    }
  }
  const InstanceId id{next_instance_++};
  Instance inst;
  inst.id = id;
  inst.allocation = alloc;
  inst.policy = policy;
  inst.parent = parent;
  instances_.emplace(id, std::move(inst));
  if (parent) instance_mut(*parent).children.push_back(id);
  return id;
}

void Scheduler::destroy_instance(InstanceId id, bool release_allocation) {
  Instance& inst = instance_mut(id);
  if (!inst.queue.empty() || inst.running != 0 || !inst.children.empty()) {
    throw SchedError(SchedErrc::busy, "instance " + std::to_string(to_underlying(id)) + " is still active");
  }
  if (release_allocation && !graph_.children(inst.allocation).empty()) {
    throw SchedError(SchedErrc::busy, "allocation of instance " + std::to_string(to_underlying(id)) +
                                          " still has children");
  }
  if (inst.parent) {
    auto& siblings = instance_mut(*inst.parent).children;
    siblings.erase(std::remove(siblings.begin(), siblings.end(), id), siblings.end());
  }
  const AllocationId alloc = inst.allocation;
  instances_.erase(id);
  if (release_allocation) graph_.release(alloc);
  // Job allocations that hosted nested instances are released once empty.
  for (auto it = lingering_.begin(); it != lingering_.end();) {
    if (graph_.is_fully_free(it->first)) {
      const InstanceId owner = it->second;
      graph_.release(it->first);
      it = lingering_.erase(it);
      wake(owner);
    } else {
      ++it;
    }
  }
}

JobId Scheduler::submit(InstanceId id, Job job) {
  Instance& inst = instance_mut(id);
  job.request.validate();
  const auto& alloc = graph_.allocation(inst.allocation);
  if (static_cast<std::size_t>(job.request.nodes) > alloc.node_count() ||
      !graph_.satisfiable_ever(inst.allocation, job.request)) {
    throw SchedError(SchedErrc::unsatisfiable,
                     "request for " + std::to_string(job.request.nodes) +
                         " node(s) can never fit instance " + std::to_string(to_underlying(id)));
  }
  const JobId jid{next_job_++};
  job.id = jid;
  job.state = JobState::pending;
  job.submit = engine_.now();
  job.placed_nodes = 0;
  job.finished_nodes = 0;
  jobs_.emplace(to_underlying(jid), std::move(job));
  inst.queue.push_back(jid);
  ++outstanding_;
  arm(inst);
  return jid;
}

std::optional<Placement> Scheduler::try_place_head(Instance& inst) {
  if (inst.queue.empty()) return std::nullopt;
  Job& job = job_mut(inst.queue.front());
  const int remaining = job.request.nodes - job.placed_nodes;

  std::optional<AllocationId> alloc;
  if (job.gang) {
    alloc = graph_.try_carve(inst.allocation, job.request);
  } else {
    resgraph::ResourceRequest partial = job.request;
    for (int k = remaining; k >= 1 && !alloc; --k) {
      partial.nodes = k;
      alloc = graph_.try_carve(inst.allocation, partial);
    }
  }
  if (!alloc) return std::nullopt;

  const auto& granted = graph_.allocation(*alloc);
  if (job.placed_nodes == 0) {
    job.start = engine_.now();
    job.state = JobState::running;
    job.realized_duration = job.duration_model ? job.duration_model(job) : job.fixed_duration;
    if (job.realized_duration < 0.0) job.realized_duration = 0.0;
    ++inst.running;
  }
  job.placed_nodes += static_cast<int>(granted.node_count());
  if (job.placed_nodes >= job.request.nodes) inst.queue.pop_front();

  Placement placement{inst.id, job.id, *alloc, granted.node_slices, engine_.now(),
                      engine_.now() + job.realized_duration};
  placements_.push_back(placement);
  const InstanceId iid = inst.id;
  const JobId jid = job.id;
  const AllocationId aid = *alloc;
  engine_.schedule(placement.end, [this, iid, jid, aid] { finish_portion(iid, jid, aid); },
                   "complete job " + std::to_string(to_underlying(jid)));
  return placement;
}

void Scheduler::finish_portion(InstanceId iid, JobId jid, AllocationId alloc) {
  Job& job = job_mut(jid);
  job.finished_nodes += static_cast<int>(graph_.allocation(alloc).node_count());
  if (graph_.is_fully_free(alloc)) {
    graph_.release(alloc);
  } else {
    lingering_.emplace(alloc, iid);
  }
  const bool done = job.finished_nodes >= job.request.nodes;
  auto it = instances_.find(iid);
  if (done) {
    job.state = JobState::done;
    job.end = engine_.now();
    last_completion_ = engine_.now();
    ++completed_;
    --outstanding_;
    if (it != instances_.end()) --it->second.running;
  }
  if (it != instances_.end()) wake(iid);
  if (done) {
    for (const auto& hook : hooks_) hook(job);
  }
}

void Scheduler::wake(InstanceId id) {
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  it->second.blocked = false;
  arm(it->second);
}

void Scheduler::arm(Instance& inst) {
  if (!options_.auto_dispatch || inst.armed || inst.blocked || inst.queue.empty()) return;
  inst.armed = true;
  const InstanceId id = inst.id;
  engine_.schedule_after(options_.decision_cost, [this, id] { decide(id); },
                         "decide instance " + std::to_string(to_underlying(id)));
}

void Scheduler::decide(InstanceId id) {
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  Instance& inst = it->second;
  inst.armed = false;
  if (options_.decision_cost > 0.0) {
    inst.busy_time += options_.decision_cost;
    ++inst.attempts;
    if (try_place_head(inst)) {
      arm(inst);
    } else if (!inst.queue.empty()) {
      inst.blocked = true;
    }
    return;
  }
  step_schedule(id);
  if (!inst.queue.empty()) inst.blocked = true;
}

std::vector<Placement> Scheduler::step_schedule(InstanceId id) {
  Instance& inst = instance_mut(id);
  std::vector<Placement> placed;
  while (!inst.queue.empty()) {
    ++inst.attempts;
    auto p = try_place_head(inst);
    if (!p) break;
    placed.push_back(std::move(*p));
  }
  return placed;
}

SchedMetrics Scheduler::metrics() const {
  SchedMetrics m;
  m.makespan = std::max(last_completion_, 0.0);
  m.completed = completed_;
  double busy_sum = 0.0;
  for (const auto& [id, inst] : instances_) {
    busy_sum += inst.busy_time;
    m.attempts += inst.attempts;
  }
  if (m.makespan > 0.0) {
    m.throughput = static_cast<double>(completed_) / m.makespan;
    if (!instances_.empty()) {
      m.busyness = std::min(1.0, busy_sum / (static_cast<double>(instances_.size()) * m.makespan));
    }
  }
  return m;
}

}  // namespace converge::hiersched
