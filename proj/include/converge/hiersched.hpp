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
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "converge/resgraph.hpp"
#include "converge/simkernel.hpp"

namespace converge::hiersched {

using resgraph::AllocationId;
using resgraph::NodeId;

enum class InstanceId : std::uint32_t {};
enum class JobId : std::uint64_t {};

inline std::uint64_t to_underlying(JobId id) { return static_cast<std::uint64_t>(id); }
inline std::uint32_t to_underlying(InstanceId id) { return static_cast<std::uint32_t>(id); }

enum class JobState { pending, running, done };
enum class Policy { fcfs_first_fit };

struct Job {
  JobId id{0};
  resgraph::ResourceRequest request;
  /// Used when duration_model is empty.
  sim::SimTime fixed_duration = 0.0;
  /// Realized duration, evaluated once when the job (or a portion of it) starts.
  std::function<sim::SimTime(const Job&)> duration_model;
  /// All-or-nothing placement. Non-gang jobs may start on a subset of their
  /// nodes and pick up the rest as capacity frees.
  bool gang = true;
  /// Scheduler index for the comparator runs; -1 assigns round-robin.
  int owner = -1;
  std::uint64_t tag = 0;

  JobState state = JobState::pending;
  sim::SimTime submit = 0.0;
  sim::SimTime start = 0.0;
  sim::SimTime end = 0.0;
  int placed_nodes = 0;
  int finished_nodes = 0;
  sim::SimTime realized_duration = 0.0;
};

struct Placement {
  InstanceId instance;
  JobId job;
  AllocationId alloc;
  std::map<NodeId, int> slices;
  sim::SimTime start;
  sim::SimTime end;
};

struct SchedMetrics {
  double throughput = 0.0;         // completed jobs per virtual second
  double conflict_fraction = 0.0;  // conflicts / placement attempts
  double busyness = 0.0;           // scheduler-loop occupancy, averaged over schedulers
  bool deadlocked = false;
  sim::SimTime makespan = 0.0;
  std::size_t completed = 0;
  std::size_t rejected = 0;
  std::size_t attempts = 0;
  std::size_t conflicts = 0;
};

enum class SchedErrc { unknown_instance, unknown_job, unknown_allocation, not_within_parent, unsatisfiable, busy };

class SchedError : public std::runtime_error {
 public:
  SchedError(SchedErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  SchedErrc code() const { return code_; }

 private:
  SchedErrc code_;
};

struct SchedulerOptions {
  /// Virtual seconds per placement attempt. 1/800 s matches the quoted
  /// single-instance scheduling rate.
  sim::SimTime decision_cost = 1.0 / 800.0;
  /// Drive queues from the event loop. When false, only explicit
  /// step_schedule() calls place jobs.
  bool auto_dispatch = true;
};

struct Instance {
  InstanceId id;
  AllocationId allocation;
  Policy policy = Policy::fcfs_first_fit;
  std::optional<InstanceId> parent;
  std::vector<InstanceId> children;
  std::deque<JobId> queue;
  std::size_t running = 0;
  sim::SimTime busy_time = 0.0;
  std::size_t attempts = 0;
  bool armed = false;
  bool blocked = false;
};

// Flux-style scheduler instances. Each instance owns exactly one allocation
// and only ever carves job allocations out of it; child instances are bound
// to allocations carved from their parent's.
class Scheduler {
 public:
  using CompletionHook = std::function<void(const Job&)>;

  Scheduler(sim::Engine& engine, resgraph::ResourceGraph& graph, SchedulerOptions options = {});
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  InstanceId create_instance(AllocationId alloc, Policy policy = Policy::fcfs_first_fit,
                             std::optional<InstanceId> parent = std::nullopt);
  /// Requires an idle instance with no children. With `release_allocation`
  /// the instance's allocation goes too, which lets a job allocation that
  /// hosted it be released.
  void destroy_instance(InstanceId id, bool release_allocation = false);

  /// Queues a job. Rejects requests the instance's allocation could never
  /// satisfy, since those would starve the FCFS queue forever.
  JobId submit(InstanceId id, Job job);

  /// Places head-of-queue jobs in order until the head does not fit. No
  /// backfill past a blocked head.
  std::vector<Placement> step_schedule(InstanceId id);

  void on_completion(CompletionHook hook) { hooks_.push_back(std::move(hook)); }

  /// Re-arms a blocked instance after capacity changed outside the scheduler.
  void wake(InstanceId id);

  const Instance& instance(InstanceId id) const;
  const Job& job(JobId id) const;
  const std::vector<Placement>& placements() const { return placements_; }
  std::size_t completed() const { return completed_; }
  std::size_t outstanding() const { return outstanding_; }
  const SchedulerOptions& options() const { return options_; }
  resgraph::ResourceGraph& graph() { return graph_; }

  /// Metrics over every instance; makespan is the last completion time.
  SchedMetrics metrics() const;

 private:
  Instance& instance_mut(InstanceId id);
  Job& job_mut(JobId id);
  std::optional<Placement> try_place_head(Instance& inst);
  void finish_portion(InstanceId inst, JobId job, AllocationId alloc);
  void arm(Instance& inst);
  void decide(InstanceId id);

  sim::Engine& engine_;
  resgraph::ResourceGraph& graph_;
  SchedulerOptions options_;
  std::map<InstanceId, Instance> instances_;
  std::unordered_map<std::uint64_t, Job> jobs_;
  std::vector<Placement> placements_;
  std::vector<CompletionHook> hooks_;
  // Job allocations whose release waits on nested instances shutting down.
  std::map<AllocationId, InstanceId> lingering_;
  std::uint32_t next_instance_ = 1;
  std::uint64_t next_job_ = 1;
  std::size_t completed_ = 0;
  std::size_t outstanding_ = 0;
  sim::SimTime last_completion_ = 0.0;
};

}  // namespace converge::hiersched
