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

#include "converge/taxonomy.hpp"

#include <algorithm>
#include <deque>
#include <memory>
#include <set>
#include <string>

#include "converge/rng.hpp"
#include "converge/simkernel.hpp"

namespace converge::hiersched {

std::string_view to_string(TaxonomyMode mode) {
  switch (mode) {
    case TaxonomyMode::hierarchical: return "hierarchical";
    case TaxonomyMode::monolithic_partition: return "monolithic_partition";
    case TaxonomyMode::two_level: return "two_level";
    case TaxonomyMode::shared_state: return "shared_state";
  }
  return "unknown";
}

std::optional<TaxonomyMode> parse_taxonomy_mode(std::string_view text) {
  for (TaxonomyMode mode : kAllTaxonomyModes) {
    if (to_string(mode) == text) return mode;
  }
  return std::nullopt;
}

std::vector<Job> make_gang_workload(const GangWorkload& params) {
  std::vector<Job> jobs;
  jobs.reserve(static_cast<std::size_t>(params.jobs));
  for (int i = 0; i < params.jobs; ++i) {
    Job job;
    job.request.nodes = params.gang_size;
    job.request.exclusive = true;
    job.fixed_duration = params.duration;
    job.gang = true;
    job.submit = params.arrival_gap * i;
    jobs.push_back(std::move(job));
  }
  return jobs;
}

namespace {

int owner_of(const Job& job, std::size_t index, int schedulers) {
  const int raw = job.owner >= 0 ? job.owner : static_cast<int>(index);
  return raw % schedulers;
}

SchedMetrics finish(SchedMetrics m, sim::SimTime makespan, double busy_sum, int schedulers) {
  m.makespan = makespan;
  if (m.attempts > 0) {
    m.conflict_fraction = static_cast<double>(m.conflicts) / static_cast<double>(m.attempts);
  }
  if (makespan > 0.0) {
    m.throughput = static_cast<double>(m.completed) / makespan;
    m.busyness = std::min(1.0, busy_sum / (schedulers * makespan));
  }
  return m;
}

// Two child instances, each bound to a carved half of the cluster.
SchedMetrics run_hierarchical(const std::vector<Job>& workload, const resgraph::ClusterSpec& cluster,
                              const TaxonomyOptions& options) {
  sim::Engine engine;
  resgraph::ResourceGraph graph(cluster);
  Scheduler sched(engine, graph, SchedulerOptions{options.decision_cost, true});
  const InstanceId root = sched.create_instance(graph.root());
  std::vector<InstanceId> children;
  int remaining_nodes = cluster.node_count;
  for (int s = 0; s < options.schedulers; ++s) {
    const int share = remaining_nodes / (options.schedulers - s);
    remaining_nodes -= share;
    resgraph::ResourceRequest req{share, cluster.cores_per_node, true, false};
    children.push_back(sched.create_instance(graph.carve(graph.root(), req), Policy::fcfs_first_fit, root));
  }

  SchedMetrics m;
  for (std::size_t i = 0; i < workload.size(); ++i) {
    Job job = workload[i];
    job.request.cores_per_node = cluster.cores_per_node;
    job.request.exclusive = true;
    const InstanceId target = children[static_cast<std::size_t>(owner_of(job, i, options.schedulers))];
    engine.schedule(job.submit, [&sched, &m, target, job]() mutable {
      try {
        sched.submit(target, std::move(job));
      } catch (const SchedError&) {
        ++m.rejected;
      }
    });
  }
  engine.run();

  double busy = 0.0;
  for (InstanceId child : children) {
    busy += sched.instance(child).busy_time;
    m.attempts += sched.instance(child).attempts;
  }
  m.completed = sched.completed();
  // Each instance commits only inside its own allocation, so nothing can
  // invalidate a decision between choosing and committing.
  m.conflicts = 0;
  return finish(m, sched.metrics().makespan, busy, options.schedulers);
}

struct QueuedJob {
  int nodes;
  sim::SimTime duration;
};

// One scheduler loop serving fixed, equally sized partitions.
class MonolithicPartition {
 public:
  MonolithicPartition(const resgraph::ClusterSpec& cluster, const TaxonomyOptions& options)
      : options_(options), partitions_(static_cast<std::size_t>(options.schedulers)) {
    int remaining = cluster.node_count;
    for (int s = 0; s < options.schedulers; ++s) {
      const int share = remaining / (options.schedulers - s);
      remaining -= share;
      partitions_[static_cast<std::size_t>(s)].free = share;
      partitions_[static_cast<std::size_t>(s)].size = share;
    }
  }

  SchedMetrics run(const std::vector<Job>& workload) {
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const Job& job = workload[i];
      const auto p = static_cast<std::size_t>(owner_of(job, i, options_.schedulers));
      QueuedJob q{job.request.nodes, job.fixed_duration};
      engine_.schedule(job.submit, [this, p, q] {
        if (q.nodes > partitions_[p].size) {
          ++metrics_.rejected;
          return;
        }
        partitions_[p].queue.push_back(q);
        blocked_ = false;
        arm();
      });
    }
    engine_.run();
    return finish(metrics_, last_completion_, busy_, 1);
  }

 private:
  struct Partition {
    int size = 0;
    int free = 0;
    std::deque<QueuedJob> queue;
  };

  void arm() {
    if (armed_ || blocked_) return;
    bool any = false;
    for (const auto& p : partitions_) any = any || !p.queue.empty();
    if (!any) return;
    armed_ = true;
    engine_.schedule_after(options_.decision_cost, [this] { decide(); });
  }

  void decide() {
    armed_ = false;
    busy_ += options_.decision_cost;
    ++metrics_.attempts;
    const std::size_t n = partitions_.size();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = (next_ + k) % n;
      Partition& part = partitions_[idx];
      if (part.queue.empty() || part.queue.front().nodes > part.free) continue;
      const QueuedJob job = part.queue.front();
      part.queue.pop_front();
      part.free -= job.nodes;
      next_ = (idx + 1) % n;
      engine_.schedule_after(job.duration, [this, idx, job] {
        partitions_[idx].free += job.nodes;
        ++metrics_.completed;
        last_completion_ = engine_.now();
        blocked_ = false;
        arm();
      });
      arm();
      return;
    }
    blocked_ = true;
  }

  TaxonomyOptions options_;
  sim::Engine engine_;
  std::vector<Partition> partitions_;
  SchedMetrics metrics_;
  std::size_t next_ = 0;
  bool armed_ = false;
  bool blocked_ = false;
  double busy_ = 0.0;
  sim::SimTime last_completion_ = 0.0;
};

// A broker hands out disjoint offers; schedulers accept or decline after
// one decision. Gang jobs may hoard partial offers.
class TwoLevel {
 public:
  TwoLevel(const resgraph::ClusterSpec& cluster, const TaxonomyOptions& options)
      : options_(options), cluster_nodes_(cluster.node_count),
        scheds_(static_cast<std::size_t>(options.schedulers)) {
    for (int n = 0; n < cluster.node_count; ++n) pool_.insert(static_cast<NodeId>(n));
  }

  SchedMetrics run(const std::vector<Job>& workload) {
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const Job& job = workload[i];
      const auto s = static_cast<std::size_t>(owner_of(job, i, options_.schedulers));
      QueuedJob q{job.request.nodes, job.fixed_duration};
      engine_.schedule(job.submit, [this, s, q, gang = job.gang] {
        if (q.nodes > cluster_nodes_) {
          ++metrics_.rejected;
          return;
        }
        scheds_[s].queue.push_back(Pending{q, gang});
        ++pending_;
        request_round();
      });
    }
    arm_watchdog(options_.deadlock_horizon);
    engine_.run();
    const sim::SimTime end = metrics_.deadlocked ? engine_.now() : last_completion_;
    double busy = 0.0;
    for (const auto& s : scheds_) busy += s.busy;
    return finish(metrics_, end, busy, options_.schedulers);
  }

 private:
  struct Pending {
    QueuedJob job;
    bool gang;
  };
  struct Framework {
    std::deque<Pending> queue;
    std::set<NodeId> hoard;
    std::optional<std::set<NodeId>> offer;
    double busy = 0.0;
  };

  void request_round() {
    if (round_pending_) return;
    round_pending_ = true;
    engine_.schedule(engine_.now(), [this] { offer_round(); });
  }

  void offer_round() {
    round_pending_ = false;
    std::vector<std::size_t> eligible;
    for (std::size_t s = 0; s < scheds_.size(); ++s) {
      if (!scheds_[s].queue.empty() && !scheds_[s].offer) eligible.push_back(s);
    }
    if (pool_.empty() || eligible.empty()) return;

    std::vector<std::set<NodeId>> bundles(eligible.size());
    if (whole_pool_next_) {
      // Split offers went nowhere last time; give one framework everything.
      bundles[rotation_ % eligible.size()] = pool_;
      whole_pool_next_ = false;
    } else {
      std::size_t k = 0;
      for (NodeId node : pool_) bundles[(k++ + rotation_) % eligible.size()].insert(node);
    }
    ++rotation_;
    pool_.clear();
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      if (bundles[e].empty()) continue;
      const std::size_t s = eligible[e];
      scheds_[s].offer = std::move(bundles[e]);
      engine_.schedule_after(options_.decision_cost, [this, s] { decide(s); });
    }
  }

  void decide(std::size_t s) {
    Framework& fw = scheds_[s];
    fw.busy += options_.decision_cost;
    ++metrics_.attempts;
    std::set<NodeId> avail = fw.hoard;
    avail.insert(fw.offer->begin(), fw.offer->end());
    fw.offer.reset();
    fw.hoard.clear();

    bool placed = false;
    while (!fw.queue.empty() && fw.queue.front().job.nodes <= static_cast<int>(avail.size())) {
      const QueuedJob job = fw.queue.front().job;
      fw.queue.pop_front();
      std::vector<NodeId> taken(avail.begin(), std::next(avail.begin(), job.nodes));
      for (NodeId n : taken) avail.erase(n);
      placed = true;
      last_progress_ = engine_.now();
      engine_.schedule_after(job.duration, [this, taken] {
        pool_.insert(taken.begin(), taken.end());
        ++metrics_.completed;
        --pending_;
        last_completion_ = engine_.now();
        last_progress_ = engine_.now();
        request_round();
      });
    }
    if (!fw.queue.empty() && options_.hoarding && fw.queue.front().gang) {
      fw.hoard = std::move(avail);
    } else {
      if (!avail.empty() && !placed) whole_pool_next_ = true;
      pool_.insert(avail.begin(), avail.end());
    }
    request_round();
  }

  void arm_watchdog(sim::SimTime delay) {
    engine_.schedule_after(delay, [this] { watchdog(); });
  }

  void watchdog() {
    if (pending_ == 0) return;
    const sim::SimTime idle = engine_.now() - last_progress_;
    if (idle >= options_.deadlock_horizon) {
      bool hoarding = false;
      for (const auto& s : scheds_) hoarding = hoarding || !s.hoard.empty();
      if (hoarding) {
        metrics_.deadlocked = true;
        engine_.request_stop();
        return;
      }
    }
    const sim::SimTime next = last_progress_ + options_.deadlock_horizon;
    arm_watchdog(next > engine_.now() ? next - engine_.now() : options_.deadlock_horizon);
  }

  TaxonomyOptions options_;
  int cluster_nodes_;
  sim::Engine engine_;
  std::set<NodeId> pool_;
  std::vector<Framework> scheds_;
  SchedMetrics metrics_;
  std::size_t pending_ = 0;
  std::size_t rotation_ = 0;
  bool round_pending_ = false;
  bool whole_pool_next_ = false;
  sim::SimTime last_progress_ = 0.0;
  sim::SimTime last_completion_ = 0.0;
};

// Every scheduler sees the whole cluster and commits optimistically. A
// commit whose nodes were claimed since its snapshot is a conflict: it rolls
// back and the scheduler decides again.
class SharedState {
 public:
  SharedState(const resgraph::ClusterSpec& cluster, const TaxonomyOptions& options)
      : options_(options), cluster_nodes_(cluster.node_count),
        holder_(static_cast<std::size_t>(cluster.node_count), kFree) {
    sim::RngStream base(options.seed, "taxonomy/shared_state");
    for (int s = 0; s < options.schedulers; ++s) {
      scheds_.push_back(Framework{{}, {}, false, 0.0, base.derive("sched" + std::to_string(s))});
    }
  }

  SchedMetrics run(const std::vector<Job>& workload) {
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const Job& job = workload[i];
      const auto s = static_cast<std::size_t>(owner_of(job, i, options_.schedulers));
      QueuedJob q{job.request.nodes, job.fixed_duration};
      engine_.schedule(job.submit, [this, s, q] {
        if (q.nodes > cluster_nodes_) {
          ++metrics_.rejected;
          return;
        }
        scheds_[s].queue.push_back(q);
        wake(s);
      });
    }
    engine_.run();
    double busy = 0.0;
    for (const auto& s : scheds_) busy += s.busy;
    return finish(metrics_, last_completion_, busy, options_.schedulers);
  }

 private:
  static constexpr int kFree = -1;

  struct Framework {
    std::deque<QueuedJob> queue;
    std::vector<NodeId> chosen;
    bool deciding = false;
    double busy = 0.0;
    sim::RngStream rng;
  };

  void wake(std::size_t s) {
    Framework& fw = scheds_[s];
    if (fw.deciding || fw.queue.empty()) return;
    std::vector<NodeId> free_nodes;
    for (std::size_t n = 0; n < holder_.size(); ++n) {
      if (holder_[n] == kFree) free_nodes.push_back(static_cast<NodeId>(n));
    }
    const auto need = static_cast<std::size_t>(fw.queue.front().nodes);
    if (need > free_nodes.size()) return;  // wait for a release
    fw.chosen = fw.rng.sample(std::move(free_nodes), need);
    fw.deciding = true;
    fw.busy += options_.decision_cost;
    engine_.schedule_after(options_.decision_cost, [this, s] { arrive(s); });
  }

  void arrive(std::size_t s) {
    commits_.push_back(s);
    if (resolver_pending_) return;
    resolver_pending_ = true;
    // Runs after every commit already queued for this instant.
    engine_.schedule(engine_.now(), [this] { resolve(); });
  }

  void resolve() {
    resolver_pending_ = false;
    std::vector<std::size_t> batch;
    batch.swap(commits_);
    // Lower scheduler id wins ties.
    std::sort(batch.begin(), batch.end());
    for (std::size_t s : batch) {
      Framework& fw = scheds_[s];
      fw.deciding = false;
      ++metrics_.attempts;
      const bool clear = std::all_of(fw.chosen.begin(), fw.chosen.end(),
                                     [this](NodeId n) { return holder_[n] == kFree; });
      if (!clear) {
        ++metrics_.conflicts;
        continue;
      }
      const QueuedJob job = fw.queue.front();
      fw.queue.pop_front();
      for (NodeId n : fw.chosen) holder_[n] = static_cast<int>(s);
      std::vector<NodeId> taken = fw.chosen;
      engine_.schedule_after(job.duration, [this, taken] {
        for (NodeId n : taken) holder_[n] = kFree;
        ++metrics_.completed;
        last_completion_ = engine_.now();
        for (std::size_t k = 0; k < scheds_.size(); ++k) wake(k);
      });
    }
    for (std::size_t s : batch) wake(s);
  }

  TaxonomyOptions options_;
  int cluster_nodes_;
  sim::Engine engine_;
  std::vector<int> holder_;
  std::vector<Framework> scheds_;
  std::vector<std::size_t> commits_;
  bool resolver_pending_ = false;
  SchedMetrics metrics_;
  sim::SimTime last_completion_ = 0.0;
};

}  // namespace

SchedMetrics run_taxonomy(TaxonomyMode mode, const std::vector<Job>& workload,
                          const resgraph::ClusterSpec& cluster, const TaxonomyOptions& options) {
  cluster.validate();
  if (workload.empty()) throw std::invalid_argument("taxonomy workload is empty");
  if (options.schedulers < 1) throw std::invalid_argument("need at least one scheduler");
  switch (mode) {
    case TaxonomyMode::hierarchical: return run_hierarchical(workload, cluster, options);
    case TaxonomyMode::monolithic_partition: return MonolithicPartition(cluster, options).run(workload);
    case TaxonomyMode::two_level: return TwoLevel(cluster, options).run(workload);
    case TaxonomyMode::shared_state: return SharedState(cluster, options).run(workload);
  }
  throw std::invalid_argument("unknown taxonomy mode");
}

}  // namespace converge::hiersched
