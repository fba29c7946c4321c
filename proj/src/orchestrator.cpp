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

#include "converge/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>

#include "converge/hiersched.hpp"
#include "converge/mlserve.hpp"
#include "converge/podlayer.hpp"
#include "converge/resgraph.hpp"
#include "converge/rng.hpp"
#include "converge/simkernel.hpp"
#include "converge/taxonomy.hpp"
#include "converge/textfmt.hpp"

namespace converge::orchestrator {

using workloads::Environment;

namespace {

void check_hygiene(const resgraph::ResourceGraph& graph) {
  graph.check_invariants();
  if (!graph.is_fully_free(graph.root()) || graph.live_allocations() != 1) {
    throw std::logic_error("scenario leaked " + std::to_string(graph.live_allocations() - 1) + " allocation(s)");
  }
}

ScenarioConfig as_experiment(ScenarioConfig cfg, Experiment e) {
  cfg.experiment = e;
  cfg.validate();
  return cfg;
}

std::vector<double> osu_message_sizes(const ScalingParams& p) {
  std::vector<double> sizes;
  for (double m = p.osu_min_bytes; m <= p.osu_max_bytes; m *= 2.0) sizes.push_back(m);
  return sizes;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<RawSample>& samples, const workloads::WorkloadModel& model) {
  std::vector<AggregateRow> rows;
  std::map<std::pair<std::string, int>, std::vector<double>> values;
  for (const auto& s : samples) {
    auto key = std::make_pair(s.environment, s.nodes);
    if (!values.count(key)) {
      AggregateRow row;
      row.environment = s.environment;
      row.nodes = s.nodes;
      row.ranks = s.ranks;
      rows.push_back(row);
    }
    values[key].push_back(s.value);
  }
  for (auto& row : rows) {
    const auto& v = values.at({row.environment, row.nodes});
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    row.mean_s = mean;
    row.stddev_s = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    row.samples = static_cast<int>(v.size());
    if (auto env = workloads::parse_environment(row.environment)) {
      row.cpu_pct = model.cpu_utilization(*env, row.nodes);
    }
  }
  return rows;
}

bool bundle_consistent(const ReportBundle& bundle, const workloads::WorkloadModel& model) {
  const auto recomputed = aggregate(bundle.samples, model);
  if (recomputed.size() != bundle.aggregates.size()) return false;
  for (std::size_t i = 0; i < recomputed.size(); ++i) {
    const auto& a = recomputed[i];
    const auto& b = bundle.aggregates[i];
    if (a.environment != b.environment || a.nodes != b.nodes || a.ranks != b.ranks) return false;
    if (a.samples != bundle.iterations || b.samples != bundle.iterations) return false;
    const double tol = 1e-9 * std::max(1.0, std::abs(a.mean_s));
    if (std::abs(a.mean_s - b.mean_s) > tol || std::abs(a.stddev_s - b.stddev_s) > tol) return false;
    if (a.cpu_pct != b.cpu_pct) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

ReportBundle run_scaling_study(const ScenarioConfig& cfg_in, const workloads::WorkloadModel& model) {
  const ScenarioConfig cfg = as_experiment(cfg_in, Experiment::scaling_study);
  const auto& p = cfg.scaling;
  const int cores = cfg.cluster.cores_per_node;

  sim::Engine engine;
  resgraph::ResourceGraph graph(cfg.cluster);
  sim::RngStream rng(cfg.required_seed(), "scaling/lammps");

  ReportBundle bundle;
  bundle.experiment = std::string(to_string(Experiment::scaling_study));
  bundle.seed = cfg.required_seed();
  bundle.iterations = p.iterations;

  struct Run {
    Environment env;
    int size;
    int iteration;
  };
  std::vector<Run> plan;
  for (Environment env : p.environments) {
    for (int size : p.sizes) {
      for (int it = 0; it < p.iterations; ++it) plan.push_back({env, size, it});
    }
  }
  const auto message_sizes = osu_message_sizes(p);

  std::size_t next = 0;
  std::function<void()> launch = [&]() {
    if (next == plan.size()) return;
    const Run run = plan[next++];
    const bool usernetes = workloads::runs_usernetes(run.env);
    // The pod layer needs its own control-plane node next to the workers.
    resgraph::ResourceRequest request;
    request.nodes = run.size + (usernetes ? 1 : 0);
    request.cores_per_node = cores;
    request.exclusive = true;
    request.require_bypass_nic = usernetes;
    const auto alloc = graph.carve(graph.root(), request);

    if (usernetes) {
      auto kube = podlayer::start_usernetes(graph, alloc);
      kube.apply(podlayer::bypass_device_daemonset());
      if (run.env == Environment::usernetes) {
        podlayer::PodSpec lammps;
        lammps.name = "lammps";
        lammps.kind = podlayer::PodKind::job_set;
        lammps.replicas = run.size;
        lammps.cpu_request = cores;
        lammps.requires_bypass_nic = true;
        if (kube.apply(lammps).size() != static_cast<std::size_t>(run.size)) {
          throw std::logic_error("lammps pods were not all placed");
        }
      }
    }

    const std::string env_name(workloads::to_string(run.env));
    const int ranks = run.size * p.ranks_per_node;
    const double walltime =
        model.lammps_walltime(run.env, run.size, ranks, {}, rng, workloads::DurationMode::table);
    bundle.samples.push_back({env_name, run.size, ranks, run.iteration, walltime});

    // The OSU models are deterministic; one series per cell is enough.
    if (run.iteration == 0) {
      using workloads::OsuBenchmark;
      for (double m : message_sizes) {
        for (OsuBenchmark b : {OsuBenchmark::bandwidth, OsuBenchmark::latency, OsuBenchmark::allreduce}) {
          bundle.osu.push_back({env_name, run.size, std::string(workloads::to_string(b)), m,
                                model.osu_replay(run.env, b, run.size, m)});
        }
      }
      bundle.osu.push_back({env_name, run.size, std::string(workloads::to_string(OsuBenchmark::barrier)), 0.0,
                            model.osu_replay(run.env, OsuBenchmark::barrier, run.size, 0.0)});
    }

    engine.schedule_after(
        walltime,
        [&, alloc]() {
          graph.release(alloc);
          launch();
        },
        "lammps-done");
  };

  engine.schedule(0.0, launch, "scaling-start");
  engine.run();
  check_hygiene(graph);

  bundle.virtual_seconds = engine.now();
  bundle.aggregates = aggregate(bundle.samples, model);
  return bundle;
}

// ---------------------------------------------------------------------------

ReportBundle run_taxonomy(const ScenarioConfig& cfg_in) {
  const ScenarioConfig cfg = as_experiment(cfg_in, Experiment::taxonomy);
  const auto& t = cfg.taxonomy;

  resgraph::ClusterSpec cluster;
  cluster.node_count = t.nodes;
  cluster.cores_per_node = cfg.cluster.cores_per_node;

  hiersched::TaxonomyOptions options;
  options.decision_cost = t.decision_cost;
  options.hoarding = t.hoarding;
  options.deadlock_horizon = t.deadlock_horizon;
  options.seed = cfg.required_seed();

  ReportBundle bundle;
  bundle.experiment = std::string(to_string(Experiment::taxonomy));
  bundle.seed = cfg.required_seed();
  bundle.iterations = 1;

  auto record = [&](const std::string& scenario, hiersched::TaxonomyMode mode, int gang, int jobs,
                    const hiersched::SchedMetrics& m) {
    TaxonomyRow row;
    row.scenario = scenario;
    row.mode = std::string(hiersched::to_string(mode));
    row.gang_size = gang;
    row.jobs = jobs;
    row.conflict_fraction = m.conflict_fraction;
    row.busyness = m.busyness;
    row.deadlocked = m.deadlocked;
    row.throughput = m.throughput;
    row.makespan = m.makespan;
    row.completed = m.completed;
    row.rejected = m.rejected;
    bundle.taxonomy.push_back(row);
    bundle.virtual_seconds = std::max(bundle.virtual_seconds, m.makespan);
  };

  for (auto mode : hiersched::kAllTaxonomyModes) {
    for (int gang : t.gang_sizes) {
      hiersched::GangWorkload params;
      params.jobs = t.jobs;
      params.gang_size = gang;
      params.duration = t.duration;
      params.arrival_gap = t.arrival_gap;
      record("sweep", mode, gang, t.jobs, hiersched::run_taxonomy(mode, hiersched::make_gang_workload(params), cluster, options));
    }
  }

  // Two gangs that each need more than half the cluster.
  const int oversized = t.oversized_gang > 0 ? t.oversized_gang : t.nodes / 2 + 1;
  if (oversized <= t.nodes) {
    hiersched::GangWorkload params;
    params.jobs = 2;
    params.gang_size = oversized;
    params.duration = t.duration;
    for (auto mode : hiersched::kAllTaxonomyModes) {
      record("oversized_gang", mode, oversized, 2,
             hiersched::run_taxonomy(mode, hiersched::make_gang_workload(params), cluster, options));
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------

ReportBundle run_hybrid(const ScenarioConfig& cfg_in, const workloads::WorkloadModel& model_in) {
  const ScenarioConfig cfg = as_experiment(cfg_in, Experiment::hybrid);
  const auto& h = cfg.hybrid;
  const int cores = cfg.cluster.cores_per_node;
  const int ranks = h.job_nodes * h.ranks_per_node;

  workloads::WorkloadModel model = model_in;
  model.volumetric().noise_sigma = h.noise_sigma;

  sim::Engine engine;
  resgraph::ResourceGraph graph(cfg.cluster);
  hiersched::Scheduler sched(engine, graph);

  // The batch job: one allocation split into the service node (A) and the
  // simulation nodes (B).
  resgraph::ResourceRequest whole{h.job_nodes + 1, cores, true, false};
  const auto batch = graph.carve(graph.root(), whole);
  const auto batch_inst = sched.create_instance(batch);
  const auto alloc_a = graph.carve(batch, {1, cores, true, false});
  const auto alloc_b = graph.carve(batch, {h.job_nodes, cores, true, false});
  for (auto node : graph.allocation(alloc_a).node_set()) {
    if (graph.allocation(alloc_b).node_set().count(node)) {
      throw std::logic_error("service and simulation allocations share a node");
    }
  }
  const auto sim_inst = sched.create_instance(alloc_b, hiersched::Policy::fcfs_first_fit, batch_inst);

  podlayer::UsernetesOptions kube_options;
  kube_options.control_plane_schedulable = true;
  auto kube = podlayer::start_usernetes(graph, alloc_a, kube_options);
  podlayer::PodSpec server_pod;
  server_pod.name = "ml-server";
  server_pod.kind = podlayer::PodKind::deployment;
  server_pod.cpu_request = 1.0;
  kube.apply(server_pod);

  mlserve::Service service;
  std::unique_ptr<mlserve::SocketServer> server;
  std::unique_ptr<mlserve::Mount> mount;
  if (h.mount == MountKind::socket) {
    server = std::make_unique<mlserve::SocketServer>(service, 0);
    mount = std::make_unique<mlserve::SocketMount>("127.0.0.1", server->port());
  } else {
    mount = std::make_unique<mlserve::InProcessMount>(service);
  }
  auto call = [&](const mlserve::ServiceRequest& request) {
    auto response = mount->call(request);
    if (response.status != mlserve::Status::ok) {
      auto err = response.body.find("error");
      throw std::runtime_error("ml service refused " + std::string(mlserve::to_string(request.verb)) + ": " +
                               (err == response.body.end() ? std::string("no detail") : err->second));
    }
    return response;
  };

  const std::vector<std::pair<std::string, mlserve::Body>> models = {
      {"linear_sgd", {{"learning_rate", format_real(h.sgd_learning_rate)}}},
      {"bayesian",
       {{"alpha", format_real(h.bayes_alpha)},
        {"beta", format_real(h.bayes_beta)},
        {"fit_intercept", h.bayes_fit_intercept ? "true" : "false"}}},
      {"passive_aggressive",
       {{"c", format_real(h.pa_c)},
        {"epsilon", format_real(h.pa_epsilon)},
        {"fit_intercept", h.pa_fit_intercept ? "true" : "false"}}},
  };
  for (const auto& [name, params] : models) {
    call(mlserve::create_request(name, *ml::parse_model_type(name), params));
  }

  sim::RngStream problem_rng(cfg.required_seed(), "hybrid/problems");
  sim::RngStream walltime_rng(cfg.required_seed(), "hybrid/walltime");

  struct Pending {
    workloads::LammpsProblem problem;
    bool test = false;
    int index = 0;
    std::vector<double> predictions;
  };
  std::map<std::uint64_t, Pending> pending;
  std::vector<std::vector<HybridPoint>> points(models.size());
  int submitted_train = 0;
  int completed_train = 0;
  int submitted_test = 0;
  int in_flight = 0;
  std::uint64_t next_tag = 0;

  auto features = [](const workloads::LammpsProblem& p) {
    return ml::FeatureVector{{"x", p.x}, {"y", p.y}, {"z", p.z}};
  };

  auto submit_one = [&](bool test) {
    Pending job_state;
    job_state.test = test;
    job_state.index = test ? submitted_test++ : submitted_train++;
    job_state.problem.x = static_cast<int>(problem_rng.uniform_int(h.dim_min, h.dim_max));
    job_state.problem.y = static_cast<int>(problem_rng.uniform_int(h.dim_min, h.dim_max));
    job_state.problem.z = static_cast<int>(problem_rng.uniform_int(h.dim_min, h.dim_max));
    if (test) {
      for (const auto& [name, params] : models) {
        auto response = call(mlserve::predict_request(name, features(job_state.problem)));
        job_state.predictions.push_back(*parse_real(response.body.at("prediction")));
      }
    }
    const std::uint64_t tag = next_tag++;
    const auto problem = job_state.problem;
    pending.emplace(tag, std::move(job_state));

    hiersched::Job job;
    job.request = {h.job_nodes, cores, true, false};
    job.tag = tag;
    job.duration_model = [&, problem](const hiersched::Job&) {
      return model.lammps_walltime(h.environment, h.job_nodes, ranks, problem, walltime_rng,
                                   workloads::DurationMode::model);
    };
    sched.submit(sim_inst, std::move(job));
    ++in_flight;
  };

  // Keep `width` jobs in flight; tests start once every training run is in.
  auto top_up = [&]() {
    while (in_flight < h.width) {
      if (submitted_train < h.train_count) {
        submit_one(false);
      } else if (completed_train == h.train_count && submitted_test < h.test_count) {
        submit_one(true);
      } else {
        break;
      }
    }
  };

  sched.on_completion([&](const hiersched::Job& job) {
    auto it = pending.find(job.tag);
    if (it == pending.end()) return;
    --in_flight;
    const Pending& state = it->second;
    const double walltime = job.realized_duration;
    if (!state.test) {
      for (const auto& [name, params] : models) call(mlserve::train_request(name, features(state.problem), walltime));
      ++completed_train;
    } else {
      for (std::size_t i = 0; i < models.size(); ++i) {
        call(mlserve::record_truth_request(models[i].first, walltime, state.predictions[i]));
        points[i].push_back({state.index, state.problem.x, state.problem.y, state.problem.z, walltime,
                             state.predictions[i]});
      }
    }
    pending.erase(it);
    top_up();
  });

  engine.schedule(0.0, top_up, "hybrid-start");
  engine.run();

  ReportBundle bundle;
  bundle.experiment = std::string(to_string(Experiment::hybrid));
  bundle.seed = cfg.required_seed();
  bundle.iterations = 1;
  bundle.virtual_seconds = engine.now();

  if (completed_train != h.train_count || points.front().size() != static_cast<std::size_t>(h.test_count)) {
    throw std::logic_error("hybrid run stopped before every job completed");
  }

  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string& name = models[i].first;
    HybridSeries series;
    series.model = name;
    series.type = name;
    auto metrics = call(mlserve::metrics_request(name));
    if (metrics.body.at("r2") != "null") series.r_squared = parse_real(metrics.body.at("r2"));

    std::vector<std::pair<double, double>> pairs;
    for (const auto& pt : points[i]) pairs.emplace_back(pt.y_true, pt.y_pred);
    const auto local = ml::r_squared(pairs);
    if (local.has_value() != series.r_squared.has_value() ||
        (local && std::abs(*local - *series.r_squared) > 1e-12)) {
      throw std::logic_error("service R^2 disagrees with the recorded pairs for " + name);
    }

    auto stats = call(mlserve::stats_request(name));
    series.samples_seen = std::stoull(stats.body.at("samples_seen"));
    series.points = std::move(points[i]);
    std::sort(series.points.begin(), series.points.end(),
              [](const HybridPoint& a, const HybridPoint& b) { return a.index < b.index; });
    bundle.hybrid.push_back(std::move(series));
  }

  mount.reset();
  if (server) server->stop();
  sched.destroy_instance(sim_inst);
  graph.release(alloc_b);
  graph.release(alloc_a);
  sched.destroy_instance(batch_inst);
  graph.release(batch);
  check_hygiene(graph);
  return bundle;
}

ReportBundle run(const ScenarioConfig& cfg) {
  cfg.validate();
  switch (cfg.experiment) {
    case Experiment::scaling_study: return run_scaling_study(cfg);
    case Experiment::taxonomy: return run_taxonomy(cfg);
    case Experiment::hybrid: return run_hybrid(cfg);
  }
  throw ConfigError("unknown experiment");
}

}  // namespace converge::orchestrator
