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

#include "converge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace converge::orchestrator {

namespace pt = boost::property_tree;

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::scaling_study: return "scaling_study";
    case Experiment::taxonomy: return "taxonomy";
    case Experiment::hybrid: return "hybrid";
  }
  return "unknown";
}

std::optional<Experiment> parse_experiment(std::string_view text) {
  for (Experiment e : {Experiment::scaling_study, Experiment::taxonomy, Experiment::hybrid}) {
    if (to_string(e) == text) return e;
  }
  return std::nullopt;
}

namespace {

// Known keys per section; anything else is a typo worth failing on.
const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"scenario", {"experiment", "seed", "output"}},
      {"cluster", {"nodes", "cores_per_node", "bypass_nic"}},
      {"scaling", {"sizes", "iterations", "environments", "ranks_per_node", "osu_min_bytes", "osu_max_bytes"}},
      {"taxonomy",
       {"nodes", "gang_sizes", "jobs", "duration", "arrival_gap", "decision_cost", "hoarding",
        "deadlock_horizon", "oversized_gang"}},
      {"hybrid",
       {"train_count", "test_count", "dim_min", "dim_max", "job_nodes", "ranks_per_node", "width",
        "noise_sigma", "environment", "mount", "sgd_learning_rate", "bayes_alpha", "bayes_beta",
        "bayes_fit_intercept", "pa_c", "pa_epsilon", "pa_fit_intercept"}},
  };
  return keys;
}

template <typename T>
T get(const pt::ptree& tree, const std::string& path, T fallback) {
  auto node = tree.get_child_optional(path);
  if (!node) return fallback;
  if constexpr (std::is_unsigned_v<T>) {
    if (node->data().find('-') != std::string::npos) {
      throw ConfigError("key '" + path + "' must not be negative");
    }
  }
  auto value = node->get_value_optional<T>();
  if (!value) throw ConfigError("key '" + path + "' has an invalid value '" + node->data() + "'");
  return *value;
}

bool get_flag(const pt::ptree& tree, const std::string& path, bool fallback) {
  auto text = tree.get_optional<std::string>(path);
  if (!text) return fallback;
  if (*text == "true" || *text == "1" || *text == "yes") return true;
  if (*text == "false" || *text == "0" || *text == "no") return false;
  throw ConfigError("key '" + path + "' must be true or false");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<int> int_list(const pt::ptree& tree, const std::string& path, std::vector<int> fallback) {
  auto text = tree.get_optional<std::string>(path);
  if (!text) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(*text)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("key '" + path + "' has a non-integer entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("key '" + path + "' is empty");
  return out;
}

}  // namespace

ScenarioConfig ScenarioConfig::parse(std::string_view ini_text) {
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    auto known = known_keys().find(section);
    if (known == known_keys().end()) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!known->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    }
  }

  ScenarioConfig cfg;
  const auto experiment = tree.get<std::string>("scenario.experiment", "scaling_study");
  auto parsed = parse_experiment(experiment);
  if (!parsed) throw ConfigError("unknown experiment '" + experiment + "'");
  cfg.experiment = *parsed;
  if (tree.get_child_optional("scenario.seed")) {
    cfg.seed = get<std::uint64_t>(tree, "scenario.seed", 0);
  }
  cfg.output_dir = tree.get<std::string>("scenario.output", "out");

  cfg.cluster.node_count = get<int>(tree, "cluster.nodes", cfg.cluster.node_count);
  cfg.cluster.cores_per_node = get<int>(tree, "cluster.cores_per_node", cfg.cluster.cores_per_node);
  if (!get_flag(tree, "cluster.bypass_nic", true)) {
    cfg.cluster.has_bypass_nic.assign(static_cast<std::size_t>(std::max(cfg.cluster.node_count, 0)), false);
  }

  auto& s = cfg.scaling;
  s.sizes = int_list(tree, "scaling.sizes", s.sizes);
  s.iterations = get<int>(tree, "scaling.iterations", s.iterations);
  s.ranks_per_node = get<int>(tree, "scaling.ranks_per_node", s.ranks_per_node);
  s.osu_min_bytes = get<double>(tree, "scaling.osu_min_bytes", s.osu_min_bytes);
  s.osu_max_bytes = get<double>(tree, "scaling.osu_max_bytes", s.osu_max_bytes);
  if (auto envs = tree.get_optional<std::string>("scaling.environments"); envs && *envs != "all") {
    s.environments.clear();
    for (const auto& name : split_list(*envs)) {
      auto env = workloads::parse_environment(name);
      if (!env) throw ConfigError("unknown environment '" + name + "'");
      s.environments.push_back(*env);
    }
  }

  auto& t = cfg.taxonomy;
  t.nodes = get<int>(tree, "taxonomy.nodes", t.nodes);
  t.gang_sizes = int_list(tree, "taxonomy.gang_sizes", t.gang_sizes);
  t.jobs = get<int>(tree, "taxonomy.jobs", t.jobs);
  t.duration = get<double>(tree, "taxonomy.duration", t.duration);
  t.arrival_gap = get<double>(tree, "taxonomy.arrival_gap", t.arrival_gap);
  t.decision_cost = get<double>(tree, "taxonomy.decision_cost", t.decision_cost);
  t.hoarding = get_flag(tree, "taxonomy.hoarding", t.hoarding);
  t.deadlock_horizon = get<double>(tree, "taxonomy.deadlock_horizon", t.deadlock_horizon);
  t.oversized_gang = get<int>(tree, "taxonomy.oversized_gang", t.oversized_gang);

  auto& h = cfg.hybrid;
  h.train_count = get<int>(tree, "hybrid.train_count", h.train_count);
  h.test_count = get<int>(tree, "hybrid.test_count", h.test_count);
  h.dim_min = get<int>(tree, "hybrid.dim_min", h.dim_min);
  h.dim_max = get<int>(tree, "hybrid.dim_max", h.dim_max);
  h.job_nodes = get<int>(tree, "hybrid.job_nodes", h.job_nodes);
  h.ranks_per_node = get<int>(tree, "hybrid.ranks_per_node", h.ranks_per_node);
  h.width = get<int>(tree, "hybrid.width", h.width);
  h.noise_sigma = get<double>(tree, "hybrid.noise_sigma", h.noise_sigma);
  if (auto env = tree.get_optional<std::string>("hybrid.environment")) {
    auto parsed_env = workloads::parse_environment(*env);
    if (!parsed_env) throw ConfigError("unknown environment '" + *env + "'");
    h.environment = *parsed_env;
  }
  if (auto mount = tree.get_optional<std::string>("hybrid.mount")) {
    if (*mount == "in_process") {
      h.mount = MountKind::in_process;
    } else if (*mount == "socket") {
      h.mount = MountKind::socket;
    } else {
      throw ConfigError("hybrid.mount must be in_process or socket");
    }
  }
  h.sgd_learning_rate = get<double>(tree, "hybrid.sgd_learning_rate", h.sgd_learning_rate);
  h.bayes_alpha = get<double>(tree, "hybrid.bayes_alpha", h.bayes_alpha);
  h.bayes_beta = get<double>(tree, "hybrid.bayes_beta", h.bayes_beta);
  h.bayes_fit_intercept = get_flag(tree, "hybrid.bayes_fit_intercept", h.bayes_fit_intercept);
  h.pa_c = get<double>(tree, "hybrid.pa_c", h.pa_c);
  h.pa_epsilon = get<double>(tree, "hybrid.pa_epsilon", h.pa_epsilon);
  h.pa_fit_intercept = get_flag(tree, "hybrid.pa_fit_intercept", h.pa_fit_intercept);
  return cfg;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::uint64_t ScenarioConfig::required_seed() const {
  if (!seed) throw ConfigError("a seed is required ([scenario] seed or --seed)");
  return *seed;
}

void ScenarioConfig::validate() const {
  required_seed();
  try {
    cluster.validate();
  } catch (const resgraph::ResourceError& e) {
    throw ConfigError(std::string("[cluster] ") + e.what());
  }
  switch (experiment) {
    case Experiment::scaling_study: {
      if (scaling.iterations < 1) throw ConfigError("scaling.iterations must be >= 1");
      if (scaling.environments.empty()) throw ConfigError("scaling.environments is empty");
      bool usernetes = false;
      for (auto env : scaling.environments) usernetes = usernetes || workloads::runs_usernetes(env);
      for (int size : scaling.sizes) {
        if (size != 4 && size != 8 && size != 16 && size != 32) {
          throw ConfigError("scaling.sizes entries must be 4, 8, 16 or 32");
        }
        const int needed = size + (usernetes ? 1 : 0);
        if (needed > cluster.node_count) {
          throw ConfigError("cluster has " + std::to_string(cluster.node_count) + " nodes; size " +
                            std::to_string(size) + " needs " + std::to_string(needed));
        }
      }
      if (!(scaling.osu_min_bytes >= 1.0) || scaling.osu_max_bytes < scaling.osu_min_bytes) {
        throw ConfigError("scaling OSU message range is invalid");
      }
      break;
    }
    case Experiment::taxonomy: {
      if (taxonomy.nodes < 2) throw ConfigError("taxonomy.nodes must be >= 2");
      if (taxonomy.jobs < 1) throw ConfigError("taxonomy.jobs must be >= 1");
      for (int g : taxonomy.gang_sizes) {
        if (g < 1 || g > taxonomy.nodes) throw ConfigError("taxonomy.gang_sizes entries must fit the cluster");
      }
      if (taxonomy.decision_cost < 0.0 || taxonomy.duration < 0.0 || taxonomy.arrival_gap < 0.0) {
        throw ConfigError("taxonomy times must be non-negative");
      }
      if (!(taxonomy.deadlock_horizon > 0.0)) throw ConfigError("taxonomy.deadlock_horizon must be positive");
      break;
    }
    case Experiment::hybrid: {
      if (cluster.node_count < hybrid.job_nodes + 1) {
        throw ConfigError("hybrid needs job_nodes + 1 cluster nodes");
      }
      if (hybrid.train_count < 1 || hybrid.test_count < 2) {
        throw ConfigError("hybrid needs train_count >= 1 and test_count >= 2");
      }
      if (hybrid.dim_min < 1 || hybrid.dim_max < hybrid.dim_min) throw ConfigError("hybrid dim range is invalid");
      if (hybrid.job_nodes < 1 || hybrid.ranks_per_node < 1 || hybrid.width < 1) {
        throw ConfigError("hybrid job_nodes, ranks_per_node and width must be >= 1");
      }
      if (hybrid.noise_sigma < 0.0) throw ConfigError("hybrid.noise_sigma must be >= 0");
      break;
    }
  }
}

}  // namespace converge::orchestrator
