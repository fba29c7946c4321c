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
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace converge::ml {

/// Named features; iteration order (sorted by name) is the dense order.
using FeatureVector = std::map<std::string, double>;

class MlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-feature single-pass mean and population variance.
class RunningScaler {
 public:
  struct Stat {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double variance() const { return n == 0 ? 0.0 : m2 / static_cast<double>(n); }
  };

  void learn(const FeatureVector& x);
  /// Standardizes with the current statistics; 0 where the variance is 0.
  FeatureVector transform(const FeatureVector& x) const;
  FeatureVector learn_transform(const FeatureVector& x) {
    learn(x);
    return transform(x);
  }

  const std::map<std::string, Stat>& stats() const { return stats_; }
  std::uint64_t count() const { return count_; }

  std::string serialize() const;
  static RunningScaler deserialize(std::string_view text);

 private:
  void check_keys(const FeatureVector& x) const;

  std::map<std::string, Stat> stats_;
  std::uint64_t count_ = 0;
};

enum class ModelType { linear_sgd, bayesian, passive_aggressive };

std::string_view to_string(ModelType type);
std::optional<ModelType> parse_model_type(std::string_view text);

struct LinearSgdParams {
  double learning_rate = 0.01;
};

struct BayesianParams {
  double alpha = 1.0;  // prior precision
  double beta = 1.0;   // noise precision
  /// Append a constant 1 feature so the posterior also covers an intercept.
  bool fit_intercept = false;
};

struct PassiveAggressiveParams {
  /// Aggressiveness cap (PA-I). Infinity gives plain PA.
  double c = 1.0;
  double epsilon = 0.1;
  bool fit_intercept = true;
};

struct Prediction {
  double value = 0.0;
  /// No sample has been learned yet.
  bool cold = false;
};

class OnlineModel {
 public:
  static OnlineModel linear_sgd(LinearSgdParams params = {});
  static OnlineModel bayesian(BayesianParams params = {});
  static OnlineModel passive_aggressive(PassiveAggressiveParams params = {});

  ModelType type() const;
  std::uint64_t samples_seen() const { return samples_seen_; }
  std::optional<std::size_t> dimension() const { return dimension_; }

  /// The first call fixes the dimension.
  void learn(std::span<const double> x, double y);
  Prediction predict(std::span<const double> x) const;

  /// Current weights (bayesian: posterior mean, solved from A w = c).
  Eigen::VectorXd weights() const;
  double intercept() const;

  /// Bayesian posterior precision A and moment vector c; empty otherwise.
  Eigen::MatrixXd precision() const;
  Eigen::VectorXd moment() const;

  std::string serialize() const;
  static OnlineModel deserialize(std::string_view text);

 private:
  struct LinearState {
    LinearSgdParams params;
    Eigen::VectorXd w;
    double b = 0.0;
  };
  struct BayesState {
    BayesianParams params;
    Eigen::MatrixXd a;
    Eigen::VectorXd c;
  };
  struct PaState {
    PassiveAggressiveParams params;
    Eigen::VectorXd w;
    double b = 0.0;
  };

  explicit OnlineModel(std::variant<LinearState, BayesState, PaState> state) : state_(std::move(state)) {}
  void fix_dimension(std::size_t d);
  double raw_predict(const Eigen::VectorXd& x) const;

  std::variant<LinearState, BayesState, PaState> state_;
  std::optional<std::size_t> dimension_;
  std::uint64_t samples_seen_ = 0;
};

/// Running (y_true, y_pred) pairs and their coefficient of determination.
class RegressionMetrics {
 public:
  void add(double y_true, double y_pred) { pairs_.emplace_back(y_true, y_pred); }
  const std::vector<std::pair<double, double>>& pairs() const { return pairs_; }
  /// Null with fewer than two pairs or when every y_true is equal.
  std::optional<double> r_squared() const;

 private:
  std::vector<std::pair<double, double>> pairs_;
};

std::optional<double> r_squared(std::span<const std::pair<double, double>> pairs);

/// Dense values of `x` in key order.
std::vector<double> dense(const FeatureVector& x);

}  // namespace converge::ml
