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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "converge/mlcore.hpp"
#include "converge/rng.hpp"
#include "oracles/batch_stats.hpp"

namespace converge::ml {
namespace {

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

TEST(Scaler, StreamOneTwoThree) {
  RunningScaler s;
  EXPECT_EQ(s.learn_transform({{"a", 1}}).at("a"), 0.0);  // first sample
  s.learn({{"a", 2}});
  s.learn({{"a", 3}});
  EXPECT_DOUBLE_EQ(s.stats().at("a").mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stats().at("a").variance(), 2.0 / 3.0);
  EXPECT_NEAR(s.transform({{"a", 3}}).at("a"), 1.0 / std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(s.transform({{"a", 3}}).at("a"), 1.2247, 1e-4);
}

TEST(Scaler, ConstantStreamGivesZeros) {
  RunningScaler s;
  for (int i = 0; i < 3; ++i) EXPECT_EQ(s.learn_transform({{"a", 5}}).at("a"), 0.0);
}

TEST(Scaler, RejectsNonFiniteAndKeyChanges) {
  RunningScaler s;
  EXPECT_THROW(s.learn({{"a", NAN}}), MlError);
  s.learn({{"a", 1}, {"b", 2}});
  EXPECT_THROW(s.learn({{"a", 1}}), MlError);
  EXPECT_THROW(s.transform({{"a", 1}, {"c", 2}}), MlError);
}

TEST(Scaler, MatchesBatchStatistics) {
  sim::RngStream rng(12, "scaler");
  RunningScaler s;
  std::vector<double> xs, ys;
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.normal(50.0, 7.0);
    const double y = rng.uniform() * 1e3 - 500.0;
    xs.push_back(x);
    ys.push_back(y);
    s.learn({{"x", x}, {"y", y}});
  }
  for (const auto& [name, data] : {std::pair{"x", &xs}, std::pair{"y", &ys}}) {
    const auto ref = oracle::batch_moments(*data);
    const auto& st = s.stats().at(name);
    EXPECT_NEAR(st.mean, ref.mean, 1e-10 * std::max(1.0, std::abs(ref.mean)));
    EXPECT_NEAR(st.variance(), ref.population_variance, 1e-10 * std::max(1.0, ref.population_variance));
  }
}

TEST(Scaler, SerializeRoundTrip) {
  RunningScaler s;
  s.learn({{"x", 1.5}, {"y", -2}});
  s.learn({{"x", 0.1}, {"y", 7}});
  const auto copy = RunningScaler::deserialize(s.serialize());
  EXPECT_EQ(copy.serialize(), s.serialize());
  EXPECT_EQ(copy.transform({{"x", 3}, {"y", 3}}), s.transform({{"x", 3}, {"y", 3}}));
  EXPECT_THROW(RunningScaler::deserialize("nonsense"), MlError);
}

TEST(PassiveAggressive, HandWorkedStep) {
  PassiveAggressiveParams p;
  p.fit_intercept = false;
  auto m = OnlineModel::passive_aggressive(p);
  const auto x = v({1.0});
  m.learn(x, 1.0);
  EXPECT_DOUBLE_EQ(m.weights()[0], 0.9);
  EXPECT_DOUBLE_EQ(m.intercept(), 0.0);

  auto with_bias = OnlineModel::passive_aggressive();
  with_bias.learn(x, 1.0);
  EXPECT_DOUBLE_EQ(with_bias.weights()[0], 0.9);
}

TEST(PassiveAggressive, ClipsAtC) {
  PassiveAggressiveParams p;
  p.fit_intercept = false;
  p.c = 0.5;
  auto m = OnlineModel::passive_aggressive(p);
  m.learn(v({1.0}), 10.0);
  EXPECT_DOUBLE_EQ(m.weights()[0], 0.5);
}

TEST(PassiveAggressive, NoUpdateInsideEpsilon) {
  sim::RngStream rng(4, "pa");
  auto m = OnlineModel::passive_aggressive();
  for (int i = 0; i < 50; ++i) {
    const auto x = v({rng.normal(), rng.normal(), rng.normal()});
    m.learn(x, 3 * x[0] - x[2] + 1);
  }
  for (int i = 0; i < 200; ++i) {
    const auto x = v({rng.normal(), rng.normal(), rng.normal()});
    const double y_hat = m.predict(x).value;
    const double y = y_hat + (rng.uniform() * 2 - 1) * 0.1;  // |error| <= epsilon
    const auto before = m.serialize();
    const auto seen = m.samples_seen();
    m.learn(x, y);
    EXPECT_EQ(m.samples_seen(), seen + 1);
    const auto prior = OnlineModel::deserialize(before);
    EXPECT_TRUE(m.weights() == prior.weights());
    EXPECT_EQ(m.intercept(), prior.intercept());
  }
}

TEST(Bayesian, OneStepPosterior) {
  auto m = OnlineModel::bayesian();
  m.learn(v({1.0}), 2.0);
  EXPECT_DOUBLE_EQ(m.precision()(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.moment()[0], 2.0);
  EXPECT_DOUBLE_EQ(m.weights()[0], 1.0);
  EXPECT_DOUBLE_EQ(m.predict(v({1.0})).value, 1.0);
}

TEST(Bayesian, MatchesBatchRidge) {
  sim::RngStream rng(21, "ridge");
  for (int stream = 0; stream < 100; ++stream) {
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, 5));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 200));
    BayesianParams params;
    params.alpha = 0.1 + rng.uniform() * 3;
    params.beta = 0.1 + rng.uniform() * 3;
    auto m = OnlineModel::bayesian(params);
    oracle::Matrix xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(d);
      for (auto& xi : x) xi = rng.normal();
      const double y = std::accumulate(x.begin(), x.end(), 0.5) + rng.normal(0, 0.3);
      m.learn(x, y);
      xs.push_back(x);
      ys.push_back(y);
    }
    const auto ref = oracle::ridge(xs, ys, params.alpha / params.beta);
    const auto w = m.weights();
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(w[static_cast<Eigen::Index>(k)], ref[k], 1e-8);
  }
}

TEST(Bayesian, InterceptIsAnExtraRidgeColumn) {
  sim::RngStream rng(22, "ridge-bias");
  BayesianParams params;
  params.fit_intercept = true;
  auto m = OnlineModel::bayesian(params);
  oracle::Matrix xs;
  std::vector<double> ys;
  for (int i = 0; i < 120; ++i) {
    const auto x = v({rng.normal(), rng.normal()});
    const double y = 2 * x[0] - x[1] + 7 + rng.normal(0, 0.1);
    m.learn(x, y);
    xs.push_back({x[0], x[1], 1.0});
    ys.push_back(y);
  }
  const auto ref = oracle::ridge(xs, ys, 1.0);
  EXPECT_NEAR(m.weights()[0], ref[0], 1e-8);
  EXPECT_NEAR(m.weights()[1], ref[1], 1e-8);
  EXPECT_NEAR(m.intercept(), ref[2], 1e-8);
}

TEST(Bayesian, OrderDoesNotMatter) {
  sim::RngStream rng(23, "perm");
  std::vector<std::pair<std::vector<double>, double>> data;
  for (int i = 0; i < 150; ++i) {
    const auto x = v({rng.normal(), rng.normal(), rng.normal()});
    data.emplace_back(x, x[0] - 2 * x[1] + rng.normal());
  }
  auto forward = OnlineModel::bayesian();
  for (const auto& [x, y] : data) forward.learn(x, y);
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = rng.sample(data, data.size());
    auto m = OnlineModel::bayesian();
    for (const auto& [x, y] : shuffled) m.learn(x, y);
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(m.weights()[k], forward.weights()[k], 1e-9);
  }
}

TEST(LinearSgd, ZeroErrorMeansZeroUpdate) {
  auto m = OnlineModel::linear_sgd();
  m.learn(v({1.0, 2.0}), 3.0);
  const auto w = m.weights();
  const double b = m.intercept();
  const auto x = v({0.5, -1.0});
  m.learn(x, m.predict(x).value);
  EXPECT_TRUE(m.weights() == w);
  EXPECT_EQ(m.intercept(), b);
}

TEST(LinearSgd, GradientStep) {
  auto m = OnlineModel::linear_sgd();
  m.learn(v({2.0}), 1.0);  // e = -1 -> w = 0.02, b = 0.01
  EXPECT_DOUBLE_EQ(m.weights()[0], 0.02);
  EXPECT_DOUBLE_EQ(m.intercept(), 0.01);
}

TEST(OnlineModel, ColdPredictAndDimensionChecks) {
  for (auto m : {OnlineModel::linear_sgd(), OnlineModel::bayesian(), OnlineModel::passive_aggressive()}) {
    const auto p = m.predict(v({4.0, 5.0}));
    EXPECT_EQ(p.value, 0.0);
    EXPECT_TRUE(p.cold);
    m.learn(v({1.0, 2.0}), 1.0);
    EXPECT_EQ(m.samples_seen(), 1u);
    EXPECT_FALSE(m.predict(v({1.0, 2.0})).cold);
    EXPECT_THROW(m.learn(v({1.0}), 1.0), MlError);
    EXPECT_THROW(m.predict(v({1.0, 2.0, 3.0})), MlError);
  }
}

TEST(OnlineModel, PredictDoesNotMutate) {
  auto m = OnlineModel::passive_aggressive();
  m.learn(v({1.0, 1.0}), 4.0);
  const auto before = m.serialize();
  m.predict(v({3.0, 3.0}));
  EXPECT_EQ(m.serialize(), before);
}

TEST(OnlineModel, SerializeRoundTrip) {
  sim::RngStream rng(30, "serial");
  for (auto m : {OnlineModel::linear_sgd(), OnlineModel::bayesian({2.0, 0.5, true}), OnlineModel::passive_aggressive()}) {
    for (int i = 0; i < 20; ++i) m.learn(v({rng.normal(), rng.normal()}), rng.normal());
    const auto copy = OnlineModel::deserialize(m.serialize());
    EXPECT_EQ(copy.type(), m.type());
    EXPECT_EQ(copy.samples_seen(), m.samples_seen());
    EXPECT_EQ(copy.serialize(), m.serialize());
    const auto x = v({0.3, -0.7});
    EXPECT_EQ(copy.predict(x).value, m.predict(x).value);
  }
  EXPECT_THROW(OnlineModel::deserialize("converge-model v9\n"), MlError);
}

TEST(OnlineModel, TypeNames) {
  for (auto t : {ModelType::linear_sgd, ModelType::bayesian, ModelType::passive_aggressive}) {
    EXPECT_EQ(parse_model_type(to_string(t)), t);
  }
  EXPECT_FALSE(parse_model_type("forest").has_value());
}

TEST(RSquared, Examples) {
  RegressionMetrics perfect;
  for (double y : {1.0, 2.0, 3.0}) perfect.add(y, y);
  EXPECT_EQ(perfect.r_squared(), 1.0);

  RegressionMetrics mean_only;
  for (double y : {1.0, 2.0, 3.0}) mean_only.add(y, 2.0);
  EXPECT_EQ(mean_only.r_squared(), 0.0);

  const std::vector<std::pair<double, double>> pairs{{1, 1}, {2, 2}, {3, 4}};
  EXPECT_DOUBLE_EQ(*r_squared(pairs), 0.5);
}

TEST(RSquared, NullCases) {
  RegressionMetrics one;
  one.add(1, 1);
  EXPECT_FALSE(one.r_squared().has_value());
  RegressionMetrics flat;
  flat.add(2, 1);
  flat.add(2, 3);
  EXPECT_FALSE(flat.r_squared().has_value());
}

TEST(Dense, KeyOrder) {
  EXPECT_EQ(dense({{"z", 3}, {"x", 1}, {"y", 2}}), (std::vector<double>{1, 2, 3}));
}

}  // namespace
}  // namespace converge::ml
