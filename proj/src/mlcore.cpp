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

#include "converge/mlcore.hpp"

#include <cmath>
#include <sstream>

#include "converge/textfmt.hpp"

namespace converge::ml {

std::vector<double> dense(const FeatureVector& x) {
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& [name, value] : x) out.push_back(value);
  return out;
}

// ---------------------------------------------------------------------------
// Scaler

void RunningScaler::check_keys(const FeatureVector& x) const {
  for (const auto& [name, value] : x) {
    if (!std::isfinite(value)) throw MlError("feature '" + name + "' is not finite");
  }
  if (stats_.empty()) return;
  bool same = x.size() == stats_.size();
  auto b = stats_.begin();
  for (auto a = x.begin(); same && a != x.end(); ++a, ++b) same = a->first == b->first;
  if (!same) throw MlError("feature keys differ from the ones the scaler was fitted on");
}

void RunningScaler::learn(const FeatureVector& x) {
  check_keys(x);
  for (const auto& [name, value] : x) {
    Stat& s = stats_[name];
    ++s.n;
    const double delta = value - s.mean;
    s.mean += delta / static_cast<double>(s.n);
    s.m2 += delta * (value - s.mean);
  }
  ++count_;
}

FeatureVector RunningScaler::transform(const FeatureVector& x) const {
  check_keys(x);
  FeatureVector out;
  for (const auto& [name, value] : x) {
    auto it = stats_.find(name);
    if (it == stats_.end()) {
      out.emplace(name, 0.0);
      continue;
    }
    const double var = it->second.variance();
    out.emplace(name, var > 0.0 ? (value - it->second.mean) / std::sqrt(var) : 0.0);
  }
  return out;
}

std::string RunningScaler::serialize() const {
  std::ostringstream out;
  out << "converge-scaler v1\n";
  out << "count " << count_ << "\n";
  for (const auto& [name, s] : stats_) {
    out << "feature " << name << ' ' << s.n << ' ' << format_real(s.mean) << ' ' << format_real(s.m2) << "\n";
  }
  return out.str();
}

namespace {

double read_real(std::istream& in, const char* what) {
  std::string token;
  if (!(in >> token)) throw MlError(std::string("truncated model text at ") + what);
  auto value = parse_real(token);
  if (!value) throw MlError(std::string("bad number for ") + what + ": " + token);
  return *value;
}

void expect(std::istream& in, const std::string& word) {
  std::string token;
  if (!(in >> token) || token != word) throw MlError("expected '" + word + "' in model text");
}

void write_vector(std::ostream& out, const char* key, const Eigen::VectorXd& v) {
  out << key;
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_real(v[i]);
  out << "\n";
}

Eigen::VectorXd read_vector(std::istream& in, const char* key, std::size_t n) {
  expect(in, key);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = read_real(in, key);
  return v;
}

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

}  // namespace

RunningScaler RunningScaler::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  expect(in, "converge-scaler");
  expect(in, "v1");
  expect(in, "count");
  RunningScaler scaler;
  if (!(in >> scaler.count_)) throw MlError("bad scaler count");
  std::string token;
  while (in >> token) {
    if (token != "feature") throw MlError("unexpected token '" + token + "' in scaler text");
    std::string name;
    Stat s;
    if (!(in >> name >> s.n)) throw MlError("truncated scaler feature");
    s.mean = read_real(in, "mean");
    s.m2 = read_real(in, "m2");
    scaler.stats_.emplace(name, s);
  }
  return scaler;
}

// ---------------------------------------------------------------------------
// Models

std::string_view to_string(ModelType type) {
  switch (type) {
    case ModelType::linear_sgd: return "linear_sgd";
    case ModelType::bayesian: return "bayesian";
    case ModelType::passive_aggressive: return "passive_aggressive";
  }
  return "unknown";
}

std::optional<ModelType> parse_model_type(std::string_view text) {
  for (ModelType t : {ModelType::linear_sgd, ModelType::bayesian, ModelType::passive_aggressive}) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

OnlineModel OnlineModel::linear_sgd(LinearSgdParams params) {
  if (!(params.learning_rate > 0.0)) throw MlError("learning rate must be positive");
  return OnlineModel(LinearState{params, {}, 0.0});
}

OnlineModel OnlineModel::bayesian(BayesianParams params) {
  if (!(params.alpha > 0.0) || !(params.beta > 0.0)) throw MlError("alpha and beta must be positive");
  return OnlineModel(BayesState{params, {}, {}});
}

OnlineModel OnlineModel::passive_aggressive(PassiveAggressiveParams params) {
  if (!(params.c > 0.0) || params.epsilon < 0.0) throw MlError("PA needs C > 0 and epsilon >= 0");
  return OnlineModel(PaState{params, {}, 0.0});
}

ModelType OnlineModel::type() const {
  switch (state_.index()) {
    case 0: return ModelType::linear_sgd;
    case 1: return ModelType::bayesian;
    default: return ModelType::passive_aggressive;
  }
}

void OnlineModel::fix_dimension(std::size_t d) {
  if (dimension_) {
    if (*dimension_ != d) {
      throw MlError("expected " + std::to_string(*dimension_) + " features, got " + std::to_string(d));
    }
    return;
  }
  dimension_ = d;
  const auto n = static_cast<Eigen::Index>(d);
  if (auto* s = std::get_if<LinearState>(&state_)) s->w = Eigen::VectorXd::Zero(n);
  if (auto* s = std::get_if<PaState>(&state_)) s->w = Eigen::VectorXd::Zero(n);
  if (auto* s = std::get_if<BayesState>(&state_)) {
    const Eigen::Index m = n + (s->params.fit_intercept ? 1 : 0);
    s->a = s->params.alpha * Eigen::MatrixXd::Identity(m, m);
    s->c = Eigen::VectorXd::Zero(m);
  }
}

double OnlineModel::raw_predict(const Eigen::VectorXd& x) const {
  if (const auto* s = std::get_if<LinearState>(&state_)) return s->w.dot(x) + s->b;
  if (const auto* s = std::get_if<PaState>(&state_)) return s->w.dot(x) + s->b;
  const auto& s = std::get<BayesState>(state_);
  const Eigen::VectorXd w = s.a.ldlt().solve(s.c);
  double out = w.head(x.size()).dot(x);
  if (s.params.fit_intercept) out += w[x.size()];
  return out;
}

void OnlineModel::learn(std::span<const double> x_in, double y) {
  if (!std::isfinite(y)) throw MlError("target is not finite");
  fix_dimension(x_in.size());
  const Eigen::VectorXd x = as_eigen(x_in);
  if (!x.allFinite()) throw MlError("features are not finite");

  if (auto* s = std::get_if<LinearState>(&state_)) {
    const double err = s->w.dot(x) + s->b - y;
    s->w -= s->params.learning_rate * err * x;
    s->b -= s->params.learning_rate * err;
  } else if (auto* s = std::get_if<BayesState>(&state_)) {
    Eigen::VectorXd phi(s->a.rows());
    phi.head(x.size()) = x;
    if (s->params.fit_intercept) phi[x.size()] = 1.0;
    s->a.noalias() += s->params.beta * phi * phi.transpose();
    s->c += s->params.beta * y * phi;
  } else {
    auto& pa = std::get<PaState>(state_);
    const double y_hat = pa.w.dot(x) + pa.b;
    const double loss = std::max(0.0, std::abs(y_hat - y) - pa.params.epsilon);
    if (loss > 0.0) {
      const double norm2 = x.squaredNorm();
      double tau;
      if (norm2 > 0.0) {
        tau = std::min(pa.params.c, loss / norm2);
      } else {
        tau = pa.params.fit_intercept ? std::min(pa.params.c, loss) : 0.0;
      }
      const double step = (y > y_hat ? 1.0 : -1.0) * tau;
      pa.w += step * x;
      if (pa.params.fit_intercept) pa.b += step;
    }
  }
  ++samples_seen_;
}

Prediction OnlineModel::predict(std::span<const double> x) const {
  if (samples_seen_ == 0) return {0.0, true};
  if (x.size() != *dimension_) {
    throw MlError("expected " + std::to_string(*dimension_) + " features, got " + std::to_string(x.size()));
  }
  return {raw_predict(as_eigen(x)), false};
}

Eigen::VectorXd OnlineModel::weights() const {
  if (const auto* s = std::get_if<LinearState>(&state_)) return s->w;
  if (const auto* s = std::get_if<PaState>(&state_)) return s->w;
  const auto& s = std::get<BayesState>(state_);
  if (s.a.size() == 0) return {};
  const Eigen::VectorXd w = s.a.ldlt().solve(s.c);
  return s.params.fit_intercept ? Eigen::VectorXd(w.head(w.size() - 1)) : w;
}

double OnlineModel::intercept() const {
  if (const auto* s = std::get_if<LinearState>(&state_)) return s->b;
  if (const auto* s = std::get_if<PaState>(&state_)) return s->b;
  const auto& s = std::get<BayesState>(state_);
  if (!s.params.fit_intercept || s.a.size() == 0) return 0.0;
  const Eigen::VectorXd w = s.a.ldlt().solve(s.c);
  return w[w.size() - 1];
}

Eigen::MatrixXd OnlineModel::precision() const {
  if (const auto* s = std::get_if<BayesState>(&state_)) return s->a;
  return {};
}

Eigen::VectorXd OnlineModel::moment() const {
  if (const auto* s = std::get_if<BayesState>(&state_)) return s->c;
  return {};
}

std::string OnlineModel::serialize() const {
  std::ostringstream out;
  out << "converge-model v1\n";
  out << "type " << to_string(type()) << "\n";
  out << "samples_seen " << samples_seen_ << "\n";
  out << "dimension " << (dimension_ ? std::to_string(*dimension_) : "none") << "\n";
  if (const auto* s = std::get_if<LinearState>(&state_)) {
    out << "learning_rate " << format_real(s->params.learning_rate) << "\n";
    write_vector(out, "weights", s->w);
    out << "intercept " << format_real(s->b) << "\n";
  } else if (const auto* s = std::get_if<PaState>(&state_)) {
    out << "c " << format_real(s->params.c) << "\n";
    out << "epsilon " << format_real(s->params.epsilon) << "\n";
    out << "fit_intercept " << (s->params.fit_intercept ? 1 : 0) << "\n";
    write_vector(out, "weights", s->w);
    out << "intercept " << format_real(s->b) << "\n";
  } else {
    const auto& b = std::get<BayesState>(state_);
    out << "alpha " << format_real(b.params.alpha) << "\n";
    out << "beta " << format_real(b.params.beta) << "\n";
    out << "fit_intercept " << (b.params.fit_intercept ? 1 : 0) << "\n";
    out << "precision";
    for (Eigen::Index r = 0; r < b.a.rows(); ++r) {
      for (Eigen::Index c = 0; c < b.a.cols(); ++c) out << ' ' << format_real(b.a(r, c));
    }
    out << "\n";
    write_vector(out, "moment", b.c);
  }
  return out.str();
}

OnlineModel OnlineModel::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  expect(in, "converge-model");
  expect(in, "v1");
  expect(in, "type");
  std::string type_name;
  in >> type_name;
  const auto type = parse_model_type(type_name);
  if (!type) throw MlError("unknown model type '" + type_name + "'");
  expect(in, "samples_seen");
  std::uint64_t seen = 0;
  if (!(in >> seen)) throw MlError("bad samples_seen");
  expect(in, "dimension");
  std::string dim_text;
  in >> dim_text;
  std::optional<std::size_t> dim;
  if (dim_text != "none") dim = static_cast<std::size_t>(std::stoul(dim_text));
  const std::size_t d = dim.value_or(0);

  auto read_flag = [&in](const char* key) {
    expect(in, key);
    int flag = 0;
    if (!(in >> flag)) throw MlError(std::string("bad flag ") + key);
    return flag != 0;
  };

  OnlineModel model = OnlineModel::linear_sgd();
  switch (*type) {
    case ModelType::linear_sgd: {
      expect(in, "learning_rate");
      LinearSgdParams p{read_real(in, "learning_rate")};
      model = OnlineModel::linear_sgd(p);
      auto& s = std::get<LinearState>(model.state_);
      s.w = read_vector(in, "weights", d);
      expect(in, "intercept");
      s.b = read_real(in, "intercept");
      break;
    }
    case ModelType::passive_aggressive: {
      PassiveAggressiveParams p;
      expect(in, "c");
      p.c = read_real(in, "c");
      expect(in, "epsilon");
      p.epsilon = read_real(in, "epsilon");
      p.fit_intercept = read_flag("fit_intercept");
      model = OnlineModel::passive_aggressive(p);
      auto& s = std::get<PaState>(model.state_);
      s.w = read_vector(in, "weights", d);
      expect(in, "intercept");
      s.b = read_real(in, "intercept");
      break;
    }
    case ModelType::bayesian: {
      BayesianParams p;
      expect(in, "alpha");
      p.alpha = read_real(in, "alpha");
      expect(in, "beta");
      p.beta = read_real(in, "beta");
      p.fit_intercept = read_flag("fit_intercept");
      model = OnlineModel::bayesian(p);
      auto& s = std::get<BayesState>(model.state_);
      const std::size_t m = dim ? d + (p.fit_intercept ? 1 : 0) : 0;
      expect(in, "precision");
      s.a.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < m; ++c) {
          s.a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = read_real(in, "precision");
        }
      }
      s.c = read_vector(in, "moment", m);
      break;
    }
  }
  model.dimension_ = dim;
  model.samples_seen_ = seen;
  return model;
}

// ---------------------------------------------------------------------------

std::optional<double> r_squared(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) return std::nullopt;
  double mean = 0.0;
  for (const auto& [y, y_hat] : pairs) mean += y;
  mean /= static_cast<double>(pairs.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto& [y, y_hat] : pairs) {
    ss_res += (y - y_hat) * (y - y_hat);
    ss_tot += (y - mean) * (y - mean);
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

std::optional<double> RegressionMetrics::r_squared() const { return ml::r_squared(pairs_); }

}  // namespace converge::ml
