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

#include "converge/mlserve.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "converge/textfmt.hpp"

namespace converge::mlserve {

std::string_view to_string(Verb verb) {
  switch (verb) {
    case Verb::create: return "create";
    case Verb::train: return "train";
    case Verb::predict: return "predict";
    case Verb::record_truth: return "record_truth";
    case Verb::list_models: return "list_models";
    case Verb::metrics: return "metrics";
    case Verb::stats: return "stats";
  }
  return "unknown";
}

std::optional<Verb> parse_verb(std::string_view text) {
  for (Verb v : {Verb::create, Verb::train, Verb::predict, Verb::record_truth, Verb::list_models,
                 Verb::metrics, Verb::stats}) {
    if (to_string(v) == text) return v;
  }
  return std::nullopt;
}

std::string_view to_string(Status status) {
  switch (status) {
    case Status::ok: return "ok";
    case Status::not_found: return "not_found";
    case Status::bad_request: return "bad_request";
  }
  return "unknown";
}

std::optional<Status> parse_status(std::string_view text) {
  for (Status s : {Status::ok, Status::not_found, Status::bad_request}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Wire codec

namespace {

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
  }
  return true;
}

std::string escape(std::string_view value) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (char c : value) {
    if (c == ' ' || c == '=' || c == '%' || c == '\n' || c == '\r' || c == '\t') {
      const auto u = static_cast<unsigned char>(c);
      out += '%';
      out += kHex[u >> 4];
      out += kHex[u & 0xF];
    } else {
      out += c;
    }
  }
  return out;
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

std::string unescape(std::string_view value) {
  std::string out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] != '%') {
      out += value[i];
      continue;
    }
    if (i + 2 >= value.size()) throw WireError("truncated escape");
    const int hi = hex_digit(value[i + 1]);
    const int lo = hex_digit(value[i + 2]);
    if (hi < 0 || lo < 0) throw WireError("bad escape in value");
    out += static_cast<char>(hi * 16 + lo);
    i += 2;
  }
  return out;
}

std::string encode_line(std::string_view head, const Body& body) {
  std::string out(head);
  for (const auto& [key, value] : body) {
    if (!valid_key(key)) throw WireError("invalid key '" + key + "'");
    out += ' ';
    out += key;
    out += '=';
    out += escape(value);
  }
  return out;
}

std::pair<std::string, Body> decode_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t next = line.find(' ', pos);
    const std::string_view token = line.substr(pos, next == std::string_view::npos ? line.size() - pos : next - pos);
    if (token.empty()) throw WireError("empty field (double space or trailing space)");
    tokens.push_back(token);
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  if (tokens.empty() || tokens.front().empty()) throw WireError("empty record");
  Body body;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::size_t eq = tokens[i].find('=');
    if (eq == std::string_view::npos) throw WireError("field without '=': " + std::string(tokens[i]));
    const std::string key(tokens[i].substr(0, eq));
    if (!valid_key(key)) throw WireError("invalid key '" + key + "'");
    if (!body.emplace(key, unescape(tokens[i].substr(eq + 1))).second) {
      throw WireError("duplicate key '" + key + "'");
    }
  }
  return {std::string(tokens.front()), std::move(body)};
}

}  // namespace

std::string encode(const ServiceRequest& request) { return encode_line(to_string(request.verb), request.body); }

std::string encode(const ServiceResponse& response) {
  return encode_line(to_string(response.status), response.body);
}

ServiceRequest decode_request(std::string_view line) {
  auto [head, body] = decode_line(line);
  auto verb = parse_verb(head);
  if (!verb) throw WireError("unknown verb '" + head + "'");
  return {*verb, std::move(body)};
}

ServiceResponse decode_response(std::string_view line) {
  auto [head, body] = decode_line(line);
  auto status = parse_status(head);
  if (!status) throw WireError("unknown status '" + head + "'");
  return {*status, std::move(body)};
}

// ---------------------------------------------------------------------------
// Builders

namespace {

void put_features(Body& body, const ml::FeatureVector& x) {
  for (const auto& [name, value] : x) body[std::string(kFeaturePrefix) + name] = format_real(value);
}

}  // namespace

ServiceRequest create_request(const std::string& name, ml::ModelType type, const Body& params) {
  ServiceRequest r{Verb::create, params};
  r.body["name"] = name;
  r.body["type"] = std::string(ml::to_string(type));
  return r;
}

ServiceRequest train_request(const std::string& name, const ml::FeatureVector& x, double y) {
  ServiceRequest r{Verb::train, {{"name", name}, {"y", format_real(y)}}};
  put_features(r.body, x);
  return r;
}

ServiceRequest predict_request(const std::string& name, const ml::FeatureVector& x) {
  ServiceRequest r{Verb::predict, {{"name", name}}};
  put_features(r.body, x);
  return r;
}

ServiceRequest record_truth_request(const std::string& name, double y_true, double y_pred) {
  return {Verb::record_truth, {{"name", name}, {"y_true", format_real(y_true)}, {"y_pred", format_real(y_pred)}}};
}

ServiceRequest metrics_request(const std::string& name) { return {Verb::metrics, {{"name", name}}}; }
ServiceRequest stats_request(const std::string& name) { return {Verb::stats, {{"name", name}}}; }
ServiceRequest list_models_request() { return {Verb::list_models, {}}; }

// ---------------------------------------------------------------------------
// Service

namespace {

struct BadRequest {
  std::string message;
};

ServiceResponse bad_request(const std::string& message) { return {Status::bad_request, {{"error", message}}}; }
ServiceResponse not_found(const std::string& name) {
  return {Status::not_found, {{"error", "no model named " + name}}};
}

double real_field(const Body& body, const std::string& key) {
  auto it = body.find(key);
  if (it == body.end()) throw BadRequest{"missing field " + key};
  auto value = parse_real(it->second);
  if (!value || !std::isfinite(*value)) throw BadRequest{"field " + key + " is not a finite number"};
  return *value;
}

std::optional<double> optional_real(const Body& body, const std::string& key) {
  if (!body.count(key)) return std::nullopt;
  auto it = body.find(key);
  auto value = parse_real(it->second);
  if (!value) throw BadRequest{"field " + key + " is not a number"};
  return *value;
}

bool optional_flag(const Body& body, const std::string& key, bool fallback) {
  auto it = body.find(key);
  if (it == body.end()) return fallback;
  if (it->second == "1" || it->second == "true") return true;
  if (it->second == "0" || it->second == "false") return false;
  throw BadRequest{"field " + key + " must be 0 or 1"};
}

ml::FeatureVector features(const Body& body) {
  ml::FeatureVector x;
  for (const auto& [key, value] : body) {
    if (key.rfind(kFeaturePrefix, 0) != 0) continue;
    const std::string name = key.substr(kFeaturePrefix.size());
    if (name.empty()) throw BadRequest{"empty feature name"};
    x.emplace(name, real_field(body, key));
  }
  if (x.empty()) throw BadRequest{"request carries no features"};
  return x;
}

void only_keys(const Body& body, std::initializer_list<std::string_view> allowed, bool allow_features) {
  for (const auto& [key, value] : body) {
    if (allow_features && key.rfind(kFeaturePrefix, 0) == 0) continue;
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw BadRequest{"unexpected field " + key};
  }
}

}  // namespace

ServiceResponse Service::handle(const ServiceRequest& request) {
  try {
    switch (request.verb) {
      case Verb::create: return create(request.body);
      case Verb::list_models:
        only_keys(request.body, {}, false);
        return list_models();
      default: return with_model(request);
    }
  } catch (const BadRequest& e) {
    return bad_request(e.message);
  } catch (const ml::MlError& e) {
    return bad_request(e.what());
  }
}

ServiceResponse Service::create(const Body& body) {
  auto name_it = body.find("name");
  if (name_it == body.end() || name_it->second.empty()) throw BadRequest{"missing field name"};
  auto type_it = body.find("type");
  if (type_it == body.end()) throw BadRequest{"missing field type"};
  const auto type = ml::parse_model_type(type_it->second);
  if (!type) throw BadRequest{"unknown model type " + type_it->second};

  std::optional<ml::OnlineModel> model;
  switch (*type) {
    case ml::ModelType::linear_sgd: {
      only_keys(body, {"name", "type", "learning_rate"}, false);
      ml::LinearSgdParams p;
      p.learning_rate = optional_real(body, "learning_rate").value_or(p.learning_rate);
      model = ml::OnlineModel::linear_sgd(p);
      break;
    }
    case ml::ModelType::bayesian: {
      only_keys(body, {"name", "type", "alpha", "beta", "fit_intercept"}, false);
      ml::BayesianParams p;
      p.alpha = optional_real(body, "alpha").value_or(p.alpha);
      p.beta = optional_real(body, "beta").value_or(p.beta);
      p.fit_intercept = optional_flag(body, "fit_intercept", p.fit_intercept);
      model = ml::OnlineModel::bayesian(p);
      break;
    }
    case ml::ModelType::passive_aggressive: {
      only_keys(body, {"name", "type", "c", "epsilon", "fit_intercept"}, false);
      ml::PassiveAggressiveParams p;
      p.c = optional_real(body, "c").value_or(p.c);
      p.epsilon = optional_real(body, "epsilon").value_or(p.epsilon);
      p.fit_intercept = optional_flag(body, "fit_intercept", p.fit_intercept);
      model = ml::OnlineModel::passive_aggressive(p);
      break;
    }
  }

  std::unique_lock lock(registry_mutex_);
  if (models_.count(name_it->second)) throw BadRequest{"model " + name_it->second + " already exists"};
  models_.emplace(name_it->second, std::make_unique<Pipeline>(*type, std::move(*model)));
  return {Status::ok, {{"name", name_it->second}, {"type", type_it->second}}};
}

ServiceResponse Service::list_models() {
  std::shared_lock lock(registry_mutex_);
  std::string names;
  for (const auto& [name, pipeline] : models_) {
    if (!names.empty()) names += ',';
    names += name;
  }
  return {Status::ok, {{"models", names}}};
}

ServiceResponse Service::with_model(const ServiceRequest& request) {
  const Body& body = request.body;
  auto name_it = body.find("name");
  if (name_it == body.end()) throw BadRequest{"missing field name"};

  Pipeline* pipeline = nullptr;
  {
    std::shared_lock lock(registry_mutex_);
    auto it = models_.find(name_it->second);
    if (it == models_.end()) return not_found(name_it->second);
    pipeline = it->second.get();
  }
  std::lock_guard guard(pipeline->mutex);

  switch (request.verb) {
    case Verb::train: {
      only_keys(body, {"name", "y"}, true);
      const auto x = features(body);
      const double y = real_field(body, "y");
      // Stage the scaler update so a rejected sample leaves no trace.
      ml::RunningScaler staged = pipeline->scaler;
      const auto scaled = staged.learn_transform(x);
      pipeline->model.learn(ml::dense(scaled), y);
      pipeline->scaler = std::move(staged);
      ++pipeline->seq;
      return {Status::ok,
              {{"samples_seen", std::to_string(pipeline->model.samples_seen())},
               {"seq", std::to_string(pipeline->seq)}}};
    }
    case Verb::predict: {
      only_keys(body, {"name"}, true);
      const auto x = features(body);
      // Transform only: evaluation inputs never touch the training statistics.
      const auto scaled = pipeline->scaler.transform(x);
      const auto p = pipeline->model.predict(ml::dense(scaled));
      return {Status::ok,
              {{"prediction", format_real(p.value)},
               {"cold", p.cold ? "1" : "0"},
               {"samples_seen", std::to_string(pipeline->model.samples_seen())}}};
    }
    case Verb::record_truth: {
      only_keys(body, {"name", "y_true", "y_pred"}, false);
      pipeline->held_out.add(real_field(body, "y_true"), real_field(body, "y_pred"));
      return {Status::ok, {{"pairs", std::to_string(pipeline->held_out.pairs().size())}}};
    }
    case Verb::metrics: {
      only_keys(body, {"name"}, false);
      const auto r2 = pipeline->held_out.r_squared();
      return {Status::ok,
              {{"pairs", std::to_string(pipeline->held_out.pairs().size())},
               {"r2", r2 ? format_real(*r2) : "null"}}};
    }
    case Verb::stats: {
      only_keys(body, {"name"}, false);
      std::string feature_names;
      for (const auto& [fname, stat] : pipeline->scaler.stats()) {
        if (!feature_names.empty()) feature_names += ',';
        feature_names += fname;
      }
      return {Status::ok,
              {{"type", std::string(ml::to_string(pipeline->type))},
               {"samples_seen", std::to_string(pipeline->model.samples_seen())},
               {"seq", std::to_string(pipeline->seq)},
               {"pairs", std::to_string(pipeline->held_out.pairs().size())},
               {"features", feature_names}}};
    }
    default: break;
  }
  throw BadRequest{"unsupported verb"};
}

}  // namespace converge::mlserve
