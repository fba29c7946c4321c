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
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "converge/mlcore.hpp"

namespace converge::mlserve {

enum class Verb { create, train, predict, record_truth, list_models, metrics, stats };

std::string_view to_string(Verb verb);
std::optional<Verb> parse_verb(std::string_view text);

enum class Status { ok, not_found, bad_request };

std::string_view to_string(Status status);
std::optional<Status> parse_status(std::string_view text);

/// Field keys are ordered, so encoding is deterministic. Features travel as
/// "f.<name>" keys.
using Body = std::map<std::string, std::string>;

struct ServiceRequest {
  Verb verb = Verb::list_models;
  Body body;

  bool operator==(const ServiceRequest&) const = default;
};

struct ServiceResponse {
  Status status = Status::ok;
  Body body;

  bool operator==(const ServiceResponse&) const = default;
};

inline constexpr std::string_view kFeaturePrefix = "f.";

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One record per line: a verb (or status) then space-separated key=value
// pairs. Values percent-encode space, '=', '%', CR and LF.
std::string encode(const ServiceRequest& request);
std::string encode(const ServiceResponse& response);
ServiceRequest decode_request(std::string_view line);
ServiceResponse decode_response(std::string_view line);

// Request builders used by the drivers.
ServiceRequest create_request(const std::string& name, ml::ModelType type, const Body& params = {});
ServiceRequest train_request(const std::string& name, const ml::FeatureVector& x, double y);
ServiceRequest predict_request(const std::string& name, const ml::FeatureVector& x);
ServiceRequest record_truth_request(const std::string& name, double y_true, double y_pred);
ServiceRequest metrics_request(const std::string& name);
ServiceRequest stats_request(const std::string& name);
ServiceRequest list_models_request();

// The model registry behind both mounts. Each model is a scaler + regressor
// pipeline plus a buffer of (truth, prediction) pairs for evaluation.
class Service {
 public:
  ServiceResponse handle(const ServiceRequest& request);

 private:
  struct Pipeline {
    ml::ModelType type;
    ml::RunningScaler scaler;
    ml::OnlineModel model;
    ml::RegressionMetrics held_out;
    std::uint64_t seq = 0;
    std::mutex mutex;

    Pipeline(ml::ModelType t, ml::OnlineModel m) : type(t), model(std::move(m)) {}
  };

  ServiceResponse create(const Body& body);
  ServiceResponse list_models();
  ServiceResponse with_model(const ServiceRequest& request);

  std::shared_mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<Pipeline>> models_;
};

/// Something that answers service requests.
class Mount {
 public:
  virtual ~Mount() = default;
  virtual ServiceResponse call(const ServiceRequest& request) = 0;
};

class InProcessMount : public Mount {
 public:
  explicit InProcessMount(Service& service) : service_(service) {}
  ServiceResponse call(const ServiceRequest& request) override { return service_.handle(request); }

 private:
  Service& service_;
};

/// Serves the line protocol on a loopback TCP port from a background thread.
class SocketServer {
 public:
  /// Port 0 picks a free port; see port().
  SocketServer(Service& service, std::uint16_t port = 0);
  ~SocketServer();
  SocketServer(const SocketServer&) = delete;
  SocketServer& operator=(const SocketServer&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class SocketMount : public Mount {
 public:
  SocketMount(const std::string& host, std::uint16_t port);
  ~SocketMount() override;
  ServiceResponse call(const ServiceRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace converge::mlserve
