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

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>

#include "converge/mlserve.hpp"
#include "converge/netmodel.hpp"
#include "converge/orchestrator.hpp"
#include "converge/textfmt.hpp"

namespace orch = converge::orchestrator;
namespace net = converge::netmodel;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

void print_path(const char* name, const net::NetworkPathParams& p) {
  using converge::format_real;
  std::cout << "[" << name << "]\n"
            << "base_latency_s = " << format_real(p.base_latency) << "\n"
            << "asymptotic_bandwidth_Bps = " << format_real(p.asymptotic_bandwidth) << "\n"
            << "half_saturation_bytes = " << format_real(p.half_saturation_bytes) << "\n"
            << "barrier_base_4node_s = " << format_real(p.barrier_base_4node) << "\n";
  for (const auto& [nodes, range] : p.allreduce_multiplier) {
    std::cout << "allreduce_mu_" << nodes << "node = " << format_real(range.mu_min) << ".."
              << format_real(range.mu_max) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"converge: converged HPC/cloud scheduling simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario and write its report files");
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  run->add_option("--config", config_file, "Scenario config file")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory (default: [scenario] output)");

  auto* report = app.add_subcommand("report", "Re-emit report files from a bundle");
  std::string bundle_file;
  std::string format;
  std::string report_out;
  report->add_option("--bundle", bundle_file, "bundle.json written by run")->required();
  report->add_option("--format", format, "csv, json or svg")->required()->check(CLI::IsMember({"csv", "json", "svg"}));
  report->add_option("--out", report_out, "Output directory (default: the bundle's directory)");

  auto* calibrate = app.add_subcommand("calibrate", "Solve network model parameters from an anchor file");
  std::string anchors_file;
  calibrate->add_option("--anchors", anchors_file, "Anchor INI file")->required();

  auto* serve = app.add_subcommand("serve", "Serve the ML line protocol on a loopback TCP port");
  std::uint16_t port = 0;
  serve->add_option("--port", port, "TCP port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      auto cfg = orch::ScenarioConfig::load(config_file);
      if (seed) cfg.seed = *seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      cfg.validate();
      const auto bundle = orch::run(cfg);
      for (auto fmt : {orch::ReportFormat::json, orch::ReportFormat::csv, orch::ReportFormat::svg}) {
        for (const auto& path : orch::emit_report(bundle, fmt, cfg.output_dir)) std::cout << path.string() << "\n";
      }
      return kOk;
    }
    if (*report) {
      const auto bundle = orch::ReportBundle::load(bundle_file);
      const std::filesystem::path dir =
          report_out.empty() ? std::filesystem::path(bundle_file).parent_path() : std::filesystem::path(report_out);
      for (const auto& path : orch::emit_report(bundle, *orch::parse_report_format(format), dir.empty() ? "." : dir)) {
        std::cout << path.string() << "\n";
      }
      return kOk;
    }
    if (*calibrate) {
      const auto paths = net::calibrate(net::AnchorSet::load(anchors_file));
      print_path("os_bypass", paths.os_bypass);
      print_path("tap_relay", paths.tap_relay);
      return kOk;
    }
    if (*serve) {
      converge::mlserve::Service service;
      converge::mlserve::SocketServer server(service, port);
      std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
      boost::asio::io_context io;
      boost::asio::signal_set signals(io, SIGINT, SIGTERM);
      signals.async_wait([](const boost::system::error_code&, int) {});
      io.run();
      server.stop();
      return kOk;
    }
  } catch (const orch::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const net::CalibrationError& e) {
    std::cerr << "calibration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
