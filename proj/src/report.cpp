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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "converge/orchestrator.hpp"
#include "converge/textfmt.hpp"

namespace converge::orchestrator {

using nlohmann::json;

// --- JSON -------------------------------------------------------------------

void to_json(json& j, const RawSample& s) {
  j = {{"environment", s.environment}, {"nodes", s.nodes}, {"ranks", s.ranks},
       {"iteration", s.iteration}, {"value", s.value}};
}
void from_json(const json& j, RawSample& s) {
  j.at("environment").get_to(s.environment);
  j.at("nodes").get_to(s.nodes);
  j.at("ranks").get_to(s.ranks);
  j.at("iteration").get_to(s.iteration);
  j.at("value").get_to(s.value);
}

void to_json(json& j, const AggregateRow& r) {
  j = {{"environment", r.environment}, {"nodes", r.nodes}, {"ranks", r.ranks}, {"mean_s", r.mean_s},
       {"stddev_s", r.stddev_s}, {"cpu_pct", r.cpu_pct}, {"samples", r.samples}};
}
void from_json(const json& j, AggregateRow& r) {
  j.at("environment").get_to(r.environment);
  j.at("nodes").get_to(r.nodes);
  j.at("ranks").get_to(r.ranks);
  j.at("mean_s").get_to(r.mean_s);
  j.at("stddev_s").get_to(r.stddev_s);
  j.at("cpu_pct").get_to(r.cpu_pct);
  j.at("samples").get_to(r.samples);
}

void to_json(json& j, const OsuPoint& p) {
  j = {{"environment", p.environment}, {"nodes", p.nodes}, {"benchmark", p.benchmark},
       {"message_bytes", p.message_bytes}, {"value", p.value}};
}
void from_json(const json& j, OsuPoint& p) {
  j.at("environment").get_to(p.environment);
  j.at("nodes").get_to(p.nodes);
  j.at("benchmark").get_to(p.benchmark);
  j.at("message_bytes").get_to(p.message_bytes);
  j.at("value").get_to(p.value);
}

void to_json(json& j, const TaxonomyRow& r) {
  j = {{"scenario", r.scenario},
       {"mode", r.mode},
       {"gang_size", r.gang_size},
       {"jobs", r.jobs},
       {"conflict_fraction", r.conflict_fraction},
       {"busyness", r.busyness},
       {"deadlocked", r.deadlocked},
       {"throughput", r.throughput},
       {"makespan", r.makespan},
       {"completed", r.completed},
       {"rejected", r.rejected}};
}
void from_json(const json& j, TaxonomyRow& r) {
  j.at("scenario").get_to(r.scenario);
  j.at("mode").get_to(r.mode);
  j.at("gang_size").get_to(r.gang_size);
  j.at("jobs").get_to(r.jobs);
  j.at("conflict_fraction").get_to(r.conflict_fraction);
  j.at("busyness").get_to(r.busyness);
  j.at("deadlocked").get_to(r.deadlocked);
  j.at("throughput").get_to(r.throughput);
  j.at("makespan").get_to(r.makespan);
  j.at("completed").get_to(r.completed);
  j.at("rejected").get_to(r.rejected);
}

void to_json(json& j, const HybridPoint& p) {
  j = {{"index", p.index}, {"x", p.x}, {"y", p.y}, {"z", p.z}, {"y_true", p.y_true}, {"y_pred", p.y_pred}};
}
void from_json(const json& j, HybridPoint& p) {
  j.at("index").get_to(p.index);
  j.at("x").get_to(p.x);
  j.at("y").get_to(p.y);
  j.at("z").get_to(p.z);
  j.at("y_true").get_to(p.y_true);
  j.at("y_pred").get_to(p.y_pred);
}

void to_json(json& j, const HybridSeries& s) {
  j = {{"model", s.model}, {"type", s.type}, {"samples_seen", s.samples_seen}, {"points", s.points}};
  j["r_squared"] = s.r_squared ? json(*s.r_squared) : json(nullptr);
}
void from_json(const json& j, HybridSeries& s) {
  j.at("model").get_to(s.model);
  j.at("type").get_to(s.type);
  j.at("samples_seen").get_to(s.samples_seen);
  j.at("points").get_to(s.points);
  const auto& r2 = j.at("r_squared");
  s.r_squared = r2.is_null() ? std::nullopt : std::optional<double>(r2.get<double>());
}

std::string ReportBundle::to_json() const {
  json j = {{"format", "converge-bundle v1"},
            {"experiment", experiment},
            {"seed", seed},
            {"iterations", iterations},
            {"virtual_seconds", virtual_seconds},
            {"samples", samples},
            {"aggregates", aggregates},
            {"osu", osu},
            {"taxonomy", taxonomy},
            {"hybrid", hybrid}};
  return j.dump(2) + "\n";
}

ReportBundle ReportBundle::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "converge-bundle v1") throw std::runtime_error("not a converge bundle");
    ReportBundle b;
    j.at("experiment").get_to(b.experiment);
    j.at("seed").get_to(b.seed);
    j.at("iterations").get_to(b.iterations);
    j.at("virtual_seconds").get_to(b.virtual_seconds);
    j.at("samples").get_to(b.samples);
    j.at("aggregates").get_to(b.aggregates);
    j.at("osu").get_to(b.osu);
    j.at("taxonomy").get_to(b.taxonomy);
    j.at("hybrid").get_to(b.hybrid);
    return b;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed bundle: ") + e.what());
  }
}

ReportBundle ReportBundle::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read bundle " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return from_json(text.str());
}

std::optional<ReportFormat> parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "json") return ReportFormat::json;
  if (text == "svg") return ReportFormat::svg;
  return std::nullopt;
}

namespace {

// --- files --------------------------------------------------------------------

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
      throw std::runtime_error("cannot create output directory " + dir_.string());
    }
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) throw std::runtime_error("cannot write " + path.string());
    written_.push_back(path);
  }

  std::vector<std::filesystem::path> written() && { return std::move(written_); }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

std::string r2_text(const std::optional<double>& r2) { return r2 ? format_real(*r2) : "null"; }

void emit_csv(const ReportBundle& b, Writer& w) {
  if (!b.aggregates.empty()) {
    std::string table = "environment,nodes,ranks,mean_s,stddev_s,cpu_pct\n";
    for (const auto& r : b.aggregates) {
      table += r.environment + ',' + std::to_string(r.nodes) + ',' + std::to_string(r.ranks) + ',' +
               format_fixed(r.mean_s, 3) + ',' + format_fixed(r.stddev_s, 3) + ',' + format_fixed(r.cpu_pct, 3) +
               '\n';
    }
    w.write("lammps_table.csv", table);
  }
  if (!b.samples.empty()) {
    std::string samples = "environment,nodes,ranks,iteration,walltime_s\n";
    for (const auto& s : b.samples) {
      samples += s.environment + ',' + std::to_string(s.nodes) + ',' + std::to_string(s.ranks) + ',' +
                 std::to_string(s.iteration) + ',' + format_real(s.value) + '\n';
    }
    w.write("lammps_samples.csv", samples);
  }
  if (!b.osu.empty()) {
    std::string osu = "environment,nodes,benchmark,message_bytes,value\n";
    for (const auto& p : b.osu) {
      osu += p.environment + ',' + std::to_string(p.nodes) + ',' + p.benchmark + ',' + format_real(p.message_bytes) +
             ',' + format_real(p.value) + '\n';
    }
    w.write("osu_series.csv", osu);
  }
  if (!b.taxonomy.empty()) {
    std::string tax =
        "scenario,mode,gang_size,jobs,conflict_fraction,busyness,deadlocked,throughput,makespan_s,completed,"
        "rejected\n";
    for (const auto& r : b.taxonomy) {
      tax += r.scenario + ',' + r.mode + ',' + std::to_string(r.gang_size) + ',' + std::to_string(r.jobs) + ',' +
             format_real(r.conflict_fraction) + ',' + format_real(r.busyness) + ',' +
             (r.deadlocked ? "true" : "false") + ',' + format_real(r.throughput) + ',' + format_real(r.makespan) +
             ',' + std::to_string(r.completed) + ',' + std::to_string(r.rejected) + '\n';
    }
    w.write("taxonomy.csv", tax);
  }
  if (!b.hybrid.empty()) {
    std::string summary = "model,type,r_squared,samples_seen,test_points\n";
    for (const auto& s : b.hybrid) {
      std::string series = "index,x,y,z,actual_s,predicted_s\n";
      for (const auto& p : s.points) {
        series += std::to_string(p.index) + ',' + std::to_string(p.x) + ',' + std::to_string(p.y) + ',' +
                  std::to_string(p.z) + ',' + format_real(p.y_true) + ',' + format_real(p.y_pred) + '\n';
      }
      w.write("hybrid_" + s.model + ".csv", series);
      summary += s.model + ',' + s.type + ',' + r2_text(s.r_squared) + ',' + std::to_string(s.samples_seen) + ',' +
                 std::to_string(s.points.size()) + '\n';
    }
    w.write("hybrid_summary.csv", summary);
  }
}

// --- SVG ----------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  bool scatter = false;
  /// Draw y = x across the plot (actual-vs-predicted).
  bool diagonal = false;
};

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) { return format_fixed(v, 2); }

std::string tick_label(double v) {
  if (v != 0.0 && (std::abs(v) >= 1e5 || std::abs(v) < 1e-2)) {
    std::ostringstream s;
    s.precision(2);
    s << std::scientific << v;
    return s.str();
  }
  return format_fixed(v, std::abs(v) >= 10.0 || v == std::floor(v) ? 0 : 2);
}

std::string render_plot(const PlotSpec& spec, const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, L = 80, R = 170, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;

  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
      y0 = std::min(y0, ty(y));
      y1 = std::max(y1, ty(y));
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (spec.diagonal) {
    x0 = y0 = std::min(x0, y0);
    x1 = y1 = std::max(x1, y1);
  }
  if (!spec.log_y && !spec.diagonal) y0 = std::min(y0, 0.0);
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double ypad = 0.05 * (y1 - y0);
  y1 += ypad;
  if (spec.log_y || spec.diagonal) y0 -= ypad;

  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return T + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape_xml(spec.title) << "</text>\n";
  svg << "<rect x=\"" << fmt(L) << "\" y=\"" << fmt(T) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double vx = spec.log_x ? std::pow(10.0, fx) : fx;
    const double vy = spec.log_y ? std::pow(10.0, fy) : fy;
    const double sx = L + pw * i / 4.0;
    const double sy = T + ph - ph * i / 4.0;
    svg << "<line x1=\"" << fmt(sx) << "\" y1=\"" << fmt(T + ph) << "\" x2=\"" << fmt(sx) << "\" y2=\""
        << fmt(T + ph + 4) << "\" stroke=\"#333\"/>";
    svg << "<text x=\"" << fmt(sx) << "\" y=\"" << fmt(T + ph + 16) << "\" text-anchor=\"middle\">"
        << tick_label(vx) << "</text>\n";
    svg << "<line x1=\"" << fmt(L - 4) << "\" y1=\"" << fmt(sy) << "\" x2=\"" << fmt(L) << "\" y2=\"" << fmt(sy)
        << "\" stroke=\"#333\"/>";
    svg << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(sy + 4) << "\" text-anchor=\"end\">" << tick_label(vy)
        << "</text>\n";
  }
  svg << "<text x=\"" << fmt(L + pw / 2) << "\" y=\"" << fmt(H - 18) << "\" text-anchor=\"middle\">"
      << escape_xml(spec.x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << fmt(T + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << fmt(T + ph / 2) << ")\">" << escape_xml(spec.y_label) << "</text>\n";

  if (spec.diagonal) {
    const double lo = spec.log_x ? std::pow(10.0, x0) : x0;
    const double hi = spec.log_x ? std::pow(10.0, x1) : x1;
    svg << "<line x1=\"" << fmt(px(lo)) << "\" y1=\"" << fmt(py(lo)) << "\" x2=\"" << fmt(px(hi)) << "\" y2=\""
        << fmt(py(hi)) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    const auto& s = series[i];
    if (spec.scatter) {
      for (auto [x, y] : s.points) {
        svg << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"2.5\" fill=\"" << color
            << "\" fill-opacity=\"0.6\"/>\n";
      }
    } else {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < s.points.size(); ++k) {
        svg << (k ? " " : "") << fmt(px(s.points[k].first)) << ',' << fmt(py(s.points[k].second));
      }
      svg << "\"/>\n";
    }
    const double ly = T + 10 + 16.0 * static_cast<double>(i);
    svg << "<rect x=\"" << fmt(L + pw + 12) << "\" y=\"" << fmt(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/><text x=\"" << fmt(L + pw + 26) << "\" y=\"" << fmt(ly + 1) << "\">"
        << escape_xml(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<Series> osu_series(const ReportBundle& b, const std::string& bench, int nodes) {
  std::vector<Series> out;
  std::map<std::string, std::size_t> index;
  for (const auto& p : b.osu) {
    if (p.benchmark != bench || p.nodes != nodes) continue;
    auto [it, fresh] = index.emplace(p.environment, out.size());
    if (fresh) out.push_back({p.environment, {}});
    out[it->second].points.emplace_back(p.message_bytes, p.value);
  }
  return out;
}

void emit_svg(const ReportBundle& b, Writer& w) {
  if (!b.aggregates.empty()) {
    std::vector<Series> series;
    std::map<std::string, std::size_t> index;
    for (const auto& r : b.aggregates) {
      auto [it, fresh] = index.emplace(r.environment, series.size());
      if (fresh) series.push_back({r.environment, {}});
      series[it->second].points.emplace_back(r.nodes, r.mean_s);
    }
    w.write("lammps_scaling.svg",
            render_plot({"LAMMPS strong scaling", "nodes", "mean walltime (s)", true, false, false, false}, series));
  }
  if (!b.osu.empty()) {
    int smallest = b.osu.front().nodes, largest = b.osu.front().nodes;
    for (const auto& p : b.osu) {
      smallest = std::min(smallest, p.nodes);
      largest = std::max(largest, p.nodes);
    }
    w.write("osu_latency.svg",
            render_plot({"OSU latency", "message size (bytes)", "latency (s)", true, true, false, false},
                        osu_series(b, "latency", smallest)));
    w.write("osu_bandwidth.svg",
            render_plot({"OSU bandwidth", "message size (bytes)", "bandwidth (bytes/s)", true, true, false, false},
                        osu_series(b, "bw", smallest)));
    w.write("osu_allreduce.svg",
            render_plot({"OSU allreduce, " + std::to_string(largest) + " nodes", "message size (bytes)",
                         "time (s)", true, true, false, false},
                        osu_series(b, "allreduce", largest)));
    std::vector<Series> barrier;
    std::map<std::string, std::size_t> index;
    for (const auto& p : b.osu) {
      if (p.benchmark != "barrier") continue;
      auto [it, fresh] = index.emplace(p.environment, barrier.size());
      if (fresh) barrier.push_back({p.environment, {}});
      barrier[it->second].points.emplace_back(p.nodes, p.value);
    }
    w.write("osu_barrier.svg", render_plot({"OSU barrier", "nodes", "time (s)", true, false, false, false}, barrier));
  }
  if (!b.taxonomy.empty()) {
    std::vector<Series> series;
    std::map<std::string, std::size_t> index;
    for (const auto& r : b.taxonomy) {
      if (r.scenario != "sweep") continue;
      auto [it, fresh] = index.emplace(r.mode, series.size());
      if (fresh) series.push_back({r.mode, {}});
      series[it->second].points.emplace_back(r.gang_size, r.conflict_fraction);
    }
    w.write("taxonomy_conflicts.svg",
            render_plot({"Conflict fraction by gang size", "gang size (nodes)", "conflict fraction", false, false,
                         false, false},
                        series));
  }
  for (const auto& s : b.hybrid) {
    Series pts{s.model, {}};
    for (const auto& p : s.points) pts.points.emplace_back(p.y_true, p.y_pred);
    w.write("hybrid_" + s.model + ".svg",
            render_plot({s.model + " (R2 " + r2_text(s.r_squared) + ")", "actual walltime (s)",
                         "predicted walltime (s)", false, false, true, true},
                        {pts}));
  }
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, ReportFormat format,
                                               const std::filesystem::path& dir) {
  Writer w(dir);
  switch (format) {
    case ReportFormat::csv: emit_csv(bundle, w); break;
    case ReportFormat::json: w.write("bundle.json", bundle.to_json()); break;
    case ReportFormat::svg: emit_svg(bundle, w); break;
  }
  return std::move(w).written();
}

}  // namespace converge::orchestrator
