// Copyright 2026 The boxmatch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "boxmatch/bench.hpp"

#include "boxmatch/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace boxmatch::bench
{

std::vector<worldsim::Scene> generate_scenes(
  const worldsim::SceneConfig & config, int count, std::uint64_t seed)
{
  if (count < 0) {
    throw ConfigError("scene count must be >= 0");
  }
  std::vector<worldsim::Scene> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(worldsim::generate_scene(config, derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

namespace
{

std::string fixed(double v, int digits)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void add_axis(std::vector<GridPoint> & out, const std::string & axis, double feature_std)
{
  if (axis == "clean") {
    out.push_back({"clean", "clean", 0.0, {}});
  } else if (axis == "async") {
    for (double dt : {0.08, 0.25, 0.50, 1.00, 2.00}) {
      GridPoint p{"async_" + fixed(dt, 2), axis, dt, {}};
      p.spec.async_dt = dt;
      out.push_back(p);
    }
  } else if (axis == "misalign") {
    const struct
    {
      const char * name;
      double rot, trans;
    } levels[] = {{"1_small", 1.5, 0.15}, {"2_medium", 3.0, 0.30}, {"3_large", 5.0, 0.50}};
    for (int i = 0; i < 3; ++i) {
      GridPoint p{std::string("misalign_") + levels[i].name, axis, i + 1.0, {}};
      p.spec.misalign_rot = levels[i].rot;
      p.spec.misalign_trans = levels[i].trans;
      out.push_back(p);
    }
  } else if (axis == "drop") {
    for (int n : {1, 3, 6}) {
      GridPoint p{"drop_" + std::to_string(n), axis, static_cast<double>(n), {}};
      p.spec.drop_count = n;
      out.push_back(p);
    }
  } else if (axis == "corrupt") {
    for (double k : {0.5, 2.0}) {
      GridPoint p{"corrupt_k" + fixed(k, 1), axis, k, {}};
      p.spec.feat_gain = k;
      p.spec.feat_noise_amp = 2.0 * feature_std;
      out.push_back(p);
    }
  } else if (axis == "calib") {
    GridPoint p{"calib_0.5m_30deg", axis, 1.0, {}};
    p.spec.calib_trans_range = 0.5;
    p.spec.calib_rot_range = 30.0;
    out.push_back(p);
  } else if (axis == "multi") {
    const double dts[] = {0.08, 0.25, 0.50};
    for (int i = 0; i < 3; ++i) {
      GridPoint p{"multi_level" + std::to_string(i + 1), axis, i + 1.0, {}};
      p.spec.async_dt = dts[i];
      p.spec.misalign_rot = 1.5;
      p.spec.misalign_trans = 0.15;
      out.push_back(p);
    }
  } else {
    throw ConfigError("unknown grid key '" + axis + "'");
  }
}

}  // namespace

const std::vector<std::string> & grid_axes()
{
  static const std::vector<std::string> axes = {"clean", "async",  "misalign", "drop",
                                                "corrupt", "calib", "multi"};
  return axes;
}

std::vector<GridPoint> make_grid(const std::vector<std::string> & axes, double feature_std)
{
  std::vector<std::string> wanted;
  for (const auto & a : axes) {
    if (a == "all") {
      wanted.insert(wanted.end(), grid_axes().begin(), grid_axes().end());
    } else {
      wanted.push_back(a);
    }
  }
  std::vector<GridPoint> out;
  std::set<std::string> seen;
  for (const auto & a : wanted) {
    if (!seen.insert(a).second) {
      continue;
    }
    add_axis(out, a, feature_std);
  }
  std::sort(out.begin(), out.end(), [](const auto & x, const auto & y) { return x.name < y.name; });
  return out;
}

double clean_feature_std(
  const std::vector<worldsim::Scene> & scenes, const worldsim::SensorConfig & sensor,
  std::uint64_t seed)
{
  double sum = 0.0, sq = 0.0;
  double n = 0.0;
  for (const auto & scene : scenes) {
    const auto cam = worldsim::simulate_camera_branch(scene, {}, sensor, derive_seed(seed, scene.seed));
    for (double v : cam.features.data.data) {
      sum += v;
      sq += v * v;
      n += 1.0;
    }
  }
  if (n == 0.0) {
    return 0.0;
  }
  const double mean = sum / n;
  return std::sqrt(std::max(0.0, sq / n - mean * mean));
}

std::vector<ResultRow> run_sweep(
  const diffnum::Checkpoint & checkpoint, const std::vector<worldsim::Scene> & scenes,
  const std::vector<GridPoint> & grid, const trainloop::EvalOptions & options)
{
  std::vector<ResultRow> rows;
  for (const auto & point : grid) {
    for (auto matcher : {trainloop::Matcher::baseline, trainloop::Matcher::fbm}) {
      trainloop::EvalOptions o = options;
      o.matcher = matcher;
      rows.push_back({point.name, point.axis, point.level, trainloop::matcher_name(matcher),
                      trainloop::evaluate(checkpoint, scenes, point.spec, o)});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto & a, const auto & b) {
    return std::tie(a.point, a.matcher) < std::tie(b.point, b.matcher);
  });
  return rows;
}

std::vector<ResultRow> run_ablation(
  const diffnum::Checkpoint & two_level, const diffnum::Checkpoint * one_level,
  const std::vector<worldsim::Scene> & scenes, const trainloop::EvalOptions & options)
{
  trainloop::EvalOptions o = options;
  o.matcher = trainloop::Matcher::fbm;
  std::vector<ResultRow> rows;
  for (int k : {1, 2}) {
    diffnum::Checkpoint variant = two_level;
    variant.config["model"]["top_k"] = k;
    rows.push_back({"two_level_top" + std::to_string(k), "ablation", static_cast<double>(k), "fbm",
                    trainloop::evaluate(variant, scenes, {}, o)});
  }
  if (one_level != nullptr) {
    if (one_level->config.at("model").at("two_level").get<bool>()) {
      throw ConfigError("the one-level checkpoint was trained with the view stage enabled");
    }
    rows.push_back({"one_level", "ablation", 0.0, "fbm", trainloop::evaluate(*one_level, scenes, {}, o)});
  }
  std::sort(rows.begin(), rows.end(), [](const auto & a, const auto & b) { return a.point < b.point; });
  return rows;
}

std::string format_double(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const std::vector<std::string> & csv_columns()
{
  static const std::vector<std::string> cols = {
    "point",     "axis",   "level",    "matcher",   "scenes",     "proposals",
    "top1_acc",  "top2_acc", "no_view_rate", "precision", "recall", "f1",
    "mean_iou",  "class_acc", "det_score", "loss_total"};
  return cols;
}

std::string to_csv(const std::vector<ResultRow> & rows)
{
  std::ostringstream out;
  const auto & cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << (i ? "," : "") << cols[i];
  }
  out << '\n';
  for (const auto & r : rows) {
    const auto & p = r.report;
    out << r.point << ',' << r.axis << ',' << format_double(r.level) << ',' << r.matcher << ','
        << p.counts.scenes << ',' << p.counts.proposals;
    for (double v : {p.top1_acc, p.top2_acc, p.no_view_rate, p.precision, p.recall, p.f1,
                     p.mean_iou, p.class_acc, p.det_score, p.loss_total}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
  return out.str();
}

double CsvRow::metric(const std::string & name) const
{
  for (const auto & [k, v] : metrics) {
    if (k == name) {
      return v;
    }
  }
  throw std::runtime_error("no metric column '" + name + "'");
}

namespace
{

std::vector<std::string> split(const std::string & line)
{
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    cells.emplace_back();
  }
  return cells;
}

double parse_number(const std::string & text, std::size_t line)
{
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

std::vector<CsvRow> parse_csv(const std::string & text)
{
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  const auto & cols = csv_columns();
  std::vector<CsvRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    const auto cells = split(line);
    if (!header) {
      if (cells != cols) {
        throw std::runtime_error("line 1: unexpected CSV header");
      }
      header = true;
      continue;
    }
    if (line.empty()) {
      continue;
    }
    if (cells.size() != cols.size()) {
      throw std::runtime_error(
        "line " + std::to_string(n) + ": expected " + std::to_string(cols.size()) + " cells, got " +
        std::to_string(cells.size()));
    }
    CsvRow r;
    r.point = cells[0];
    r.axis = cells[1];
    r.level = parse_number(cells[2], n);
    r.matcher = cells[3];
    if (r.point.empty() || r.axis.empty() || r.matcher.empty()) {
      throw std::runtime_error("line " + std::to_string(n) + ": empty name cell");
    }
    for (std::size_t i = 4; i < cols.size(); ++i) {
      r.metrics.emplace_back(cols[i], parse_number(cells[i], n));
    }
    rows.push_back(std::move(r));
  }
  if (!header) {
    throw std::runtime_error("line 1: missing CSV header");
  }
  return rows;
}

namespace
{

struct Series
{
  std::string matcher;
  std::vector<std::pair<double, double>> points;  // (level, value), sorted by level
};

std::map<std::string, std::vector<Series>> group(const std::vector<CsvRow> & rows, const std::string & metric)
{
  std::map<std::string, std::map<std::string, double>> clean;
  for (const auto & r : rows) {
    if (r.axis == "clean") {
      clean["clean"][r.matcher] = r.metric(metric);
    }
  }
  std::map<std::string, std::map<std::string, Series>> by_axis;
  for (const auto & r : rows) {
    if (r.axis == "clean") {
      continue;
    }
    auto & s = by_axis[r.axis][r.matcher];
    s.matcher = r.matcher;
    s.points.emplace_back(r.level, r.metric(metric));
  }
  std::map<std::string, std::vector<Series>> out;
  for (auto & [axis, series] : by_axis) {
    for (auto & [matcher, s] : series) {
      const auto it = clean["clean"].find(matcher);
      if (it != clean["clean"].end()) {
        s.points.emplace_back(0.0, it->second);
      }
      std::stable_sort(s.points.begin(), s.points.end(),
                       [](const auto & a, const auto & b) { return a.first < b.first; });
      out[axis].push_back(s);
    }
  }
  return out;
}

const char * series_color(std::size_t i)
{
  static const char * colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  return colors[i % 4];
}

}  // namespace

std::vector<ChartFile> render_charts(const std::vector<CsvRow> & rows, const std::string & metric)
{
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 140, kTop = 40, kBottom = 50;
  std::vector<ChartFile> out;
  for (const auto & [axis, series] : group(rows, metric)) {
    double x0 = 0, x1 = 0, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto & s : series) {
      for (const auto & [x, y] : s.points) {
        x0 = first ? x : std::min(x0, x);
        x1 = first ? x : std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        first = false;
      }
    }
    if (x1 == x0) {
      x0 -= 1.0;
      x1 += 1.0;
    }
    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); };
    auto py = [&](double y) { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << metric
        << " vs " << axis << "</text>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << fixed(py(y0), 2) << "\" x2=\"" << kW - kRight
        << "\" y2=\"" << fixed(py(y0), 2) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << fixed(py(y0), 2) << "\" x2=\"" << kLeft
        << "\" y2=\"" << fixed(py(y1), 2) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double y = y0 + (y1 - y0) * t / 4.0;
      svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << fixed(py(y) + 4, 2)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(y, 2)
          << "</text>\n";
    }
    std::set<double> levels;
    for (const auto & s : series) {
      for (const auto & p : s.points) {
        levels.insert(p.first);
      }
    }
    for (double x : levels) {
      svg << "<text x=\"" << fixed(px(x), 2) << "\" y=\"" << kH - kBottom + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
          << format_double(x) << "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
      const auto & s = series[i];
      svg << "<polyline fill=\"none\" stroke=\"" << series_color(i) << "\" stroke-width=\"2\" points=\"";
      for (std::size_t k = 0; k < s.points.size(); ++k) {
        svg << (k ? " " : "") << fixed(px(s.points[k].first), 2) << ',' << fixed(py(s.points[k].second), 2);
      }
      svg << "\"/>\n";
      for (const auto & [x, y] : s.points) {
        svg << "<circle cx=\"" << fixed(px(x), 2) << "\" cy=\"" << fixed(py(y), 2) << "\" r=\"3\" fill=\""
            << series_color(i) << "\" data-series=\"" << s.matcher << "\" data-x=\"" << format_double(x)
            << "\" data-y=\"" << format_double(y) << "\"/>\n";
      }
      svg << "<text x=\"" << kW - kRight + 12 << "\" y=\"" << kTop + 20 * (i + 1)
          << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << series_color(i) << "\">"
          << s.matcher << "</text>\n";
    }
    svg << "</svg>\n";
    out.push_back({metric + "_" + axis + ".svg", svg.str()});
  }
  return out;
}

nlohmann::json summarize(const std::vector<CsvRow> & rows, const std::string & metric)
{
  nlohmann::json axes = nlohmann::json::object();
  std::map<std::string, double> clean;
  for (const auto & r : rows) {
    if (r.axis == "clean") {
      clean[r.matcher] = r.metric(metric);
    }
  }
  for (const auto & r : rows) {
    if (r.axis == "clean") {
      continue;
    }
    nlohmann::json entry = {{"point", r.point}, {"level", r.level}, {"value", r.metric(metric)}};
    const auto it = clean.find(r.matcher);
    if (it != clean.end()) {
      entry["decline"] = it->second - r.metric(metric);
    }
    auto & slot = axes[r.axis][r.matcher];
    if (it != clean.end()) {
      slot["clean"] = it->second;
    }
    slot["levels"].push_back(entry);
  }
  return {{"metric", metric}, {"axes", axes}};
}

}  // namespace boxmatch::bench
