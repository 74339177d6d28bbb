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

#ifndef BOXMATCH__BENCH_HPP_
#define BOXMATCH__BENCH_HPP_

#include "boxmatch/trainloop.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace boxmatch::bench
{

/// `count` scenes; scene i uses seed derive_seed(seed, i).
std::vector<worldsim::Scene> generate_scenes(
  const worldsim::SceneConfig & config, int count, std::uint64_t seed);

/// One named disturbance setting of a sweep.
struct GridPoint
{
  std::string name;
  std::string axis;   ///< clean, async, misalign, drop, corrupt, calib or multi
  double level = 0.0; ///< x coordinate on the axis chart
  worldsim::DisturbanceSpec spec;
};

/// Axis names accepted by make_grid, in canonical order.
const std::vector<std::string> & grid_axes();

/// Grid points for the requested axes ("all" expands to every axis).
/// `feature_std` scales the corruption noise amplitude. Throws ConfigError
/// for unknown axis names.
std::vector<GridPoint> make_grid(const std::vector<std::string> & axes, double feature_std);

/// Feature standard deviation of clean camera maps over `scenes`.
double clean_feature_std(
  const std::vector<worldsim::Scene> & scenes, const worldsim::SensorConfig & sensor,
  std::uint64_t seed);

struct ResultRow
{
  std::string point;
  std::string axis;
  double level = 0.0;
  std::string matcher;
  trainloop::EvalReport report;
};

/// Every grid point under the fbm and baseline matchers, sorted by point name
/// then matcher name.
std::vector<ResultRow> run_sweep(
  const diffnum::Checkpoint & checkpoint, const std::vector<worldsim::Scene> & scenes,
  const std::vector<GridPoint> & grid, const trainloop::EvalOptions & options);

/// Clean-suite FBM rows for the view-stage ablations: Top-1 and Top-2 view
/// selection on `two_level`, and the single-stage model when given. Rows use
/// axis "ablation" and the variant name as the point.
std::vector<ResultRow> run_ablation(
  const diffnum::Checkpoint & two_level, const diffnum::Checkpoint * one_level,
  const std::vector<worldsim::Scene> & scenes, const trainloop::EvalOptions & options);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

const std::vector<std::string> & csv_columns();
std::string to_csv(const std::vector<ResultRow> & rows);

/// Parsed CSV row; metric values keyed by column name.
struct CsvRow
{
  std::string point;
  std::string axis;
  double level = 0.0;
  std::string matcher;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(const std::string & name) const;
};

/// Parses text written by to_csv. Throws std::runtime_error naming the line
/// for malformed input.
std::vector<CsvRow> parse_csv(const std::string & text);

struct ChartFile
{
  std::string name;
  std::string svg;
};

/// One line chart of `metric` against level per non-clean axis, with one
/// series per matcher. The clean point, when present, is drawn at level 0.
std::vector<ChartFile> render_charts(const std::vector<CsvRow> & rows, const std::string & metric = "f1");

/// Per axis and matcher: clean value, value at each level, and decline.
nlohmann::json summarize(const std::vector<CsvRow> & rows, const std::string & metric = "f1");

}  // namespace boxmatch::bench

#endif  // BOXMATCH__BENCH_HPP_
