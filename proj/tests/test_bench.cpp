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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <regex>

namespace
{

using namespace boxmatch;
using namespace boxmatch::bench;

ResultRow random_row(const std::string & point, const std::string & axis, double level,
                     const std::string & matcher, Rng & rng)
{
  trainloop::EvalCounts c;
  c.scenes = 1 + static_cast<long>(rng() % 50);
  c.proposals = static_cast<long>(rng() % 500);
  ResultRow row{point, axis, level, matcher, trainloop::finalize(c)};
  auto & r = row.report;
  r.top1_acc = uniform(rng, 0.0, 1.0);
  r.top2_acc = uniform(rng, r.top1_acc, 1.0);
  r.no_view_rate = uniform(rng, 0.0, 1.0);
  r.precision = uniform(rng, 0.0, 1.0);
  r.recall = uniform(rng, 0.0, 1.0);
  r.f1 = uniform(rng, 0.0, 1.0);
  r.mean_iou = uniform(rng, 0.0, 1.0);
  r.class_acc = uniform(rng, 0.0, 1.0);
  r.det_score = uniform(rng, 0.0, 1.0);
  r.loss_total = uniform(rng, 0.0, 5.0);
  return row;
}

std::vector<ResultRow> random_sweep(std::uint64_t seed)
{
  Rng rng(seed);
  std::vector<ResultRow> rows;
  for (const auto & m : {"baseline", "fbm"}) {
    rows.push_back(random_row("clean", "clean", 0.0, m, rng));
  }
  for (double dt : {0.08, 0.25, 0.5, 1.0, 2.0}) {
    for (const auto & m : {"baseline", "fbm"}) {
      rows.push_back(random_row("async_" + format_double(dt), "async", dt, m, rng));
    }
  }
  for (int d : {1, 3, 6}) {
    for (const auto & m : {"baseline", "fbm"}) {
      rows.push_back(random_row("drop_" + std::to_string(d), "drop", d, m, rng));
    }
  }
  return rows;
}

std::map<std::string, std::string> circle_values(const std::string & svg)
{
  std::map<std::string, std::string> out;
  const std::regex re("data-series=\"([a-z_]+)\" data-x=\"([^\"]+)\" data-y=\"([^\"]+)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    out[(*it)[1].str() + "@" + (*it)[2].str()] = (*it)[3].str();
  }
  return out;
}

}  // namespace

TEST(Scenes, ZeroCountIsEmpty)
{
  EXPECT_TRUE(generate_scenes({}, 0, 1).empty());
  const auto text = worldsim::scenes_to_jsonl({});
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_TRUE(worldsim::scenes_from_jsonl(text).empty());
}

TEST(Scenes, SameSeedSameBytes)
{
  const auto a = worldsim::scenes_to_jsonl(generate_scenes({}, 20, 9));
  const auto b = worldsim::scenes_to_jsonl(generate_scenes({}, 20, 9));
  const auto c = worldsim::scenes_to_jsonl(generate_scenes({}, 20, 10));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Scenes, PrefixStableAcrossCounts)
{
  const auto small = generate_scenes({}, 5, 4);
  const auto large = generate_scenes({}, 100, 4);
  ASSERT_EQ(large.size(), 100U);
  EXPECT_EQ(worldsim::scenes_to_jsonl(small),
            worldsim::scenes_to_jsonl({large.begin(), large.begin() + 5}));
  const auto text = worldsim::scenes_to_jsonl(large);
  EXPECT_EQ(worldsim::scenes_to_jsonl(worldsim::scenes_from_jsonl(text)), text);
}

TEST(Grid, AllCoversEveryAxis)
{
  const auto grid = make_grid({"all"}, 1.0);
  std::map<std::string, int> per_axis;
  for (const auto & p : grid) {
    ++per_axis[p.axis];
  }
  for (const auto & axis : grid_axes()) {
    EXPECT_GT(per_axis[axis], 0) << axis;
  }
  EXPECT_EQ(per_axis["async"], 5);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    EXPECT_LT(grid[i - 1].name, grid[i].name);
  }
}

TEST(Grid, AsyncLevels)
{
  std::vector<double> levels;
  for (const auto & p : make_grid({"async"}, 1.0)) {
    EXPECT_DOUBLE_EQ(p.spec.async_dt, p.level);
    levels.push_back(p.level);
  }
  std::sort(levels.begin(), levels.end());
  EXPECT_EQ(levels, (std::vector<double>{0.08, 0.25, 0.5, 1.0, 2.0}));
}

TEST(Grid, CorruptionScalesWithFeatureStd)
{
  for (const auto & p : make_grid({"corrupt"}, 0.7)) {
    EXPECT_DOUBLE_EQ(p.spec.feat_noise_amp, 1.4);
  }
}

TEST(Grid, EmptyAndUnknown)
{
  EXPECT_TRUE(make_grid({}, 1.0).empty());
  EXPECT_EQ(to_csv({}).find('\n') + 1, to_csv({}).size());
  EXPECT_THROW(make_grid({"clean", "bogus"}, 1.0), ConfigError);
}

TEST(Csv, FormatDoubleRoundTrips)
{
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = uniform(rng, -1e3, 1e3) * std::pow(10.0, uniform(rng, -20, 20));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(2.0), "2");
}

TEST(Csv, RoundTripIsExact)
{
  const auto rows = random_sweep(11);
  const auto text = to_csv(rows);
  const auto parsed = parse_csv(text);
  ASSERT_EQ(parsed.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(parsed[i].point, rows[i].point);
    EXPECT_EQ(parsed[i].matcher, rows[i].matcher);
    EXPECT_EQ(parsed[i].level, rows[i].level);
    EXPECT_EQ(parsed[i].metric("f1"), rows[i].report.f1);
    EXPECT_EQ(parsed[i].metric("top2_acc"), rows[i].report.top2_acc);
    EXPECT_EQ(parsed[i].metric("loss_total"), rows[i].report.loss_total);
  }
  EXPECT_THROW(parsed[0].metric("nope"), std::runtime_error);
}

TEST(Csv, MalformedInputNamesLine)
{
  auto text = to_csv(random_sweep(12));
  const auto third = text.find('\n', text.find('\n', text.find('\n') + 1) + 1);
  auto broken = text;
  broken.insert(third, ",extra");
  try {
    parse_csv(broken);
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error & e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_csv("a,b\n"), std::runtime_error);
  auto bad_number = text;
  bad_number.replace(text.find(",0.08,"), 6, ",0.08x,");
  EXPECT_THROW(parse_csv(bad_number), std::runtime_error);
}

TEST(Charts, DeterministicAndFaithful)
{
  const auto rows = parse_csv(to_csv(random_sweep(13)));
  const auto a = render_charts(rows, "f1");
  const auto b = render_charts(rows, "f1");
  ASSERT_EQ(a.size(), 2U);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].svg, b[i].svg);
  }
  std::size_t checked = 0;
  for (const auto & chart : a) {
    const auto values = circle_values(chart.svg);
    for (const auto & row : rows) {
      const bool on_chart = chart.name == "f1_" + row.axis + ".svg" || row.axis == "clean";
      if (!on_chart) {
        continue;
      }
      const auto it = values.find(row.matcher + "@" + format_double(row.level));
      ASSERT_NE(it, values.end()) << chart.name << " " << row.point;
      EXPECT_EQ(it->second, format_double(row.metric("f1")));
      ++checked;
    }
  }
  EXPECT_EQ(checked, 2U * 2U + 10U + 6U);
}

TEST(Charts, SingleRowAndEmpty)
{
  Rng rng(1);
  const auto rows = parse_csv(to_csv({random_row("drop_1", "drop", 1, "fbm", rng)}));
  const auto charts = render_charts(rows, "recall");
  ASSERT_EQ(charts.size(), 1U);
  EXPECT_EQ(charts[0].name, "recall_drop.svg");
  EXPECT_EQ(circle_values(charts[0].svg).size(), 1U);
  EXPECT_TRUE(render_charts({}, "f1").empty());
}

TEST(Summary, DeclineFromClean)
{
  const auto rows = parse_csv(to_csv(random_sweep(14)));
  const auto s = summarize(rows, "f1");
  for (const auto & m : {"baseline", "fbm"}) {
    const auto & entry = s["axes"]["async"][m];
    const double clean = entry["clean"].get<double>();
    ASSERT_EQ(entry["levels"].size(), 5U);
    for (const auto & lv : entry["levels"]) {
      EXPECT_DOUBLE_EQ(lv["decline"].get<double>(), clean - lv["value"].get<double>());
    }
  }
}
