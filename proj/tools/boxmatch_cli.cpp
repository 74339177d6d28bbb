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
#include "boxmatch/trainloop.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace
{

using namespace boxmatch;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string & path, const std::string & text)
{
  const fs::path p(path);
  if (p.has_parent_path()) {
    fs::create_directories(p.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
}

nlohmann::json read_json(const std::string & path)
{
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error & e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
}

std::vector<worldsim::Scene> read_scenes(const std::string & path)
{
  try {
    return worldsim::scenes_from_jsonl(read_file(path));
  } catch (const std::runtime_error & e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
}

std::vector<std::string> split_list(const std::string & text)
{
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

/// BOXMATCH_SEED, when set, takes precedence over --seed.
std::uint64_t effective_seed(std::uint64_t flag)
{
  const char * env = std::getenv("BOXMATCH_SEED");
  if (env == nullptr || *env == '\0') {
    return flag;
  }
  char * end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') {
    throw UsageError(std::string("BOXMATCH_SEED is not an unsigned integer: '") + env + "'");
  }
  return v;
}

trainloop::EvalOptions eval_options(const diffnum::Checkpoint & ckpt, std::uint64_t seed)
{
  trainloop::EvalOptions o;
  const auto tc = trainloop::train_config_from_json(ckpt.config);
  o.sensor = tc.sensor;
  o.lambda_view = tc.lambda_view;
  o.lambda_pro = tc.lambda_pro;
  o.seed = seed;
  return o;
}

struct GenArgs
{
  std::string out;
  std::string config;
  int count = 100;
  std::uint64_t seed = 0;
};

struct TrainArgs
{
  std::string scenes;
  std::string out;
  std::string config;
  std::string log;
  int epochs = -1;
  double lr = -1.0;
  bool one_level = false;
  std::uint64_t seed = 1;
};

struct EvalArgs
{
  std::string ckpt;
  std::string scenes;
  std::string out;
  std::string matcher = "fbm";
  std::string disturb;
  double async_dt = 0.0;
  double misalign_rot = 0.0;
  double misalign_trans = 0.0;
  int drop = 0;
  double calib_trans = 0.0;
  double calib_rot = 0.0;
  double feat_gain = 1.0;
  double feat_amp = 0.0;
  std::uint64_t seed = 3;
};

struct SweepArgs
{
  std::string ckpt;
  std::string scenes;
  std::string grid = "all";
  std::string out;
  std::uint64_t seed = 3;
};

struct ReportArgs
{
  std::string csv;
  std::string out_dir;
  std::string metric = "f1";
  std::string format = "svg";
};

struct AblateArgs
{
  std::string ckpt;
  std::string one_level;
  std::string scenes;
  std::string out;
  std::uint64_t seed = 3;
};

int run_gen(const GenArgs & a)
{
  worldsim::SceneConfig config;
  if (!a.config.empty()) {
    config = worldsim::scene_config_from_json(read_json(a.config));
  }
  const auto scenes = bench::generate_scenes(config, a.count, effective_seed(a.seed));
  write_file(a.out, worldsim::scenes_to_jsonl(scenes));
  std::cerr << "wrote " << scenes.size() << " scenes to " << a.out << "\n";
  return 0;
}

int run_train(const TrainArgs & a)
{
  trainloop::TrainConfig config;
  if (!a.config.empty()) {
    config = trainloop::train_config_from_json(read_json(a.config));
  }
  const std::uint64_t seed = effective_seed(a.seed);
  config.init_seed = seed;
  config.data_seed = boxmatch::derive_seed(seed, 1);
  if (a.epochs >= 0) {
    config.epochs = a.epochs;
  }
  if (a.lr > 0.0) {
    config.lr = a.lr;
  }
  if (a.one_level) {
    config.model.two_level = false;
  }
  const auto scenes = read_scenes(a.scenes);
  std::ostringstream log;
  log << "epoch,total,det,view,pro\n";
  const auto result = trainloop::train(config, scenes, [&](const trainloop::EpochStats & s) {
    log << s.epoch << ',' << bench::format_double(s.total) << ',' << bench::format_double(s.det) << ','
        << bench::format_double(s.view) << ',' << bench::format_double(s.pro) << '\n';
    std::cerr << "epoch " << s.epoch << " loss " << s.total << " (det " << s.det << ", view " << s.view
              << ", pro " << s.pro << ")\n";
  });
  diffnum::save_checkpoint(a.out, result.checkpoint);
  if (!a.log.empty()) {
    write_file(a.log, log.str());
  }
  return 0;
}

int run_eval(const EvalArgs & a)
{
  const auto ckpt = diffnum::load_checkpoint(a.ckpt);
  auto options = eval_options(ckpt, effective_seed(a.seed));
  options.matcher = trainloop::matcher_from_name(a.matcher);
  worldsim::DisturbanceSpec spec;
  if (!a.disturb.empty()) {
    spec = worldsim::disturbance_from_json(read_json(a.disturb));
  } else {
    spec.async_dt = a.async_dt;
    spec.misalign_rot = a.misalign_rot;
    spec.misalign_trans = a.misalign_trans;
    spec.drop_count = a.drop;
    spec.calib_trans_range = a.calib_trans;
    spec.calib_rot_range = a.calib_rot;
    spec.feat_gain = a.feat_gain;
    spec.feat_noise_amp = a.feat_amp;
  }
  const auto report = trainloop::evaluate(ckpt, read_scenes(a.scenes), spec, options);
  nlohmann::json j = trainloop::to_json(report);
  j["matcher"] = a.matcher;
  j["disturbance"] = worldsim::to_json(spec);
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
  }
  return 0;
}

int run_sweep(const SweepArgs & a)
{
  const auto ckpt = diffnum::load_checkpoint(a.ckpt);
  const auto options = eval_options(ckpt, effective_seed(a.seed));
  const auto scenes = read_scenes(a.scenes);
  const auto axes = split_list(a.grid);
  double feature_std = 0.0;
  for (const auto & axis : axes) {
    if (axis == "corrupt" || axis == "all") {
      feature_std = bench::clean_feature_std(scenes, options.sensor, options.seed);
    }
  }
  const auto grid = bench::make_grid(axes, feature_std);
  write_file(a.out, bench::to_csv(bench::run_sweep(ckpt, scenes, grid, options)));
  return 0;
}

int run_report(const ReportArgs & a)
{
  if (a.format != "svg") {
    throw UsageError("unsupported report format '" + a.format + "' (only svg)");
  }
  std::vector<bench::CsvRow> rows;
  try {
    rows = bench::parse_csv(read_file(a.csv));
  } catch (const std::runtime_error & e) {
    throw std::runtime_error("'" + a.csv + "' " + e.what());
  }
  for (const auto & chart : bench::render_charts(rows, a.metric)) {
    write_file((fs::path(a.out_dir) / chart.name).string(), chart.svg);
  }
  write_file((fs::path(a.out_dir) / "summary.json").string(), bench::summarize(rows, a.metric).dump(2) + "\n");
  return 0;
}

int run_ablate(const AblateArgs & a)
{
  const auto ckpt = diffnum::load_checkpoint(a.ckpt);
  const auto options = eval_options(ckpt, effective_seed(a.seed));
  std::optional<diffnum::Checkpoint> one;
  if (!a.one_level.empty()) {
    one = diffnum::load_checkpoint(a.one_level);
  }
  const auto rows =
    bench::run_ablation(ckpt, one ? &*one : nullptr, read_scenes(a.scenes), options);
  write_file(a.out, bench::to_csv(rows));
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"boxmatch: calibration-free box matching benchmark"};
  app.require_subcommand(1);

  GenArgs gen;
  auto * g = app.add_subcommand("gen", "generate a scene file");
  g->add_option("--out", gen.out, "output JSONL path")->required();
  g->add_option("--count", gen.count, "number of scenes")->check(CLI::NonNegativeNumber);
  g->add_option("--config", gen.config, "scene config JSON");
  g->add_option("--seed", gen.seed, "base seed");

  TrainArgs train;
  auto * t = app.add_subcommand("train", "train a model");
  t->add_option("--scenes", train.scenes, "training scenes JSONL")->required();
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--config", train.config, "training config JSON");
  t->add_option("--log", train.log, "per-epoch loss CSV");
  t->add_option("--epochs", train.epochs, "override the epoch count");
  t->add_option("--lr", train.lr, "override the learning rate");
  t->add_flag("--one-level", train.one_level, "train without the view stage");
  t->add_option("--seed", train.seed, "base seed");

  EvalArgs ev;
  auto * e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--scenes", ev.scenes, "evaluation scenes JSONL")->required();
  e->add_option("--out", ev.out, "report JSON (stdout when omitted)");
  e->add_option("--matcher", ev.matcher, "fbm, baseline or lidar_only");
  e->add_option("--disturb", ev.disturb, "disturbance JSON (overrides the flags below)");
  e->add_option("--async", ev.async_dt, "camera delay in seconds");
  e->add_option("--misalign-rot", ev.misalign_rot, "LiDAR misalignment rotation (deg)");
  e->add_option("--misalign-trans", ev.misalign_trans, "LiDAR misalignment translation (m)");
  e->add_option("--drop", ev.drop, "number of dropped views");
  e->add_option("--calib-trans", ev.calib_trans, "calibration translation error range (m)");
  e->add_option("--calib-rot", ev.calib_rot, "calibration rotation error range (deg)");
  e->add_option("--feat-gain", ev.feat_gain, "feature gain k");
  e->add_option("--feat-amp", ev.feat_amp, "feature noise amplitude");
  e->add_option("--seed", ev.seed, "sensor seed");

  SweepArgs sw;
  auto * s = app.add_subcommand("sweep", "run a disturbance grid");
  s->add_option("--ckpt", sw.ckpt, "checkpoint")->required();
  s->add_option("--scenes", sw.scenes, "evaluation scenes JSONL")->required();
  s->add_option("--out", sw.out, "results CSV")->required();
  s->add_option("--grid", sw.grid, "comma-separated axes: clean,async,misalign,drop,corrupt,calib,multi,all");
  s->add_option("--seed", sw.seed, "sensor seed");

  ReportArgs rep;
  auto * r = app.add_subcommand("report", "render charts from a results CSV");
  r->add_option("--csv", rep.csv, "results CSV")->required();
  r->add_option("--out", rep.out_dir, "output directory")->required();
  r->add_option("--metric", rep.metric, "metric column to plot");
  r->add_option("--format", rep.format, "output format (svg)");

  AblateArgs ab;
  auto * a = app.add_subcommand("ablate", "view-stage ablations");
  a->add_option("--ckpt", ab.ckpt, "two-level checkpoint")->required();
  a->add_option("--one-level-ckpt", ab.one_level, "checkpoint trained with --one-level");
  a->add_option("--scenes", ab.scenes, "evaluation scenes JSONL")->required();
  a->add_option("--out", ab.out, "results CSV")->required();
  a->add_option("--seed", ab.seed, "sensor seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) {
      return run_gen(gen);
    }
    if (*t) {
      return run_train(train);
    }
    if (*e) {
      return run_eval(ev);
    }
    if (*s) {
      return run_sweep(sw);
    }
    if (*r) {
      return run_report(rep);
    }
    return run_ablate(ab);
  } catch (const UsageError & err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const ConfigError & err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception & err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}
