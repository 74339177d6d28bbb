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

#ifndef BOXMATCH__TRAINLOOP_HPP_
#define BOXMATCH__TRAINLOOP_HPP_

#include "boxmatch/model.hpp"
#include "boxmatch/params.hpp"
#include "boxmatch/worldsim.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxmatch::trainloop
{

using diffnum::Graph;
using diffnum::Var;

class TrainingDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Largest center distance at which a proposal is assigned to an object.
inline constexpr double kAssignRadius = 2.0;

struct TrainConfig
{
  int epochs = 10;
  int batch_size = 1;  ///< scenes per optimizer step
  double lr = 1e-4;
  double weight_decay = 0.01;
  double lambda_view = 0.2;
  double lambda_pro = 0.1;
  model::ModelConfig model;
  worldsim::SensorConfig sensor;
  std::uint64_t init_seed = 1;
  std::uint64_t data_seed = 2;
  /// Draw new branch noise for every epoch instead of reusing one draw.
  bool fresh_sensor_noise = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig & config);
TrainConfig train_config_from_json(const nlohmann::json & j);

/// Supervision for one scene, aligned with the model inputs.
struct Labels
{
  std::vector<int> view_target;  ///< dominant view, N_v for none
  std::vector<std::vector<int>> view_sets;
  std::vector<int> src3d;
  std::vector<int> src2d;
  std::vector<int> class_target;  ///< −1 when no object lies within the radius
  std::vector<std::array<double, 7>> delta_target;
  std::vector<Box3D> gt_box;
};

/// Labels from ground truth computed with the true rig. `gt_boxes` are the
/// objects in the frame of the proposals the model sees.
Labels make_labels(
  const worldsim::GroundTruth & gt, const std::vector<worldsim::Proposal3D> & proposals3d,
  const std::vector<worldsim::Proposal2D> & proposals2d, const std::vector<worldsim::SceneObject> & objects,
  const std::vector<Box3D> & gt_boxes);

struct LossTerms
{
  Var total;
  double det = 0.0;
  double view = 0.0;
  double pro = 0.0;
};

/// L_det + λ_view · L_view + λ_pro · L_pro over 1×1 terms.
Var combine_losses(Var det, Var view, Var pro, double lambda_view, double lambda_pro);

/// Per-block proposal-level targets: the column of the 2D proposal sharing
/// the row's object, else the null column.
std::vector<std::size_t> block_targets(const model::MatchBlock & block, const Labels & labels);

LossTerms total_loss(
  Graph & g, const model::ForwardOutput & out, const Labels & labels, double lambda_view,
  double lambda_pro);

struct EpochStats
{
  int epoch = 0;
  double total = 0.0;
  double det = 0.0;
  double view = 0.0;
  double pro = 0.0;
};

struct TrainResult
{
  diffnum::Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

/// Simulated branch outputs for one scene, both seeds derived from `seed`.
struct SceneSample
{
  worldsim::LidarOutput lidar;
  worldsim::CameraOutput camera;
};
SceneSample simulate(
  const worldsim::Scene & scene, const worldsim::SensorConfig & sensor,
  const worldsim::DisturbanceSpec & disturb, std::uint64_t seed);

diffnum::Checkpoint make_checkpoint(const TrainConfig & config, diffnum::ParamStore params);

TrainResult train(
  const TrainConfig & config, const std::vector<worldsim::Scene> & scenes,
  const std::function<void(const EpochStats &)> & on_epoch = {});

enum class Matcher { fbm, baseline, lidar_only };
std::string matcher_name(Matcher m);
Matcher matcher_from_name(const std::string & name);

struct EvalOptions
{
  worldsim::SensorConfig sensor;
  std::uint64_t seed = 3;
  Matcher matcher = Matcher::fbm;
  double lambda_view = 0.2;
  double lambda_pro = 0.1;
};

/// Summable counts; every rate in the report derives from them.
struct EvalCounts
{
  long scenes = 0;
  long proposals = 0;
  long top1_hits = 0;
  long top2_hits = 0;
  long no_view = 0;
  long match_predicted = 0;
  long match_correct = 0;
  long match_positive = 0;
  long det_assigned = 0;
  long det_class_correct = 0;
  double det_iou_sum = 0.0;
  double loss_total = 0.0;
  double loss_det = 0.0;
  double loss_view = 0.0;
  double loss_pro = 0.0;

  EvalCounts & operator+=(const EvalCounts & o);
};

struct EvalReport
{
  EvalCounts counts;
  double top1_acc = 0.0;
  double top2_acc = 0.0;
  double no_view_rate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mean_iou = 0.0;
  double class_acc = 0.0;
  double det_score = 0.0;
  double loss_total = 0.0;
  double loss_det = 0.0;
  double loss_view = 0.0;
  double loss_pro = 0.0;
};

EvalReport finalize(const EvalCounts & counts);
nlohmann::json to_json(const EvalReport & report);

/// Runs the selected matcher over the scenes under `disturb`. The model never
/// receives a camera model; the (possibly perturbed) rig reaches only the
/// baseline. Labels always come from the true rig.
EvalReport evaluate(
  const diffnum::Checkpoint & checkpoint, const std::vector<worldsim::Scene> & scenes,
  const worldsim::DisturbanceSpec & disturb, const EvalOptions & options);

}  // namespace boxmatch::trainloop

#endif  // BOXMATCH__TRAINLOOP_HPP_
