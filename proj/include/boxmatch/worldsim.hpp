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

#ifndef BOXMATCH__WORLDSIM_HPP_
#define BOXMATCH__WORLDSIM_HPP_

#include "boxmatch/geometry.hpp"
#include "boxmatch/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxmatch::worldsim
{

inline constexpr int kSceneFormatVersion = 1;
/// src_object value of a detection that has no real object behind it.
inline constexpr int kFalsePositive = -1;

class LabelError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct SceneConfig
{
  int num_views = 6;
  int min_objects = 6;
  int max_objects = 12;
  double world_extent = 50.0;  ///< half side of the square world (m)
  double min_range = 4.0;
  double max_range = 45.0;
  int num_classes = 5;
  int appearance_dim = 16;
  double max_speed = 10.0;
  double image_width = 800.0;
  double image_height = 448.0;
  double hfov_deg = 70.0;
  double camera_height = 1.6;
  double ring_radius = 0.8;

  void validate() const;
};

struct SceneObject
{
  int id = 0;
  int class_id = 0;
  Vec3 center;
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  std::array<double, 2> velocity{0.0, 0.0};
  std::vector<double> appearance;
  /// Center at scene time zero; scene_at extrapolates from here.
  Vec3 anchor;

  Box3D box() const { return {center, size, yaw}; }
};

/// Object whose anchor equals its current center (time zero).
SceneObject make_object(
  int id, int class_id, Vec3 center, Vec3 size, double yaw, std::array<double, 2> velocity,
  std::vector<double> appearance = {});

struct Scene
{
  std::vector<SceneObject> objects;
  std::vector<CameraModel> rig;
  double timestamp = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  const SceneObject * find(int id) const;
};

/// Outward-facing ring of cameras at equal spacing.
std::vector<CameraModel> make_ring_rig(const SceneConfig & config);

Scene generate_scene(const SceneConfig & config, std::uint64_t seed);

/// Constant-velocity extrapolation of every object by dt seconds.
Scene scene_at(const Scene & scene, double dt);

/// Branch simulator knobs. Both branches share the fixed mixing matrices
/// derived from `physics_seed`.
struct SensorConfig
{
  int channels = 64;
  int num_classes = 5;
  std::uint64_t physics_seed = 20230517;

  double p_detect_3d = 0.95;
  double center_noise = 0.15;
  double size_noise = 0.05;
  double yaw_noise = 0.05;
  int max_false_positives_3d = 2;
  double feature_noise_3d = 0.3;
  double class_logit_margin = 3.0;
  double class_logit_noise = 1.0;
  int bev_cells = 100;
  double bev_extent = 50.0;

  double p_detect_2d = 0.9;
  double box_noise_px = 3.0;
  int max_false_positives_2d = 1;
  double feature_noise_2d = 0.3;
  double class_flip_2d = 0.05;
  double position_gain = 0.5;
  int grid_h = 8;
  int grid_w = 20;
  double min_box_px = 4.0;

  /// Perfect detectors without any noise or false positives.
  static SensorConfig noiseless();
  void validate() const;
};

struct Proposal3D
{
  Vec3 center;
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  std::vector<double> class_logits;
  std::vector<double> feature;
  std::optional<int> src_object;

  Box3D box() const { return {center, size, yaw}; }
};

struct Proposal2D
{
  int view = 0;
  Box2D box;
  int class_id = 0;
  double score = 1.0;
  std::optional<int> src_object;
};

/// Bird's-eye grid over [−extent, extent]², indexed [row = y][col = x][channel].
struct BevMap
{
  Tensor data;
  int cells = 0;
  int channels = 0;
  double extent = 0.0;

  double cell_size() const { return 2.0 * extent / cells; }
  double cell_x(int col) const { return -extent + (col + 0.5) * cell_size(); }
  double cell_y(int row) const { return -extent + (row + 0.5) * cell_size(); }
  /// Cell index containing a coordinate, or −1 outside the grid.
  int index_of(double coord) const;
  const double * cell(int row, int col) const
  {
    return data.data.data() + (static_cast<std::size_t>(row) * cells + col) * channels;
  }
  double * cell(int row, int col)
  {
    return data.data.data() + (static_cast<std::size_t>(row) * cells + col) * channels;
  }
};

struct ViewFeatureMap
{
  Tensor data;  ///< [views, H, W, C]
  int views = 0;
  int H = 0;
  int W = 0;
  int C = 0;
  double image_width = 0.0;
  double image_height = 0.0;
  /// false for views whose image never arrived.
  std::vector<bool> present;

  std::size_t offset(int v, int r, int c) const
  {
    return ((static_cast<std::size_t>(v) * H + r) * W + c) * C;
  }
  const double * pixel(int v, int r, int c) const { return data.data.data() + offset(v, r, c); }
  double * pixel(int v, int r, int c) { return data.data.data() + offset(v, r, c); }
  /// Single view as an [H·W, C] matrix.
  Tensor view_matrix(int v) const;
};

struct LidarOutput
{
  std::vector<Proposal3D> proposals;
  BevMap bev;
};

struct CameraOutput
{
  ViewFeatureMap features;
  std::vector<Proposal2D> proposals;
};

struct DisturbanceSpec
{
  double async_dt = 0.0;
  double misalign_rot = 0.0;    ///< degrees
  double misalign_trans = 0.0;  ///< meters
  std::set<int> dropped_views;
  /// Number of views dropped at random per scene, on top of dropped_views.
  int drop_count = 0;
  double feat_gain = 1.0;
  double feat_noise_amp = 0.0;
  double calib_trans_range = 0.0;  ///< meters
  double calib_rot_range = 0.0;    ///< degrees

  void validate(int num_views) const;
  bool is_clean() const;
};

LidarOutput simulate_lidar_branch(
  const Scene & scene, const SensorConfig & config, std::uint64_t seed);

/// Views dropped for this scene: the explicit set plus drop_count random views.
std::set<int> resolve_dropped_views(
  const DisturbanceSpec & disturb, int num_views, std::uint64_t seed);

CameraOutput simulate_camera_branch(
  const Scene & scene, const DisturbanceSpec & disturb, const SensorConfig & config,
  std::uint64_t seed);

/// Standard deviation of all feature entries over present views.
double feature_std(const ViewFeatureMap & features);

/// Planar rigid motion: rotate by yaw about the vertical axis, then translate.
struct RigidTransform2D
{
  double yaw = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  std::array<double, 2> apply(double x, double y) const;
  RigidTransform2D inverse() const;
};

RigidTransform2D misalignment_transform(double rot_deg, double trans_m, std::uint64_t seed);

LidarOutput apply_rigid(const LidarOutput & lidar, const RigidTransform2D & transform);

LidarOutput apply_misalignment(
  const LidarOutput & lidar, double rot_deg, double trans_m, std::uint64_t seed);

std::vector<CameraModel> perturb_calibration(
  const std::vector<CameraModel> & rig, double trans_range_m, double rot_range_deg,
  std::uint64_t seed);

struct GroundTruth
{
  /// Views whose image contains the projected proposal center.
  std::vector<std::vector<int>> view_labels;
  /// View with the projection closest to the image center, or N_v for none.
  std::vector<int> dominant_view;
  /// One-hot [N_3d, N_2d + 1]; last column is the null proposal.
  Tensor match;
  /// Column of the one in each row of `match`.
  std::vector<int> match_column;
};

/// Views whose image contains the projection of `center`, ordered by index.
std::vector<int> visible_views(const std::vector<CameraModel> & rig, Vec3 center);
/// Visible view nearest to the image center, or rig.size() for none.
int dominant_view(const std::vector<CameraModel> & rig, Vec3 center);

GroundTruth make_gt_correspondences(
  const Scene & scene, const std::vector<Proposal3D> & proposals3d,
  const std::vector<Proposal2D> & proposals2d, const std::vector<CameraModel> & rig);

nlohmann::json to_json(const SceneConfig & config);
SceneConfig scene_config_from_json(const nlohmann::json & j);
nlohmann::json to_json(const SensorConfig & config);
SensorConfig sensor_config_from_json(const nlohmann::json & j);
nlohmann::json to_json(const DisturbanceSpec & spec);
DisturbanceSpec disturbance_from_json(const nlohmann::json & j);
nlohmann::json to_json(const CameraModel & cam);
CameraModel camera_from_json(const nlohmann::json & j);
nlohmann::json to_json(const Scene & scene);
Scene scene_from_json(const nlohmann::json & j);

/// JSONL: a header line followed by one scene per line.
std::string scenes_to_jsonl(const std::vector<Scene> & scenes);
std::vector<Scene> scenes_from_jsonl(const std::string & text);
void save_scenes(const std::string & path, const std::vector<Scene> & scenes);
std::vector<Scene> load_scenes(const std::string & path);

}  // namespace boxmatch::worldsim

#endif  // BOXMATCH__WORLDSIM_HPP_
