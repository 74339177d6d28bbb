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

#ifndef BOXMATCH__MODEL_HPP_
#define BOXMATCH__MODEL_HPP_

#include "boxmatch/fusionhead.hpp"
#include "boxmatch/propmatch.hpp"
#include "boxmatch/viewmatch.hpp"
#include "boxmatch/worldsim.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <vector>

namespace boxmatch::model
{

using diffnum::Graph;
using diffnum::ParamStore;
using diffnum::Var;

struct ModelConfig
{
  int channels = 64;
  int num_views = 6;
  int num_classes = 5;
  int heads = 4;
  int top_k = 2;
  double threshold = propmatch::kDefaultThreshold;
  double world_extent = 50.0;
  int roi_bins = 7;
  /// false: skip view classification and match against every 2D proposal at once.
  bool two_level = true;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig & config);
ModelConfig model_config_from_json(const nlohmann::json & j);

ParamStore init_model(const ModelConfig & config, std::uint64_t seed);

/// One proposal-level matching matrix: a view's 2D proposals against the 3D
/// proposals assigned to it (or all of both in one-level mode).
struct MatchBlock
{
  int view = -1;
  std::vector<long> rows;  ///< 3D proposal indices
  std::vector<long> cols;  ///< indices into the 2D proposal list
  Var m_p;                 ///< [rows, cols + 1]
};

struct ForwardOutput
{
  std::size_t num_proposals = 0;
  std::optional<Var> view_logits;  ///< [N_3d, N_v + 1], two-level only
  std::vector<viewmatch::ViewAssignment> assignment;
  std::vector<MatchBlock> blocks;
  std::vector<propmatch::Match> matches;
  std::optional<fusionhead::Prediction> prediction;
};

/// Full inference graph. Only branch outputs enter; no camera model does.
ForwardOutput forward(
  Graph & g, const ParamStore & params, const ModelConfig & config,
  const worldsim::LidarOutput & lidar, const worldsim::CameraOutput & camera);

/// Detection head fed with LiDAR evidence only: no view stage, no matches,
/// zero image ROI features and a single zero pixel.
ForwardOutput forward_lidar_only(
  Graph & g, const ParamStore & params, const ModelConfig & config,
  const worldsim::LidarOutput & lidar);

/// Predicted class per proposal from the branch logits.
std::vector<int> lidar_classes(const std::vector<worldsim::Proposal3D> & proposals);

}  // namespace boxmatch::model

#endif  // BOXMATCH__MODEL_HPP_
