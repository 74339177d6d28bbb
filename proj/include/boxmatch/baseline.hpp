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

#ifndef BOXMATCH__BASELINE_HPP_
#define BOXMATCH__BASELINE_HPP_

#include "boxmatch/geometry.hpp"
#include "boxmatch/worldsim.hpp"

#include <vector>

namespace boxmatch::baseline
{

inline constexpr double kIouGate = 0.3;

struct BaselineMatch
{
  int view = -1;     ///< projected view, −1 when the center lands in no image
  int index2d = -1;  ///< matched 2D proposal, −1 for none
  double iou = 0.0;

  bool matched() const { return index2d >= 0; }
};

/// Projects every 3D box with the given calibration and takes, per proposal,
/// the 2D box of highest IoU over the views that contain the projected center.
/// Ties go to the lower view, then the lower 2D index.
std::vector<BaselineMatch> baseline_match(
  const std::vector<worldsim::Proposal3D> & proposals3d,
  const std::vector<worldsim::Proposal2D> & proposals2d,
  const std::vector<CameraModel> & rig, double iou_gate = kIouGate);

}  // namespace boxmatch::baseline

#endif  // BOXMATCH__BASELINE_HPP_
