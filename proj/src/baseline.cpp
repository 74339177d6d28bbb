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

#include "boxmatch/baseline.hpp"

namespace boxmatch::baseline
{

std::vector<BaselineMatch> baseline_match(
  const std::vector<worldsim::Proposal3D> & proposals3d,
  const std::vector<worldsim::Proposal2D> & proposals2d,
  const std::vector<CameraModel> & rig, double iou_gate)
{
  std::vector<BaselineMatch> out;
  out.reserve(proposals3d.size());
  for (const auto & p : proposals3d) {
    BaselineMatch best;
    best.view = worldsim::dominant_view(rig, p.center);
    if (best.view == static_cast<int>(rig.size())) {
      best.view = -1;
    }
    for (const int v : worldsim::visible_views(rig, p.center)) {
      const auto projected = project_box(rig[static_cast<std::size_t>(v)], p.box());
      if (!projected) {
        continue;
      }
      for (std::size_t j = 0; j < proposals2d.size(); ++j) {
        if (proposals2d[j].view != v) {
          continue;
        }
        const double o = iou(*projected, proposals2d[j].box);
        if (o >= iou_gate && o > best.iou) {
          best.iou = o;
          best.index2d = static_cast<int>(j);
          best.view = v;
        }
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace boxmatch::baseline
