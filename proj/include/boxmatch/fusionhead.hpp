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

#ifndef BOXMATCH__FUSIONHEAD_HPP_
#define BOXMATCH__FUSIONHEAD_HPP_

#include "boxmatch/nn.hpp"
#include "boxmatch/propmatch.hpp"
#include "boxmatch/worldsim.hpp"

#include <optional>
#include <random>
#include <span>
#include <vector>

namespace boxmatch::fusionhead
{

using diffnum::Graph;
using diffnum::LinearVars;
using diffnum::ParamStore;
using diffnum::Var;

inline constexpr double kMaskValue = -1e6;
inline constexpr int kBoxDeltas = 7;

struct FusionVars
{
  diffnum::DecoderVars pixel;       ///< O₁
  std::vector<LinearVars> roi_mix;  ///< O₂: 2C → C → C
  std::vector<LinearVars> roi3d;    ///< 3D ROI: C → C → C
  diffnum::DecoderVars roi;         ///< O₃
  std::vector<LinearVars> head;     ///< 3C → C → N_cls + 7
};

void init_fusionhead(ParamStore & store, std::size_t channels, int num_classes, std::mt19937_64 & rng);
FusionVars load_fusionhead(Graph & g, const ParamStore & store);

/// Region of a matched proposal on one view's feature grid.
struct GridRoi
{
  int view = 0;
  Box2D box;  ///< feature-grid units
};

/// Pixel keys for query-pixel fusion: every cell of `views` that lies inside
/// the ROI of at least one matched proposal. Cells outside all ROIs carry
/// mask −1e6 for every row, so dropping them leaves matched rows unchanged.
struct PixelKeys
{
  std::vector<int> view;
  std::vector<int> row;
  std::vector<int> col;
};

/// Whether cell (r, c) overlaps the grid box with positive area.
bool cell_in_roi(const Box2D & box, int r, int c);

/// Mask [N, views·H·W] over all cells of all views: 0 inside the proposal's
/// matched ROI, −1e6 elsewhere; unmatched rows are all −1e6.
Tensor build_roi_mask(int views, int H, int W, std::span<const std::optional<GridRoi>> rois);

PixelKeys collect_pixel_keys(int H, int W, std::span<const std::optional<GridRoi>> rois);
/// Mask restricted to `keys`.
Tensor build_roi_mask(const PixelKeys & keys, std::span<const std::optional<GridRoi>> rois);
/// Key feature rows gathered from the view feature map.
Tensor gather_pixels(const worldsim::ViewFeatureMap & features, const PixelKeys & keys);

/// O₁ = Decoder(F3d, pixels, pixels, mask).
Var query_pixel_fusion(
  Var f3d, Var pixels, const Tensor & mask, const diffnum::DecoderVars & p, int heads);

/// concat(F3d, S ⊙ ROI2d), the input of the O₂ MLP.
Var query_roi_input(Var f3d, Var roi2d, Var scores);
/// O₂ = MLP(concat(F3d, S ⊙ ROI2d)).
Var query_roi_fusion(Var f3d, Var roi2d, Var scores, std::span<const LinearVars> mlp);

/// Mean of BEV cells whose centers lie inside the box footprint; zeros,
/// flagged degenerate, when there are none.
propmatch::RoiFeature roi3d_pool(const worldsim::BevMap & bev, const Box3D & box);

/// O₃ = Decoder(ROI3d, ROI2d, ROI2d) without mask.
Var roi_roi_fusion(Var roi3d, Var roi2d, const diffnum::DecoderVars & p, int heads);

struct Prediction
{
  Var class_logits;  ///< [N, N_cls]
  Var deltas;        ///< [N, 7]: δx, δy, δz, δl, δw, δh, δyaw
};

Prediction fuse_predict(Var o1, Var o2, Var o3, std::span<const LinearVars> head, int num_classes);

/// Regression target turning `from` into `to`.
std::array<double, kBoxDeltas> box_deltas(const Box3D & from, const Box3D & to);
Box3D apply_deltas(const Box3D & box, std::span<const double> deltas);

}  // namespace boxmatch::fusionhead

#endif  // BOXMATCH__FUSIONHEAD_HPP_
