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

#ifndef BOXMATCH__PROPMATCH_HPP_
#define BOXMATCH__PROPMATCH_HPP_

#include "boxmatch/nn.hpp"
#include "boxmatch/worldsim.hpp"

#include <random>
#include <span>
#include <vector>

namespace boxmatch::propmatch
{

using diffnum::Graph;
using diffnum::LinearVars;
using diffnum::ParamStore;
using diffnum::Var;

inline constexpr double kDefaultThreshold = 0.1;

struct RoiFeature
{
  std::vector<double> values;
  bool degenerate = false;
};

/// Average of a bins × bins grid of bin means over `box` (feature-grid units,
/// cell (r, c) spans [c, c+1] × [r, r+1]). Each bin mean is the exact integral
/// average of the bilinear interpolant through the cell centers, clamped at
/// the border. A box with no area after clipping yields zeros, flagged.
/// `fmap` is [H·W, C] with row r·W + c.
RoiFeature roi_pool_2d(const Tensor & fmap, int H, int W, Box2D box, int bins = 7);

/// Pixel box to feature-grid units.
Box2D to_grid(const Box2D & pixel_box, double img_w, double img_h, int H, int W);

struct PropMatchVars
{
  std::vector<LinearVars> roi2d;  ///< C → C → C
  std::vector<LinearVars> cls2d;  ///< N_cls → C → C
  std::vector<LinearVars> pos2d;  ///< 4 → C → C
  std::vector<LinearVars> com2d;  ///< 3C → C → C
  std::vector<LinearVars> cls3d;  ///< N_cls → C → C
  std::vector<LinearVars> pos3d;  ///< 3 → C → C
  std::vector<LinearVars> com3d;  ///< 3C → C → C
};

void init_propmatch(ParamStore & store, std::size_t channels, int num_classes, std::mt19937_64 & rng);
PropMatchVars load_propmatch(Graph & g, const ParamStore & store);

/// One-hot rows; throws ConfigError for ids outside [0, num_classes).
Tensor one_hot(std::span<const int> ids, int num_classes);

/// Box corners divided by the image size, [N, 4].
Tensor normalize_boxes(std::span<const Box2D> boxes, double img_w, double img_h);

/// ROI MLP applied to pooled rows, giving the per-proposal 2D ROI features.
Var roi_embed(Var pooled, const PropMatchVars & p);

/// Combined 2D proposal features from ROI features, class ids and boxes.
Var embed_2d(
  Var rois, std::span<const int> class_ids, const Tensor & norm_boxes, int num_classes,
  const PropMatchVars & p);

/// Combined 3D proposal features from proposal features, class ids and centers.
Var embed_3d(
  Var f3d, std::span<const int> class_ids, const Tensor & centers, double extent,
  int num_classes, const PropMatchVars & p);

/// M_p = F3d · [F2d; 0]ᵀ / √C, with the appended zero row as the null column.
Var matching_matrix(Var e3, Var e2);
/// Null-only matrix used when a view has no 2D proposals.
Var matching_matrix_empty(Var e3);
Tensor matching_matrix(const Tensor & e3, const Tensor & e2);

struct RowMatch
{
  int column = -1;  ///< matched 2D column, −1 when unmatched
  double score = 0.0;
  std::vector<double> probabilities;

  bool matched() const { return column >= 0; }
};

/// Row softmax, argmax (ties to the lower column), matched when the argmax is
/// not the null column and its probability reaches `threshold`.
std::vector<RowMatch> extract_pairs(const Tensor & m_p, double threshold = kDefaultThreshold);

struct Match
{
  int view = -1;
  int index2d = -1;  ///< index into the scene's 2D proposal list
  double score = 0.0;

  bool matched() const { return index2d >= 0; }
};

/// Keeps the highest-scoring match among a proposal's candidate views.
Match merge_across_views(std::span<const Match> candidates);

}  // namespace boxmatch::propmatch

#endif  // BOXMATCH__PROPMATCH_HPP_
