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

#ifndef BOXMATCH__VIEWMATCH_HPP_
#define BOXMATCH__VIEWMATCH_HPP_

#include "boxmatch/nn.hpp"
#include "boxmatch/worldsim.hpp"

#include <random>
#include <span>
#include <vector>

namespace boxmatch::viewmatch
{

using diffnum::Graph;
using diffnum::LinearVars;
using diffnum::ParamStore;
using diffnum::Var;

struct ViewMatchVars
{
  Var view_embed;  ///< [N_v, C], added to every key column of that view
  diffnum::AttentionVars attn;
  std::vector<LinearVars> pos_mlp;  ///< 3 → C → C
  std::vector<LinearVars> cls_mlp;  ///< 3C → C → N_v + 1
};

void init_viewmatch(ParamStore & store, std::size_t channels, int num_views, std::mt19937_64 & rng);
ViewMatchVars load_viewmatch(Graph & g, const ParamStore & store);

/// Mean over the height axis; row v·W + w holds (view v, column w).
Tensor collapse_height(const worldsim::ViewFeatureMap & features);

/// Fixed sinusoidal code per image column, [W, C].
Tensor column_encoding(int width, int channels);

/// Cross-attention from 3D proposal features to the collapsed columns.
/// Keys carry the learned view embedding plus the column code; columns of
/// views marked absent in `present` are masked out.
Var view_cross_attention(
  Var f3d, const Tensor & collapsed, int num_views, const ViewMatchVars & p, int heads,
  const std::vector<bool> & present = {});

/// Centers divided by the world extent, so ±extent maps to ±1.
Tensor normalize_centers(const Tensor & centers, double extent);

Var pos_embed_3d(
  Graph & g, const Tensor & centers, double extent, std::span<const LinearVars> mlp);

/// N_v + 1 logits per proposal; the last column is "no view".
Var classify_views(Var f_ca, Var f3d, Var f3d_pos, std::span<const LinearVars> mlp);

struct ViewAssignment
{
  std::vector<int> views;
  bool no_view = false;
};

/// Classes of one logit row from best to worst, ties to the lower index.
/// Views flagged absent in `available` are left out; "no view" never is.
std::vector<int> ranked_classes(std::span<const double> logits, const std::vector<bool> & available = {});

/// Top-K classes per row with "no view" removed from the kept list.
/// no_view is set when "no view" ranks first; the remaining views stay as
/// fallback candidates.
std::vector<ViewAssignment> select_topk(
  const Tensor & logits, int k, const std::vector<bool> & available = {});

}  // namespace boxmatch::viewmatch

#endif  // BOXMATCH__VIEWMATCH_HPP_
