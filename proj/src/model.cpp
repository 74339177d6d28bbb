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

#include "boxmatch/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace boxmatch::model
{

using worldsim::CameraOutput;
using worldsim::LidarOutput;

void ModelConfig::validate() const
{
  if (channels < 1 || num_views < 1 || num_classes < 1 || roi_bins < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("head count must divide the channel width");
  }
  if (top_k < 1 || top_k > num_views + 1) {
    throw ConfigError("top_k must lie in [1, N_v + 1]");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0) || !(world_extent > 0.0)) {
    throw ConfigError("threshold must lie in [0, 1] and world_extent be positive");
  }
}

nlohmann::json to_json(const ModelConfig & c)
{
  return {{"channels", c.channels},     {"num_views", c.num_views},
          {"num_classes", c.num_classes}, {"heads", c.heads},
          {"top_k", c.top_k},           {"threshold", c.threshold},
          {"world_extent", c.world_extent}, {"roi_bins", c.roi_bins},
          {"two_level", c.two_level}};
}

ModelConfig model_config_from_json(const nlohmann::json & j)
{
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.num_views = j.value("num_views", c.num_views);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.heads = j.value("heads", c.heads);
  c.top_k = j.value("top_k", c.top_k);
  c.threshold = j.value("threshold", c.threshold);
  c.world_extent = j.value("world_extent", c.world_extent);
  c.roi_bins = j.value("roi_bins", c.roi_bins);
  c.two_level = j.value("two_level", c.two_level);
  c.validate();
  return c;
}

ParamStore init_model(const ModelConfig & config, std::uint64_t seed)
{
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  const auto C = static_cast<std::size_t>(config.channels);
  viewmatch::init_viewmatch(store, C, config.num_views, rng);
  propmatch::init_propmatch(store, C, config.num_classes, rng);
  fusionhead::init_fusionhead(store, C, config.num_classes, rng);
  return store;
}

std::vector<int> lidar_classes(const std::vector<worldsim::Proposal3D> & proposals)
{
  std::vector<int> out;
  out.reserve(proposals.size());
  for (const auto & p : proposals) {
    const auto best = std::max_element(p.class_logits.begin(), p.class_logits.end());
    out.push_back(static_cast<int>(best - p.class_logits.begin()));
  }
  return out;
}

namespace
{

Tensor feature_matrix(const LidarOutput & lidar, std::size_t C)
{
  Tensor f = Tensor::matrix(lidar.proposals.size(), C);
  for (std::size_t i = 0; i < lidar.proposals.size(); ++i) {
    const auto & row = lidar.proposals[i].feature;
    if (row.size() != C) {
      throw ShapeError("proposal feature width differs from model channels");
    }
    std::copy(row.begin(), row.end(), f.row_span(i).begin());
  }
  return f;
}

Tensor center_matrix(const LidarOutput & lidar)
{
  Tensor c = Tensor::matrix(lidar.proposals.size(), 3);
  for (std::size_t i = 0; i < lidar.proposals.size(); ++i) {
    const Vec3 p = lidar.proposals[i].center;
    c(i, 0) = p.x;
    c(i, 1) = p.y;
    c(i, 2) = p.z;
  }
  return c;
}

Var roi3d_features(Graph & g, const LidarOutput & lidar, const fusionhead::FusionVars & fv)
{
  Tensor pooled = Tensor::matrix(lidar.proposals.size(), static_cast<std::size_t>(lidar.bev.channels));
  for (std::size_t i = 0; i < lidar.proposals.size(); ++i) {
    const auto roi = fusionhead::roi3d_pool(lidar.bev, lidar.proposals[i].box());
    std::copy(roi.values.begin(), roi.values.end(), pooled.row_span(i).begin());
  }
  return diffnum::mlp(g.constant(std::move(pooled)), fv.roi3d);
}

// Image-free tail shared by both paths' shapes: zero ROI rows, zero scores,
// one zero pixel.
fusionhead::Prediction lidar_only_head(
  Graph & g, const ModelConfig & config, Var f3d, Var roi3d, const fusionhead::FusionVars & fv)
{
  const std::size_t n = f3d.rows(), C = f3d.cols();
  const Var zero_roi = g.constant(Tensor::matrix(n, C));
  const Var zero_s = g.constant(Tensor::matrix(n, 1));
  const Var pixel = g.constant(Tensor::matrix(1, C));
  const Tensor mask = Tensor::matrix(n, 1, fusionhead::kMaskValue);
  const Var o1 = fusionhead::query_pixel_fusion(f3d, pixel, mask, fv.pixel, config.heads);
  const Var o2 = fusionhead::query_roi_fusion(f3d, zero_roi, zero_s, fv.roi_mix);
  const Var o3 = fusionhead::roi_roi_fusion(roi3d, zero_roi, fv.roi, config.heads);
  return fusionhead::fuse_predict(o1, o2, o3, fv.head, config.num_classes);
}

}  // namespace

ForwardOutput forward_lidar_only(
  Graph & g, const ParamStore & params, const ModelConfig & config, const LidarOutput & lidar)
{
  ForwardOutput out;
  out.num_proposals = lidar.proposals.size();
  out.matches.assign(out.num_proposals, {});
  if (out.num_proposals == 0) {
    return out;
  }
  const auto fv = fusionhead::load_fusionhead(g, params);
  const Var f3d = g.constant(feature_matrix(lidar, static_cast<std::size_t>(config.channels)));
  out.prediction = lidar_only_head(g, config, f3d, roi3d_features(g, lidar, fv), fv);
  return out;
}

ForwardOutput forward(
  Graph & g, const ParamStore & params, const ModelConfig & config, const LidarOutput & lidar,
  const CameraOutput & camera)
{
  const auto & fm = camera.features;
  if (fm.views != config.num_views || fm.C != config.channels) {
    throw ShapeError("camera features do not match the model's view count or width");
  }
  ForwardOutput out;
  const std::size_t n3 = lidar.proposals.size();
  out.num_proposals = n3;
  out.matches.assign(n3, {});
  if (n3 == 0) {
    return out;
  }
  const std::size_t C = static_cast<std::size_t>(config.channels);
  const int NV = config.num_views;
  const Var f3d = g.constant(feature_matrix(lidar, C));
  const Tensor centers = center_matrix(lidar);
  const std::vector<int> cls3d = lidar_classes(lidar.proposals);

  // View-level matching.
  if (config.two_level) {
    const auto vm = viewmatch::load_viewmatch(g, params);
    const Var f_ca = viewmatch::view_cross_attention(
      f3d, viewmatch::collapse_height(fm), NV, vm, config.heads, fm.present);
    const Var pos = viewmatch::pos_embed_3d(g, centers, config.world_extent, vm.pos_mlp);
    out.view_logits = viewmatch::classify_views(f_ca, f3d, pos, vm.cls_mlp);
    out.assignment = viewmatch::select_topk(out.view_logits->value(), config.top_k, fm.present);
  }

  // Proposal-level matching.
  const auto pm = propmatch::load_propmatch(g, params);
  const auto & P2 = camera.proposals;
  const std::size_t n2 = P2.size();
  std::optional<Var> roi2d_all;
  std::optional<Var> e2_all;
  if (n2 > 0) {
    Tensor pooled = Tensor::matrix(n2, C);
    std::vector<int> cls2d(n2);
    std::vector<Box2D> boxes(n2);
    std::vector<Tensor> views(static_cast<std::size_t>(NV));
    for (std::size_t j = 0; j < n2; ++j) {
      const int v = P2[j].view;
      if (v < 0 || v >= NV) {
        throw ShapeError("2D proposal view outside [0, N_v)");
      }
      if (views[v].data.empty()) {
        views[v] = fm.view_matrix(v);
      }
      const auto roi = propmatch::roi_pool_2d(
        views[v], fm.H, fm.W, propmatch::to_grid(P2[j].box, fm.image_width, fm.image_height, fm.H, fm.W),
        config.roi_bins);
      std::copy(roi.values.begin(), roi.values.end(), pooled.row_span(j).begin());
      cls2d[j] = P2[j].class_id;
      boxes[j] = P2[j].box;
    }
    roi2d_all = propmatch::roi_embed(g.constant(std::move(pooled)), pm);
    e2_all = propmatch::embed_2d(
      *roi2d_all, cls2d, propmatch::normalize_boxes(boxes, fm.image_width, fm.image_height),
      config.num_classes, pm);
  }
  const Var e3_all =
    propmatch::embed_3d(f3d, cls3d, centers, config.world_extent, config.num_classes, pm);

  std::vector<std::vector<propmatch::Match>> candidates(n3);
  auto run_block = [&](int view, std::vector<long> rows, std::vector<long> cols) {
    if (rows.empty()) {
      return;
    }
    MatchBlock block;
    block.view = view;
    const Var e3 = diffnum::gather_rows(e3_all, rows);
    block.m_p = cols.empty() ? propmatch::matching_matrix_empty(e3)
                             : propmatch::matching_matrix(e3, diffnum::gather_rows(*e2_all, cols));
    const auto pairs = propmatch::extract_pairs(block.m_p.value(), config.threshold);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (pairs[r].matched()) {
        const long j = cols[static_cast<std::size_t>(pairs[r].column)];
        candidates[static_cast<std::size_t>(rows[r])].push_back(
          {P2[static_cast<std::size_t>(j)].view, static_cast<int>(j), pairs[r].score});
      }
    }
    block.rows = std::move(rows);
    block.cols = std::move(cols);
    out.blocks.push_back(std::move(block));
  };
  if (config.two_level) {
    for (int v = 0; v < NV; ++v) {
      if (!fm.present[v]) {
        continue;
      }
      std::vector<long> rows, cols;
      for (std::size_t i = 0; i < n3; ++i) {
        const auto & a = out.assignment[i];
        if (!a.no_view && std::find(a.views.begin(), a.views.end(), v) != a.views.end()) {
          rows.push_back(static_cast<long>(i));
        }
      }
      for (std::size_t j = 0; j < n2; ++j) {
        if (P2[j].view == v) {
          cols.push_back(static_cast<long>(j));
        }
      }
      run_block(v, std::move(rows), std::move(cols));
    }
  } else if (std::any_of(fm.present.begin(), fm.present.end(), [](bool b) { return b; })) {
    std::vector<long> rows(n3), cols(n2);
    std::iota(rows.begin(), rows.end(), 0L);
    std::iota(cols.begin(), cols.end(), 0L);
    run_block(-1, std::move(rows), std::move(cols));
  }
  for (std::size_t i = 0; i < n3; ++i) {
    out.matches[i] = propmatch::merge_across_views(candidates[i]);
  }

  // Fusion.
  const auto fv = fusionhead::load_fusionhead(g, params);
  const Var roi3d = roi3d_features(g, lidar, fv);
  const bool any_match =
    std::any_of(out.matches.begin(), out.matches.end(), [](const auto & m) { return m.matched(); });
  if (!any_match) {
    out.prediction = lidar_only_head(g, config, f3d, roi3d, fv);
    return out;
  }

  std::vector<long> gather(n3, -1);
  std::vector<std::optional<fusionhead::GridRoi>> rois(n3);
  for (std::size_t i = 0; i < n3; ++i) {
    const auto & m = out.matches[i];
    if (m.matched()) {
      gather[i] = m.index2d;
      const auto & p2 = P2[static_cast<std::size_t>(m.index2d)];
      rois[i] = fusionhead::GridRoi{
        p2.view, propmatch::to_grid(p2.box, fm.image_width, fm.image_height, fm.H, fm.W)};
    }
  }
  const Var roi2d_bar = diffnum::gather_rows(*roi2d_all, gather);

  // S enters fusion as a constant so that only L_pro shapes the matching
  // matrix; detection gradients stop at the reweighted ROI features.
  Tensor s_values = Tensor::matrix(n3, 1);
  for (std::size_t i = 0; i < n3; ++i) {
    s_values(i, 0) = out.matches[i].score;
  }
  const Var scores = g.constant(std::move(s_values));

  const auto keys = fusionhead::collect_pixel_keys(fm.H, fm.W, rois);
  const Tensor mask = fusionhead::build_roi_mask(keys, rois);
  const Var pixels = g.constant(fusionhead::gather_pixels(fm, keys));
  const Var o1 = fusionhead::query_pixel_fusion(f3d, pixels, mask, fv.pixel, config.heads);
  const Var o2 = fusionhead::query_roi_fusion(f3d, roi2d_bar, scores, fv.roi_mix);
  const Var o3 = fusionhead::roi_roi_fusion(roi3d, roi2d_bar, fv.roi, config.heads);
  out.prediction = fusionhead::fuse_predict(o1, o2, o3, fv.head, config.num_classes);
  return out;
}

}  // namespace boxmatch::model
