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

#include "boxmatch/propmatch.hpp"

#include <algorithm>
#include <cmath>

namespace boxmatch::propmatch
{

namespace
{

// ∫ of the clamped hat basis functions over [a, b]; cell centers at i + 0.5.
void hat_integrals(double a, double b, int n, std::vector<double> & w)
{
  w.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 1) {
    w[0] = b - a;
    return;
  }
  // Border half-cells are flat.
  const double lo_end = std::min(b, 0.5);
  if (lo_end > a) {
    w[0] += lo_end - a;
  }
  const double hi_start = std::max(a, n - 0.5);
  if (b > hi_start) {
    w[static_cast<std::size_t>(n) - 1] += b - hi_start;
  }
  for (int i = 0; i + 1 < n; ++i) {
    const double x0 = i + 0.5;
    const double s = std::max(a, x0), e = std::min(b, x0 + 1.0);
    if (e <= s) {
      continue;
    }
    // Linear piece: weight of node i is 1 − t, of node i+1 is t, t = x − x0.
    const double t0 = s - x0, t1 = e - x0;
    const double right = 0.5 * (t1 * t1 - t0 * t0);
    w[static_cast<std::size_t>(i)] += (t1 - t0) - right;
    w[static_cast<std::size_t>(i) + 1] += right;
  }
}

}  // namespace

RoiFeature roi_pool_2d(const Tensor & fmap, int H, int W, Box2D box, int bins)
{
  if (fmap.rows() != static_cast<std::size_t>(H) * W || bins < 1) {
    throw ShapeError("roi_pool_2d: map is " + fmap.shape_str());
  }
  const std::size_t C = fmap.cols();
  RoiFeature out;
  out.values.assign(C, 0.0);
  box = clip_box(box, W, H);
  if (box.area() <= 0.0) {
    out.degenerate = true;
    return out;
  }
  const double bw = box.width() / bins, bh = box.height() / bins;
  std::vector<double> wx_total(static_cast<std::size_t>(W), 0.0);
  std::vector<double> wy_total(static_cast<std::size_t>(H), 0.0);
  std::vector<double> wx, wy;
  // Bins share their size, so the bin means average to the sum of the
  // per-bin weights scaled by 1 / (bins² · bin area).
  for (int i = 0; i < bins; ++i) {
    hat_integrals(box.x1 + i * bw, box.x1 + (i + 1) * bw, W, wx);
    for (int c = 0; c < W; ++c) {
      wx_total[c] += wx[c];
    }
    hat_integrals(box.y1 + i * bh, box.y1 + (i + 1) * bh, H, wy);
    for (int r = 0; r < H; ++r) {
      wy_total[r] += wy[r];
    }
  }
  const double norm = 1.0 / (bins * bins * bw * bh);
  for (int r = 0; r < H; ++r) {
    if (wy_total[r] == 0.0) {
      continue;
    }
    for (int c = 0; c < W; ++c) {
      const double w = wy_total[r] * wx_total[c] * norm;
      if (w == 0.0) {
        continue;
      }
      const auto row = fmap.row_span(static_cast<std::size_t>(r) * W + c);
      for (std::size_t k = 0; k < C; ++k) {
        out.values[k] += w * row[k];
      }
    }
  }
  return out;
}

Box2D to_grid(const Box2D & b, double img_w, double img_h, int H, int W)
{
  const double sx = W / img_w, sy = H / img_h;
  return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

void init_propmatch(ParamStore & store, std::size_t channels, int num_classes, std::mt19937_64 & rng)
{
  const std::size_t C = channels, K = static_cast<std::size_t>(num_classes);
  const std::size_t roi[] = {C, C, C}, cls[] = {K, C, C}, pos2[] = {4, C, C}, pos3[] = {3, C, C},
                    com[] = {3 * C, C, C};
  diffnum::init_mlp(store, "prop.roi2d", roi, rng);
  diffnum::init_mlp(store, "prop.cls2d", cls, rng);
  diffnum::init_mlp(store, "prop.pos2d", pos2, rng);
  diffnum::init_mlp(store, "prop.com2d", com, rng);
  diffnum::init_mlp(store, "prop.cls3d", cls, rng);
  diffnum::init_mlp(store, "prop.pos3d", pos3, rng);
  diffnum::init_mlp(store, "prop.com3d", com, rng);
}

PropMatchVars load_propmatch(Graph & g, const ParamStore & store)
{
  return {
    diffnum::load_mlp(g, store, "prop.roi2d", 2), diffnum::load_mlp(g, store, "prop.cls2d", 2),
    diffnum::load_mlp(g, store, "prop.pos2d", 2), diffnum::load_mlp(g, store, "prop.com2d", 2),
    diffnum::load_mlp(g, store, "prop.cls3d", 2), diffnum::load_mlp(g, store, "prop.pos3d", 2),
    diffnum::load_mlp(g, store, "prop.com3d", 2),
  };
}

Tensor one_hot(std::span<const int> ids, int num_classes)
{
  Tensor out = Tensor::matrix(ids.size(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= num_classes) {
      throw ConfigError("unknown class id " + std::to_string(ids[i]));
    }
    out(i, static_cast<std::size_t>(ids[i])) = 1.0;
  }
  return out;
}

Tensor normalize_boxes(std::span<const Box2D> boxes, double img_w, double img_h)
{
  Tensor out = Tensor::matrix(boxes.size(), 4);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    out(i, 0) = boxes[i].x1 / img_w;
    out(i, 1) = boxes[i].y1 / img_h;
    out(i, 2) = boxes[i].x2 / img_w;
    out(i, 3) = boxes[i].y2 / img_h;
  }
  return out;
}

Var roi_embed(Var pooled, const PropMatchVars & p)
{
  return diffnum::mlp(pooled, p.roi2d);
}

Var embed_2d(
  Var rois, std::span<const int> class_ids, const Tensor & norm_boxes, int num_classes,
  const PropMatchVars & p)
{
  Graph & g = *rois.graph;
  if (rois.rows() != class_ids.size() || rois.rows() != norm_boxes.rows()) {
    throw ShapeError("embed_2d: misaligned inputs");
  }
  const Var parts[] = {
    rois,
    diffnum::mlp(g.constant(one_hot(class_ids, num_classes)), p.cls2d),
    diffnum::mlp(g.constant(norm_boxes), p.pos2d),
  };
  return diffnum::mlp(diffnum::concat_cols(parts), p.com2d);
}

Var embed_3d(
  Var f3d, std::span<const int> class_ids, const Tensor & centers, double extent,
  int num_classes, const PropMatchVars & p)
{
  Graph & g = *f3d.graph;
  if (f3d.rows() != class_ids.size() || f3d.rows() != centers.rows()) {
    throw ShapeError("embed_3d: misaligned inputs");
  }
  Tensor norm = centers;
  for (double & x : norm.data) {
    x /= extent;
  }
  const Var parts[] = {
    f3d,
    diffnum::mlp(g.constant(one_hot(class_ids, num_classes)), p.cls3d),
    diffnum::mlp(g.constant(norm), p.pos3d),
  };
  return diffnum::mlp(diffnum::concat_cols(parts), p.com3d);
}

Var matching_matrix(Var e3, Var e2)
{
  if (e3.cols() != e2.cols()) {
    throw ShapeError("matching_matrix: channel dims differ");
  }
  Graph & g = *e3.graph;
  const Var rows[] = {e2, g.constant(Tensor::matrix(1, e2.cols()))};
  const Var appended = diffnum::concat_rows(rows);
  return diffnum::scale(
    diffnum::matmul_nt(e3, appended), 1.0 / std::sqrt(static_cast<double>(e3.cols())));
}

Var matching_matrix_empty(Var e3)
{
  return e3.graph->constant(Tensor::matrix(e3.rows(), 1));
}

Tensor matching_matrix(const Tensor & e3, const Tensor & e2)
{
  Graph g(false);
  if (e2.rows() == 0) {
    return Tensor::matrix(e3.rows(), 1);
  }
  return matching_matrix(g.constant(e3), g.constant(e2)).value();
}

std::vector<RowMatch> extract_pairs(const Tensor & m_p, double threshold)
{
  const std::size_t n = m_p.cols();
  const std::size_t null_col = n - 1;
  std::vector<RowMatch> out;
  out.reserve(m_p.rows());
  for (std::size_t r = 0; r < m_p.rows(); ++r) {
    const auto row = m_p.row_span(r);
    RowMatch m;
    const double mx = *std::max_element(row.begin(), row.end());
    m.probabilities.resize(n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      m.probabilities[c] = std::exp(row[c] - mx);
      z += m.probabilities[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 0; c < n; ++c) {
      m.probabilities[c] /= z;
      if (m.probabilities[c] > m.probabilities[best]) {
        best = c;
      }
    }
    if (best != null_col && m.probabilities[best] >= threshold) {
      m.column = static_cast<int>(best);
      m.score = m.probabilities[best];
    }
    out.push_back(std::move(m));
  }
  return out;
}

Match merge_across_views(std::span<const Match> candidates)
{
  Match best;
  for (const auto & m : candidates) {
    if (m.matched() && (!best.matched() || m.score > best.score)) {
      best = m;
    }
  }
  return best;
}

}  // namespace boxmatch::propmatch
