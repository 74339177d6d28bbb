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

#include "boxmatch/fusionhead.hpp"

#include <algorithm>
#include <cmath>

namespace boxmatch::fusionhead
{

void init_fusionhead(ParamStore & store, std::size_t channels, int num_classes, std::mt19937_64 & rng)
{
  const std::size_t C = channels;
  diffnum::init_decoder(store, "fuse.pixel", C, 2 * C, rng);
  const std::size_t mix[] = {2 * C, C, C}, roi3d[] = {C, C, C},
                    head[] = {3 * C, C, static_cast<std::size_t>(num_classes) + kBoxDeltas};
  diffnum::init_mlp(store, "fuse.roi_mix", mix, rng);
  diffnum::init_mlp(store, "fuse.roi3d", roi3d, rng);
  diffnum::init_decoder(store, "fuse.roi", C, 2 * C, rng);
  diffnum::init_mlp(store, "fuse.head", head, rng);
}

FusionVars load_fusionhead(Graph & g, const ParamStore & store)
{
  return {
    diffnum::load_decoder(g, store, "fuse.pixel"), diffnum::load_mlp(g, store, "fuse.roi_mix", 2),
    diffnum::load_mlp(g, store, "fuse.roi3d", 2),  diffnum::load_decoder(g, store, "fuse.roi"),
    diffnum::load_mlp(g, store, "fuse.head", 2),
  };
}

bool cell_in_roi(const Box2D & box, int r, int c)
{
  const double ox = std::min(box.x2, c + 1.0) - std::max(box.x1, static_cast<double>(c));
  const double oy = std::min(box.y2, r + 1.0) - std::max(box.y1, static_cast<double>(r));
  return ox > 0.0 && oy > 0.0;
}

Tensor build_roi_mask(int views, int H, int W, std::span<const std::optional<GridRoi>> rois)
{
  const std::size_t per_view = static_cast<std::size_t>(H) * W;
  Tensor mask = Tensor::matrix(rois.size(), per_view * views, kMaskValue);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    if (!rois[i]) {
      continue;
    }
    const std::size_t base = per_view * rois[i]->view;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        if (cell_in_roi(rois[i]->box, r, c)) {
          mask(i, base + static_cast<std::size_t>(r) * W + c) = 0.0;
        }
      }
    }
  }
  return mask;
}

PixelKeys collect_pixel_keys(int H, int W, std::span<const std::optional<GridRoi>> rois)
{
  std::vector<std::array<int, 3>> cells;
  for (const auto & roi : rois) {
    if (!roi) {
      continue;
    }
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        if (cell_in_roi(roi->box, r, c)) {
          cells.push_back({roi->view, r, c});
        }
      }
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  PixelKeys keys;
  for (const auto & [v, r, c] : cells) {
    keys.view.push_back(v);
    keys.row.push_back(r);
    keys.col.push_back(c);
  }
  return keys;
}

Tensor build_roi_mask(const PixelKeys & keys, std::span<const std::optional<GridRoi>> rois)
{
  Tensor mask = Tensor::matrix(rois.size(), keys.view.size(), kMaskValue);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    if (!rois[i]) {
      continue;
    }
    for (std::size_t k = 0; k < keys.view.size(); ++k) {
      if (keys.view[k] == rois[i]->view && cell_in_roi(rois[i]->box, keys.row[k], keys.col[k])) {
        mask(i, k) = 0.0;
      }
    }
  }
  return mask;
}

Tensor gather_pixels(const worldsim::ViewFeatureMap & features, const PixelKeys & keys)
{
  Tensor out = Tensor::matrix(keys.view.size(), static_cast<std::size_t>(features.C));
  for (std::size_t k = 0; k < keys.view.size(); ++k) {
    const double * px = features.pixel(keys.view[k], keys.row[k], keys.col[k]);
    std::copy(px, px + features.C, out.row_span(k).begin());
  }
  return out;
}

Var query_pixel_fusion(
  Var f3d, Var pixels, const Tensor & mask, const diffnum::DecoderVars & p, int heads)
{
  if (pixels.cols() != f3d.cols()) {
    throw ShapeError("query_pixel_fusion: channel mismatch");
  }
  return diffnum::decoder_block(f3d, pixels, pixels, &mask, p, heads);
}

Var query_roi_input(Var f3d, Var roi2d, Var scores)
{
  if (f3d.rows() != roi2d.rows() || scores.rows() != f3d.rows() || scores.cols() != 1) {
    throw ShapeError("query_roi_fusion: rows of F3d, ROI and S must align");
  }
  const Var parts[] = {f3d, diffnum::mul_rows(roi2d, scores)};
  return diffnum::concat_cols(parts);
}

Var query_roi_fusion(Var f3d, Var roi2d, Var scores, std::span<const LinearVars> mlp)
{
  return diffnum::mlp(query_roi_input(f3d, roi2d, scores), mlp);
}

propmatch::RoiFeature roi3d_pool(const worldsim::BevMap & bev, const Box3D & box)
{
  propmatch::RoiFeature out;
  out.values.assign(static_cast<std::size_t>(bev.channels), 0.0);
  const double reach = 0.5 * std::hypot(box.size.x, box.size.y);
  const double cs = bev.cell_size();
  const int c0 = std::max(0, static_cast<int>(std::floor((box.center.x - reach + bev.extent) / cs)));
  const int c1 = std::min(bev.cells - 1, static_cast<int>(std::floor((box.center.x + reach + bev.extent) / cs)));
  const int r0 = std::max(0, static_cast<int>(std::floor((box.center.y - reach + bev.extent) / cs)));
  const int r1 = std::min(bev.cells - 1, static_cast<int>(std::floor((box.center.y + reach + bev.extent) / cs)));
  int count = 0;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (!footprint_contains(box, bev.cell_x(c), bev.cell_y(r))) {
        continue;
      }
      const double * cell = bev.cell(r, c);
      for (int k = 0; k < bev.channels; ++k) {
        out.values[k] += cell[k];
      }
      ++count;
    }
  }
  if (count == 0) {
    out.degenerate = true;
    return out;
  }
  for (double & v : out.values) {
    v /= count;
  }
  return out;
}

Var roi_roi_fusion(Var roi3d, Var roi2d, const diffnum::DecoderVars & p, int heads)
{
  if (roi3d.rows() != roi2d.rows()) {
    throw ShapeError("roi_roi_fusion: 3D and 2D ROI rows must align");
  }
  return diffnum::decoder_block(roi3d, roi2d, roi2d, nullptr, p, heads);
}

Prediction fuse_predict(Var o1, Var o2, Var o3, std::span<const LinearVars> head, int num_classes)
{
  if (o1.rows() != o2.rows() || o2.rows() != o3.rows()) {
    throw ShapeError("fuse_predict: O1, O2, O3 rows must align");
  }
  const Var parts[] = {o1, o2, o3};
  const Var out = diffnum::mlp(diffnum::concat_cols(parts), head);
  const auto k = static_cast<std::size_t>(num_classes);
  if (out.cols() != k + kBoxDeltas) {
    throw ShapeError("fuse_predict: head width does not match N_cls + 7");
  }
  return {diffnum::slice_cols(out, 0, k), diffnum::slice_cols(out, k, k + kBoxDeltas)};
}

std::array<double, kBoxDeltas> box_deltas(const Box3D & from, const Box3D & to)
{
  return {to.center.x - from.center.x,
          to.center.y - from.center.y,
          to.center.z - from.center.z,
          std::log(to.size.x / from.size.x),
          std::log(to.size.y / from.size.y),
          std::log(to.size.z / from.size.z),
          wrap_angle(to.yaw - from.yaw)};
}

Box3D apply_deltas(const Box3D & box, std::span<const double> d)
{
  auto grow = [](double v) { return std::exp(std::clamp(v, -3.0, 3.0)); };
  return {{box.center.x + d[0], box.center.y + d[1], box.center.z + d[2]},
          {box.size.x * grow(d[3]), box.size.y * grow(d[4]), box.size.z * grow(d[5])},
          wrap_angle(box.yaw + d[6])};
}

}  // namespace boxmatch::fusionhead
