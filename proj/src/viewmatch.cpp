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

#include "boxmatch/viewmatch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace boxmatch::viewmatch
{

void init_viewmatch(ParamStore & store, std::size_t channels, int num_views, std::mt19937_64 & rng)
{
  const std::size_t C = channels;
  store.add_uniform("view.embed", {static_cast<std::size_t>(num_views), C}, 1.0, rng);
  diffnum::init_attention(store, "view.attn", C, rng);
  const std::size_t pos_dims[] = {3, C, C};
  diffnum::init_mlp(store, "view.pos", pos_dims, rng);
  const std::size_t cls_dims[] = {3 * C, C, static_cast<std::size_t>(num_views) + 1};
  diffnum::init_mlp(store, "view.cls", cls_dims, rng);
}

ViewMatchVars load_viewmatch(Graph & g, const ParamStore & store)
{
  return {
    g.param(store, "view.embed"),
    diffnum::load_attention(g, store, "view.attn"),
    diffnum::load_mlp(g, store, "view.pos", 2),
    diffnum::load_mlp(g, store, "view.cls", 2),
  };
}

Tensor collapse_height(const worldsim::ViewFeatureMap & f)
{
  Tensor out = Tensor::matrix(static_cast<std::size_t>(f.views) * f.W, f.C);
  for (int v = 0; v < f.views; ++v) {
    for (int w = 0; w < f.W; ++w) {
      double * dst = &out(static_cast<std::size_t>(v) * f.W + w, 0);
      for (int h = 0; h < f.H; ++h) {
        const double * src = f.pixel(v, h, w);
        for (int c = 0; c < f.C; ++c) {
          dst[c] += src[c];
        }
      }
      for (int c = 0; c < f.C; ++c) {
        dst[c] /= f.H;
      }
    }
  }
  return out;
}

Tensor column_encoding(int width, int channels)
{
  Tensor out = Tensor::matrix(width, channels);
  for (int w = 0; w < width; ++w) {
    for (int c = 0; c < channels; ++c) {
      const double freq = std::pow(100.0, -2.0 * (c / 2) / channels);
      out(w, c) = (c % 2 == 0) ? std::sin(w * freq) : std::cos(w * freq);
    }
  }
  return out;
}

Var view_cross_attention(
  Var f3d, const Tensor & collapsed, int num_views, const ViewMatchVars & p, int heads,
  const std::vector<bool> & present)
{
  Graph & g = *f3d.graph;
  const std::size_t n_keys = collapsed.rows();
  if (num_views <= 0 || n_keys % static_cast<std::size_t>(num_views) != 0) {
    throw ShapeError("view_cross_attention: collapsed rows not divisible by view count");
  }
  if (collapsed.cols() != f3d.cols()) {
    throw ShapeError("view_cross_attention: channel mismatch " + collapsed.shape_str());
  }
  const int W = static_cast<int>(n_keys / static_cast<std::size_t>(num_views));
  const std::size_t C = collapsed.cols();
  const Tensor cols = column_encoding(W, static_cast<int>(C));
  Tensor key_base = collapsed;
  std::vector<long> view_of(n_keys);
  for (std::size_t r = 0; r < n_keys; ++r) {
    view_of[r] = static_cast<long>(r / static_cast<std::size_t>(W));
    const auto enc = cols.row_span(r % static_cast<std::size_t>(W));
    auto dst = key_base.row_span(r);
    for (std::size_t c = 0; c < C; ++c) {
      dst[c] += enc[c];
    }
  }
  Var keys = diffnum::add_constant(diffnum::gather_rows(p.view_embed, view_of), key_base);
  Var values = g.constant(collapsed);

  Tensor mask;
  const bool masked = !present.empty() &&
                      std::any_of(present.begin(), present.end(), [](bool b) { return !b; });
  if (masked) {
    mask = Tensor::matrix(f3d.rows(), n_keys);
    for (std::size_t r = 0; r < f3d.rows(); ++r) {
      for (std::size_t k = 0; k < n_keys; ++k) {
        if (!present[static_cast<std::size_t>(view_of[k])]) {
          mask(r, k) = -1e6;
        }
      }
    }
  }
  return diffnum::multi_head_attention(f3d, keys, values, masked ? &mask : nullptr, p.attn, heads);
}

Tensor normalize_centers(const Tensor & centers, double extent)
{
  Tensor out = centers;
  for (double & x : out.data) {
    x /= extent;
  }
  return out;
}

Var pos_embed_3d(Graph & g, const Tensor & centers, double extent, std::span<const LinearVars> mlp)
{
  if (centers.cols() != 3) {
    throw ShapeError("pos_embed_3d: centers must be N x 3");
  }
  return diffnum::mlp(g.constant(normalize_centers(centers, extent)), mlp);
}

Var classify_views(Var f_ca, Var f3d, Var f3d_pos, std::span<const LinearVars> mlp)
{
  if (f_ca.rows() != f3d.rows() || f3d.rows() != f3d_pos.rows()) {
    throw ShapeError("classify_views: row counts differ");
  }
  const Var parts[] = {f_ca, f3d, f3d_pos};
  return diffnum::mlp(diffnum::concat_cols(parts), mlp);
}

std::vector<int> ranked_classes(std::span<const double> logits, const std::vector<bool> & available)
{
  const int none = static_cast<int>(logits.size()) - 1;
  std::vector<int> order;
  for (int c = 0; c <= none; ++c) {
    if (c == none || available.empty() || available[static_cast<std::size_t>(c)]) {
      order.push_back(c);
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  return order;
}

std::vector<ViewAssignment> select_topk(
  const Tensor & logits, int k, const std::vector<bool> & available)
{
  const int none = static_cast<int>(logits.cols()) - 1;
  if (k < 1 || k > none + 1) {
    throw ConfigError("select_topk: K must lie in [1, N_v + 1]");
  }
  std::vector<ViewAssignment> out;
  out.reserve(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto order = ranked_classes(logits.row_span(r), available);
    ViewAssignment a;
    a.no_view = order.front() == none;
    for (int i = 0; i < k && i < static_cast<int>(order.size()); ++i) {
      if (order[i] != none) {
        a.views.push_back(order[i]);
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace boxmatch::viewmatch
