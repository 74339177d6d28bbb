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

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "boxmatch/fusionhead.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace
{

using namespace boxmatch;
using namespace boxmatch::fusionhead;
using boxmatch::testing::grad_check;
using boxmatch::testing::random_tensor;

constexpr int kClasses = 3;

ParamStore make_params(std::size_t C, std::uint64_t seed = 21)
{
  std::mt19937_64 rng(seed);
  ParamStore store;
  init_fusionhead(store, C, kClasses, rng);
  return store;
}

// Decoder layer with its cross-attention output replaced by `cross`, row 0
// broadcast to every query.
Tensor decoder_with_cross(Graph & g, Var q, const Tensor & cross, const diffnum::DecoderVars & p, int heads)
{
  Var x = diffnum::layer_norm(
    diffnum::add(q, diffnum::multi_head_attention(q, q, q, nullptr, p.self_attn, heads)),
    p.norm1.gamma, p.norm1.beta);
  Tensor broadcast = Tensor::matrix(q.rows(), cross.cols());
  for (std::size_t r = 0; r < q.rows(); ++r) {
    std::copy(cross.row_span(0).begin(), cross.row_span(0).end(), broadcast.row_span(r).begin());
  }
  x = diffnum::layer_norm(diffnum::add(x, g.constant(broadcast)), p.norm2.gamma, p.norm2.beta);
  const LinearVars ffn[] = {p.ffn1, p.ffn2};
  return diffnum::layer_norm(diffnum::add(x, diffnum::mlp(x, ffn)), p.norm3.gamma, p.norm3.beta)
    .value();
}

TEST(RoiMask, FullBoxIsAllZero)
{
  const std::optional<GridRoi> rois[] = {GridRoi{1, {0, 0, 5, 3}}};
  const Tensor m = build_roi_mask(2, 3, 5, rois);
  ASSERT_EQ(m.cols(), 30u);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_EQ(m(0, k), k >= 15 ? 0.0 : kMaskValue);
  }
}

TEST(RoiMask, UnmatchedRowIsFullyMasked)
{
  const std::optional<GridRoi> rois[] = {std::nullopt, GridRoi{0, {0, 0, 1, 1}}};
  const Tensor m = build_roi_mask(1, 4, 4, rois);
  for (std::size_t k = 0; k < 16; ++k) {
    EXPECT_EQ(m(0, k), kMaskValue);
  }
}

TEST(RoiMask, TwoByTwoInFourByFour)
{
  const std::optional<GridRoi> rois[] = {GridRoi{0, {1, 1, 3, 3}}};
  const Tensor m = build_roi_mask(1, 4, 4, rois);
  std::vector<std::size_t> zeros;
  for (std::size_t k = 0; k < 16; ++k) {
    if (m(0, k) == 0.0) {
      zeros.push_back(k);
    }
  }
  std::vector<std::size_t> want;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (r >= 1 && r < 3 && c >= 1 && c < 3) {
        want.push_back(static_cast<std::size_t>(r * 4 + c));
      }
    }
  }
  EXPECT_EQ(zeros, want);
}

TEST(RoiMask, KeySubsetKeepsMatchedRows)
{
  const std::optional<GridRoi> rois[] = {GridRoi{0, {0.5, 0.2, 2.2, 1.5}}, std::nullopt,
                                         GridRoi{2, {3.1, 2.0, 4.9, 3.0}}};
  const Tensor full = build_roi_mask(3, 4, 5, rois);
  const PixelKeys keys = collect_pixel_keys(4, 5, rois);
  const Tensor sub = build_roi_mask(keys, rois);
  std::size_t open = 0;
  for (std::size_t k = 0; k < full.cols(); ++k) {
    open += full(0, k) == 0.0 || full(2, k) == 0.0;
  }
  ASSERT_EQ(keys.view.size(), open);
  for (std::size_t j = 0; j < keys.view.size(); ++j) {
    const std::size_t k = static_cast<std::size_t>((keys.view[j] * 4 + keys.row[j]) * 5 + keys.col[j]);
    for (std::size_t r = 0; r < 3; ++r) {
      EXPECT_EQ(sub(r, j), full(r, k));
    }
  }
}

TEST(QueryPixelFusion, SingleOpenPixelIsItsValueProjection)
{
  const std::size_t C = 8;
  const ParamStore store = make_params(C);
  std::mt19937_64 rng(1);
  const Tensor q = random_tensor({3, C}, rng), pixels = random_tensor({6, C}, rng);
  Tensor mask = Tensor::matrix(3, 6, kMaskValue);
  for (std::size_t r = 0; r < 3; ++r) {
    mask(r, 4) = 0.0;
  }
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Var qv = g.constant(q);
  const Tensor got = query_pixel_fusion(qv, g.constant(pixels), mask, fv.pixel, 2).value();
  Tensor pixel = Tensor::matrix(1, C);
  std::copy(pixels.row_span(4).begin(), pixels.row_span(4).end(), pixel.row_span(0).begin());
  const Tensor proj =
    diffnum::linear(diffnum::linear(g.constant(pixel), fv.pixel.cross_attn.value), fv.pixel.cross_attn.out).value();
  const Tensor want = decoder_with_cross(g, qv, proj, fv.pixel, 2);
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
  }
}

TEST(QueryPixelFusion, MaskShiftInvariance)
{
  const std::size_t C = 8;
  const ParamStore store = make_params(C);
  std::mt19937_64 rng(2);
  const Tensor q = random_tensor({3, C}, rng), pixels = random_tensor({5, C}, rng);
  const Tensor mask = random_tensor({3, 5}, rng, -2, 2);
  Tensor shifted = mask;
  for (double & v : shifted.data) {
    v -= 17.0;
  }
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Tensor a = query_pixel_fusion(g.constant(q), g.constant(pixels), mask, fv.pixel, 2).value();
  const Tensor b = query_pixel_fusion(g.constant(q), g.constant(pixels), shifted, fv.pixel, 2).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
  }
}

TEST(QueryRoiFusion, UnmatchedRowHasZeroImageHalf)
{
  std::mt19937_64 rng(3);
  Graph g(false);
  Tensor roi = random_tensor({3, 4}, rng);
  std::fill(roi.row_span(1).begin(), roi.row_span(1).end(), 0.0);
  const Tensor in = query_roi_input(
    g.constant(random_tensor({3, 4}, rng)), g.constant(roi), g.constant(Tensor::matrix({{0.7}, {0.0}, {0.3}}))).value();
  for (std::size_t c = 4; c < 8; ++c) {
    EXPECT_EQ(in(1, c), 0.0);
  }
}

TEST(QueryRoiFusion, ScoreScalesOnlyImageHalf)
{
  std::mt19937_64 rng(4);
  Graph g(false);
  const Var f = g.constant(random_tensor({2, 4}, rng));
  const Var roi = g.constant(random_tensor({2, 4}, rng));
  const Tensor one = query_roi_input(f, roi, g.constant(Tensor::matrix(2, 1, 1.0))).value();
  const Tensor half = query_roi_input(f, roi, g.constant(Tensor::matrix(2, 1, 0.5))).value();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(one(r, c), f.value()(r, c));
      EXPECT_EQ(half(r, c), one(r, c));
      EXPECT_EQ(one(r, c + 4), roi.value()(r, c));
      EXPECT_EQ(half(r, c + 4), 0.5 * one(r, c + 4));
    }
  }
}

TEST(QueryRoiFusion, RowLocality)
{
  const std::size_t C = 4;
  const ParamStore store = make_params(C);
  std::mt19937_64 rng(5);
  const Tensor f = random_tensor({3, C}, rng);
  Tensor roi = random_tensor({3, C}, rng);
  const Tensor s = random_tensor({3, 1}, rng, 0, 1);
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Tensor a = query_roi_fusion(g.constant(f), g.constant(roi), g.constant(s), fv.roi_mix).value();
  for (double & v : roi.row_span(1)) {
    v += 3.0;
  }
  const Tensor b = query_roi_fusion(g.constant(f), g.constant(roi), g.constant(s), fv.roi_mix).value();
  for (std::size_t c = 0; c < C; ++c) {
    EXPECT_EQ(a(0, c), b(0, c));
    EXPECT_EQ(a(2, c), b(2, c));
  }
}

worldsim::BevMap random_bev(int cells, double extent, int C, std::mt19937_64 & rng)
{
  worldsim::BevMap bev;
  bev.cells = cells;
  bev.channels = C;
  bev.extent = extent;
  bev.data = random_tensor(
    {static_cast<std::size_t>(cells), static_cast<std::size_t>(cells), static_cast<std::size_t>(C)}, rng);
  return bev;
}

TEST(Roi3dPool, WholeMapIsGlobalMean)
{
  std::mt19937_64 rng(6);
  const auto bev = random_bev(10, 5.0, 3, rng);
  const auto roi = roi3d_pool(bev, Box3D{{0, 0, 1}, {10.5, 10.5, 2}, 0.0});
  for (int k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t i = static_cast<std::size_t>(k); i < bev.data.size(); i += 3) {
      mean += bev.data.data[i];
    }
    EXPECT_NEAR(roi.values[static_cast<std::size_t>(k)], mean / 100.0, 1e-12);
  }
}

TEST(Roi3dPool, OutsideExtentIsZero)
{
  std::mt19937_64 rng(7);
  const auto bev = random_bev(10, 5.0, 3, rng);
  const auto roi = roi3d_pool(bev, Box3D{{30, -2, 1}, {4, 2, 2}, 0.3});
  EXPECT_TRUE(roi.degenerate);
  EXPECT_EQ(roi.values, (std::vector<double>{0, 0, 0}));
}

TEST(Roi3dPool, RotatedFootprintMatchesPolygonOracle)
{
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(-22, 22), len(0.3, 9), yaw(-kPi, kPi);
  const auto bev = random_bev(40, 20.0, 4, rng);
  for (int trial = 0; trial < 300; ++trial) {
    const Box3D box{{pos(rng), pos(rng), 1}, {len(rng), len(rng), 1.5}, yaw(rng)};
    const auto got = roi3d_pool(bev, box);
    const auto want = boxmatch::testing::roi3d_oracle(bev, box);
    for (std::size_t k = 0; k < want.size(); ++k) {
      EXPECT_NEAR(got.values[k], want[k], 1e-9) << "trial " << trial;
    }
  }
}

TEST(RoiRoiFusion, SingleProposalSeesItsOwnRoi)
{
  const std::size_t C = 8;
  const ParamStore store = make_params(C);
  std::mt19937_64 rng(9);
  const Tensor r3 = random_tensor({1, C}, rng), r2 = random_tensor({1, C}, rng);
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Tensor got = roi_roi_fusion(g.constant(r3), g.constant(r2), fv.roi, 2).value();
  const Tensor proj =
    diffnum::linear(diffnum::linear(g.constant(r2), fv.roi.cross_attn.value), fv.roi.cross_attn.out).value();
  const Tensor want = decoder_with_cross(g, g.constant(r3), proj, fv.roi, 2);
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
  }
}

TEST(RoiRoiFusion, ZeroRoisGiveConstantCrossTerm)
{
  const std::size_t C = 8;
  const ParamStore store = make_params(C);
  std::mt19937_64 rng(10);
  const Tensor r3 = random_tensor({4, C}, rng);
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Tensor got = roi_roi_fusion(g.constant(r3), g.constant(Tensor::matrix(4, C)), fv.roi, 2).value();
  const Tensor proj = diffnum::linear(
    diffnum::linear(g.constant(Tensor::matrix(1, C)), fv.roi.cross_attn.value), fv.roi.cross_attn.out).value();
  const Tensor want = decoder_with_cross(g, g.constant(r3), proj, fv.roi, 2);
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
  }
}

TEST(FusePredict, ZeroHeadGivesZeros)
{
  ParamStore store = make_params(4);
  for (const char * name : {"fuse.head.1.weight", "fuse.head.1.bias"}) {
    auto & t = store.get_mut(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  std::mt19937_64 rng(11);
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Var o = g.constant(random_tensor({2, 4}, rng));
  const auto pred = fuse_predict(o, o, o, fv.head, kClasses);
  EXPECT_EQ(pred.class_logits.value().data, std::vector<double>(2 * kClasses, 0.0));
  EXPECT_EQ(pred.deltas.value().data, std::vector<double>(2 * kBoxDeltas, 0.0));
}

TEST(FusePredict, RowPermutationEquivariance)
{
  const ParamStore store = make_params(4);
  std::mt19937_64 rng(12);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({3, 4}, rng);
  const std::vector<std::size_t> perm = {2, 0, 1};
  using boxmatch::testing::row_permuted;
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const auto base = fuse_predict(g.constant(a), g.constant(b), g.constant(c), fv.head, kClasses);
  const auto moved = fuse_predict(
    g.constant(row_permuted(a, perm)), g.constant(row_permuted(b, perm)),
    g.constant(row_permuted(c, perm)), fv.head, kClasses);
  EXPECT_EQ(moved.class_logits.value().data, row_permuted(base.class_logits.value(), perm).data);
  EXPECT_EQ(moved.deltas.value().data, row_permuted(base.deltas.value(), perm).data);
}

TEST(FusePredict, HeadWidthChecked)
{
  const ParamStore store = make_params(4);
  Graph g(false);
  const auto fv = load_fusionhead(g, store);
  const Var o = g.constant(Tensor::matrix(1, 4));
  EXPECT_THROW(fuse_predict(o, o, o, fv.head, kClasses + 1), ShapeError);
  EXPECT_THROW(fuse_predict(o, g.constant(Tensor::matrix(2, 4)), o, fv.head, kClasses), ShapeError);
}

TEST(Fusion, FiniteDifferenceQueryPixel)
{
  std::mt19937_64 rng(13);
  const Tensor mask = Tensor::matrix({{0, kMaskValue, 0}, {kMaskValue, kMaskValue, kMaskValue}});
  const auto res = grad_check(
    make_params(4), {random_tensor({2, 4}, rng), random_tensor({3, 4}, rng)},
    [&](Graph & g, const ParamStore & ps, std::span<const Var> in) {
      return query_pixel_fusion(in[0], in[1], mask, load_fusionhead(g, ps).pixel, 2);
    });
  EXPECT_GT(res.checked, 100u);
  EXPECT_LT(res.max_rel_err, 1e-5);
}

TEST(Fusion, FiniteDifferenceRoiRoi)
{
  std::mt19937_64 rng(14);
  const auto res = grad_check(
    make_params(4), {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
    [&](Graph & g, const ParamStore & ps, std::span<const Var> in) {
      return roi_roi_fusion(in[0], in[1], load_fusionhead(g, ps).roi, 2);
    });
  EXPECT_GT(res.checked, 100u);
  EXPECT_LT(res.max_rel_err, 1e-5);
}

TEST(Fusion, FiniteDifferenceFullHead)
{
  std::mt19937_64 rng(15);
  const Tensor mask = Tensor::matrix({{0, 0, kMaskValue, 0}, {kMaskValue, 0, 0, kMaskValue},
                                      {kMaskValue, kMaskValue, kMaskValue, kMaskValue}});
  // Inputs: F3d, pixels, 2D ROI rows (last unmatched), S, 3D ROI means.
  Tensor roi2d = random_tensor({3, 4}, rng);
  std::fill(roi2d.row_span(2).begin(), roi2d.row_span(2).end(), 0.0);
  const auto res = grad_check(
    make_params(4),
    {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng), roi2d,
     Tensor::matrix({{0.8}, {0.4}, {0.0}}), random_tensor({3, 4}, rng)},
    [&](Graph & g, const ParamStore & ps, std::span<const Var> in) {
      const auto fv = load_fusionhead(g, ps);
      const Var o1 = query_pixel_fusion(in[0], in[1], mask, fv.pixel, 2);
      const Var o2 = query_roi_fusion(in[0], in[2], in[3], fv.roi_mix);
      const Var o3 = roi_roi_fusion(diffnum::mlp(in[4], fv.roi3d), in[2], fv.roi, 2);
      const auto pred = fuse_predict(o1, o2, o3, fv.head, kClasses);
      const Var parts[] = {pred.class_logits, pred.deltas};
      return diffnum::concat_cols(parts);
    });
  EXPECT_GT(res.checked, 500u);
  EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(BoxDeltas, RoundTrip)
{
  const Box3D from{{1, 2, 0.8}, {4.5, 1.9, 1.6}, 3.0};
  const Box3D to{{1.4, 1.5, 0.9}, {4.2, 2.0, 1.5}, -3.1};
  const auto d = box_deltas(from, to);
  const Box3D back = apply_deltas(from, d);
  EXPECT_NEAR(back.center.x, to.center.x, 1e-12);
  EXPECT_NEAR(back.center.y, to.center.y, 1e-12);
  EXPECT_NEAR(back.center.z, to.center.z, 1e-12);
  EXPECT_NEAR(back.size.x, to.size.x, 1e-12);
  EXPECT_NEAR(back.size.y, to.size.y, 1e-12);
  EXPECT_NEAR(back.size.z, to.size.z, 1e-12);
  EXPECT_NEAR(std::abs(wrap_angle(back.yaw - to.yaw)), 0.0, 1e-12);
  EXPECT_LT(std::abs(d[6]), 0.2);
}

}  // namespace
