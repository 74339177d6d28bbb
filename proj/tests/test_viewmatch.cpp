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

#include "boxmatch/trainloop.hpp"
#include "boxmatch/viewmatch.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace
{

using namespace boxmatch;
using namespace boxmatch::viewmatch;
using boxmatch::testing::grad_check;
using boxmatch::testing::random_feature_map;
using boxmatch::testing::random_tensor;

ParamStore make_params(std::size_t C, int NV, std::uint64_t seed = 5)
{
  std::mt19937_64 rng(seed);
  ParamStore store;
  init_viewmatch(store, C, NV, rng);
  return store;
}

void zero_param(ParamStore & store, const std::string & name)
{
  auto & t = store.get_mut(name);
  std::fill(t.data.begin(), t.data.end(), 0.0);
}

TEST(CollapseHeight, SingleRowIsIdentity)
{
  std::mt19937_64 rng(1);
  const auto fm = random_feature_map(2, 1, 5, 3, rng);
  const Tensor c = collapse_height(fm);
  ASSERT_EQ(c.rows(), 10u);
  for (int v = 0; v < 2; ++v) {
    for (int w = 0; w < 5; ++w) {
      for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(c(static_cast<std::size_t>(v * 5 + w), k), fm.pixel(v, 0, w)[k]);
      }
    }
  }
}

TEST(CollapseHeight, ConstantMap)
{
  std::mt19937_64 rng(1);
  auto fm = random_feature_map(3, 4, 6, 2, rng);
  std::fill(fm.data.data.begin(), fm.data.data.end(), 0.75);
  for (double v : collapse_height(fm).data) {
    EXPECT_NEAR(v, 0.75, 1e-15);
  }
}

TEST(CollapseHeight, MatchesColumnMeanOracle)
{
  std::mt19937_64 rng(2);
  const auto fm = random_feature_map(3, 7, 5, 4, rng);
  const Tensor c = collapse_height(fm);
  for (int v = 0; v < fm.views; ++v) {
    for (int w = 0; w < fm.W; ++w) {
      for (int k = 0; k < fm.C; ++k) {
        double s = 0.0;
        for (int h = 0; h < fm.H; ++h) {
          s += fm.data.data[fm.offset(v, h, w) + k];
        }
        EXPECT_NEAR(c(static_cast<std::size_t>(v * fm.W + w), k), s / fm.H, 1e-12);
      }
    }
  }
}

TEST(ViewCrossAttention, SingleKeyReturnsProjectedValue)
{
  const std::size_t C = 4;
  const ParamStore store = make_params(C, 1);
  std::mt19937_64 rng(3);
  const Tensor collapsed = random_tensor({1, C}, rng);
  const Tensor f3d = random_tensor({3, C}, rng);

  Graph g(false);
  const auto p = load_viewmatch(g, store);
  const Tensor out = view_cross_attention(g.constant(f3d), collapsed, 1, p, 2).value();
  const Tensor v = diffnum::linear(diffnum::linear(g.constant(collapsed), p.attn.value), p.attn.out).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      EXPECT_NEAR(out(r, c), v(0, c), 1e-12);
    }
  }
}

TEST(ViewCrossAttention, DuplicateKeysMergeMass)
{
  std::mt19937_64 rng(4);
  const Tensor q = random_tensor({2, 4}, rng);
  const Tensor k = random_tensor({2, 4}, rng);
  const Tensor v = random_tensor({2, 4}, rng);
  Tensor k_dup = Tensor::matrix(3, 4), v_dup = Tensor::matrix(3, 4);
  const std::size_t src[] = {0, 1, 1};
  for (std::size_t r = 0; r < 3; ++r) {
    std::copy(k.row_span(src[r]).begin(), k.row_span(src[r]).end(), k_dup.row_span(r).begin());
    std::copy(v.row_span(src[r]).begin(), v.row_span(src[r]).end(), v_dup.row_span(r).begin());
  }
  Graph g(false);

  // Doubling a key is the same as a log 2 bias on it.
  Tensor bias = Tensor::matrix(2, 2);
  bias(0, 1) = bias(1, 1) = std::log(2.0);
  const Tensor biased =
    diffnum::attention(g.constant(q), g.constant(k), g.constant(v), &bias).value();
  const Tensor twice =
    diffnum::attention(g.constant(q), g.constant(k_dup), g.constant(v_dup), nullptr).value();
  for (std::size_t i = 0; i < twice.size(); ++i) {
    EXPECT_NEAR(twice.data[i], biased.data[i], 1e-12);
  }
  // Keys that agree exactly with an existing one leave an all-equal row unchanged.
  Tensor flat_k = Tensor::matrix(3, 4, 0.3);
  Tensor single_k = Tensor::matrix(1, 4, 0.3);
  Tensor flat_v = Tensor::matrix(3, 4, -1.25);
  Tensor single_v = Tensor::matrix(1, 4, -1.25);
  const Tensor a = diffnum::attention(g.constant(q), g.constant(flat_k), g.constant(flat_v), nullptr).value();
  const Tensor b =
    diffnum::attention(g.constant(q), g.constant(single_k), g.constant(single_v), nullptr).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
  }
}

TEST(ViewCrossAttention, AbsentViewsAreIgnored)
{
  const std::size_t C = 8;
  const int NV = 3, W = 4;
  const ParamStore store = make_params(C, NV);
  std::mt19937_64 rng(6);
  Tensor collapsed = random_tensor({static_cast<std::size_t>(NV * W), C}, rng);
  const Tensor f3d = random_tensor({5, C}, rng);
  const std::vector<bool> present = {true, false, true};

  Graph g(false);
  const auto p = load_viewmatch(g, store);
  const Tensor a = view_cross_attention(g.constant(f3d), collapsed, NV, p, 2, present).value();
  for (std::size_t r = W; r < 2 * W; ++r) {
    for (double & x : collapsed.row_span(r)) {
      x = 100.0 * x + 7.0;
    }
  }
  const Tensor b = view_cross_attention(g.constant(f3d), collapsed, NV, p, 2, present).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
  }
}

TEST(ViewCrossAttention, RejectsIndivisibleColumns)
{
  const ParamStore store = make_params(4, 3);
  Graph g(false);
  const auto p = load_viewmatch(g, store);
  EXPECT_THROW(
    view_cross_attention(g.constant(Tensor::matrix(1, 4)), Tensor::matrix(7, 4), 3, p, 1),
    ShapeError);
}

TEST(ViewLevel, FiniteDifferenceThroughClassifier)
{
  const std::size_t C = 4;
  const int NV = 2, W = 3;
  std::mt19937_64 rng(7);
  const Tensor collapsed = random_tensor({static_cast<std::size_t>(NV * W), C}, rng);
  const Tensor centers = random_tensor({3, 3}, rng, -40.0, 40.0);
  const auto res = grad_check(
    make_params(C, NV), {random_tensor({3, C}, rng)},
    [&](Graph & g, const ParamStore & ps, std::span<const Var> in) {
      const auto p = load_viewmatch(g, ps);
      const Var f_ca = view_cross_attention(in[0], collapsed, NV, p, 2);
      return classify_views(f_ca, in[0], pos_embed_3d(g, centers, 50.0, p.pos_mlp), p.cls_mlp);
    });
  EXPECT_GT(res.checked, 100u);
  EXPECT_LT(res.max_rel_err, 1e-5);
}

TEST(PosEmbed, NormalizationEndpoints)
{
  const Tensor n = normalize_centers(Tensor::matrix({{50, -50, 0}, {-50, 50, 25}}), 50.0);
  EXPECT_EQ(n(0, 0), 1.0);
  EXPECT_EQ(n(0, 1), -1.0);
  EXPECT_EQ(n(1, 0), -1.0);
  EXPECT_EQ(n(1, 1), 1.0);
  EXPECT_EQ(n(1, 2), 0.5);
}

TEST(PosEmbed, ZeroWeightsGiveZero)
{
  ParamStore store = make_params(6, 2);
  for (const auto & name : store.names()) {
    if (name.rfind("view.pos.", 0) == 0) {
      zero_param(store, name);
    }
  }
  Graph g(false);
  const auto p = load_viewmatch(g, store);
  for (double v : pos_embed_3d(g, Tensor::matrix({{3, 4, 1}}), 50.0, p.pos_mlp).value().data) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(PosEmbed, EqualCentersEqualRows)
{
  const ParamStore store = make_params(6, 2);
  Graph g(false);
  const auto p = load_viewmatch(g, store);
  const Tensor e = pos_embed_3d(g, Tensor::matrix({{3, 4, 1}, {-9, 2, 0}, {3, 4, 1}}), 50.0, p.pos_mlp).value();
  for (std::size_t c = 0; c < e.cols(); ++c) {
    EXPECT_EQ(e(0, c), e(2, c));
  }
}

TEST(ClassifyViews, ZeroFinalLayerGivesUniform)
{
  ParamStore store = make_params(4, 3);
  zero_param(store, "view.cls.1.weight");
  zero_param(store, "view.cls.1.bias");
  std::mt19937_64 rng(8);
  Graph g(false);
  const auto p = load_viewmatch(g, store);
  const Var f = g.constant(random_tensor({2, 4}, rng));
  const Tensor logits = classify_views(f, f, f, p.cls_mlp).value();
  ASSERT_EQ(logits.cols(), 4u);
  for (double v : logits.data) {
    EXPECT_EQ(v, 0.0);
  }
  for (double v : diffnum::softmax(g.constant(logits)).value().data) {
    EXPECT_DOUBLE_EQ(v, 0.25);
  }
}

TEST(ClassifyViews, RowPermutationEquivariance)
{
  const ParamStore store = make_params(4, 3);
  std::mt19937_64 rng(9);
  const Tensor a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng),
               c = random_tensor({5, 4}, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Graph g(false);
  const auto p = load_viewmatch(g, store);
  const Tensor base = classify_views(g.constant(a), g.constant(b), g.constant(c), p.cls_mlp).value();
  using boxmatch::testing::row_permuted;
  const Tensor permuted = classify_views(
    g.constant(row_permuted(a, perm)), g.constant(row_permuted(b, perm)),
    g.constant(row_permuted(c, perm)), p.cls_mlp).value();
  EXPECT_EQ(permuted.data, row_permuted(base, perm).data);
}

TEST(SelectTopK, ArgsortExample)
{
  const auto a = select_topk(Tensor::matrix({{0.1, 0.7, 0.15, 0.05}}), 2);
  EXPECT_EQ(a[0].views, (std::vector<int>{1, 2}));
  EXPECT_FALSE(a[0].no_view);
}

TEST(SelectTopK, NoViewDominantKeepsFallback)
{
  const auto a = select_topk(Tensor::matrix({{0.1, 0.3, 0.2, 0.9}}), 2);
  EXPECT_TRUE(a[0].no_view);
  EXPECT_EQ(a[0].views, (std::vector<int>{1}));
}

TEST(SelectTopK, NoViewSecondDropsFromList)
{
  const auto a = select_topk(Tensor::matrix({{0.1, 0.8, 0.2, 0.5}}), 2);
  EXPECT_FALSE(a[0].no_view);
  EXPECT_EQ(a[0].views, (std::vector<int>{1}));
}

TEST(SelectTopK, TiesGoToLowerIndex)
{
  const auto a = select_topk(Tensor::matrix({{0.4, 0.4, 0.4, 0.0}}), 2);
  EXPECT_EQ(a[0].views, (std::vector<int>{0, 1}));
}

TEST(SelectTopK, KOutOfRangeThrows)
{
  const Tensor logits = Tensor::matrix(1, 4);
  EXPECT_THROW(select_topk(logits, 0), ConfigError);
  EXPECT_THROW(select_topk(logits, 5), ConfigError);
  EXPECT_NO_THROW(select_topk(logits, 4));
}

TEST(SelectTopK, AbsentViewsNeverSelected)
{
  const auto a = select_topk(Tensor::matrix({{0.9, 0.8, 0.1, 0.0}}), 2, {false, true, true});
  EXPECT_EQ(a[0].views, (std::vector<int>{1, 2}));
}

TEST(SelectTopK, ScaleInvarianceAndMonotoneHitRateProperty)
{
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> target(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor logits = random_tensor({6, 7}, rng, -3.0, 3.0);
    Tensor scaled = logits;
    for (double & v : scaled.data) {
      v *= 3.5;
    }
    for (int k = 1; k <= 7; ++k) {
      const auto a = select_topk(logits, k), b = select_topk(scaled, k);
      for (std::size_t r = 0; r < a.size(); ++r) {
        EXPECT_EQ(a[r].views, b[r].views);
        EXPECT_EQ(a[r].no_view, b[r].no_view);
        std::vector<int> sorted = a[r].views;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_TRUE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
        for (int v : sorted) {
          EXPECT_TRUE(v >= 0 && v < 6);
        }
      }
    }
    for (std::size_t r = 0; r < 6; ++r) {
      const int t = target(rng);
      bool hit_before = false;
      for (int k = 1; k <= 7; ++k) {
        const auto ranked = ranked_classes(logits.row_span(r));
        const bool hit = std::find(ranked.begin(), ranked.begin() + k, t) != ranked.begin() + k;
        EXPECT_TRUE(hit || !hit_before);
        hit_before = hit;
      }
    }
  }
}

TEST(SelectTopK, OracleLogitsRecoverDominantView)
{
  worldsim::SceneConfig sc;
  const auto sensor = worldsim::SensorConfig::noiseless();
  long checked = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto scene = worldsim::generate_scene(sc, 40 + s);
    const auto lidar = worldsim::simulate_lidar_branch(scene, sensor, s);
    const auto camera = worldsim::simulate_camera_branch(scene, {}, sensor, s);
    const auto gt = worldsim::make_gt_correspondences(scene, lidar.proposals, camera.proposals, scene.rig);
    Tensor logits = Tensor::matrix(lidar.proposals.size(), sc.num_views + 1);
    for (std::size_t i = 0; i < lidar.proposals.size(); ++i) {
      logits(i, static_cast<std::size_t>(gt.dominant_view[i])) = 1.0;
    }
    const auto a = select_topk(logits, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (gt.dominant_view[i] == sc.num_views) {
        EXPECT_TRUE(a[i].no_view);
      } else {
        ASSERT_FALSE(a[i].no_view);
        EXPECT_EQ(a[i].views.front(), gt.dominant_view[i]);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(ViewLevel, ToyFourViewRigTrains)
{
  worldsim::SceneConfig sc;
  sc.num_views = 4;
  sc.hfov_deg = 95.0;
  std::vector<worldsim::Scene> scenes;
  for (std::uint64_t s = 0; s < 40; ++s) {
    scenes.push_back(worldsim::generate_scene(sc, 500 + s));
  }
  trainloop::TrainConfig tc;
  tc.model.num_views = 4;
  tc.epochs = 8;
  tc.lr = 1e-3;
  tc.fresh_sensor_noise = false;
  const auto result = trainloop::train(tc, scenes);

  trainloop::EvalOptions eo;
  eo.sensor = tc.sensor;
  const auto report = trainloop::evaluate(result.checkpoint, scenes, {}, eo);
  EXPECT_GT(report.top1_acc, 0.9);
  EXPECT_GE(report.top2_acc, report.top1_acc);
}

}  // namespace
