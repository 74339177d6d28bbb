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

#include "boxmatch/worldsim.hpp"

#include "boxmatch/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace boxmatch::worldsim
{

namespace
{

enum Stream : std::uint64_t {
  kStreamScene = 1,
  kStreamPrototypes,
  kStreamLidar,
  kStreamBev,
  kStreamCamera,
  kStreamCorrupt,
  kStreamDrop,
  kStreamMisalign,
  kStreamCalib,
  kStreamMixers,
};

constexpr std::uint64_t kWorldConstant = 0xB0C5'0A7C'0000'0001ULL;
constexpr int kGeomDim = 8;
constexpr int kPosDim = 8;

Vec3 class_prior(int class_id)
{
  static const Vec3 priors[] = {
    {4.6, 1.9, 1.7}, {8.0, 2.6, 3.2}, {0.8, 0.7, 1.75}, {1.8, 0.7, 1.5}, {2.0, 0.5, 1.0}};
  const Vec3 base = priors[class_id % 5];
  return (1.0 + 0.15 * (class_id / 5)) * base;
}

std::vector<std::vector<double>> class_prototypes(int num_classes, int dim)
{
  Rng rng(derive_seed(kWorldConstant, kStreamPrototypes));
  std::vector<std::vector<double>> out(num_classes, std::vector<double>(dim));
  for (auto & p : out) {
    for (double & v : p) {
      v = gaussian(rng, 1.0);
    }
  }
  return out;
}

std::vector<double> random_appearance(Rng & rng, const std::vector<double> & prototype)
{
  std::vector<double> a(prototype.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = 0.5 * prototype[i] + gaussian(rng, 1.0);
  }
  return a;
}

// Fixed linear "sensor physics" shared by every scene.
struct Mixers
{
  int C = 0;
  int A = 0;
  std::vector<double> lidar_app;   // C×A
  std::vector<double> lidar_geom;  // C×kGeomDim
  std::vector<double> bev_app;     // C×A
  std::vector<double> cam_app;     // C×A
  std::vector<double> cam_pos;     // C×kPosDim

  Mixers(const SensorConfig & config, int appearance_dim)
  : C(config.channels), A(appearance_dim)
  {
    Rng rng(derive_seed(config.physics_seed, kStreamMixers));
    auto fill = [&](std::vector<double> & m, int cols, double scale) {
      m.resize(static_cast<std::size_t>(C) * cols);
      for (double & v : m) {
        v = gaussian(rng, scale / std::sqrt(static_cast<double>(cols)));
      }
    };
    fill(lidar_app, A, 1.0);
    fill(lidar_geom, kGeomDim, 0.5);
    fill(bev_app, A, 1.0);
    fill(cam_app, A, 1.0);
    fill(cam_pos, kPosDim, 1.0);
  }

  static void apply(
    const std::vector<double> & m, int cols, std::span<const double> x, double * out, int C)
  {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int k = 0; k < cols; ++k) {
        acc += m[static_cast<std::size_t>(c) * cols + k] * x[k];
      }
      out[c] += acc;
    }
  }
};

int appearance_dim_of(const Scene & scene)
{
  return scene.objects.empty() ? 16 : static_cast<int>(scene.objects.front().appearance.size());
}

double perturb_yaw(double yaw, double delta)
{
  const double y = yaw + delta;
  return (y < -kPi || y >= kPi) ? wrap_angle(y) : y;
}

std::array<double, kPosDim> cell_encoding(int r, int c, int H, int W)
{
  const double y = (r + 0.5) / H, x = (c + 0.5) / W;
  return {std::sin(kPi * x), std::cos(kPi * x), std::sin(2 * kPi * x), std::cos(2 * kPi * x),
          std::sin(kPi * y), std::cos(kPi * y), std::sin(2 * kPi * y), std::cos(2 * kPi * y)};
}

void check_classes(const Scene & scene, int num_classes)
{
  for (const auto & o : scene.objects) {
    if (o.class_id < 0 || o.class_id >= num_classes) {
      throw ConfigError("object class id " + std::to_string(o.class_id) + " outside sensor class set");
    }
  }
}

}  // namespace

void SceneConfig::validate() const
{
  if (num_views < 1) {
    throw ConfigError("scene config needs at least one camera view");
  }
  if (num_classes < 1) {
    throw ConfigError("scene config needs a non-empty class set");
  }
  if (appearance_dim < 1) {
    throw ConfigError("appearance_dim must be positive");
  }
  if (min_objects < 0 || max_objects < 0) {
    throw ConfigError("object counts must be non-negative");
  }
  if (!(world_extent > 0.0) || !(min_range >= 0.0) || !(max_range > min_range) ||
      max_range > world_extent) {
    throw ConfigError("scene ranges must satisfy 0 <= min_range < max_range <= world_extent");
  }
  if (!(image_width > 0.0) || !(image_height > 0.0) || !(hfov_deg > 0.0) || hfov_deg >= 180.0) {
    throw ConfigError("invalid camera image size or field of view");
  }
  if (max_speed < 0.0) {
    throw ConfigError("max_speed must be non-negative");
  }
}

SceneObject make_object(
  int id, int class_id, Vec3 center, Vec3 size, double yaw, std::array<double, 2> velocity,
  std::vector<double> appearance)
{
  SceneObject o;
  o.id = id;
  o.class_id = class_id;
  o.center = center;
  o.anchor = center;
  o.size = size;
  o.yaw = yaw;
  o.velocity = velocity;
  o.appearance = std::move(appearance);
  return o;
}

void Scene::validate() const
{
  if (rig.empty()) {
    throw ConfigError("scene has no cameras");
  }
  std::set<int> ids;
  for (const auto & o : objects) {
    if (!ids.insert(o.id).second) {
      throw ConfigError("duplicate object id " + std::to_string(o.id));
    }
    if (!(o.size.x > 0.0) || !(o.size.y > 0.0) || !(o.size.z > 0.0)) {
      throw ConfigError("object " + std::to_string(o.id) + " has non-positive size");
    }
  }
}

const SceneObject * Scene::find(int id) const
{
  for (const auto & o : objects) {
    if (o.id == id) {
      return &o;
    }
  }
  return nullptr;
}

std::vector<CameraModel> make_ring_rig(const SceneConfig & config)
{
  std::vector<CameraModel> rig;
  const double f = 0.5 * config.image_width / std::tan(0.5 * deg2rad(config.hfov_deg));
  for (int k = 0; k < config.num_views; ++k) {
    const double th = 2.0 * kPi * k / config.num_views;
    const double c = std::cos(th), s = std::sin(th);
    CameraModel cam;
    cam.fx = f;
    cam.fy = f;
    cam.cx = 0.5 * config.image_width;
    cam.cy = 0.5 * config.image_height;
    cam.img_w = config.image_width;
    cam.img_h = config.image_height;
    cam.R = {{{s, -c, 0.0}, {0.0, 0.0, -1.0}, {c, s, 0.0}}};
    const Vec3 position{config.ring_radius * c, config.ring_radius * s, config.camera_height};
    cam.t = -1.0 * apply3(cam.R, position);
    rig.push_back(cam);
  }
  return rig;
}

Scene generate_scene(const SceneConfig & config, std::uint64_t seed)
{
  config.validate();
  Scene scene;
  scene.seed = seed;
  scene.rig = make_ring_rig(config);
  const auto prototypes = class_prototypes(config.num_classes, config.appearance_dim);

  Rng rng(derive_seed(seed, kStreamScene));
  const int n = uniform_int(rng, std::min(config.min_objects, config.max_objects), config.max_objects);
  for (int i = 0; i < n; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int cls = uniform_int(rng, 0, config.num_classes - 1);
      const Vec3 prior = class_prior(cls);
      const Vec3 size{
        prior.x * uniform(rng, 0.9, 1.1), prior.y * uniform(rng, 0.9, 1.1),
        prior.z * uniform(rng, 0.9, 1.1)};
      const double r = std::sqrt(uniform(
        rng, config.min_range * config.min_range, config.max_range * config.max_range));
      const double phi = uniform(rng, -kPi, kPi);
      const Vec3 center{r * std::cos(phi), r * std::sin(phi), 0.5 * size.z};
      const double radius = 0.5 * std::hypot(size.x, size.y);
      const bool clear = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const auto & o) {
        const double other = 0.5 * std::hypot(o.size.x, o.size.y);
        return std::hypot(o.center.x - center.x, o.center.y - center.y) > radius + other + 0.5;
      });
      if (!clear) {
        continue;
      }
      const double yaw = wrap_angle(uniform(rng, -kPi, kPi));
      const double speed = uniform(rng, 0.0, config.max_speed);
      scene.objects.push_back(make_object(
        i, cls, center, size, yaw, {speed * std::cos(yaw), speed * std::sin(yaw)},
        random_appearance(rng, prototypes[cls])));
      break;
    }
  }
  return scene;
}

Scene scene_at(const Scene & scene, double dt)
{
  if (dt < 0.0) {
    throw ConfigError("scene_at needs dt >= 0");
  }
  Scene out = scene;
  out.timestamp = scene.timestamp + dt;
  for (auto & o : out.objects) {
    o.center.x = o.anchor.x + o.velocity[0] * out.timestamp;
    o.center.y = o.anchor.y + o.velocity[1] * out.timestamp;
  }
  return out;
}

SensorConfig SensorConfig::noiseless()
{
  SensorConfig c;
  c.p_detect_3d = 1.0;
  c.center_noise = 0.0;
  c.size_noise = 0.0;
  c.yaw_noise = 0.0;
  c.max_false_positives_3d = 0;
  c.feature_noise_3d = 0.0;
  c.class_logit_noise = 0.0;
  c.p_detect_2d = 1.0;
  c.box_noise_px = 0.0;
  c.max_false_positives_2d = 0;
  c.feature_noise_2d = 0.0;
  c.class_flip_2d = 0.0;
  c.min_box_px = 0.0;
  return c;
}

void SensorConfig::validate() const
{
  if (channels < 1 || num_classes < 1 || bev_cells < 1 || grid_h < 1 || grid_w < 1 ||
      !(bev_extent > 0.0)) {
    throw ConfigError("sensor grid sizes and channels must be positive");
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_detect_3d) || !prob(p_detect_2d) || !prob(class_flip_2d)) {
    throw ConfigError("sensor probabilities must lie in [0, 1]");
  }
  if (center_noise < 0 || size_noise < 0 || yaw_noise < 0 || feature_noise_3d < 0 ||
      class_logit_noise < 0 || box_noise_px < 0 || feature_noise_2d < 0 ||
      max_false_positives_3d < 0 || max_false_positives_2d < 0 || min_box_px < 0) {
    throw ConfigError("sensor noise levels and counts must be non-negative");
  }
}

int BevMap::index_of(double coord) const
{
  const double f = std::floor((coord + extent) / cell_size());
  if (!(f >= 0.0) || f >= cells) {
    return -1;
  }
  return static_cast<int>(f);
}

Tensor ViewFeatureMap::view_matrix(int v) const
{
  const std::size_t n = static_cast<std::size_t>(H) * W * C;
  const auto begin = data.data.begin() + static_cast<std::ptrdiff_t>(n * v);
  return Tensor({static_cast<std::size_t>(H) * W, static_cast<std::size_t>(C)},
                std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

void DisturbanceSpec::validate(int num_views) const
{
  if (!(async_dt >= 0.0)) {
    throw ConfigError("async_dt must be >= 0");
  }
  for (int v : dropped_views) {
    if (v < 0 || v >= num_views) {
      throw ConfigError("dropped view " + std::to_string(v) + " outside [0, N_v)");
    }
  }
  if (drop_count < 0 || calib_trans_range < 0.0 || calib_rot_range < 0.0 ||
      feat_noise_amp < 0.0) {
    throw ConfigError("disturbance ranges must be non-negative");
  }
}

bool DisturbanceSpec::is_clean() const
{
  return async_dt == 0.0 && misalign_rot == 0.0 && misalign_trans == 0.0 &&
         dropped_views.empty() && drop_count == 0 && feat_gain == 1.0 && feat_noise_amp == 0.0 &&
         calib_trans_range == 0.0 && calib_rot_range == 0.0;
}

LidarOutput simulate_lidar_branch(
  const Scene & scene, const SensorConfig & config, std::uint64_t seed)
{
  config.validate();
  scene.validate();
  const int C = config.channels;
  const int A = appearance_dim_of(scene);
  const Mixers mix(config, A);
  const int ncls = config.num_classes;
  check_classes(scene, ncls);

  Rng rng(derive_seed(seed, kStreamLidar));
  LidarOutput out;
  auto emit = [&](const Box3D & box, int cls, std::span<const double> appearance, int src) {
    Proposal3D p;
    p.center = box.center;
    p.size = box.size;
    p.yaw = box.yaw;
    p.class_logits.resize(ncls);
    for (int c = 0; c < ncls; ++c) {
      p.class_logits[c] = gaussian(rng, config.class_logit_noise) +
                          (c == cls ? config.class_logit_margin : 0.0);
    }
    const double E = config.bev_extent;
    const double geom[kGeomDim] = {
      p.center.x / E, p.center.y / E, p.center.z / 2.0, std::log(p.size.x), std::log(p.size.y),
      std::log(p.size.z), std::cos(p.yaw), std::sin(p.yaw)};
    p.feature.assign(C, 0.0);
    Mixers::apply(mix.lidar_app, A, appearance, p.feature.data(), C);
    Mixers::apply(mix.lidar_geom, kGeomDim, geom, p.feature.data(), C);
    for (double & f : p.feature) {
      f += gaussian(rng, config.feature_noise_3d);
    }
    p.src_object = src;
    out.proposals.push_back(std::move(p));
  };

  for (const auto & o : scene.objects) {
    if (!(uniform(rng, 0.0, 1.0) < config.p_detect_3d)) {
      continue;
    }
    Box3D box = o.box();
    box.center.x += gaussian(rng, config.center_noise);
    box.center.y += gaussian(rng, config.center_noise);
    box.center.z += gaussian(rng, 0.5 * config.center_noise);
    box.size.x *= std::exp(gaussian(rng, config.size_noise));
    box.size.y *= std::exp(gaussian(rng, config.size_noise));
    box.size.z *= std::exp(gaussian(rng, config.size_noise));
    box.yaw = perturb_yaw(box.yaw, gaussian(rng, config.yaw_noise));
    emit(box, o.class_id, o.appearance, o.id);
  }

  const auto prototypes = class_prototypes(ncls, A);
  const int n_fp = uniform_int(rng, 0, config.max_false_positives_3d);
  for (int i = 0; i < n_fp; ++i) {
    const int cls = uniform_int(rng, 0, ncls - 1);
    const Vec3 prior = class_prior(cls);
    const double r = uniform(rng, 0.1 * config.bev_extent, 0.9 * config.bev_extent), phi = uniform(rng, -kPi, kPi);
    const Box3D box{{r * std::cos(phi), r * std::sin(phi), 0.5 * prior.z}, prior,
                    wrap_angle(uniform(rng, -kPi, kPi))};
    const auto appearance = random_appearance(rng, prototypes[cls]);
    emit(box, cls, appearance, kFalsePositive);
  }
  std::shuffle(out.proposals.begin(), out.proposals.end(), rng);

  BevMap & bev = out.bev;
  bev.cells = config.bev_cells;
  bev.channels = C;
  bev.extent = config.bev_extent;
  bev.data = Tensor({static_cast<std::size_t>(bev.cells), static_cast<std::size_t>(bev.cells),
                     static_cast<std::size_t>(C)});
  Rng bev_rng(derive_seed(seed, kStreamBev));
  std::vector<double> value(C);
  for (const auto & o : scene.objects) {
    const Box3D box = o.box();
    std::vector<std::pair<int, int>> members;
    const double reach = 0.5 * std::hypot(box.size.x, box.size.y);
    const int r0 = std::max(0, bev.index_of(std::max(box.center.y - reach, -bev.extent)));
    const int c0 = std::max(0, bev.index_of(std::max(box.center.x - reach, -bev.extent)));
    for (int r = r0; r < bev.cells && bev.cell_y(r) <= box.center.y + reach; ++r) {
      for (int c = c0; c < bev.cells && bev.cell_x(c) <= box.center.x + reach; ++c) {
        if (footprint_contains(box, bev.cell_x(c), bev.cell_y(r))) {
          members.emplace_back(r, c);
        }
      }
    }
    if (members.empty()) {
      const int r = bev.index_of(box.center.y), c = bev.index_of(box.center.x);
      if (r >= 0 && c >= 0) {
        members.emplace_back(r, c);
      }
    }
    std::fill(value.begin(), value.end(), 0.0);
    Mixers::apply(mix.bev_app, A, o.appearance, value.data(), C);
    for (const auto & [r, c] : members) {
      double * cell = bev.cell(r, c);
      for (int k = 0; k < C; ++k) {
        cell[k] = value[k] + gaussian(bev_rng, config.feature_noise_3d);
      }
    }
  }
  return out;
}

std::set<int> resolve_dropped_views(
  const DisturbanceSpec & disturb, int num_views, std::uint64_t seed)
{
  std::set<int> dropped = disturb.dropped_views;
  if (disturb.drop_count > 0) {
    std::vector<int> remaining;
    for (int v = 0; v < num_views; ++v) {
      if (!dropped.count(v)) {
        remaining.push_back(v);
      }
    }
    Rng rng(derive_seed(seed, kStreamDrop));
    std::shuffle(remaining.begin(), remaining.end(), rng);
    const int take = std::min<int>(disturb.drop_count, static_cast<int>(remaining.size()));
    dropped.insert(remaining.begin(), remaining.begin() + take);
  }
  return dropped;
}

CameraOutput simulate_camera_branch(
  const Scene & scene, const DisturbanceSpec & disturb, const SensorConfig & config,
  std::uint64_t seed)
{
  config.validate();
  scene.validate();
  const int NV = static_cast<int>(scene.rig.size());
  disturb.validate(NV);
  const Scene observed = scene_at(scene, disturb.async_dt);
  const std::set<int> dropped = resolve_dropped_views(disturb, NV, seed);

  const int C = config.channels, H = config.grid_h, W = config.grid_w;
  const int A = appearance_dim_of(scene);
  const Mixers mix(config, A);
  const int ncls = config.num_classes;
  check_classes(scene, ncls);

  CameraOutput out;
  ViewFeatureMap & fm = out.features;
  fm.views = NV;
  fm.H = H;
  fm.W = W;
  fm.C = C;
  fm.image_width = scene.rig.front().img_w;
  fm.image_height = scene.rig.front().img_h;
  fm.data = Tensor({static_cast<std::size_t>(NV), static_cast<std::size_t>(H),
                    static_cast<std::size_t>(W), static_cast<std::size_t>(C)});
  fm.present.assign(NV, true);

  std::vector<double> appearance_layer(static_cast<std::size_t>(H) * W * C);
  std::vector<double> painted(C);
  for (int v = 0; v < NV; ++v) {
    if (dropped.count(v)) {
      fm.present[v] = false;
      continue;
    }
    const CameraModel & cam = scene.rig[v];
    Rng rng(derive_seed(seed, kStreamCamera, static_cast<std::uint64_t>(v)));
    const double cw = cam.img_w / W, ch = cam.img_h / H;

    struct Visible
    {
      const SceneObject * object;
      Box2D box;
      double depth;
    };
    std::vector<Visible> visible;
    for (const auto & o : observed.objects) {
      if (auto box = project_box(cam, o.box())) {
        visible.push_back({&o, *box, cam.to_camera(o.center).z});
      }
    }
    std::stable_sort(visible.begin(), visible.end(), [](const Visible & a, const Visible & b) {
      return a.depth > b.depth;
    });

    std::fill(appearance_layer.begin(), appearance_layer.end(), 0.0);
    for (const auto & vis : visible) {
      std::fill(painted.begin(), painted.end(), 0.0);
      Mixers::apply(mix.cam_app, A, vis.object->appearance, painted.data(), C);
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
          const double ox = std::min(vis.box.x2, (c + 1) * cw) - std::max(vis.box.x1, c * cw);
          const double oy = std::min(vis.box.y2, (r + 1) * ch) - std::max(vis.box.y1, r * ch);
          if (ox <= 0.0 || oy <= 0.0) {
            continue;
          }
          const double alpha = (ox * oy) / (cw * ch);
          double * cell = appearance_layer.data() + (static_cast<std::size_t>(r) * W + c) * C;
          for (int k = 0; k < C; ++k) {
            cell[k] = (1.0 - alpha) * cell[k] + alpha * painted[k];
          }
        }
      }
    }
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const auto pe = cell_encoding(r, c, H, W);
        double * px = fm.pixel(v, r, c);
        const double * app = appearance_layer.data() + (static_cast<std::size_t>(r) * W + c) * C;
        std::fill(painted.begin(), painted.end(), 0.0);
        Mixers::apply(mix.cam_pos, kPosDim, pe, painted.data(), C);
        for (int k = 0; k < C; ++k) {
          px[k] = app[k] + config.position_gain * painted[k] +
                  gaussian(rng, config.feature_noise_2d);
        }
      }
    }

    std::vector<Visible> by_id = visible;
    std::stable_sort(by_id.begin(), by_id.end(), [](const Visible & a, const Visible & b) {
      return a.object->id < b.object->id;
    });
    for (const auto & vis : by_id) {
      if (vis.box.width() < config.min_box_px || vis.box.height() < config.min_box_px) {
        continue;
      }
      if (!(uniform(rng, 0.0, 1.0) < config.p_detect_2d)) {
        continue;
      }
      Box2D box = vis.box;
      if (config.box_noise_px > 0.0) {
        box.x1 += gaussian(rng, config.box_noise_px);
        box.y1 += gaussian(rng, config.box_noise_px);
        box.x2 += gaussian(rng, config.box_noise_px);
        box.y2 += gaussian(rng, config.box_noise_px);
        box = clip_box(box, cam.img_w, cam.img_h);
        if (box.width() < 1.0 || box.height() < 1.0) {
          continue;
        }
      }
      Proposal2D p;
      p.view = v;
      p.box = box;
      p.class_id = vis.object->class_id;
      if (uniform(rng, 0.0, 1.0) < config.class_flip_2d) {
        p.class_id = uniform_int(rng, 0, ncls - 1);
      }
      p.score = uniform(rng, 0.6, 1.0);
      p.src_object = vis.object->id;
      out.proposals.push_back(p);
    }

    const int n_fp = uniform_int(rng, 0, config.max_false_positives_2d);
    for (int i = 0; i < n_fp; ++i) {
      const double w = uniform(rng, 20.0, 160.0), h = uniform(rng, 20.0, 160.0);
      const double x1 = uniform(rng, 0.0, cam.img_w - w), y1 = uniform(rng, 0.0, cam.img_h - h);
      Proposal2D p;
      p.view = v;
      p.box = {x1, y1, x1 + w, y1 + h};
      p.class_id = uniform_int(rng, 0, ncls - 1);
      p.score = uniform(rng, 0.3, 0.6);
      p.src_object = kFalsePositive;
      out.proposals.push_back(p);
    }
  }

  if (disturb.feat_gain != 1.0 || disturb.feat_noise_amp != 0.0) {
    const std::size_t n = static_cast<std::size_t>(H) * W * C;
    for (int v = 0; v < NV; ++v) {
      if (!fm.present[v]) {
        continue;
      }
      Rng rng(derive_seed(seed, kStreamCorrupt, static_cast<std::uint64_t>(v)));
      double * base = fm.data.data.data() + n * v;
      for (std::size_t i = 0; i < n; ++i) {
        base[i] = disturb.feat_gain * base[i] +
                  uniform(rng, -disturb.feat_noise_amp, disturb.feat_noise_amp);
      }
    }
  }
  return out;
}

double feature_std(const ViewFeatureMap & features)
{
  const std::size_t n = static_cast<std::size_t>(features.H) * features.W * features.C;
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (int v = 0; v < features.views; ++v) {
    if (!features.present[v]) {
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double x = features.data.data[n * v + i];
      sum += x;
      sq += x * x;
    }
    count += n;
  }
  if (count == 0) {
    return 0.0;
  }
  const double mean = sum / count;
  return std::sqrt(std::max(0.0, sq / count - mean * mean));
}

std::array<double, 2> RigidTransform2D::apply(double x, double y) const
{
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * x - s * y + tx, s * x + c * y + ty};
}

RigidTransform2D RigidTransform2D::inverse() const
{
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {-yaw, -(c * tx + s * ty), -(-s * tx + c * ty)};
}

RigidTransform2D misalignment_transform(double rot_deg, double trans_m, std::uint64_t seed)
{
  Rng rng(derive_seed(seed, kStreamMisalign));
  const double dir = uniform(rng, 0.0, 2.0 * kPi);
  return {deg2rad(rot_deg), trans_m * std::cos(dir), trans_m * std::sin(dir)};
}

LidarOutput apply_rigid(const LidarOutput & lidar, const RigidTransform2D & transform)
{
  LidarOutput out = lidar;
  for (auto & p : out.proposals) {
    const auto [x, y] = transform.apply(p.center.x, p.center.y);
    p.center.x = x;
    p.center.y = y;
    p.yaw = perturb_yaw(p.yaw, transform.yaw);
  }
  const BevMap & src = lidar.bev;
  BevMap & dst = out.bev;
  std::fill(dst.data.data.begin(), dst.data.data.end(), 0.0);
  const RigidTransform2D inv = transform.inverse();
  for (int r = 0; r < dst.cells; ++r) {
    for (int c = 0; c < dst.cells; ++c) {
      const auto [sx, sy] = inv.apply(dst.cell_x(c), dst.cell_y(r));
      const int sr = src.index_of(sy), sc = src.index_of(sx);
      if (sr < 0 || sc < 0) {
        continue;
      }
      std::copy_n(src.cell(sr, sc), src.channels, dst.cell(r, c));
    }
  }
  return out;
}

LidarOutput apply_misalignment(
  const LidarOutput & lidar, double rot_deg, double trans_m, std::uint64_t seed)
{
  if (rot_deg == 0.0 && trans_m == 0.0) {
    return lidar;
  }
  return apply_rigid(lidar, misalignment_transform(rot_deg, trans_m, seed));
}

std::vector<CameraModel> perturb_calibration(
  const std::vector<CameraModel> & rig, double trans_range_m, double rot_range_deg,
  std::uint64_t seed)
{
  if (trans_range_m < 0.0 || rot_range_deg < 0.0) {
    throw ConfigError("calibration perturbation ranges must be >= 0");
  }
  std::vector<CameraModel> out = rig;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(seed, kStreamCalib, i));
    const Vec3 dt{
      uniform(rng, -trans_range_m, trans_range_m), uniform(rng, -trans_range_m, trans_range_m),
      uniform(rng, -trans_range_m, trans_range_m)};
    Vec3 axis{gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0)};
    const double angle = deg2rad(uniform(rng, -rot_range_deg, rot_range_deg));
    if (rot_range_deg > 0.0 && axis.norm() > 0.0) {
      const Mat3 delta = axis_angle(axis, angle);
      out[i].R = matmul3(delta, out[i].R);
      out[i].t = apply3(delta, out[i].t);
    }
    if (trans_range_m > 0.0) {
      out[i].t = out[i].t + dt;
    }
  }
  return out;
}

std::vector<int> visible_views(const std::vector<CameraModel> & rig, Vec3 center)
{
  std::vector<int> views;
  for (std::size_t v = 0; v < rig.size(); ++v) {
    if (project_point(rig[v], center)) {
      views.push_back(static_cast<int>(v));
    }
  }
  return views;
}

int dominant_view(const std::vector<CameraModel> & rig, Vec3 center)
{
  int best = static_cast<int>(rig.size());
  double best_d = 0.0;
  for (std::size_t v = 0; v < rig.size(); ++v) {
    if (auto px = project_point(rig[v], center)) {
      const double d = std::hypot((*px)[0] - rig[v].cx, (*px)[1] - rig[v].cy);
      if (best == static_cast<int>(rig.size()) || d < best_d) {
        best = static_cast<int>(v);
        best_d = d;
      }
    }
  }
  return best;
}

GroundTruth make_gt_correspondences(
  const Scene & scene, const std::vector<Proposal3D> & proposals3d,
  const std::vector<Proposal2D> & proposals2d, const std::vector<CameraModel> & rig)
{
  auto linkage = [&](const std::optional<int> & src, const std::string & what) {
    if (!src) {
      throw LabelError(what + " has no ground-truth object linkage");
    }
    if (*src != kFalsePositive && scene.find(*src) == nullptr) {
      throw LabelError(what + " references unknown object " + std::to_string(*src));
    }
    return *src;
  };
  std::vector<int> src2d(proposals2d.size());
  for (std::size_t j = 0; j < proposals2d.size(); ++j) {
    src2d[j] = linkage(proposals2d[j].src_object, "2D proposal " + std::to_string(j));
  }

  const std::size_t n2 = proposals2d.size();
  GroundTruth gt;
  gt.match = Tensor::matrix(proposals3d.size(), n2 + 1);
  for (std::size_t i = 0; i < proposals3d.size(); ++i) {
    const int src = linkage(proposals3d[i].src_object, "3D proposal " + std::to_string(i));
    gt.view_labels.push_back(visible_views(rig, proposals3d[i].center));
    const int dom = dominant_view(rig, proposals3d[i].center);
    gt.dominant_view.push_back(dom);
    int column = static_cast<int>(n2);
    if (src != kFalsePositive) {
      for (std::size_t j = 0; j < n2; ++j) {
        if (src2d[j] != src) {
          continue;
        }
        if (column == static_cast<int>(n2) || proposals2d[j].view == dom) {
          column = static_cast<int>(j);
        }
        if (proposals2d[j].view == dom) {
          break;
        }
      }
    }
    gt.match(i, static_cast<std::size_t>(column)) = 1.0;
    gt.match_column.push_back(column);
  }
  return gt;
}

namespace
{

using nlohmann::json;

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const json & j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

json to_json(const SceneConfig & c)
{
  return {{"num_views", c.num_views},       {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},   {"world_extent", c.world_extent},
          {"min_range", c.min_range},       {"max_range", c.max_range},
          {"num_classes", c.num_classes},   {"appearance_dim", c.appearance_dim},
          {"max_speed", c.max_speed},       {"image_width", c.image_width},
          {"image_height", c.image_height}, {"hfov_deg", c.hfov_deg},
          {"camera_height", c.camera_height}, {"ring_radius", c.ring_radius}};
}

SceneConfig scene_config_from_json(const json & j)
{
  SceneConfig c;
  c.num_views = j.value("num_views", c.num_views);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.world_extent = j.value("world_extent", c.world_extent);
  c.min_range = j.value("min_range", c.min_range);
  c.max_range = j.value("max_range", c.max_range);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.appearance_dim = j.value("appearance_dim", c.appearance_dim);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.hfov_deg = j.value("hfov_deg", c.hfov_deg);
  c.camera_height = j.value("camera_height", c.camera_height);
  c.ring_radius = j.value("ring_radius", c.ring_radius);
  c.validate();
  return c;
}

json to_json(const SensorConfig & c)
{
  return {{"channels", c.channels},
          {"num_classes", c.num_classes},
          {"bev_extent", c.bev_extent},
          {"physics_seed", c.physics_seed},
          {"p_detect_3d", c.p_detect_3d},
          {"center_noise", c.center_noise},
          {"size_noise", c.size_noise},
          {"yaw_noise", c.yaw_noise},
          {"max_false_positives_3d", c.max_false_positives_3d},
          {"feature_noise_3d", c.feature_noise_3d},
          {"class_logit_margin", c.class_logit_margin},
          {"class_logit_noise", c.class_logit_noise},
          {"bev_cells", c.bev_cells},
          {"p_detect_2d", c.p_detect_2d},
          {"box_noise_px", c.box_noise_px},
          {"max_false_positives_2d", c.max_false_positives_2d},
          {"feature_noise_2d", c.feature_noise_2d},
          {"class_flip_2d", c.class_flip_2d},
          {"position_gain", c.position_gain},
          {"grid_h", c.grid_h},
          {"grid_w", c.grid_w},
          {"min_box_px", c.min_box_px}};
}

SensorConfig sensor_config_from_json(const json & j)
{
  SensorConfig c;
  c.channels = j.value("channels", c.channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.bev_extent = j.value("bev_extent", c.bev_extent);
  c.physics_seed = j.value("physics_seed", c.physics_seed);
  c.p_detect_3d = j.value("p_detect_3d", c.p_detect_3d);
  c.center_noise = j.value("center_noise", c.center_noise);
  c.size_noise = j.value("size_noise", c.size_noise);
  c.yaw_noise = j.value("yaw_noise", c.yaw_noise);
  c.max_false_positives_3d = j.value("max_false_positives_3d", c.max_false_positives_3d);
  c.feature_noise_3d = j.value("feature_noise_3d", c.feature_noise_3d);
  c.class_logit_margin = j.value("class_logit_margin", c.class_logit_margin);
  c.class_logit_noise = j.value("class_logit_noise", c.class_logit_noise);
  c.bev_cells = j.value("bev_cells", c.bev_cells);
  c.p_detect_2d = j.value("p_detect_2d", c.p_detect_2d);
  c.box_noise_px = j.value("box_noise_px", c.box_noise_px);
  c.max_false_positives_2d = j.value("max_false_positives_2d", c.max_false_positives_2d);
  c.feature_noise_2d = j.value("feature_noise_2d", c.feature_noise_2d);
  c.class_flip_2d = j.value("class_flip_2d", c.class_flip_2d);
  c.position_gain = j.value("position_gain", c.position_gain);
  c.grid_h = j.value("grid_h", c.grid_h);
  c.grid_w = j.value("grid_w", c.grid_w);
  c.min_box_px = j.value("min_box_px", c.min_box_px);
  c.validate();
  return c;
}

json to_json(const DisturbanceSpec & d)
{
  return {{"async_dt", d.async_dt},
          {"misalign_rot", d.misalign_rot},
          {"misalign_trans", d.misalign_trans},
          {"dropped_views", d.dropped_views},
          {"drop_count", d.drop_count},
          {"feat_gain", d.feat_gain},
          {"feat_noise_amp", d.feat_noise_amp},
          {"calib_trans_range", d.calib_trans_range},
          {"calib_rot_range", d.calib_rot_range}};
}

DisturbanceSpec disturbance_from_json(const json & j)
{
  static const std::set<std::string> known = {
    "async_dt", "misalign_rot", "misalign_trans", "dropped_views", "drop_count",
    "feat_gain", "feat_noise_amp", "calib_trans_range", "calib_rot_range"};
  for (const auto & item : j.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("unknown disturbance key '" + item.key() + "'");
    }
  }
  DisturbanceSpec d;
  d.async_dt = j.value("async_dt", d.async_dt);
  d.misalign_rot = j.value("misalign_rot", d.misalign_rot);
  d.misalign_trans = j.value("misalign_trans", d.misalign_trans);
  d.dropped_views = j.value("dropped_views", d.dropped_views);
  d.drop_count = j.value("drop_count", d.drop_count);
  d.feat_gain = j.value("feat_gain", d.feat_gain);
  d.feat_noise_amp = j.value("feat_noise_amp", d.feat_noise_amp);
  d.calib_trans_range = j.value("calib_trans_range", d.calib_trans_range);
  d.calib_rot_range = j.value("calib_rot_range", d.calib_rot_range);
  return d;
}

json to_json(const CameraModel & cam)
{
  return {{"fx", cam.fx},       {"fy", cam.fy},       {"cx", cam.cx},
          {"cy", cam.cy},       {"R", cam.R},         {"t", vec_json(cam.t)},
          {"img_w", cam.img_w}, {"img_h", cam.img_h}};
}

CameraModel camera_from_json(const json & j)
{
  CameraModel cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.R = j.at("R").get<Mat3>();
  cam.t = vec_from(j.at("t"));
  cam.img_w = j.at("img_w").get<double>();
  cam.img_h = j.at("img_h").get<double>();
  cam.validate();
  return cam;
}

json to_json(const Scene & scene)
{
  json objects = json::array();
  for (const auto & o : scene.objects) {
    objects.push_back({{"id", o.id},
                       {"class_id", o.class_id},
                       {"center", vec_json(o.center)},
                       {"anchor", vec_json(o.anchor)},
                       {"size", vec_json(o.size)},
                       {"yaw", o.yaw},
                       {"velocity", o.velocity},
                       {"appearance", o.appearance}});
  }
  json rig = json::array();
  for (const auto & cam : scene.rig) {
    rig.push_back(to_json(cam));
  }
  return {{"format_version", kSceneFormatVersion},
          {"timestamp", scene.timestamp},
          {"seed", scene.seed},
          {"rig", rig},
          {"objects", objects}};
}

Scene scene_from_json(const json & j)
{
  const int version = j.at("format_version").get<int>();
  if (version != kSceneFormatVersion) {
    throw ConfigError("unsupported scene format_version " + std::to_string(version));
  }
  Scene scene;
  scene.timestamp = j.at("timestamp").get<double>();
  scene.seed = j.at("seed").get<std::uint64_t>();
  for (const auto & c : j.at("rig")) {
    scene.rig.push_back(camera_from_json(c));
  }
  for (const auto & jo : j.at("objects")) {
    SceneObject o;
    o.id = jo.at("id").get<int>();
    o.class_id = jo.at("class_id").get<int>();
    o.center = vec_from(jo.at("center"));
    o.anchor = jo.contains("anchor") ? vec_from(jo.at("anchor")) : o.center;
    o.size = vec_from(jo.at("size"));
    o.yaw = jo.at("yaw").get<double>();
    o.velocity = jo.at("velocity").get<std::array<double, 2>>();
    o.appearance = jo.at("appearance").get<std::vector<double>>();
    scene.objects.push_back(std::move(o));
  }
  scene.validate();
  return scene;
}

std::string scenes_to_jsonl(const std::vector<Scene> & scenes)
{
  std::string out =
    json{{"format_version", kSceneFormatVersion}, {"kind", "scenes"}, {"count", scenes.size()}}
      .dump();
  out += '\n';
  for (const auto & s : scenes) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::vector<Scene> scenes_from_jsonl(const std::string & text)
{
  std::istringstream in(text);
  std::string line;
  std::vector<Scene> scenes;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error & e) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header) {
      if (!j.contains("format_version") || j.value("kind", "") != "scenes") {
        throw std::runtime_error("line 1: missing scenes header");
      }
      if (j.at("format_version").get<int>() != kSceneFormatVersion) {
        throw std::runtime_error("unsupported scenes format_version");
      }
      header = true;
      continue;
    }
    try {
      scenes.push_back(scene_from_json(j));
    } catch (const std::exception & e) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) {
    throw std::runtime_error("empty scenes file");
  }
  return scenes;
}

void save_scenes(const std::string & path, const std::vector<Scene> & scenes)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  out << scenes_to_jsonl(scenes);
  if (!out) {
    throw std::runtime_error("failed writing '" + path + "'");
  }
}

std::vector<Scene> load_scenes(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return scenes_from_jsonl(buf.str());
  } catch (const std::exception & e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace boxmatch::worldsim
