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

#include "boxmatch/trainloop.hpp"

#include "boxmatch/baseline.hpp"
#include "boxmatch/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace boxmatch::trainloop
{

using nlohmann::json;
using worldsim::kFalsePositive;

void TrainConfig::validate() const
{
  if (epochs < 0 || batch_size < 1) {
    throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  }
  if (!(lr > 0.0) || weight_decay < 0.0) {
    throw ConfigError("lr must be positive and weight_decay non-negative");
  }
  if (lambda_view < 0.0 || lambda_pro < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  model.validate();
  sensor.validate();
  if (sensor.channels != model.channels || sensor.num_classes != model.num_classes) {
    throw ConfigError("sensor and model disagree on channels or classes");
  }
}

json to_json(const TrainConfig & c)
{
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"lambda_view", c.lambda_view},
          {"lambda_pro", c.lambda_pro},
          {"model", model::to_json(c.model)},
          {"sensor", worldsim::to_json(c.sensor)},
          {"init_seed", c.init_seed},
          {"data_seed", c.data_seed},
          {"fresh_sensor_noise", c.fresh_sensor_noise}};
}

TrainConfig train_config_from_json(const json & j)
{
  static const std::set<std::string> known = {
    "epochs", "batch_size", "lr", "weight_decay", "lambda_view", "lambda_pro", "model",
    "sensor", "init_seed", "data_seed", "fresh_sensor_noise"};
  for (const auto & item : j.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("unknown train config key '" + item.key() + "'");
    }
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lambda_view = j.value("lambda_view", c.lambda_view);
  c.lambda_pro = j.value("lambda_pro", c.lambda_pro);
  if (j.contains("model")) {
    c.model = model::model_config_from_json(j.at("model"));
  }
  if (j.contains("sensor")) {
    c.sensor = worldsim::sensor_config_from_json(j.at("sensor"));
  }
  c.init_seed = j.value("init_seed", c.init_seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.fresh_sensor_noise = j.value("fresh_sensor_noise", c.fresh_sensor_noise);
  c.validate();
  return c;
}

Labels make_labels(
  const worldsim::GroundTruth & gt, const std::vector<worldsim::Proposal3D> & proposals3d,
  const std::vector<worldsim::Proposal2D> & proposals2d,
  const std::vector<worldsim::SceneObject> & objects, const std::vector<Box3D> & gt_boxes)
{
  if (gt.dominant_view.size() != proposals3d.size() || gt_boxes.size() != objects.size()) {
    throw worldsim::LabelError("labels do not align with proposals or objects");
  }
  Labels l;
  l.view_target = gt.dominant_view;
  l.view_sets = gt.view_labels;
  for (const auto & p : proposals2d) {
    if (!p.src_object) {
      throw worldsim::LabelError("2D proposal without ground-truth linkage");
    }
    l.src2d.push_back(*p.src_object);
  }
  for (const auto & p : proposals3d) {
    if (!p.src_object) {
      throw worldsim::LabelError("3D proposal without ground-truth linkage");
    }
    l.src3d.push_back(*p.src_object);
    int best = -1;
    double best_d = kAssignRadius;
    for (std::size_t k = 0; k < gt_boxes.size(); ++k) {
      const double d =
        std::hypot(gt_boxes[k].center.x - p.center.x, gt_boxes[k].center.y - p.center.y);
      if (d <= best_d) {
        best = static_cast<int>(k);
        best_d = d;
      }
    }
    l.class_target.push_back(best < 0 ? -1 : objects[static_cast<std::size_t>(best)].class_id);
    l.delta_target.push_back(
      best < 0 ? std::array<double, 7>{}
               : fusionhead::box_deltas(p.box(), gt_boxes[static_cast<std::size_t>(best)]));
    l.gt_box.push_back(best < 0 ? Box3D{} : gt_boxes[static_cast<std::size_t>(best)]);
  }
  return l;
}

Var combine_losses(Var det, Var view, Var pro, double lambda_view, double lambda_pro)
{
  const Var terms[] = {det, view, pro};
  const double weights[] = {1.0, lambda_view, lambda_pro};
  return diffnum::weighted_sum(terms, weights);
}

std::vector<std::size_t> block_targets(const model::MatchBlock & block, const Labels & labels)
{
  std::vector<std::size_t> targets;
  targets.reserve(block.rows.size());
  for (const long i : block.rows) {
    const int src = labels.src3d[static_cast<std::size_t>(i)];
    std::size_t col = block.cols.size();
    if (src != kFalsePositive) {
      for (std::size_t c = 0; c < block.cols.size(); ++c) {
        if (labels.src2d[static_cast<std::size_t>(block.cols[c])] == src) {
          col = c;
          break;
        }
      }
    }
    targets.push_back(col);
  }
  return targets;
}

LossTerms total_loss(
  Graph & g, const model::ForwardOutput & out, const Labels & labels, double lambda_view,
  double lambda_pro)
{
  if (labels.src3d.size() != out.num_proposals) {
    throw worldsim::LabelError("missing labels for some proposals");
  }
  const Var zero = g.constant(Tensor::matrix(1, 1));

  Var view = zero;
  if (out.view_logits) {
    std::vector<std::size_t> targets(labels.view_target.begin(), labels.view_target.end());
    view = diffnum::cross_entropy(*out.view_logits, targets);
  }

  Var pro = zero;
  std::vector<Var> block_losses;
  std::size_t rows = 0;
  for (const auto & block : out.blocks) {
    const auto targets = block_targets(block, labels);
    block_losses.push_back(diffnum::cross_entropy_sum(block.m_p, targets));
    rows += targets.size();
  }
  if (rows > 0) {
    const std::vector<double> w(block_losses.size(), 1.0 / static_cast<double>(rows));
    pro = diffnum::weighted_sum(block_losses, w);
  }

  Var det = zero;
  if (out.prediction) {
    std::vector<long> idx;
    std::vector<std::size_t> cls;
    for (std::size_t i = 0; i < labels.class_target.size(); ++i) {
      if (labels.class_target[i] >= 0) {
        idx.push_back(static_cast<long>(i));
        cls.push_back(static_cast<std::size_t>(labels.class_target[i]));
      }
    }
    if (!idx.empty()) {
      Tensor target = Tensor::matrix(idx.size(), fusionhead::kBoxDeltas);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto & d = labels.delta_target[static_cast<std::size_t>(idx[r])];
        std::copy(d.begin(), d.end(), target.row_span(r).begin());
      }
      const Var ce = diffnum::cross_entropy_sum(diffnum::gather_rows(out.prediction->class_logits, idx), cls);
      const Var l1 = diffnum::l1_sum(diffnum::gather_rows(out.prediction->deltas, idx), target);
      det = diffnum::scale(diffnum::add(ce, l1), 1.0 / static_cast<double>(idx.size()));
    }
  }

  LossTerms t;
  t.total = combine_losses(det, view, pro, lambda_view, lambda_pro);
  t.det = det.value().data[0];
  t.view = view.value().data[0];
  t.pro = pro.value().data[0];
  return t;
}

SceneSample simulate(
  const worldsim::Scene & scene, const worldsim::SensorConfig & sensor,
  const worldsim::DisturbanceSpec & disturb, std::uint64_t seed)
{
  return {worldsim::simulate_lidar_branch(scene, sensor, derive_seed(seed, 1)),
          worldsim::simulate_camera_branch(scene, disturb, sensor, derive_seed(seed, 2))};
}

diffnum::Checkpoint make_checkpoint(const TrainConfig & config, diffnum::ParamStore params)
{
  return {to_json(config), std::move(params)};
}

namespace
{

std::vector<Box3D> object_boxes(const worldsim::Scene & scene)
{
  std::vector<Box3D> boxes;
  for (const auto & o : scene.objects) {
    boxes.push_back(o.box());
  }
  return boxes;
}

}  // namespace

TrainResult train(
  const TrainConfig & config, const std::vector<worldsim::Scene> & scenes,
  const std::function<void(const EpochStats &)> & on_epoch)
{
  config.validate();
  if (scenes.empty()) {
    throw ConfigError("training needs at least one scene");
  }
  diffnum::ParamStore params = model::init_model(config.model, config.init_seed);
  TrainResult result;
  const worldsim::DisturbanceSpec clean;

  std::map<std::string, Tensor> acc;
  int in_batch = 0;
  auto flush = [&]() {
    if (in_batch == 0) {
      return;
    }
    for (auto & [name, grad] : acc) {
      for (double & x : grad.data) {
        x /= in_batch;
      }
    }
    diffnum::adamw_step(params, acc, config.lr, config.weight_decay);
    acc.clear();
    in_batch = 0;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.data_seed, 100, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochStats stats;
    stats.epoch = epoch;
    long counted = 0;
    for (const std::size_t k : order) {
      const auto & scene = scenes[k];
      const std::uint64_t round = config.fresh_sensor_noise ? static_cast<std::uint64_t>(epoch) + 1 : 0;
      const auto sample =
        simulate(scene, config.sensor, clean, derive_seed(config.data_seed, scene.seed, round));
      const auto gt = worldsim::make_gt_correspondences(
        scene, sample.lidar.proposals, sample.camera.proposals, scene.rig);
      const Labels labels = make_labels(
        gt, sample.lidar.proposals, sample.camera.proposals, scene.objects, object_boxes(scene));

      Graph g;
      const auto out = model::forward(g, params, config.model, sample.lidar, sample.camera);
      if (out.num_proposals == 0) {
        continue;
      }
      const LossTerms loss = total_loss(g, out, labels, config.lambda_view, config.lambda_pro);
      const double total = loss.total.value().data[0];
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", scene seed " << scene.seed
            << " (det=" << loss.det << ", view=" << loss.view << ", pro=" << loss.pro << ")";
        throw TrainingDiverged(msg.str());
      }
      g.backward(loss.total);
      auto grads = g.param_grads(params);
      if (acc.empty()) {
        acc = std::move(grads);
      } else {
        for (auto & [name, grad] : grads) {
          auto & dst = acc.at(name).data;
          for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += grad.data[i];
          }
        }
      }
      if (++in_batch == config.batch_size) {
        flush();
      }
      stats.total += total;
      stats.det += loss.det;
      stats.view += loss.view;
      stats.pro += loss.pro;
      ++counted;
    }
    flush();
    if (counted > 0) {
      stats.total /= counted;
      stats.det /= counted;
      stats.view /= counted;
      stats.pro /= counted;
    }
    result.history.push_back(stats);
    if (on_epoch) {
      on_epoch(stats);
    }
  }
  result.checkpoint = make_checkpoint(config, std::move(params));
  return result;
}

std::string matcher_name(Matcher m)
{
  switch (m) {
    case Matcher::fbm:
      return "fbm";
    case Matcher::baseline:
      return "baseline";
    case Matcher::lidar_only:
      return "lidar_only";
  }
  return "fbm";
}

Matcher matcher_from_name(const std::string & name)
{
  if (name == "fbm") {
    return Matcher::fbm;
  }
  if (name == "baseline") {
    return Matcher::baseline;
  }
  if (name == "lidar_only") {
    return Matcher::lidar_only;
  }
  throw ConfigError("unknown matcher '" + name + "'");
}

EvalCounts & EvalCounts::operator+=(const EvalCounts & o)
{
  scenes += o.scenes;
  proposals += o.proposals;
  top1_hits += o.top1_hits;
  top2_hits += o.top2_hits;
  no_view += o.no_view;
  match_predicted += o.match_predicted;
  match_correct += o.match_correct;
  match_positive += o.match_positive;
  det_assigned += o.det_assigned;
  det_class_correct += o.det_class_correct;
  det_iou_sum += o.det_iou_sum;
  loss_total += o.loss_total;
  loss_det += o.loss_det;
  loss_view += o.loss_view;
  loss_pro += o.loss_pro;
  return *this;
}

EvalReport finalize(const EvalCounts & c)
{
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
  EvalReport r;
  r.counts = c;
  r.top1_acc = ratio(c.top1_hits, c.proposals);
  r.top2_acc = ratio(c.top2_hits, c.proposals);
  r.no_view_rate = ratio(c.no_view, c.proposals);
  r.precision = ratio(c.match_correct, c.match_predicted);
  r.recall = ratio(c.match_correct, c.match_positive);
  r.f1 = ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.mean_iou = ratio(c.det_iou_sum, c.det_assigned);
  r.class_acc = ratio(c.det_class_correct, c.det_assigned);
  r.det_score = 0.5 * (r.mean_iou + r.class_acc);
  r.loss_total = ratio(c.loss_total, c.scenes);
  r.loss_det = ratio(c.loss_det, c.scenes);
  r.loss_view = ratio(c.loss_view, c.scenes);
  r.loss_pro = ratio(c.loss_pro, c.scenes);
  return r;
}

json to_json(const EvalReport & r)
{
  const auto & c = r.counts;
  return {{"counts",
           {{"scenes", c.scenes},
            {"proposals", c.proposals},
            {"top1_hits", c.top1_hits},
            {"top2_hits", c.top2_hits},
            {"no_view", c.no_view},
            {"match_predicted", c.match_predicted},
            {"match_correct", c.match_correct},
            {"match_positive", c.match_positive},
            {"det_assigned", c.det_assigned},
            {"det_class_correct", c.det_class_correct},
            {"det_iou_sum", c.det_iou_sum}}},
          {"top1_acc", r.top1_acc},
          {"top2_acc", r.top2_acc},
          {"no_view_rate", r.no_view_rate},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"mean_iou", r.mean_iou},
          {"class_acc", r.class_acc},
          {"det_score", r.det_score},
          {"loss_total", r.loss_total},
          {"loss_det", r.loss_det},
          {"loss_view", r.loss_view},
          {"loss_pro", r.loss_pro}};
}

namespace
{

void count_matches(
  EvalCounts & c, const Labels & labels, std::span<const int> matched2d)
{
  for (std::size_t i = 0; i < labels.src3d.size(); ++i) {
    const int src = labels.src3d[i];
    const bool positive = src != kFalsePositive &&
                          std::find(labels.src2d.begin(), labels.src2d.end(), src) != labels.src2d.end();
    c.match_positive += positive;
    if (matched2d[i] >= 0) {
      ++c.match_predicted;
      c.match_correct += src != kFalsePositive && labels.src2d[static_cast<std::size_t>(matched2d[i])] == src;
    }
  }
}

void count_detections(
  EvalCounts & c, const Labels & labels, const std::vector<worldsim::Proposal3D> & proposals,
  const std::vector<int> & classes, const std::vector<Box3D> & boxes)
{
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (labels.class_target[i] < 0) {
      continue;
    }
    ++c.det_assigned;
    c.det_class_correct += classes[i] == labels.class_target[i];
    c.det_iou_sum += bev_iou(boxes[i], labels.gt_box[i]);
  }
}

}  // namespace

EvalReport evaluate(
  const diffnum::Checkpoint & checkpoint, const std::vector<worldsim::Scene> & scenes,
  const worldsim::DisturbanceSpec & disturb, const EvalOptions & options)
{
  const model::ModelConfig mc = model::model_config_from_json(checkpoint.config.at("model"));
  EvalCounts total;
  for (const auto & scene : scenes) {
    const int NV = static_cast<int>(scene.rig.size());
    disturb.validate(NV);
    const std::uint64_t seed = derive_seed(options.seed, scene.seed);
    const SceneSample sample = simulate(scene, options.sensor, disturb, seed);
    const auto & P2 = sample.camera.proposals;
    const auto gt =
      worldsim::make_gt_correspondences(scene, sample.lidar.proposals, P2, scene.rig);

    worldsim::LidarOutput lidar = sample.lidar;
    std::vector<Box3D> gt_boxes = object_boxes(scene);
    if (disturb.misalign_rot != 0.0 || disturb.misalign_trans != 0.0) {
      const auto tf = worldsim::misalignment_transform(
        disturb.misalign_rot, disturb.misalign_trans, derive_seed(seed, 3));
      lidar = worldsim::apply_rigid(sample.lidar, tf);
      for (auto & b : gt_boxes) {
        const auto [x, y] = tf.apply(b.center.x, b.center.y);
        b.center.x = x;
        b.center.y = y;
        b.yaw = wrap_angle(b.yaw + tf.yaw);
      }
    }
    const Labels labels = make_labels(gt, lidar.proposals, P2, scene.objects, gt_boxes);
    const auto & P3 = lidar.proposals;

    EvalCounts c;
    c.scenes = 1;
    c.proposals = static_cast<long>(P3.size());
    std::vector<int> matched2d(P3.size(), -1);

    if (options.matcher == Matcher::baseline) {
      std::vector<CameraModel> rig = scene.rig;
      if (disturb.calib_trans_range > 0.0 || disturb.calib_rot_range > 0.0) {
        rig = worldsim::perturb_calibration(
          scene.rig, disturb.calib_trans_range, disturb.calib_rot_range, derive_seed(seed, 4));
      }
      const auto bm = baseline::baseline_match(P3, P2, rig);
      std::vector<Box3D> boxes;
      for (std::size_t i = 0; i < P3.size(); ++i) {
        const int view = bm[i].view < 0 ? NV : bm[i].view;
        c.top1_hits += view == labels.view_target[i];
        c.top2_hits += view == labels.view_target[i];
        c.no_view += bm[i].view < 0;
        matched2d[i] = bm[i].index2d;
        boxes.push_back(P3[i].box());
      }
      count_matches(c, labels, matched2d);
      count_detections(c, labels, P3, model::lidar_classes(P3), boxes);
      total += c;
      continue;
    }

    Graph g(false);
    const auto out = options.matcher == Matcher::lidar_only
                       ? model::forward_lidar_only(g, checkpoint.params, mc, lidar)
                       : model::forward(g, checkpoint.params, mc, lidar, sample.camera);
    if (out.num_proposals == 0) {
      total += c;
      continue;
    }
    if (out.view_logits) {
      const Tensor & logits = out.view_logits->value();
      for (std::size_t i = 0; i < P3.size(); ++i) {
        const auto ranked = viewmatch::ranked_classes(logits.row_span(i), sample.camera.features.present);
        c.top1_hits += ranked[0] == labels.view_target[i];
        c.top2_hits += ranked[0] == labels.view_target[i] ||
                       (ranked.size() > 1 && ranked[1] == labels.view_target[i]);
        c.no_view += out.assignment[i].no_view;
      }
    } else {
      c.no_view += c.proposals;
    }
    for (std::size_t i = 0; i < P3.size(); ++i) {
      matched2d[i] = out.matches[i].index2d;
    }
    count_matches(c, labels, matched2d);

    const Tensor & logits = out.prediction->class_logits.value();
    const Tensor & deltas = out.prediction->deltas.value();
    std::vector<int> classes;
    std::vector<Box3D> boxes;
    for (std::size_t i = 0; i < P3.size(); ++i) {
      const auto row = logits.row_span(i);
      classes.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
      boxes.push_back(fusionhead::apply_deltas(P3[i].box(), deltas.row_span(i)));
    }
    count_detections(c, labels, P3, classes, boxes);

    const LossTerms loss = total_loss(g, out, labels, options.lambda_view, options.lambda_pro);
    c.loss_total = loss.total.value().data[0];
    c.loss_det = loss.det;
    c.loss_view = loss.view;
    c.loss_pro = loss.pro;
    total += c;
  }
  return finalize(total);
}

}  // namespace boxmatch::trainloop
