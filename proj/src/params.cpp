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

#include "boxmatch/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace boxmatch::diffnum
{

void ParamStore::add(const std::string & name, Tensor value)
{
  if (entries_.count(name) != 0) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  Entry e;
  e.m = Tensor(value.shape, 0.0);
  e.v = Tensor(value.shape, 0.0);
  e.value = std::move(value);
  entries_.emplace(name, std::move(e));
}

void ParamStore::add_uniform(
  const std::string & name, std::vector<std::size_t> shape, double bound, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double & v : t.data) {
    v = dist(rng);
  }
  add(name, std::move(t));
}

const Tensor & ParamStore::get(const std::string & name) const
{
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second.value;
}

Tensor & ParamStore::get_mut(const std::string & name)
{
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second.value;
}

std::vector<std::string> ParamStore::names() const
{
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto & [name, e] : entries_) {
    out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::num_values() const
{
  std::size_t n = 0;
  for (const auto & [name, e] : entries_) {
    n += e.value.size();
  }
  return n;
}

nlohmann::json ParamStore::to_json() const
{
  nlohmann::json out = nlohmann::json::object();
  for (const auto & [name, e] : entries_) {
    out[name] = {{"shape", e.value.shape}, {"values", e.value.data}};
  }
  return out;
}

ParamStore ParamStore::from_json(const nlohmann::json & j)
{
  ParamStore store;
  for (const auto & [name, entry] : j.items()) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    auto values = entry.at("values").get<std::vector<double>>();
    try {
      store.add(name, Tensor(std::move(shape), std::move(values)));
    } catch (const ShapeError & e) {
      throw CheckpointError("parameter " + name + ": " + e.what());
    }
  }
  return store;
}

void adamw_step(
  ParamStore & store, const std::map<std::string, Tensor> & grads, double lr, double weight_decay)
{
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  for (const auto & [name, e] : store.entries_) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      throw std::out_of_range("adamw_step: missing gradient for " + name);
    }
    if (it->second.data.size() != e.value.data.size()) {
      throw ShapeError("adamw_step: gradient shape mismatch for " + name);
    }
  }
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto & [name, e] : store.entries_) {
    const auto & g = grads.at(name).data;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      double & p = e.value.data[i];
      double & m = e.m.data[i];
      double & v = e.v.data[i];
      p *= 1.0 - lr * weight_decay;
      m = beta1 * m + (1.0 - beta1) * g[i];
      v = beta2 * v + (1.0 - beta2) * g[i] * g[i];
      p -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    }
  }
}

nlohmann::json checkpoint_to_json(const Checkpoint & ckpt)
{
  return {
    {"format_version", kCheckpointVersion},
    {"config", ckpt.config},
    {"params", ckpt.params.to_json()},
  };
}

Checkpoint checkpoint_from_json(const nlohmann::json & j)
{
  if (!j.contains("format_version")) {
    throw CheckpointError("checkpoint lacks format_version");
  }
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = j.at("config");
  ckpt.params = ParamStore::from_json(j.at("params"));
  return ckpt;
}

void save_checkpoint(const std::string & path, const Checkpoint & ckpt)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) {
    throw std::runtime_error("failed writing checkpoint: " + path);
  }
}

Checkpoint load_checkpoint(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint: " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    throw CheckpointError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace boxmatch::diffnum
