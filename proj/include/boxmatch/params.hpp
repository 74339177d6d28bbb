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

#ifndef BOXMATCH__PARAMS_HPP_
#define BOXMATCH__PARAMS_HPP_

#include "boxmatch/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace boxmatch::diffnum
{

class CheckpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Named learnable tensors plus AdamW moments.
class ParamStore
{
public:
  void add(const std::string & name, Tensor value);
  /// Adds a tensor drawn from U(−bound, bound).
  void add_uniform(
    const std::string & name, std::vector<std::size_t> shape, double bound, std::mt19937_64 & rng);

  bool contains(const std::string & name) const { return entries_.count(name) != 0; }
  const Tensor & get(const std::string & name) const;
  Tensor & get_mut(const std::string & name);
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t num_values() const;
  std::int64_t step() const { return step_; }

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json & j);

  friend void adamw_step(
    ParamStore & store, const std::map<std::string, Tensor> & grads, double lr,
    double weight_decay);

private:
  struct Entry
  {
    Tensor value;
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

/// Decoupled weight decay Adam, β = (0.9, 0.999), ε = 1e-8, bias corrected.
void adamw_step(
  ParamStore & store, const std::map<std::string, Tensor> & grads, double lr, double weight_decay);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint
{
  nlohmann::json config;
  ParamStore params;
};

nlohmann::json checkpoint_to_json(const Checkpoint & ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json & j);
void save_checkpoint(const std::string & path, const Checkpoint & ckpt);
Checkpoint load_checkpoint(const std::string & path);

}  // namespace boxmatch::diffnum

#endif  // BOXMATCH__PARAMS_HPP_
