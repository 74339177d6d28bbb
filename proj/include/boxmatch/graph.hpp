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

#ifndef BOXMATCH__GRAPH_HPP_
#define BOXMATCH__GRAPH_HPP_

#include "boxmatch/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace boxmatch::diffnum
{

class Graph;
class ParamStore;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var
{
  Graph * graph = nullptr;
  std::size_t id = 0;

  const Tensor & value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in topological order, so a single
/// reverse sweep propagates adjoints.
class Graph
{
public:
  using Backward = std::function<void(Graph &, const Tensor & out_grad)>;

  explicit Graph(bool track_gradients = true) : tracking_(track_gradients) {}
  Graph(const Graph &) = delete;
  Graph & operator=(const Graph &) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a named parameter. Repeated lookups return the same node.
  Var param(const ParamStore & store, const std::string & name);

  const Tensor & value(Var v) const { return nodes_[v.id].value; }
  /// Accumulated adjoint; a zero tensor of matching shape when nothing flowed.
  Tensor grad(Var v) const;

  void backward(Var loss);

  /// Gradient for every parameter in `store`, zero-filled for unused ones.
  std::map<std::string, Tensor> param_grads(const ParamStore & store) const;

  bool tracking() const { return tracking_; }
  std::size_t size() const { return nodes_.size(); }

  /// Hash of every sign pattern seen at non-smooth points (ReLU, |x|).
  /// Finite differences are only meaningful when it does not change.
  std::uint64_t kink_signature() const { return kink_hash_; }

  // Used by op implementations.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor & grad_ref(Var v);
  void note_signs(std::span<const double> values);

private:
  struct Node
  {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };

  bool tracking_;
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> param_nodes_;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
};

// ---- primitive ops -------------------------------------------------------

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a length-m row to every row of an n×m matrix.
Var add_bias(Var a, Var bias);
Var add_constant(Var a, const Tensor & c);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
/// Numerically stable softmax along `axis` (0 = down columns, 1 = along rows).
Var softmax(Var a, int axis = 1);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Row gather; index -1 produces a zero row.
Var gather_rows(Var a, std::span<const long> index);

struct EntryRef
{
  std::size_t out_row;
  std::size_t row;
  std::size_t col;
};
/// n_out×1 column whose listed rows copy single entries of `a`; others are 0.
Var gather_entries(Var a, std::size_t n_out, std::span<const EntryRef> entries);
/// Scales row i of `a` (n×m) by s(i,0).
Var mul_rows(Var a, Var s);
Var sum(Var a);
Var mean(Var a);
/// Σ_k weight_k · term_k over 1×1 terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

/// Sum over rows of −log softmax(logits)[target].
Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets);
/// Mean over rows of −log softmax(logits)[target].
Var cross_entropy(Var logits, std::span<const std::size_t> targets);
/// Σ |pred − target| over all entries.
Var l1_sum(Var pred, const Tensor & target);

}  // namespace boxmatch::diffnum

#endif  // BOXMATCH__GRAPH_HPP_
