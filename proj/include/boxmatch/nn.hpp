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

#ifndef BOXMATCH__NN_HPP_
#define BOXMATCH__NN_HPP_

#include "boxmatch/graph.hpp"
#include "boxmatch/params.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace boxmatch::diffnum
{

struct LinearVars
{
  Var weight;  // [d_in, d_out]
  Var bias;    // [1, d_out]
};

enum class Activation { relu, identity };

/// y = xW + b
Var linear(Var x, Var weight, Var bias);
inline Var linear(Var x, const LinearVars & l) { return linear(x, l.weight, l.bias); }

/// Linear layers with `activation` between them (none after the last).
Var mlp(Var x, std::span<const LinearVars> layers, Activation activation = Activation::relu);

/// Per-head softmax(q_h·k_hᵀ/√d_head + mask), one n_q × n_k matrix per head.
std::vector<Var> attention_weights(Var q, Var k, const Tensor * mask, int heads = 1);

/// Scaled dot-product attention on already-projected q, k, v.
/// Channels are split into `heads` groups; each group uses 1/sqrt(d_head).
/// `mask` (n_q × n_k, additive) may be null.
Var attention(Var q, Var k, Var v, const Tensor * mask, int heads = 1);

struct AttentionVars
{
  LinearVars query;
  LinearVars key;
  LinearVars value;
  LinearVars out;
};

Var multi_head_attention(
  Var query, Var key, Var value, const Tensor * mask, const AttentionVars & p, int heads);

struct LayerNormVars
{
  Var gamma;
  Var beta;
};

struct DecoderVars
{
  AttentionVars self_attn;
  AttentionVars cross_attn;
  LinearVars ffn1;
  LinearVars ffn2;
  LayerNormVars norm1;
  LayerNormVars norm2;
  LayerNormVars norm3;
};

/// Post-norm decoder layer: self-attention over q, masked cross-attention to
/// (k, v), then a two-layer ReLU feed-forward. Each sublayer is followed by a
/// residual add and layer normalization.
Var decoder_block(Var q, Var k, Var v, const Tensor * mask, const DecoderVars & p, int heads);

// ---- parameter registration and lookup -----------------------------------
// Weight and bias of a linear layer are drawn from U(−1/√fan_in, 1/√fan_in).

void init_linear(
  ParamStore & store, const std::string & prefix, std::size_t d_in, std::size_t d_out,
  std::mt19937_64 & rng);
void init_mlp(
  ParamStore & store, const std::string & prefix, std::span<const std::size_t> dims,
  std::mt19937_64 & rng);
void init_attention(
  ParamStore & store, const std::string & prefix, std::size_t dim, std::mt19937_64 & rng);
void init_layer_norm(ParamStore & store, const std::string & prefix, std::size_t dim);
void init_decoder(
  ParamStore & store, const std::string & prefix, std::size_t dim, std::size_t ffn_dim,
  std::mt19937_64 & rng);

LinearVars load_linear(Graph & g, const ParamStore & store, const std::string & prefix);
std::vector<LinearVars> load_mlp(
  Graph & g, const ParamStore & store, const std::string & prefix, std::size_t layers);
AttentionVars load_attention(Graph & g, const ParamStore & store, const std::string & prefix);
LayerNormVars load_layer_norm(Graph & g, const ParamStore & store, const std::string & prefix);
DecoderVars load_decoder(Graph & g, const ParamStore & store, const std::string & prefix);

}  // namespace boxmatch::diffnum

#endif  // BOXMATCH__NN_HPP_
