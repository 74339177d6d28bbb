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

#include "boxmatch/nn.hpp"

#include <algorithm>
#include <cmath>

namespace boxmatch::diffnum
{

Var linear(Var x, Var weight, Var bias)
{
  if (x.cols() != weight.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " vs weight " +
                     weight.value().shape_str());
  }
  return add_bias(matmul(x, weight), bias);
}

Var mlp(Var x, std::span<const LinearVars> layers, Activation activation)
{
  if (layers.empty()) {
    throw ShapeError("mlp: at least one layer required");
  }
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, layers[i]);
    if (i + 1 < layers.size() && activation == Activation::relu) {
      h = relu(h);
    }
  }
  return h;
}

std::vector<Var> attention_weights(Var q, Var k, const Tensor * mask, int heads)
{
  const std::size_t dim = q.cols();
  if (heads <= 0 || dim % static_cast<std::size_t>(heads) != 0) {
    throw ConfigError("attention: head count " + std::to_string(heads) +
                      " does not divide channel dim " + std::to_string(dim));
  }
  if (k.cols() != dim) {
    throw ShapeError("attention: query/key widths differ");
  }
  if (mask != nullptr && (mask->rows() != q.rows() || mask->cols() != k.rows())) {
    throw ShapeError("attention: mask must be " + std::to_string(q.rows()) + "x" +
                     std::to_string(k.rows()));
  }
  // Shifting each mask row to a zero maximum changes nothing mathematically
  // but keeps fully masked rows from rounding the scores away.
  Tensor shifted;
  if (mask != nullptr) {
    shifted = *mask;
    for (std::size_t r = 0; r < shifted.rows(); ++r) {
      auto row = shifted.row_span(r);
      const double top = row.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
      if (std::isfinite(top)) {
        for (double & v : row) {
          v -= top;
        }
      }
    }
  }
  const std::size_t d_head = dim / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * d_head, (h + 1) * d_head);
    Var kh = heads == 1 ? k : slice_cols(k, h * d_head, (h + 1) * d_head);
    Var scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask != nullptr) {
      scores = add_constant(scores, shifted);
    }
    out.push_back(softmax(scores, 1));
  }
  return out;
}

Var attention(Var q, Var k, Var v, const Tensor * mask, int heads)
{
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: key/value row counts differ");
  }
  if (heads > 0 && v.cols() % static_cast<std::size_t>(heads) != 0) {
    throw ConfigError("attention: head count does not divide value width");
  }
  auto weights = attention_weights(q, k, mask, heads);
  const std::size_t dv_head = v.cols() / weights.size();
  std::vector<Var> outs;
  outs.reserve(weights.size());
  for (std::size_t h = 0; h < weights.size(); ++h) {
    Var vh = weights.size() == 1 ? v : slice_cols(v, h * dv_head, (h + 1) * dv_head);
    outs.push_back(matmul(weights[h], vh));
  }
  return outs.size() == 1 ? outs.front() : concat_cols(outs);
}

Var multi_head_attention(
  Var query, Var key, Var value, const Tensor * mask, const AttentionVars & p, int heads)
{
  Var q = linear(query, p.query);
  Var k = linear(key, p.key);
  Var v = linear(value, p.value);
  return linear(attention(q, k, v, mask, heads), p.out);
}

Var decoder_block(Var q, Var k, Var v, const Tensor * mask, const DecoderVars & p, int heads)
{
  if (q.rows() == 0) {
    throw ShapeError("decoder_block: at least one query row required");
  }
  Var x = q;
  x = layer_norm(add(x, multi_head_attention(x, x, x, nullptr, p.self_attn, heads)),
                 p.norm1.gamma, p.norm1.beta);
  x = layer_norm(add(x, multi_head_attention(x, k, v, mask, p.cross_attn, heads)),
                 p.norm2.gamma, p.norm2.beta);
  const LinearVars ffn[] = {p.ffn1, p.ffn2};
  x = layer_norm(add(x, mlp(x, ffn)), p.norm3.gamma, p.norm3.beta);
  return x;
}

void init_linear(
  ParamStore & store, const std::string & prefix, std::size_t d_in, std::size_t d_out,
  std::mt19937_64 & rng)
{
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  store.add_uniform(prefix + ".weight", {d_in, d_out}, bound, rng);
  store.add_uniform(prefix + ".bias", {1, d_out}, bound, rng);
}

void init_mlp(
  ParamStore & store, const std::string & prefix, std::span<const std::size_t> dims,
  std::mt19937_64 & rng)
{
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    init_linear(store, prefix + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

void init_attention(
  ParamStore & store, const std::string & prefix, std::size_t dim, std::mt19937_64 & rng)
{
  for (const char * part : {"q", "k", "v", "o"}) {
    init_linear(store, prefix + "." + part, dim, dim, rng);
  }
}

void init_layer_norm(ParamStore & store, const std::string & prefix, std::size_t dim)
{
  store.add(prefix + ".gamma", Tensor({1, dim}, 1.0));
  store.add(prefix + ".beta", Tensor({1, dim}, 0.0));
}

void init_decoder(
  ParamStore & store, const std::string & prefix, std::size_t dim, std::size_t ffn_dim,
  std::mt19937_64 & rng)
{
  init_attention(store, prefix + ".self", dim, rng);
  init_attention(store, prefix + ".cross", dim, rng);
  init_linear(store, prefix + ".ffn1", dim, ffn_dim, rng);
  init_linear(store, prefix + ".ffn2", ffn_dim, dim, rng);
  init_layer_norm(store, prefix + ".norm1", dim);
  init_layer_norm(store, prefix + ".norm2", dim);
  init_layer_norm(store, prefix + ".norm3", dim);
}

LinearVars load_linear(Graph & g, const ParamStore & store, const std::string & prefix)
{
  return {g.param(store, prefix + ".weight"), g.param(store, prefix + ".bias")};
}

std::vector<LinearVars> load_mlp(
  Graph & g, const ParamStore & store, const std::string & prefix, std::size_t layers)
{
  std::vector<LinearVars> out;
  out.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    out.push_back(load_linear(g, store, prefix + "." + std::to_string(i)));
  }
  return out;
}

AttentionVars load_attention(Graph & g, const ParamStore & store, const std::string & prefix)
{
  return {
    load_linear(g, store, prefix + ".q"),
    load_linear(g, store, prefix + ".k"),
    load_linear(g, store, prefix + ".v"),
    load_linear(g, store, prefix + ".o"),
  };
}

LayerNormVars load_layer_norm(Graph & g, const ParamStore & store, const std::string & prefix)
{
  return {g.param(store, prefix + ".gamma"), g.param(store, prefix + ".beta")};
}

DecoderVars load_decoder(Graph & g, const ParamStore & store, const std::string & prefix)
{
  return {
    load_attention(g, store, prefix + ".self"),
    load_attention(g, store, prefix + ".cross"),
    load_linear(g, store, prefix + ".ffn1"),
    load_linear(g, store, prefix + ".ffn2"),
    load_layer_norm(g, store, prefix + ".norm1"),
    load_layer_norm(g, store, prefix + ".norm2"),
    load_layer_norm(g, store, prefix + ".norm3"),
  };
}

}  // namespace boxmatch::diffnum
