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

#include "boxmatch/graph.hpp"

#include "boxmatch/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace boxmatch::diffnum
{

const Tensor & Var::value() const
{
  return graph->value(*this);
}

Var Graph::constant(Tensor value)
{
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value)
{
  Node n;
  n.value = std::move(value);
  n.needs_grad = tracking_;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(const ParamStore & store, const std::string & name)
{
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Var v = variable(store.get(name));
  param_nodes_.emplace(name, v.id);
  return v;
}

Tensor Graph::grad(Var v) const
{
  const Node & n = nodes_[v.id];
  if (n.grad.data.empty() && !n.value.data.empty()) {
    return Tensor(n.value.shape, 0.0);
  }
  return n.grad;
}

Tensor & Graph::grad_ref(Var v)
{
  Node & n = nodes_[v.id];
  if (n.grad.data.size() != n.value.data.size()) {
    n.grad = Tensor(n.value.shape, 0.0);
  }
  return n.grad;
}

void Graph::note_signs(std::span<const double> values)
{
  if (!tracking_) {
    return;
  }
  std::uint64_t h = kink_hash_;
  for (double v : values) {
    h ^= v > 0.0 ? 0x9e3779b97f4a7c15ULL : 0x5bd1e995ULL;
    h *= 1099511628211ULL;
  }
  kink_hash_ = h;
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, Backward backward)
{
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backward backward)
{
  Node n;
  n.value = std::move(value);
  if (tracking_) {
    for (const Var & p : parents) {
      if (p.graph != this) {
        throw std::logic_error("mixing variables from different graphs");
      }
      n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    }
    if (n.needs_grad) {
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss)
{
  if (!tracking_) {
    throw std::logic_error("backward on a graph built without gradient tracking");
  }
  if (value(loss).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + value(loss).shape_str());
  }
  grad_ref(loss).data[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node & n = nodes_[i];
    if (n.backward && !n.grad.data.empty()) {
      n.backward(*this, n.grad);
    }
  }
}

std::map<std::string, Tensor> Graph::param_grads(const ParamStore & store) const
{
  std::map<std::string, Tensor> out;
  for (const auto & name : store.names()) {
    auto it = param_nodes_.find(name);
    if (it == param_nodes_.end()) {
      out.emplace(name, Tensor(store.get(name).shape, 0.0));
    } else {
      out.emplace(name, grad(Var{const_cast<Graph *>(this), it->second}));
    }
  }
  return out;
}

namespace
{

Graph & graph_of(Var a)
{
  if (a.graph == nullptr) {
    throw std::logic_error("uninitialized Var");
  }
  return *a.graph;
}

void require_same_shape(const Tensor & a, const Tensor & b, const char * op)
{
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

// out[n,m] += a[n,k] · b[k,m]
void gemm_nn(const double * a, const double * b, double * out, std::size_t n, std::size_t k,
             std::size_t m)
{
  for (std::size_t i = 0; i < n; ++i) {
    double * o = out + i * m;
    const double * ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) {
        continue;
      }
      const double * bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        o[j] += s * bp[j];
      }
    }
  }
}

// out[n,m] += a[n,k] · b[m,k]ᵀ
void gemm_nt(const double * a, const double * b, double * out, std::size_t n, std::size_t k,
             std::size_t m)
{
  for (std::size_t i = 0; i < n; ++i) {
    const double * ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double * bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += ai[p] * bj[p];
      }
      out[i * m + j] += acc;
    }
  }
}

// out[k,m] += a[n,k]ᵀ · b[n,m]
void gemm_tn(const double * a, const double * b, double * out, std::size_t n, std::size_t k,
             std::size_t m)
{
  for (std::size_t i = 0; i < n; ++i) {
    const double * ai = a + i * k;
    const double * bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) {
        continue;
      }
      double * o = out + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        o[j] += s * bi[j];
      }
    }
  }
}

}  // namespace

Var matmul(Var a, Var b)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const Tensor & B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw ShapeError("matmul: " + A.shape_str() + " x " + B.shape_str());
  }
  Tensor out = Tensor::matrix(n, m);
  gemm_nn(A.data.data(), B.data.data(), out.data.data(), n, k, m);
  return g.record(std::move(out), {a, b}, [a, b, n, k, m](Graph & g, const Tensor & go) {
    if (g.needs_grad(a)) {
      gemm_nt(go.data.data(), g.value(b).data.data(), g.grad_ref(a).data.data(), n, m, k);
    }
    if (g.needs_grad(b)) {
      gemm_tn(g.value(a).data.data(), go.data.data(), g.grad_ref(b).data.data(), n, k, m);
    }
  });
}

Var matmul_nt(Var a, Var b)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const Tensor & B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  if (B.cols() != k) {
    throw ShapeError("matmul_nt: " + A.shape_str() + " x " + B.shape_str() + "^T");
  }
  Tensor out = Tensor::matrix(n, m);
  gemm_nt(A.data.data(), B.data.data(), out.data.data(), n, k, m);
  return g.record(std::move(out), {a, b}, [a, b, n, k, m](Graph & g, const Tensor & go) {
    if (g.needs_grad(a)) {
      // dA[n,k] = go[n,m] · B[m,k]
      gemm_nn(go.data.data(), g.value(b).data.data(), g.grad_ref(a).data.data(), n, m, k);
    }
    if (g.needs_grad(b)) {
      // dB[m,k] = goᵀ[m,n] · A[n,k]
      gemm_tn(go.data.data(), g.value(a).data.data(), g.grad_ref(b).data.data(), n, m, k);
    }
  });
}

Var add(Var a, Var b)
{
  Graph & g = graph_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto & bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] += bd[i];
  }
  return g.record(std::move(out), {a, b}, [a, b](Graph & g, const Tensor & go) {
    for (Var p : {a, b}) {
      if (g.needs_grad(p)) {
        auto & gp = g.grad_ref(p).data;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          gp[i] += go.data[i];
        }
      }
    }
  });
}

Var add_bias(Var a, Var bias)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (bias.value().size() != m) {
    throw ShapeError("add_bias: " + A.shape_str() + " + " + bias.value().shape_str());
  }
  Tensor out = A;
  const auto & bd = bias.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out.data[i * m + j] += bd[j];
    }
  }
  return g.record(std::move(out), {a, bias}, [a, bias, n, m](Graph & g, const Tensor & go) {
    if (g.needs_grad(a)) {
      auto & ga = g.grad_ref(a).data;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += go.data[i];
      }
    }
    if (g.needs_grad(bias)) {
      auto & gb = g.grad_ref(bias).data;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          gb[j] += go.data[i * m + j];
        }
      }
    }
  });
}

Var add_constant(Var a, const Tensor & c)
{
  return add(a, graph_of(a).constant(c));
}

Var mul(Var a, Var b)
{
  Graph & g = graph_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto & bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] *= bd[i];
  }
  return g.record(std::move(out), {a, b}, [a, b](Graph & g, const Tensor & go) {
    if (g.needs_grad(a)) {
      auto & ga = g.grad_ref(a).data;
      const auto & bd = g.value(b).data;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += go.data[i] * bd[i];
      }
    }
    if (g.needs_grad(b)) {
      auto & gb = g.grad_ref(b).data;
      const auto & ad = g.value(a).data;
      for (std::size_t i = 0; i < gb.size(); ++i) {
        gb[i] += go.data[i] * ad[i];
      }
    }
  });
}

Var scale(Var a, double s)
{
  Graph & g = graph_of(a);
  Tensor out = a.value();
  for (double & v : out.data) {
    v *= s;
  }
  return g.record(std::move(out), {a}, [a, s](Graph & g, const Tensor & go) {
    auto & ga = g.grad_ref(a).data;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += s * go.data[i];
    }
  });
}

Var relu(Var a)
{
  Graph & g = graph_of(a);
  Tensor out = a.value();
  g.note_signs(out.data);
  for (double & v : out.data) {
    v = v > 0.0 ? v : 0.0;
  }
  return g.record(std::move(out), {a}, [a](Graph & g, const Tensor & go) {
    auto & ga = g.grad_ref(a).data;
    const auto & ad = g.value(a).data;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (ad[i] > 0.0) {
        ga[i] += go.data[i];
      }
    }
  });
}

Var softmax(Var a, int axis)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (axis != 0 && axis != 1) {
    throw ShapeError("softmax: axis must be 0 or 1");
  }
  // Treat axis 0 as rows of the transpose: stride/count describe one slice.
  const std::size_t slices = axis == 1 ? n : m;
  const std::size_t len = axis == 1 ? m : n;
  const std::size_t stride = axis == 1 ? 1 : m;
  auto base = [=](std::size_t s) { return axis == 1 ? s * m : s; };

  Tensor out = Tensor::matrix(n, m);
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t b = base(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      mx = std::max(mx, A.data[b + j * stride]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double e = std::exp(A.data[b + j * stride] - mx);
      out.data[b + j * stride] = e;
      z += e;
    }
    for (std::size_t j = 0; j < len; ++j) {
      out.data[b + j * stride] /= z;
    }
  }
  Var res{};
  res = g.record(std::move(out), {a},
                 [a, slices, len, stride, base, id = g.size()](Graph & g, const Tensor & go) {
                   const Tensor & y = g.value(Var{&g, id});
                   auto & ga = g.grad_ref(a).data;
                   for (std::size_t s = 0; s < slices; ++s) {
                     const std::size_t b = base(s);
                     double dot = 0.0;
                     for (std::size_t j = 0; j < len; ++j) {
                       dot += go.data[b + j * stride] * y.data[b + j * stride];
                     }
                     for (std::size_t j = 0; j < len; ++j) {
                       const std::size_t idx = b + j * stride;
                       ga[idx] += y.data[idx] * (go.data[idx] - dot);
                     }
                   }
                 });
  return res;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps)
{
  Graph & g = graph_of(x);
  const Tensor & X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (gamma.value().size() != m || beta.value().size() != m) {
    throw ShapeError("layer_norm: affine parameters must have length " + std::to_string(m));
  }
  Tensor xhat = Tensor::matrix(n, m);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      mu += X.data[i * m + j];
    }
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = X.data[i * m + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat.data[i * m + j] = (X.data[i * m + j] - mu) * inv_std[i];
    }
  }
  Tensor out = Tensor::matrix(n, m);
  const auto & gd = gamma.value().data;
  const auto & bd = beta.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out.data[i * m + j] = xhat.data[i * m + j] * gd[j] + bd[j];
    }
  }
  return g.record(
    std::move(out), {x, gamma, beta},
    [x, gamma, beta, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](
      Graph & g, const Tensor & go) {
      const auto & gd = g.value(gamma).data;
      if (g.needs_grad(gamma)) {
        auto & gg = g.grad_ref(gamma).data;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            gg[j] += go.data[i * m + j] * xhat.data[i * m + j];
          }
        }
      }
      if (g.needs_grad(beta)) {
        auto & gb = g.grad_ref(beta).data;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            gb[j] += go.data[i * m + j];
          }
        }
      }
      if (g.needs_grad(x)) {
        auto & gx = g.grad_ref(x).data;
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double dxh = go.data[i * m + j] * gd[j];
            s1 += dxh;
            s2 += dxh * xhat.data[i * m + j];
          }
          for (std::size_t j = 0; j < m; ++j) {
            const double dxh = go.data[i * m + j] * gd[j];
            gx[i * m + j] +=
              inv_std[i] * (dxh - inv_m * s1 - xhat.data[i * m + j] * inv_m * s2);
          }
        }
      }
    });
}

Var concat_cols(std::span<const Var> parts)
{
  if (parts.empty()) {
    throw ShapeError("concat_cols: no inputs");
  }
  Graph & g = graph_of(parts.front());
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var & p : parts) {
    if (p.rows() != n) {
      throw ShapeError("concat_cols: row count mismatch");
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor & P = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(P.data.data() + i * widths[k], widths[k], out.data.data() + i * total + off);
    }
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [ps, widths, n, total](Graph & g, const Tensor & go) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (g.needs_grad(ps[k])) {
        auto & gp = g.grad_ref(ps[k]).data;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            gp[i * widths[k] + j] += go.data[i * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts)
{
  if (parts.empty()) {
    throw ShapeError("concat_rows: no inputs");
  }
  Graph & g = graph_of(parts.front());
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var & p : parts) {
    if (p.cols() != m) {
      throw ShapeError("concat_rows: column count mismatch");
    }
    offsets.push_back(total);
    total += p.rows();
  }
  Tensor out = Tensor::matrix(total, m);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto & d = parts[k].value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + static_cast<long>(offsets[k] * m));
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [ps, offsets, m](Graph & g, const Tensor & go) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (g.needs_grad(ps[k])) {
        auto & gp = g.grad_ref(ps[k]).data;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          gp[i] += go.data[offsets[k] * m + i];
        }
      }
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (begin > end || end > m) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(A.data.data() + i * m + begin, w, out.data.data() + i * w);
  }
  return g.record(std::move(out), {a}, [a, n, m, w, begin](Graph & g, const Tensor & go) {
    auto & ga = g.grad_ref(a).data;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        ga[i * m + begin + j] += go.data[i * w + j];
      }
    }
  });
}

Var gather_rows(Var a, std::span<const long> index)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const std::size_t m = A.cols();
  const long n_src = static_cast<long>(A.rows());
  Tensor out = Tensor::matrix(index.size(), m);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const long r = index[i];
    if (r < -1 || r >= n_src) {
      throw ShapeError("gather_rows: index out of range");
    }
    if (r >= 0) {
      std::copy_n(A.data.data() + static_cast<std::size_t>(r) * m, m, out.data.data() + i * m);
    }
  }
  std::vector<long> idx(index.begin(), index.end());
  return g.record(std::move(out), {a}, [a, idx, m](Graph & g, const Tensor & go) {
    auto & ga = g.grad_ref(a).data;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) {
        continue;
      }
      const std::size_t r = static_cast<std::size_t>(idx[i]);
      for (std::size_t j = 0; j < m; ++j) {
        ga[r * m + j] += go.data[i * m + j];
      }
    }
  });
}

Var gather_entries(Var a, std::size_t n_out, std::span<const EntryRef> entries)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  Tensor out = Tensor::matrix(n_out, 1);
  for (const auto & e : entries) {
    if (e.out_row >= n_out || e.row >= A.rows() || e.col >= A.cols()) {
      throw ShapeError("gather_entries: index out of range");
    }
    out.data[e.out_row] = A(e.row, e.col);
  }
  std::vector<EntryRef> es(entries.begin(), entries.end());
  const std::size_t m = A.cols();
  return g.record(std::move(out), {a}, [a, es, m](Graph & g, const Tensor & go) {
    auto & ga = g.grad_ref(a).data;
    for (const auto & e : es) {
      ga[e.row * m + e.col] += go.data[e.out_row];
    }
  });
}

Var mul_rows(Var a, Var s)
{
  Graph & g = graph_of(a);
  const Tensor & A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (s.value().size() != n) {
    throw ShapeError("mul_rows: need one scale per row");
  }
  Tensor out = A;
  const auto & sd = s.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out.data[i * m + j] *= sd[i];
    }
  }
  return g.record(std::move(out), {a, s}, [a, s, n, m](Graph & g, const Tensor & go) {
    if (g.needs_grad(a)) {
      auto & ga = g.grad_ref(a).data;
      const auto & sd = g.value(s).data;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          ga[i * m + j] += go.data[i * m + j] * sd[i];
        }
      }
    }
    if (g.needs_grad(s)) {
      auto & gs = g.grad_ref(s).data;
      const auto & ad = g.value(a).data;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          acc += go.data[i * m + j] * ad[i * m + j];
        }
        gs[i] += acc;
      }
    }
  });
}

Var sum(Var a)
{
  Graph & g = graph_of(a);
  double acc = 0.0;
  for (double v : a.value().data) {
    acc += v;
  }
  return g.record(Tensor::matrix(1, 1, acc), {a}, [a](Graph & g, const Tensor & go) {
    for (double & v : g.grad_ref(a).data) {
      v += go.data[0];
    }
  });
}

Var mean(Var a)
{
  const std::size_t n = a.value().size();
  return scale(sum(a), n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights)
{
  if (terms.empty() || terms.size() != weights.size()) {
    throw ShapeError("weighted_sum: need one weight per term");
  }
  Graph & g = graph_of(terms.front());
  double acc = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].value().size() != 1) {
      throw ShapeError("weighted_sum: terms must be scalars");
    }
    acc += weights[k] * terms[k].value().data[0];
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return g.record(Tensor::matrix(1, 1, acc), terms, [ts, ws](Graph & g, const Tensor & go) {
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (g.needs_grad(ts[k])) {
        g.grad_ref(ts[k]).data[0] += ws[k] * go.data[0];
      }
    }
  });
}

Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets)
{
  Graph & g = graph_of(logits);
  const Tensor & L = logits.value();
  const std::size_t n = L.rows(), c = L.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: one target per row required");
  }
  Tensor probs = Tensor::matrix(n, c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " outside [0," + std::to_string(c) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      mx = std::max(mx, L(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      z += std::exp(L(i, j) - mx);
    }
    const double lse = mx + std::log(z);
    total += lse - L(i, targets[i]);
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(L(i, j) - lse);
    }
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return g.record(
    Tensor::matrix(1, 1, total), {logits},
    [logits, t, probs = std::move(probs), n, c](Graph & g, const Tensor & go) {
      auto & gl = g.grad_ref(logits).data;
      const double s = go.data[0];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          gl[i * c + j] += s * (probs.data[i * c + j] - (j == t[i] ? 1.0 : 0.0));
        }
      }
    });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets)
{
  const std::size_t n = logits.rows();
  Var s = cross_entropy_sum(logits, targets);
  return scale(s, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

Var l1_sum(Var pred, const Tensor & target)
{
  Graph & g = graph_of(pred);
  require_same_shape(pred.value(), target, "l1_sum");
  const auto & p = pred.value().data;
  std::vector<double> diff(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    diff[i] = p[i] - target.data[i];
    total += std::abs(diff[i]);
  }
  g.note_signs(diff);
  return g.record(Tensor::matrix(1, 1, total), {pred},
                  [pred, diff = std::move(diff)](Graph & g, const Tensor & go) {
                    auto & gp = g.grad_ref(pred).data;
                    for (std::size_t i = 0; i < gp.size(); ++i) {
                      gp[i] += go.data[0] * (diff[i] > 0.0 ? 1.0 : (diff[i] < 0.0 ? -1.0 : 0.0));
                    }
                  });
}

}  // namespace boxmatch::diffnum
