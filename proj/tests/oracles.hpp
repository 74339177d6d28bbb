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

// Scalar-loop reference implementations used to cross-check the vectorized
// code paths. Written for clarity, not speed.

#ifndef BOXMATCH__TESTS__ORACLES_HPP_
#define BOXMATCH__TESTS__ORACLES_HPP_

#include "boxmatch/geometry.hpp"
#include "boxmatch/tensor.hpp"
#include "boxmatch/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace boxmatch::testing
{

/// Bilinear interpolation through cell centers with border clamping.
inline double bilinear_at(const Tensor & fmap, int H, int W, int ch, double x, double y)
{
  const double u = std::clamp(x - 0.5, 0.0, static_cast<double>(W - 1));
  const double v = std::clamp(y - 0.5, 0.0, static_cast<double>(H - 1));
  const int c0 = std::min(static_cast<int>(std::floor(u)), std::max(W - 2, 0));
  const int r0 = std::min(static_cast<int>(std::floor(v)), std::max(H - 2, 0));
  const int c1 = std::min(c0 + 1, W - 1), r1 = std::min(r0 + 1, H - 1);
  const double a = u - c0, b = v - r0;
  auto at = [&](int r, int c) { return fmap(static_cast<std::size_t>(r) * W + c, ch); };
  return (1 - a) * (1 - b) * at(r0, c0) + a * (1 - b) * at(r0, c1) + (1 - a) * b * at(r1, c0) +
         a * b * at(r1, c1);
}

/// Breakpoints of the interpolant inside [lo, hi], plus both ends.
inline std::vector<double> pieces(double lo, double hi)
{
  std::vector<double> cuts = {lo};
  for (double k = std::ceil(lo - 0.5) + 0.5; k < hi; k += 1.0) {
    if (k > lo) {
      cuts.push_back(k);
    }
  }
  cuts.push_back(hi);
  return cuts;
}

/// Box average of the interpolant. On each rectangle where it is bilinear,
/// its mean equals the value at the rectangle center.
inline std::vector<double> roi_pool_oracle(const Tensor & fmap, int H, int W, Box2D box)
{
  box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(W));
  box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(W));
  box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(H));
  box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(H));
  const int C = static_cast<int>(fmap.cols());
  std::vector<double> out(C, 0.0);
  const double area = (box.x2 - box.x1) * (box.y2 - box.y1);
  if (!(area > 0.0)) {
    return out;
  }
  const auto xs = pieces(box.x1, box.x2), ys = pieces(box.y1, box.y2);
  for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
      const double w = (xs[j + 1] - xs[j]) * (ys[i + 1] - ys[i]);
      const double cx = 0.5 * (xs[j] + xs[j + 1]), cy = 0.5 * (ys[i] + ys[i + 1]);
      for (int c = 0; c < C; ++c) {
        out[c] += w * bilinear_at(fmap, H, W, c, cx, cy);
      }
    }
  }
  for (double & v : out) {
    v /= area;
  }
  return out;
}

inline Tensor matching_oracle(const Tensor & e3, const Tensor & e2)
{
  const std::size_t n3 = e3.rows(), n2 = e2.rows(), C = e3.cols();
  Tensor m = Tensor::matrix(n3, n2 + 1);
  for (std::size_t i = 0; i < n3; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        s += e3(i, c) * e2(j, c);
      }
      m(i, j) = s / std::sqrt(static_cast<double>(C));
    }
  }
  return m;
}

struct OracleMatch
{
  int column = -1;
  double score = 0.0;
};

/// Scans every column of every row; strict comparison keeps the first maximum.
inline std::vector<OracleMatch> extract_pairs_oracle(const Tensor & m, double threshold)
{
  std::vector<OracleMatch> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols(); ++j) {
      mx = std::max(mx, m(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      z += std::exp(m(i, j) - mx);
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) {
        best = j;
      }
    }
    const double p = std::exp(m(i, best) - mx) / z;
    if (best + 1 < m.cols() && p >= threshold) {
      out.push_back({static_cast<int>(best), p});
    } else {
      out.push_back({});
    }
  }
  return out;
}

/// Even-odd ray casting against the rotated footprint.
inline bool inside_footprint(const Box3D & b, double px, double py)
{
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size.x, hw = 0.5 * b.size.y;
  const double lx[] = {hl, -hl, -hl, hl}, ly[] = {hw, hw, -hw, -hw};
  double xs[4], ys[4];
  for (int k = 0; k < 4; ++k) {
    xs[k] = b.center.x + c * lx[k] - s * ly[k];
    ys[k] = b.center.y + s * lx[k] + c * ly[k];
  }
  bool in = false;
  for (int i = 0, j = 3; i < 4; j = i++) {
    if ((ys[i] > py) != (ys[j] > py) &&
        px < (xs[j] - xs[i]) * (py - ys[i]) / (ys[j] - ys[i]) + xs[i]) {
      in = !in;
    }
  }
  return in;
}

inline std::vector<double> roi3d_oracle(const worldsim::BevMap & bev, const Box3D & box)
{
  std::vector<double> out(bev.channels, 0.0);
  int n = 0;
  for (int r = 0; r < bev.cells; ++r) {
    for (int c = 0; c < bev.cells; ++c) {
      if (!inside_footprint(box, bev.cell_x(c), bev.cell_y(r))) {
        continue;
      }
      ++n;
      for (int k = 0; k < bev.channels; ++k) {
        out[k] += bev.cell(r, c)[k];
      }
    }
  }
  for (double & v : out) {
    v = n > 0 ? v / n : 0.0;
  }
  return out;
}

}  // namespace boxmatch::testing

#endif  // BOXMATCH__TESTS__ORACLES_HPP_
