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

#include "boxmatch/geometry.hpp"

#include "boxmatch/tensor.hpp"

#include <algorithm>

namespace boxmatch
{

double wrap_angle(double a)
{
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) {
    r += 2.0 * kPi;
  }
  r -= kPi;
  return r >= kPi ? r - 2.0 * kPi : r;
}

Mat3 identity3()
{
  return {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
}

Mat3 matmul3(const Mat3 & a, const Mat3 & b)
{
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

Mat3 transpose3(const Mat3 & a)
{
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[i][j] = a[j][i];
    }
  }
  return out;
}

Vec3 apply3(const Mat3 & m, Vec3 v)
{
  return {
    m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
    m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
    m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
  };
}

Mat3 axis_angle(Vec3 axis, double angle)
{
  const double n = axis.norm();
  const Vec3 k = (1.0 / n) * axis;
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  return {{
    {c + k.x * k.x * C, k.x * k.y * C - k.z * s, k.x * k.z * C + k.y * s},
    {k.y * k.x * C + k.z * s, c + k.y * k.y * C, k.y * k.z * C - k.x * s},
    {k.z * k.x * C - k.y * s, k.z * k.y * C + k.x * s, c + k.z * k.z * C},
  }};
}

Mat3 rot_z(double angle)
{
  const double c = std::cos(angle), s = std::sin(angle);
  return {{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
}

double orthonormality_error(const Mat3 & r)
{
  const Mat3 p = matmul3(transpose3(r), r);
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      err = std::max(err, std::abs(p[i][j] - (i == j ? 1.0 : 0.0)));
    }
  }
  return err;
}

double iou(const Box2D & a, const Box2D & b)
{
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) {
    return 0.0;
  }
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box2D clip_box(const Box2D & b, double img_w, double img_h)
{
  return {
    std::clamp(b.x1, 0.0, img_w), std::clamp(b.y1, 0.0, img_h), std::clamp(b.x2, 0.0, img_w),
    std::clamp(b.y2, 0.0, img_h)};
}

std::array<Vec3, 8> box_corners(const Box3D & b)
{
  std::array<Vec3, 8> out{};
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  int k = 0;
  for (double sx : {-0.5, 0.5}) {
    for (double sy : {-0.5, 0.5}) {
      for (double sz : {-0.5, 0.5}) {
        const double lx = sx * b.size.x, ly = sy * b.size.y;
        out[k++] = {b.center.x + c * lx - s * ly, b.center.y + s * lx + c * ly,
                    b.center.z + sz * b.size.z};
      }
    }
  }
  return out;
}

std::array<std::array<double, 2>, 4> footprint(const Box3D & b)
{
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size.x, hw = 0.5 * b.size.y;
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.center.x + c * local[i][0] - s * local[i][1],
              b.center.y + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

bool footprint_contains(const Box3D & b, double x, double y)
{
  const double dx = x - b.center.x, dy = y - b.center.y;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.size.x && std::abs(ly) <= 0.5 * b.size.y;
}

namespace
{

using Pt = std::array<double, 2>;

double polygon_area(const std::vector<Pt> & p)
{
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Pt & u = p[i];
    const Pt & v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - v[0] * u[1];
  }
  return 0.5 * std::abs(a);
}

// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
std::vector<Pt> clip_polygon(std::vector<Pt> subject, const std::array<Pt, 4> & clip)
{
  for (std::size_t e = 0; e < 4 && !subject.empty(); ++e) {
    const Pt a = clip[e];
    const Pt b = clip[(e + 1) % 4];
    auto side = [&](const Pt & p) {
      return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    };
    std::vector<Pt> out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Pt & cur = subject[i];
      const Pt & prev = subject[(i + subject.size() - 1) % subject.size()];
      const double sc = side(cur), sp = side(prev);
      if (sc >= 0.0) {
        if (sp < 0.0) {
          const double t = sp / (sp - sc);
          out.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
        }
        out.push_back(cur);
      } else if (sp >= 0.0) {
        const double t = sp / (sp - sc);
        out.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

}  // namespace

double bev_iou(const Box3D & a, const Box3D & b)
{
  const auto fa = footprint(a);
  const auto fb = footprint(b);
  const auto inter = clip_polygon(std::vector<Pt>(fa.begin(), fa.end()), fb);
  const double ia = inter.size() >= 3 ? polygon_area(inter) : 0.0;
  const double ua = a.size.x * a.size.y + b.size.x * b.size.y - ia;
  return ua > 0.0 ? ia / ua : 0.0;
}

void CameraModel::validate() const
{
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera focal lengths must be positive");
  }
  if (!(img_w > 0.0) || !(img_h > 0.0)) {
    throw ConfigError("camera image bounds must be positive");
  }
  if (orthonormality_error(R) > 1e-9) {
    throw ConfigError("camera rotation is not orthonormal");
  }
}

Vec3 CameraModel::to_camera(Vec3 world) const
{
  return apply3(R, world) + t;
}

std::array<double, 2> CameraModel::pixel(Vec3 cam) const
{
  return {fx * cam.x / cam.z + cx, fy * cam.y / cam.z + cy};
}

std::optional<Box2D> project_box(const CameraModel & cam, const Box3D & box)
{
  constexpr double kMinDepth = 1e-3;
  if (cam.to_camera(box.center).z <= 0.0) {
    return std::nullopt;
  }
  Box2D hull{1e300, 1e300, -1e300, -1e300};
  for (const Vec3 & corner : box_corners(box)) {
    Vec3 c = cam.to_camera(corner);
    c.z = std::max(c.z, kMinDepth);
    const auto [u, v] = cam.pixel(c);
    hull.x1 = std::min(hull.x1, u);
    hull.y1 = std::min(hull.y1, v);
    hull.x2 = std::max(hull.x2, u);
    hull.y2 = std::max(hull.y2, v);
  }
  const Box2D clipped = clip_box(hull, cam.img_w, cam.img_h);
  if (clipped.area() <= 0.0) {
    return std::nullopt;
  }
  return clipped;
}

std::optional<std::array<double, 2>> project_point(const CameraModel & cam, Vec3 world)
{
  const Vec3 c = cam.to_camera(world);
  if (c.z <= 0.0) {
    return std::nullopt;
  }
  const auto px = cam.pixel(c);
  if (!cam.in_image(px[0], px[1])) {
    return std::nullopt;
  }
  return px;
}

}  // namespace boxmatch
