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

#ifndef BOXMATCH__GEOMETRY_HPP_
#define BOXMATCH__GEOMETRY_HPP_

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace boxmatch
{

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

/// Wraps to [−π, π).
double wrap_angle(double a);

struct Vec3
{
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3 &, const Vec3 &) = default;
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 identity3();
Mat3 matmul3(const Mat3 & a, const Mat3 & b);
Mat3 transpose3(const Mat3 & a);
Vec3 apply3(const Mat3 & m, Vec3 v);
/// Rotation by `angle` radians about unit `axis` (Rodrigues).
Mat3 axis_angle(Vec3 axis, double angle);
Mat3 rot_z(double angle);
/// max |RᵀR − I|
double orthonormality_error(const Mat3 & r);

/// Axis-aligned image-plane box in pixels.
struct Box2D
{
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
  friend bool operator==(const Box2D &, const Box2D &) = default;
};

double iou(const Box2D & a, const Box2D & b);
Box2D clip_box(const Box2D & b, double img_w, double img_h);

/// Oriented box on the ground plane with vertical extent. size = (l, w, h).
struct Box3D
{
  Vec3 center;
  Vec3 size;
  double yaw = 0.0;
};

/// Eight corners: x = ±l/2 along heading, y = ±w/2, z = ±h/2.
std::array<Vec3, 8> box_corners(const Box3D & b);
/// Four ground-plane footprint corners in counter-clockwise order.
std::array<std::array<double, 2>, 4> footprint(const Box3D & b);
/// Whether the ground-plane point (x, y) lies inside the rotated footprint.
bool footprint_contains(const Box3D & b, double x, double y);
/// Bird's-eye IoU of two rotated footprints (exact polygon clipping).
double bev_iou(const Box3D & a, const Box3D & b);

/// Pinhole camera. Extrinsics map world points into the camera frame
/// (x right, y down, z forward): p_cam = R · p_world + t.
struct CameraModel
{
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 R = identity3();
  Vec3 t;
  double img_w = 1.0;
  double img_h = 1.0;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
  Vec3 to_camera(Vec3 world) const;
  /// Pixel coordinates of a camera-frame point (requires z > 0).
  std::array<double, 2> pixel(Vec3 cam) const;
  bool in_image(double u, double v) const { return u >= 0 && u <= img_w && v >= 0 && v <= img_h; }
};

/// Projects an oriented box into the image. Empty when the box center is
/// behind the camera or the clipped hull has zero area. Corners behind the
/// camera are pushed to a 1 mm depth, so their projections land far outside
/// the image and are clipped.
std::optional<Box2D> project_box(const CameraModel & cam, const Box3D & box);
inline std::optional<Box2D> project_box(
  const CameraModel & cam, Vec3 center, Vec3 size, double yaw)
{
  return project_box(cam, Box3D{center, size, yaw});
}

/// Image position of a world point, if it is in front of the camera and inside the image.
std::optional<std::array<double, 2>> project_point(const CameraModel & cam, Vec3 world);

}  // namespace boxmatch

#endif  // BOXMATCH__GEOMETRY_HPP_
