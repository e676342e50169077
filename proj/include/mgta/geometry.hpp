#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mgta {

/// Planar rigid pose with a height offset: p' = R(yaw) p_xy + (x, y), z' = z + z0.
struct Pose2 {
  double x = 0.0, y = 0.0, z = 0.0, yaw = 0.0;

  bool is_identity() const { return x == 0.0 && y == 0.0 && z == 0.0 && yaw == 0.0; }
  bool operator==(const Pose2&) const = default;

  std::array<double, 3> apply(double px, double py, double pz) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * px - s * py + x, s * px + c * py + y, pz + z};
  }
  // Rotation only; for velocities and directions.
  std::array<double, 2> rotate(double vx, double vy) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * vx - s * vy, s * vx + c * vy};
  }
  Pose2 inverse() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {-(c * x + s * y), -(-s * x + c * y), -z, -yaw};
  }
  // (a * b)(p) = a(b(p))
  friend Pose2 operator*(const Pose2& a, const Pose2& b) {
    const auto t = a.apply(b.x, b.y, b.z);
    return {t[0], t[1], t[2], a.yaw + b.yaw};
  }
};

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  return w >= std::numbers::pi ? -std::numbers::pi : w;
}

/// Oriented 3D box with BEV yaw, plus ground-truth bookkeeping.
struct Box {
  int class_id = 0;
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;
  double vx = 0.0, vy = 0.0;
  // Keyframe occlusion: the object emitted no points in this frame.
  bool occluded = false;
  // Identity of the physical object across the frames of one sequence.
  std::int64_t track_id = -1;

  Pose2 pose() const { return {x, y, z, yaw}; }
  void set_pose(const Pose2& p) {
    x = p.x;
    y = p.y;
    z = p.z;
    yaw = p.yaw;
  }
};

// Moves a box by a rigid transform (pose and velocity).
Box transform_box(const Box& b, const Pose2& t);

// True when (px,py,pz) lies inside the box, optionally grown by margin.
bool point_in_box(const Box& b, double px, double py, double pz, double margin = 0.0);

/// BEV rectangles share a region of positive area (separating-axis test).
bool bev_overlap(const Box& a, const Box& b);

}  // namespace mgta
