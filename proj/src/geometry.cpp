#include "mgta/geometry.hpp"

#include <algorithm>

namespace mgta {

Box transform_box(const Box& b, const Pose2& t) {
  Box out = b;
  out.set_pose(t * b.pose());
  const auto v = t.rotate(b.vx, b.vy);
  out.vx = v[0];
  out.vy = v[1];
  return out;
}

bool point_in_box(const Box& b, double px, double py, double pz, double margin) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = px - b.x, dy = py - b.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= b.l / 2 + margin && std::abs(ly) <= b.w / 2 + margin &&
         std::abs(pz - b.z) <= b.h / 2 + margin;
}

namespace {

std::array<std::array<double, 2>, 4> corners(const Box& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = b.l / 2, hw = b.w / 2;
  std::array<std::array<double, 2>, 4> out;
  const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.x + c * sx[i] * hl - s * sy[i] * hw, b.y + s * sx[i] * hl + c * sy[i] * hw};
  }
  return out;
}

}  // namespace

bool bev_overlap(const Box& a, const Box& b) {
  const auto ca = corners(a), cb = corners(b);
  for (const Box* box : {&a, &b}) {
    const double c = std::cos(box->yaw), s = std::sin(box->yaw);
    const double axes[2][2] = {{c, s}, {-s, c}};
    for (const auto& ax : axes) {
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (int i = 0; i < 4; ++i) {
        const double pa = ca[i][0] * ax[0] + ca[i][1] * ax[1];
        const double pb = cb[i][0] * ax[0] + cb[i][1] * ax[1];
        amin = std::min(amin, pa);
        amax = std::max(amax, pa);
        bmin = std::min(bmin, pb);
        bmax = std::max(bmax, pb);
      }
      // Touching edges have zero shared area.
      if (amax <= bmin || bmax <= amin) return false;
    }
  }
  return true;
}

}  // namespace mgta
