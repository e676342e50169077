#include "mgta/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mgta/errors.hpp"
#include "mgta/rng.hpp"

namespace mgta {
namespace {

struct Face {
  // Center and two half-extent edge vectors in world coordinates.
  double c[3];
  double u[3];
  double v[3];
  double area;
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Faces of the box that face the sensor at (sx, sy); the roof is always kept.
std::vector<Face> visible_faces(const Box& b, double sx, double sy) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double ax[2] = {c, s}, ay[2] = {-s, c};
  std::vector<Face> faces;
  const double hl = b.l / 2, hw = b.w / 2, hh = b.h / 2;
  for (int sign : {1, -1}) {
    // Faces normal to the length axis.
    const double fc[3] = {b.x + sign * hl * ax[0], b.y + sign * hl * ax[1], b.z};
    if (sign * ax[0] * (fc[0] - sx) + sign * ax[1] * (fc[1] - sy) < 0) {
      faces.push_back({{fc[0], fc[1], fc[2]}, {hw * ay[0], hw * ay[1], 0}, {0, 0, hh},
                       4 * hw * hh});
    }
    const double fw[3] = {b.x + sign * hw * ay[0], b.y + sign * hw * ay[1], b.z};
    if (sign * ay[0] * (fw[0] - sx) + sign * ay[1] * (fw[1] - sy) < 0) {
      faces.push_back({{fw[0], fw[1], fw[2]}, {hl * ax[0], hl * ax[1], 0}, {0, 0, hh},
                       4 * hl * hh});
    }
  }
  faces.push_back({{b.x, b.y, b.z + hh}, {hl * ax[0], hl * ax[1], 0}, {hw * ay[0], hw * ay[1], 0},
                   4 * hl * hw});
  return faces;
}

bool in_range(double x, double y, double range) {
  return x >= -range && x < range && y >= -range && y < range;
}

}  // namespace

void validate_scene_spec(const SceneSpec& spec) {
  if (spec.frames == 0 || spec.scans == 0) throw ConfigError("scene needs K >= 1 and N >= 1");
  if (!(spec.range > 0) || !(spec.point_density >= 0) || !(spec.noise >= 0)) {
    throw ConfigError("scene range must be positive and densities non-negative");
  }
  if (spec.classes.empty()) throw ConfigError("scene needs at least one class");
  for (const auto& c : spec.classes) {
    if (!(c.l > 0 && c.w > 0 && c.h > 0)) throw ConfigError("class '" + c.name + "' has a non-positive size");
  }
  if (spec.min_objects > spec.max_objects) throw ConfigError("scene min_objects > max_objects");
  if (spec.min_speed > spec.max_speed) throw ConfigError("scene min_speed > max_speed");
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    if (o.class_id < 0 || static_cast<std::size_t>(o.class_id) >= spec.classes.size()) {
      throw ConfigError("object " + std::to_string(i) + " has unknown class " +
                        std::to_string(o.class_id));
    }
    if (!in_range(o.x, o.y, spec.range)) {
      throw ConfigError("object " + std::to_string(i) + " at (" + std::to_string(o.x) + ", " +
                        std::to_string(o.y) + ") lies outside the scene range ±" +
                        std::to_string(spec.range));
    }
    if (!o.hidden.empty() && o.hidden.size() != spec.frames) {
      throw ConfigError("object " + std::to_string(i) + " hidden flags must list every frame");
    }
  }
}

Sequence generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate_scene_spec(spec);
  Rng rng(seed);
  const std::size_t K = spec.frames, N = spec.scans;

  std::vector<ObjectSpec> objects = spec.objects;
  if (objects.empty() && spec.random_objects) {
    const std::size_t count =
        spec.min_objects + rng.index(spec.max_objects - spec.min_objects + 1);
    std::vector<Box> placed;
    const double lim = std::max(0.0, spec.range - spec.margin);
    for (std::size_t i = 0; i < count; ++i) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        ObjectSpec o;
        o.class_id = static_cast<int>(rng.index(spec.classes.size()));
        o.x = rng.uniform(-lim, lim);
        o.y = rng.uniform(-lim, lim);
        o.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        if (rng.bernoulli(spec.moving_fraction)) {
          const double speed = rng.uniform(spec.min_speed, spec.max_speed);
          o.vx = speed * std::cos(o.yaw);
          o.vy = speed * std::sin(o.yaw);
        }
        if (rng.bernoulli(spec.occluded_fraction)) {
          o.hidden.assign(K, false);
          o.hidden.back() = true;
        }
        const auto& cls = spec.classes[o.class_id];
        Box b;
        b.x = o.x;
        b.y = o.y;
        b.yaw = o.yaw;
        // Grown footprint keeps a gap between objects.
        b.l = cls.l + 1.0;
        b.w = cls.w + 1.0;
        const bool near_sensor = std::hypot(o.x, o.y) < 3.0;
        const bool collides = std::any_of(placed.begin(), placed.end(),
                                          [&](const Box& p) { return bev_overlap(p, b); });
        if (near_sensor || collides) continue;
        placed.push_back(b);
        objects.push_back(std::move(o));
        break;
      }
    }
  }

  auto object_box = [&](std::size_t i, double tau) {
    const auto& o = objects[i];
    const auto& cls = spec.classes[o.class_id];
    Box b;
    b.class_id = o.class_id;
    b.x = o.x + o.vx * tau;
    b.y = o.y + o.vy * tau;
    b.z = spec.ground_z + cls.h / 2;
    b.l = cls.l;
    b.w = cls.w;
    b.h = cls.h;
    b.yaw = o.yaw + o.yaw_rate * tau;
    b.vx = o.vx;
    b.vy = o.vy;
    b.track_id = static_cast<std::int64_t>(i);
    return b;
  };
  auto ego_pose = [&](double tau) { return Pose2{spec.ego_vx * tau, 0.0, 0.0, spec.ego_yaw_rate * tau}; };

  Sequence seq;
  for (std::size_t k = 0; k < K; ++k) {
    Frame f;
    f.index = k;
    f.timestamp = static_cast<double>(k * N) * kScanPeriod;
    for (std::size_t n = 1; n <= N; ++n) {
      const double dt = -static_cast<double>(N - n) * kScanPeriod;
      const double tau = -static_cast<double>((K - 1 - k) * N + (N - n)) * kScanPeriod;
      Scan scan;
      scan.index = n;
      scan.timestamp = f.timestamp + dt;
      const Pose2 ego = ego_pose(tau);
      scan.ego_pose = ego;
      const Pose2 to_sensor = ego.inverse();

      for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        if (!o.hidden.empty() && o.hidden[k]) continue;
        const Box b = object_box(i, tau);
        const double range = std::max(1.0, std::hypot(b.x - ego.x, b.y - ego.y));
        const auto faces = visible_faces(b, ego.x, ego.y);
        double area = 0.0;
        for (const auto& fc : faces) area += fc.area;
        const double expected = spec.point_density * o.density_scale * area / range;
        const auto count = static_cast<std::size_t>(std::floor(expected + rng.uniform()));
        const double refl = spec.classes[o.class_id].reflectance;
        for (std::size_t p = 0; p < count; ++p) {
          // Pick a face proportionally to its area.
          double pick = rng.uniform() * area;
          std::size_t fi = 0;
          while (fi + 1 < faces.size() && pick >= faces[fi].area) pick -= faces[fi++].area;
          const Face& fc = faces[fi];
          const double a = rng.uniform(-1.0, 1.0), bb = rng.uniform(-1.0, 1.0);
          const double wx = fc.c[0] + a * fc.u[0] + bb * fc.v[0] + rng.normal(0.0, spec.noise);
          const double wy = fc.c[1] + a * fc.u[1] + bb * fc.v[1] + rng.normal(0.0, spec.noise);
          const double wz = fc.c[2] + a * fc.u[2] + bb * fc.v[2] + rng.normal(0.0, spec.noise);
          const auto sp = to_sensor.apply(wx, wy, wz);
          scan.points.push_back({sp[0], sp[1], sp[2], clamp01(refl + rng.normal(0.0, 0.05)), dt});
        }
      }
      for (std::size_t g = 0; g < spec.ground_points; ++g) {
        const double r = rng.uniform(1.0, spec.range * 1.4);
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        scan.points.push_back({r * std::cos(phi), r * std::sin(phi),
                               spec.ground_z - ego.z + rng.normal(0.0, spec.noise),
                               clamp01(0.1 + rng.normal(0.0, 0.03)), dt});
      }
      f.scans.push_back(std::move(scan));
    }

    const double tau_key = -static_cast<double>((K - 1 - k) * N) * kScanPeriod;
    const Pose2 to_key = ego_pose(tau_key).inverse();
    for (std::size_t i = 0; i < objects.size(); ++i) {
      Box b = transform_box(object_box(i, tau_key), to_key);
      b.occluded = !objects[i].hidden.empty() && objects[i].hidden[k];
      if (k + 1 == K || in_range(b.x, b.y, spec.range)) f.boxes.push_back(b);
    }
    seq.frames.push_back(std::move(f));
  }
  quantize_points(seq);
  return seq;
}

}  // namespace mgta
