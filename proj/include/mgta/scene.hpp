#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgta/sequence.hpp"

namespace mgta {

struct ClassSpec {
  std::string name;
  double l = 4.0, w = 1.8, h = 1.6;
  double reflectance = 0.5;

  bool operator==(const ClassSpec&) const = default;
};

// A hand-placed object. Pose, velocity and yaw rate are given at the time of
// the last keyframe in world coordinates; the trajectory is constant-velocity.
struct ObjectSpec {
  int class_id = 0;
  double x = 0.0, y = 0.0, yaw = 0.0;
  double vx = 0.0, vy = 0.0, yaw_rate = 0.0;
  double density_scale = 1.0;
  // Per-frame "emits no points" flags; empty means visible throughout.
  std::vector<bool> hidden;

  bool operator==(const ObjectSpec&) const = default;
};

struct SceneSpec {
  std::size_t frames = 3;          // K
  std::size_t scans = 10;          // N
  double range = 25.6;             // objects and ground lie in [-range, range]^2
  double ground_z = 0.0;
  std::size_t ground_points = 150;  // per scan
  double point_density = 60.0;      // points per m^2 of visible surface at 1 m range
  double noise = 0.02;              // isotropic point jitter (m)
  double ego_vx = 0.0, ego_yaw_rate = 0.0;
  std::vector<ClassSpec> classes = {{"car", 4.2, 1.8, 1.6, 0.6}, {"cyclist", 1.8, 0.7, 1.5, 0.3}};

  // Explicit objects; when empty, objects are drawn at random from the fields below.
  std::vector<ObjectSpec> objects;
  bool random_objects = true;
  std::size_t min_objects = 4, max_objects = 8;
  double moving_fraction = 0.5;
  double min_speed = 2.0, max_speed = 8.0;
  // Probability that an object is hidden during the whole keyframe frame t.
  double occluded_fraction = 0.25;
  double margin = 2.0;  // keep keyframe centers this far inside the range

  bool operator==(const SceneSpec&) const = default;
};

// Throws ConfigError for inconsistent specs or explicit objects outside range.
void validate_scene_spec(const SceneSpec& spec);

/// Draws a sequence of spec.frames frames with spec.scans scans each at 20 Hz.
/// Points are rounded to float precision so the file format round-trips them.
/// Ground truth per frame is stored in Frame::boxes.
Sequence generate_scene(const SceneSpec& spec, std::uint64_t seed);

}  // namespace mgta
