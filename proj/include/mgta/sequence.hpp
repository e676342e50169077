#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "mgta/geometry.hpp"

namespace mgta {

inline constexpr double kScanPeriod = 0.05;  // 20 Hz

struct Point {
  double x = 0.0, y = 0.0, z = 0.0;
  double r = 0.0;   // reflectance in [0, 1]
  double dt = 0.0;  // seconds relative to the keyframe scan, <= 0
};

struct Scan {
  std::size_t index = 0;  // 1..N in acquisition order
  double timestamp = 0.0;
  std::vector<Point> points;
  // Sensor pose in the sequence world frame at scan time.
  std::optional<Pose2> ego_pose;
};

struct Frame {
  std::size_t index = 0;
  double timestamp = 0.0;  // time of the keyframe scan
  std::vector<Scan> scans;
  // Ground truth at keyframe time, in keyframe sensor coordinates.
  std::vector<Box> boxes;

  // Pose of scan N. Throws DataError when absent.
  const Pose2& keyframe_pose() const;
};

/// K frames ordered by time; the last one is the frame of interest t.
struct Sequence {
  std::vector<Frame> frames;

  std::size_t num_frames() const { return frames.size(); }
  std::size_t t() const { return frames.size() - 1; }
  const Frame& current() const { return frames.back(); }
};

/// Transforms every scan into the keyframe (scan N) sensor frame and sets its
/// pose to the keyframe pose. Scans whose relative pose is exactly identity
/// are left untouched, so identity inputs come back bitwise unchanged.
Frame compensate_ego_motion(const Frame& frame);

/// Ego-compensates every frame and then expresses frames 0..K-2 (points and
/// boxes) in the keyframe coordinates of the last frame.
Sequence align_sequence(const Sequence& seq);

// Checks structural invariants (scan indices, increasing timestamps, dt range).
void validate_sequence(const Sequence& seq);

// Rounds all point fields to float precision (the on-disk representation).
void quantize_points(Sequence& seq);

/// Directory layout: manifest.json plus one binary file per scan holding
/// u64 count followed by count records of five little-endian f32
/// (x, y, z, r, dt).
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);
Sequence read_sequence(const std::filesystem::path& dir);

void write_scan_file(const std::filesystem::path& path, const std::vector<Point>& points);
std::vector<Point> read_scan_file(const std::filesystem::path& path);

inline constexpr int kSequenceFormatVersion = 1;

}  // namespace mgta
