#pragma once

#include <cstdint>
#include <numbers>
#include <vector>

#include "mgta/sequence.hpp"

namespace mgta {

struct AugmentParams {
  double max_rotation = std::numbers::pi / 4;  // θ ~ U(-max, max)
  double min_scale = 0.95, max_scale = 1.05;
  double flip_probability = 0.5;

  bool operator==(const AugmentParams&) const = default;
};

/// p -> scale * R(theta) * F p with F = diag(1, -1, 1) when flip is set.
struct Similarity {
  bool flip = false;
  double theta = 0.0;
  double scale = 1.0;

  bool is_identity() const { return !flip && theta == 0.0 && scale == 1.0; }
};

Similarity sample_similarity(const AugmentParams& params, std::uint64_t seed);

/// Applies one transform to every point of every scan, to all boxes, and
/// conjugates ego poses so that relative poses between scans are preserved.
Sequence apply_similarity(const Sequence& seq, const Similarity& s);

inline Sequence augment_sequence(const Sequence& seq, const AugmentParams& params,
                                 std::uint64_t seed) {
  return apply_similarity(seq, sample_similarity(params, seed));
}

struct DonorPoint {
  std::size_t scan = 0;  // 1..N
  Point p;               // x, y, z in box-local coordinates of its frame
};

/// One object track harvested from a source sequence.
struct Donor {
  Box box;  // at the source keyframe t, in frame-t coordinates
  // Pose of the box in frame k relative to the box at t (box_t^-1 * box_k),
  // both expressed in the world frame.
  std::vector<Pose2> relative;
  std::vector<std::vector<DonorPoint>> points;  // per frame
};

using DonorBank = std::vector<Donor>;

/// Collects every track present in all frames of the sequence. A point is
/// attributed to a box when it lies inside the box moved back along its
/// velocity to the point's acquisition time.
DonorBank build_donor_bank(const Sequence& seq);

struct PasteStats {
  std::size_t attempted = 0;
  std::size_t pasted = 0;
  std::size_t rejected = 0;
  bool empty_bank = false;
};

/// Pastes up to max_objects donors at random keyframe poses inside
/// [-range, range]^2, keeping each donor's frame-to-frame motion. Pastes whose
/// keyframe box overlaps an existing box in BEV are rejected. Target points
/// inside a pasted box are removed before its points are inserted.
Sequence gt_sample_sequence(const Sequence& seq, const DonorBank& bank, std::uint64_t seed,
                            std::size_t max_objects, double range,
                            PasteStats* stats = nullptr);

/// Paste of a single donor with its keyframe box placed at `target` (world = frame-t
/// coordinates). Returns false and leaves seq untouched on collision.
bool paste_donor(Sequence& seq, const Donor& donor, const Pose2& target);

}  // namespace mgta
