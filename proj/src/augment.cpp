#include "mgta/augment.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "mgta/rng.hpp"

namespace mgta {
namespace {

struct SimilarityMap {
  double c, s, scale, fy;

  explicit SimilarityMap(const Similarity& t)
      : c(std::cos(t.theta)), s(std::sin(t.theta)), scale(t.scale), fy(t.flip ? -1.0 : 1.0) {}

  std::array<double, 2> vec(double x, double y) const {
    y *= fy;
    return {scale * (c * x - s * y), scale * (s * x + c * y)};
  }
};

Pose2 frame_to_frame(const Sequence& seq, std::size_t from, std::size_t to) {
  return seq.frames[to].keyframe_pose().inverse() * seq.frames[from].keyframe_pose();
}

}  // namespace

Similarity sample_similarity(const AugmentParams& params, std::uint64_t seed) {
  Rng rng(seed);
  Similarity s;
  s.flip = rng.bernoulli(params.flip_probability);
  s.theta = rng.uniform(-params.max_rotation, params.max_rotation);
  s.scale = rng.uniform(params.min_scale, params.max_scale);
  return s;
}

Sequence apply_similarity(const Sequence& seq, const Similarity& t) {
  if (t.is_identity()) return seq;
  const SimilarityMap m(t);
  Sequence out = seq;
  for (auto& f : out.frames) {
    for (auto& scan : f.scans) {
      for (auto& p : scan.points) {
        const auto xy = m.vec(p.x, p.y);
        p.x = xy[0];
        p.y = xy[1];
        p.z *= t.scale;
      }
      if (scan.ego_pose) {
        Pose2& P = *scan.ego_pose;
        const auto xy = m.vec(P.x, P.y);
        P = {xy[0], xy[1], P.z * t.scale, t.flip ? -P.yaw : P.yaw};
      }
    }
    for (auto& b : f.boxes) {
      const auto xy = m.vec(b.x, b.y);
      const auto v = m.vec(b.vx, b.vy);
      b.x = xy[0];
      b.y = xy[1];
      b.z *= t.scale;
      b.l *= t.scale;
      b.w *= t.scale;
      b.h *= t.scale;
      b.yaw = (t.flip ? -b.yaw : b.yaw) + t.theta;
      b.vx = v[0];
      b.vy = v[1];
    }
  }
  return out;
}

DonorBank build_donor_bank(const Sequence& raw) {
  const Sequence seq = align_sequence(raw);
  const std::size_t K = seq.num_frames();
  std::map<std::int64_t, std::vector<const Box*>> tracks;
  for (std::size_t k = 0; k < K; ++k) {
    for (const auto& b : seq.frames[k].boxes) {
      if (b.track_id < 0) continue;
      auto& slot = tracks[b.track_id];
      slot.resize(K, nullptr);
      slot[k] = &b;
    }
  }
  DonorBank bank;
  for (const auto& [id, boxes] : tracks) {
    if (std::any_of(boxes.begin(), boxes.end(), [](const Box* b) { return b == nullptr; })) continue;
    Donor d;
    d.box = *boxes.back();
    const Pose2 inv_t = d.box.pose().inverse();
    d.points.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const Box& b = *boxes[k];
      d.relative.push_back(inv_t * b.pose());
      const Pose2 to_local = b.pose().inverse();
      for (const auto& scan : seq.frames[k].scans) {
        for (const auto& p : scan.points) {
          Box at_time = b;
          at_time.x += b.vx * p.dt;
          at_time.y += b.vy * p.dt;
          if (!point_in_box(at_time, p.x, p.y, p.z, 0.1)) continue;
          const auto l = to_local.apply(p.x, p.y, p.z);
          d.points[k].push_back({scan.index, {l[0], l[1], l[2], p.r, p.dt}});
        }
      }
    }
    bank.push_back(std::move(d));
  }
  return bank;
}

bool paste_donor(Sequence& seq, const Donor& donor, const Pose2& target) {
  const std::size_t K = seq.num_frames();
  const std::size_t t = seq.t();
  if (donor.relative.size() != K) return false;

  Box key = donor.box;
  key.set_pose(target);
  const auto v = Pose2{0, 0, 0, target.yaw - donor.box.yaw}.rotate(donor.box.vx, donor.box.vy);
  key.vx = v[0];
  key.vy = v[1];
  for (const auto& b : seq.frames[t].boxes) {
    if (bev_overlap(b, key)) return false;
  }

  std::int64_t next_track = 0;
  for (const auto& f : seq.frames)
    for (const auto& b : f.boxes) next_track = std::max(next_track, b.track_id + 1);

  const Pose2& world_t = seq.frames[t].keyframe_pose();
  for (std::size_t k = 0; k < K; ++k) {
    Frame& f = seq.frames[k];
    // Pasted box in frame-t coordinates, then in frame-k keyframe coordinates.
    const Pose2 box_t_coords = target * donor.relative[k];
    const Pose2 to_k = k == t ? Pose2{} : frame_to_frame(seq, t, k);
    Box b = key;
    b.set_pose(to_k * box_t_coords);
    const auto bv = to_k.rotate(key.vx, key.vy);
    b.vx = bv[0];
    b.vy = bv[1];
    b.track_id = next_track;
    b.occluded = donor.points[k].empty();

    const Pose2 key_pose = f.keyframe_pose();
    for (auto& scan : f.scans) {
      const Pose2 scan_to_frame = key_pose.inverse() * scan.ego_pose.value();
      std::erase_if(scan.points, [&](const Point& p) {
        const auto q = scan_to_frame.apply(p.x, p.y, p.z);
        Box at_time = b;
        at_time.x += b.vx * p.dt;
        at_time.y += b.vy * p.dt;
        return point_in_box(at_time, q[0], q[1], q[2], 0.1);
      });
    }
    const Pose2 local_to_world = world_t * box_t_coords;
    for (const auto& dp : donor.points[k]) {
      auto& scan = f.scans.at(dp.scan - 1);
      const Pose2 to_scan = scan.ego_pose.value().inverse() * local_to_world;
      const auto q = to_scan.apply(dp.p.x, dp.p.y, dp.p.z);
      scan.points.push_back({q[0], q[1], q[2], dp.p.r, dp.p.dt});
    }
    f.boxes.push_back(b);
  }
  return true;
}

Sequence gt_sample_sequence(const Sequence& seq, const DonorBank& bank, std::uint64_t seed,
                            std::size_t max_objects, double range, PasteStats* stats) {
  PasteStats local;
  PasteStats& st = stats ? *stats : local;
  st = {};
  if (bank.empty()) {
    st.empty_bank = true;
    std::cerr << "warning: GT sampling skipped, donor bank is empty\n";
    return seq;
  }
  Sequence out = seq;
  Rng rng(seed);
  const double lim = std::max(0.0, range - 2.0);
  for (std::size_t i = 0; i < max_objects; ++i) {
    const Donor& d = bank[rng.index(bank.size())];
    const Pose2 target{rng.uniform(-lim, lim), rng.uniform(-lim, lim), d.box.z,
                       rng.uniform(-std::numbers::pi, std::numbers::pi)};
    ++st.attempted;
    if (paste_donor(out, d, target)) {
      ++st.pasted;
    } else {
      ++st.rejected;
    }
  }
  return out;
}

}  // namespace mgta
