#include "mgta/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/ops.hpp"
#include "mgta/rng.hpp"

namespace mgta {
namespace {

bool point_less(const Point& a, const Point& b) {
  return std::tie(a.x, a.y, a.z, a.r, a.dt) < std::tie(b.x, b.y, b.z, b.r, b.dt);
}

struct Entry {
  std::size_t linear;
  std::size_t scan;  // 0-based
  Point p;
};

}  // namespace

std::size_t GridConfig::dim(std::size_t axis) const {
  const double n = (max[axis] - min[axis]) / size[axis];
  return static_cast<std::size_t>(std::max(1.0, std::ceil(n - 1e-9)));
}

void GridConfig::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(size[a] > 0.0) || !(max[a] > min[a])) {
      throw ConfigError("grid axis " + std::to_string(a) + " needs max > min and a positive voxel size");
    }
  }
  if (max_points_per_scan == 0 || max_voxels == 0) {
    throw ConfigError("grid max_points_per_scan and max_voxels must be positive");
  }
}

std::vector<TemporalVoxel> voxelize(const Frame& frame, const GridConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t nx = cfg.nx(), ny = cfg.ny();
  const std::size_t num_scans = frame.scans.size();
  std::vector<Entry> entries;
  for (std::size_t s = 0; s < num_scans; ++s) {
    for (const auto& p : frame.scans[s].points) {
      const double c[3] = {p.x, p.y, p.z};
      std::size_t idx[3];
      bool inside = true;
      for (std::size_t a = 0; a < 3 && inside; ++a) {
        if (!(c[a] >= cfg.min[a] && c[a] < cfg.max[a])) {
          inside = false;
          break;
        }
        idx[a] = std::min(static_cast<std::size_t>(std::floor((c[a] - cfg.min[a]) / cfg.size[a])),
                          cfg.dim(a) - 1);
      }
      if (!inside) continue;
      entries.push_back({(idx[2] * ny + idx[1]) * nx + idx[0], s, p});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.linear != b.linear) return a.linear < b.linear;
    if (a.scan != b.scan) return a.scan < b.scan;
    return point_less(a.p, b.p);
  });

  std::vector<TemporalVoxel> voxels;
  std::size_t i = 0;
  while (i < entries.size() && voxels.size() < cfg.max_voxels) {
    TemporalVoxel v;
    v.linear = entries[i].linear;
    v.ix = v.linear % nx;
    v.iy = (v.linear / nx) % ny;
    v.iz = v.linear / (nx * ny);
    v.buckets.resize(num_scans);
    while (i < entries.size() && entries[i].linear == v.linear) {
      const std::size_t s = entries[i].scan;
      std::vector<Point> cand;
      while (i < entries.size() && entries[i].linear == v.linear && entries[i].scan == s) {
        cand.push_back(entries[i++].p);
      }
      if (cand.size() > cfg.max_points_per_scan) {
        Rng rng(derive_seed(seed, v.linear, s));
        for (std::size_t j = 0; j < cfg.max_points_per_scan; ++j) {
          std::swap(cand[j], cand[j + rng.index(cand.size() - j)]);
        }
        cand.resize(cfg.max_points_per_scan);
        std::sort(cand.begin(), cand.end(), point_less);
      }
      v.buckets[s] = std::move(cand);
    }
    voxels.push_back(std::move(v));
  }
  return voxels;
}

std::vector<std::array<double, 5>> scan_centroids(const TemporalVoxel& v) {
  std::vector<std::array<double, 5>> out(v.buckets.size(), {0, 0, 0, 0, 0});
  for (std::size_t n = 0; n < v.buckets.size(); ++n) {
    const auto& b = v.buckets[n];
    if (b.empty()) continue;
    auto& c = out[n];
    for (const auto& p : b) {
      c[0] += p.x;
      c[1] += p.y;
      c[2] += p.z;
      c[3] += p.r;
      c[4] += p.dt;
    }
    for (auto& x : c) x /= static_cast<double>(b.size());
  }
  return out;
}

VoxelInputs prepare_voxel_inputs(const std::vector<TemporalVoxel>& voxels, const GridConfig& cfg,
                                 bool occupancy_channel) {
  VoxelInputs in;
  in.num_voxels = voxels.size();
  in.num_scans = voxels.empty() ? 0 : voxels.front().buckets.size();
  std::size_t total = 0;
  for (const auto& v : voxels)
    for (const auto& b : v.buckets) total += b.size();

  const std::size_t n = in.num_scans;
  const std::size_t d = occupancy_channel ? 6 : 5;
  in.point_features = Tensor(Shape{total, 10});
  in.deltas = Tensor(Shape{voxels.size(), n > 0 ? n - 1 : 0, d});
  std::size_t row = 0;
  for (std::size_t vi = 0; vi < voxels.size(); ++vi) {
    const auto& v = voxels[vi];
    in.ix.push_back(v.ix);
    in.iy.push_back(v.iy);
    in.iz.push_back(v.iz);
    double mean[3] = {0, 0, 0};
    std::size_t count = 0;
    for (const auto& b : v.buckets)
      for (const auto& p : b) {
        mean[0] += p.x;
        mean[1] += p.y;
        mean[2] += p.z;
        ++count;
      }
    if (count == 0) throw InternalError("voxel without points reached the encoder");
    for (auto& m : mean) m /= static_cast<double>(count);
    const double cx = cfg.min[0] + (static_cast<double>(v.ix) + 0.5) * cfg.size[0];
    const double cy = cfg.min[1] + (static_cast<double>(v.iy) + 0.5) * cfg.size[1];
    for (const auto& b : v.buckets)
      for (const auto& p : b) {
        double* f = in.point_features.ptr() + row * 10;
        f[0] = p.x;
        f[1] = p.y;
        f[2] = p.z;
        f[3] = p.r;
        f[4] = p.dt;
        f[5] = p.x - mean[0];
        f[6] = p.y - mean[1];
        f[7] = p.z - mean[2];
        f[8] = p.x - cx;
        f[9] = p.y - cy;
        in.point_voxel.push_back(vi);
        ++row;
      }
    const auto cent = scan_centroids(v);
    for (std::size_t s = 0; s + 1 < n; ++s) {
      double* q = in.deltas.ptr() + (vi * (n - 1) + s) * d;
      for (std::size_t c = 0; c < 5; ++c) q[c] = cent[n - 1][c] - cent[s][c];
      if (occupancy_channel) q[5] = v.buckets[s].empty() ? 0.0 : 1.0;
    }
  }
  return in;
}

void register_voxel_encoder(ParamStore& store, const EncoderConfig& cfg, std::size_t num_scans) {
  nn::register_linear(store, "vfe.point", 10, cfg.c_b);
  if (!cfg.smvfe) return;
  if (num_scans < 2) throw ConfigError("SM-VFE needs at least two scans per frame");
  nn::register_linear(store, "smvfe.delta", cfg.occupancy_channel ? 6 : 5, cfg.c_q);
  nn::register_channel_wise_attention(store, "smvfe.cwa", cfg.c_q);
  nn::register_linear(store, "smvfe.fuse", (num_scans - 1) * cfg.c_q, cfg.c_m);
}

Var base_voxel_features(Tape& tape, ParamStore& store, const VoxelInputs& in) {
  Var pts = tape.constant(in.point_features);
  Var h = ops::relu(nn::linear(tape, store, "vfe.point", pts));
  return ops::segment_max(h, in.point_voxel, in.num_voxels);
}

Var motion_embed(Tape& tape, ParamStore& store, Var deltas) {
  if (deltas.value().rank() != 3) throw ConfigError("motion_embed expects [V, N-1, D] deltas");
  const std::size_t v = deltas.dim(0), slots = deltas.dim(1), d = deltas.dim(2);
  const auto& w_in = store.get("smvfe.delta.weight").value;
  const auto& w_fuse = store.get("smvfe.fuse.weight").value;
  const std::size_t c_q = w_in.dim(1);
  if (w_in.dim(0) != d || w_fuse.dim(0) != slots * c_q) {
    throw ConfigError("SM-VFE parameters expect delta width " + std::to_string(w_in.dim(0)) +
                      " and " + std::to_string(w_fuse.dim(0) / c_q) + " scan slots, got " +
                      std::to_string(d) + " and " + std::to_string(slots));
  }
  Var q = ops::relu(nn::linear(tape, store, "smvfe.delta", deltas));    // [V, N-1, C_q]
  Var per_delta = ops::reshape(q, Shape{v * slots, 1, c_q});             // one gate per delta
  Var gated = nn::channel_wise_attention(tape, store, "smvfe.cwa", per_delta);
  Var cat = ops::reshape(gated, Shape{v, slots * c_q});
  return nn::linear(tape, store, "smvfe.fuse", cat);
}

Var encode_voxels(Tape& tape, ParamStore& store, const EncoderConfig& cfg, const VoxelInputs& in) {
  Var base = base_voxel_features(tape, store, in);
  if (!cfg.smvfe) return base;
  Var m = motion_embed(tape, store, tape.constant(in.deltas));
  const Var parts[2] = {base, m};
  return ops::concat(parts, 1);
}

Var scatter_to_bev(Tape& tape, Var features, const VoxelInputs& in, const GridConfig& cfg,
                   std::size_t channels) {
  const std::size_t nx = cfg.nx(), ny = cfg.ny(), nz = cfg.nz();
  if (in.num_voxels == 0) return tape.constant(Tensor(Shape{nz * channels, ny, nx}));
  std::vector<std::size_t> cell(in.num_voxels);
  for (std::size_t i = 0; i < in.num_voxels; ++i) {
    if (in.ix[i] >= nx || in.iy[i] >= ny || in.iz[i] >= nz) {
      throw InternalError("voxel coordinate outside the grid");
    }
    cell[i] = in.iy[i] * nx + in.ix[i];
  }
  return ops::scatter_rows(features, in.iz, cell, nz, ny, nx);
}

}  // namespace mgta
