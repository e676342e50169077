#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgta/param_store.hpp"
#include "mgta/sequence.hpp"
#include "mgta/tape.hpp"

namespace mgta {

struct GridConfig {
  std::array<double, 3> min{-25.6, -25.6, -1.0};
  std::array<double, 3> max{25.6, 25.6, 3.0};
  std::array<double, 3> size{0.8, 0.8, 4.0};
  std::size_t max_points_per_scan = 16;
  std::size_t max_voxels = 16384;

  std::size_t dim(std::size_t axis) const;
  std::size_t nx() const { return dim(0); }  // W
  std::size_t ny() const { return dim(1); }  // H
  std::size_t nz() const { return dim(2); }  // Dv
  // Throws ConfigError for non-positive sizes or extents.
  void validate() const;
  bool operator==(const GridConfig&) const = default;
};

struct TemporalVoxel {
  std::size_t ix = 0, iy = 0, iz = 0;
  std::size_t linear = 0;  // (iz * ny + iy) * nx + ix
  // buckets[n-1] holds the (subsampled) points of scan n.
  std::vector<std::vector<Point>> buckets;
};

/// Floor binning with inclusive min / exclusive max bounds. Voxels come back
/// sorted by linear index. Each bucket's candidates are sorted by value and,
/// when over capacity, subsampled with a seed derived from (seed, voxel, scan),
/// so the result does not depend on input point order. Voxels beyond
/// max_voxels (in linear order) are dropped.
std::vector<TemporalVoxel> voxelize(const Frame& frame, const GridConfig& cfg,
                                    std::uint64_t seed = 0);

// Per-scan mean of (x, y, z, r, dt); zero vector for an empty bucket.
std::vector<std::array<double, 5>> scan_centroids(const TemporalVoxel& v);

/// Data-side tensors for one frame, built once and reused by the encoders.
struct VoxelInputs {
  std::size_t num_voxels = 0;
  std::size_t num_scans = 0;
  std::vector<std::size_t> ix, iy, iz;
  // [P, 10]: x, y, z, r, dt, offsets to the voxel point mean (3), offsets to
  // the voxel center in xy (2).
  Tensor point_features;
  std::vector<std::size_t> point_voxel;  // voxel of each row of point_features
  // [V, N-1, D]: p̄^N - p̄^n for n = 1..N-1, D = 5 or 6 with the occupancy bit.
  Tensor deltas;
};

VoxelInputs prepare_voxel_inputs(const std::vector<TemporalVoxel>& voxels, const GridConfig& cfg,
                                 bool occupancy_channel = false);

struct EncoderConfig {
  std::size_t c_q = 16;
  std::size_t c_m = 32;
  std::size_t c_b = 32;
  bool smvfe = true;
  // Appends a bucket-occupancy bit to each delta (off by default).
  bool occupancy_channel = false;

  std::size_t voxel_width() const { return c_b + (smvfe ? c_m : 0); }
  bool operator==(const EncoderConfig&) const = default;
};

void register_voxel_encoder(ParamStore& store, const EncoderConfig& cfg, std::size_t num_scans);

/// Pillar-style base encoder: shared FC(10 -> C_b), ReLU, max over the voxel's points.
Var base_voxel_features(Tape& tape, ParamStore& store, const VoxelInputs& in);

/// Differential motion embedding from a [V, N-1, D] delta tensor:
/// FC(D -> C_q), ReLU, channel-wise attention per delta, concat, FC -> [V, C_m].
Var motion_embed(Tape& tape, ParamStore& store, Var deltas);

/// [V, C_v] = [base ‖ m_k] (or base only without SM-VFE).
Var encode_voxels(Tape& tape, ParamStore& store, const EncoderConfig& cfg, const VoxelInputs& in);

/// Dense canvas [nz * C, ny, nx]; feature channel c of a voxel at height iz
/// goes to channel iz * C + c. With no voxels returns zeros of width `channels`.
Var scatter_to_bev(Tape& tape, Var features, const VoxelInputs& in, const GridConfig& cfg,
                   std::size_t channels);

}  // namespace mgta
