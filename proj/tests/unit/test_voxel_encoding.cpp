#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/rng.hpp"
#include "mgta/scene.hpp"
#include "mgta/voxel.hpp"
#include "support/gradcheck.hpp"
#include "support/naive.hpp"

using namespace mgta;

namespace {

Frame frame_with(std::size_t scans, std::vector<std::pair<std::size_t, Point>> pts) {
  Frame f;
  for (std::size_t n = 1; n <= scans; ++n) {
    Scan s;
    s.index = n;
    s.ego_pose = Pose2{};
    f.scans.push_back(s);
  }
  for (auto& [scan, p] : pts) f.scans.at(scan - 1).points.push_back(p);
  return f;
}

GridConfig small_grid() {
  GridConfig g;
  g.min = {0.0, 0.0, 0.0};
  g.max = {8.0, 8.0, 4.0};
  g.size = {1.0, 1.0, 4.0};
  return g;
}

bool voxels_identical(const std::vector<TemporalVoxel>& a, const std::vector<TemporalVoxel>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].linear != b[i].linear || a[i].buckets.size() != b[i].buckets.size()) return false;
    for (std::size_t n = 0; n < a[i].buckets.size(); ++n) {
      const auto &x = a[i].buckets[n], &y = b[i].buckets[n];
      if (x.size() != y.size()) return false;
      for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j].x != y[j].x || x[j].y != y[j].y || x[j].z != y[j].z || x[j].r != y[j].r ||
            x[j].dt != y[j].dt)
          return false;
    }
  }
  return true;
}

ParamStore encoder_store(std::size_t scans, EncoderConfig cfg = {}) {
  ParamStore store(31);
  register_voxel_encoder(store, cfg, scans);
  // Non-trivial biases so ReLUs are not all dead at zero input.
  testing::randomize(store, 5, 0.5);
  return store;
}

}  // namespace

TEST_CASE("voxelize: boundary rule and scan buckets") {
  GridConfig g = small_grid();
  Frame f = frame_with(10, {{1, {0.0, 0.0, 0.0, 0.1, -0.45}}, {1, {8.0, 1.0, 1.0, 0.1, -0.45}}});
  auto v = voxelize(f, g);
  REQUIRE(v.size() == 1);
  CHECK(v[0].ix == 0);
  CHECK(v[0].iy == 0);
  CHECK(v[0].iz == 0);

  Frame two = frame_with(10, {{3, {2.5, 4.5, 1.0, 0.2, -0.35}}, {7, {2.1, 4.9, 2.0, 0.4, -0.15}}});
  auto w = voxelize(two, g);
  REQUIRE(w.size() == 1);
  for (std::size_t n = 0; n < 10; ++n) CHECK(w[0].buckets[n].empty() == (n != 2 && n != 6));
  CHECK(w[0].ix == 2);
  CHECK(w[0].iy == 4);
}

TEST_CASE("voxelize: 1000 random points match the brute-force binning oracle") {
  GridConfig g;
  g.max_points_per_scan = 100000;
  Rng rng(1);
  Frame f = frame_with(4, {});
  for (int i = 0; i < 1000; ++i) {
    f.scans[rng.index(4)].points.push_back({rng.uniform(-30, 30), rng.uniform(-30, 30),
                                            rng.uniform(-2, 4), rng.uniform(), -0.1});
  }
  auto voxels = voxelize(f, g);
  const auto oracle = testing::brute_force_bins(f, g);
  std::map<std::array<long, 3>, std::size_t> got;
  for (const auto& v : voxels) {
    std::size_t n = 0;
    for (const auto& b : v.buckets) {
      for (const auto& p : b) {
        CHECK(p.x >= g.min[0] + v.ix * g.size[0]);
        CHECK(p.x < g.min[0] + (v.ix + 1) * g.size[0]);
        CHECK(p.y >= g.min[1] + v.iy * g.size[1]);
        CHECK(p.y < g.min[1] + (v.iy + 1) * g.size[1]);
      }
      n += b.size();
    }
    got[{static_cast<long>(v.ix), static_cast<long>(v.iy), static_cast<long>(v.iz)}] = n;
  }
  CHECK(got == oracle);
  for (std::size_t i = 1; i < voxels.size(); ++i) CHECK(voxels[i - 1].linear < voxels[i].linear);
}

TEST_CASE("voxelize: subsampling cap, permutation invariance, empty input") {
  GridConfig g = small_grid();
  g.max_points_per_scan = 4;
  Rng rng(2);
  Frame f = frame_with(3, {});
  for (int i = 0; i < 300; ++i) {
    f.scans[rng.index(3)].points.push_back(
        {rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 4), rng.uniform(), -0.05});
  }
  auto a = voxelize(f, g, 9);
  for (const auto& v : a)
    for (const auto& b : v.buckets) CHECK(b.size() <= 4);
  Frame shuffled = f;
  for (auto& s : shuffled.scans) {
    for (std::size_t i = s.points.size(); i > 1; --i) std::swap(s.points[i - 1], s.points[rng.index(i)]);
  }
  CHECK(voxels_identical(a, voxelize(shuffled, g, 9)));
  CHECK_FALSE(voxels_identical(a, voxelize(f, g, 10)));
  CHECK(voxelize(frame_with(3, {{1, {-5, -5, 0, 0, 0}}}), g).empty());

  g.max_voxels = 2;
  CHECK(voxelize(f, g, 9).size() == 2);
}

TEST_CASE("scan_centroids: empty rule and arithmetic mean") {
  TemporalVoxel v;
  v.buckets.resize(3);
  v.buckets[2] = {{0, 0, 0, 0, 0}, {2, 2, 2, 1, -0.1}};
  auto c = scan_centroids(v);
  for (std::size_t n = 0; n < 2; ++n)
    for (double x : c[n]) CHECK(x == 0.0);
  const std::array<double, 5> expect{1, 1, 1, 0.5, -0.05};
  for (std::size_t i = 0; i < 5; ++i) CHECK(c[2][i] == doctest::Approx(expect[i]).epsilon(1e-15));
  v.buckets[0] = {{3, 4, 5, 0.25, -0.1}};
  CHECK(scan_centroids(v)[0] == std::array<double, 5>{3, 4, 5, 0.25, -0.1});
}

TEST_CASE("motion_embed: static centroids give one constant embedding") {
  ParamStore store = encoder_store(4);
  // Every scan holds the same point: deltas are exactly zero regardless of position.
  std::vector<std::pair<std::size_t, Point>> pts;
  for (std::size_t n = 1; n <= 4; ++n) {
    pts.push_back({n, {0.5, 0.5, 1.0, 0.3, -0.1}});
    pts.push_back({n, {5.5, 2.5, 2.0, 0.9, -0.1}});
  }
  auto voxels = voxelize(frame_with(4, pts), small_grid());
  auto in = prepare_voxel_inputs(voxels, small_grid());
  for (double d : in.deltas.data()) CHECK(d == 0.0);
  Tape t;
  Var m = motion_embed(t, store, t.constant(in.deltas));
  const std::size_t cm = m.dim(1);
  for (std::size_t c = 0; c < cm; ++c) CHECK(m.value()[c] == m.value()[cm + c]);
}

TEST_CASE("motion_embed: invariant to a constant shift of every centroid") {
  ParamStore store = encoder_store(5);
  Rng rng(3);
  std::vector<std::pair<std::size_t, Point>> a, b;
  for (std::size_t n = 1; n <= 5; ++n) {
    Point p{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.5, 3), rng.uniform(),
            -0.05 * static_cast<double>(5 - n)};
    a.push_back({n, p});
    // Shift by a vector whose xy components keep the point inside another cell.
    b.push_back({n, {p.x + 4.0, p.y + 2.0, p.z, p.r, p.dt}});
  }
  auto ia = prepare_voxel_inputs(voxelize(frame_with(5, a), small_grid()), small_grid());
  auto ib = prepare_voxel_inputs(voxelize(frame_with(5, b), small_grid()), small_grid());
  Tape t;
  Var ma = motion_embed(t, store, t.constant(ia.deltas));
  Var mb = motion_embed(t, store, t.constant(ib.deltas));
  for (std::size_t i = 0; i < ma.value().size(); ++i) CHECK(std::abs(ma.value()[i] - mb.value()[i]) < 1e-12);
}

TEST_CASE("motion_embed: gradients vs finite differences, shape errors") {
  ParamStore store = encoder_store(4);
  Rng rng(4);
  Tensor deltas = testing::random_tensor({3, 3, 5}, rng);
  auto res = testing::gradcheck(
      [&store](Tape& t, std::span<const Var> in) { return motion_embed(t, store, in[0]); },
      {deltas}, &store);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
  Tape t;
  CHECK_THROWS_AS(motion_embed(t, store, t.constant(Tensor(Shape{2, 5, 5}))), ConfigError);
  CHECK_THROWS_AS(motion_embed(t, store, t.constant(Tensor(Shape{2, 3, 6}))), ConfigError);
}

TEST_CASE("frozen world: all deltas zero and all embeddings equal") {
  SceneSpec spec;
  spec.frames = 1;
  Sequence seq = generate_scene(spec, 5);
  Frame f = seq.frames[0];
  for (auto& s : f.scans) s.points = f.scans.back().points;  // identical scans
  auto in = prepare_voxel_inputs(voxelize(f, GridConfig{}), GridConfig{});
  REQUIRE(in.num_voxels > 10);
  for (double d : in.deltas.data()) CHECK(d == 0.0);
  ParamStore store = encoder_store(10);
  Tape t;
  Var m = motion_embed(t, store, t.constant(in.deltas));
  const std::size_t cm = m.dim(1);
  double max_dist = 0.0;
  for (std::size_t v = 1; v < in.num_voxels; ++v)
    for (std::size_t c = 0; c < cm; ++c)
      max_dist = std::max(max_dist, std::abs(m.value()[v * cm + c] - m.value()[c]));
  CHECK(max_dist == 0.0);
}

TEST_CASE("base voxel feature: single point, duplicates, naive oracle") {
  ParamStore store = encoder_store(2);
  GridConfig g = small_grid();
  Rng rng(6);
  std::vector<std::pair<std::size_t, Point>> pts;
  for (int i = 0; i < 5; ++i) {
    pts.push_back({1 + rng.index(2), {rng.uniform(3, 4), rng.uniform(1, 2), rng.uniform(0, 4),
                                      rng.uniform(), -0.05}});
  }
  auto in = prepare_voxel_inputs(voxelize(frame_with(2, pts), g), g);
  REQUIRE(in.num_voxels == 1);
  Tape t;
  Var feat = base_voxel_features(t, store, in);
  const auto& w = store.get("vfe.point.weight").value;
  const auto& b = store.get("vfe.point.bias").value;
  const std::size_t cb = w.dim(1);
  for (std::size_t c = 0; c < cb; ++c) {
    double best = -1e300;
    for (std::size_t p = 0; p < 5; ++p) {
      double s = b[c];
      for (std::size_t i = 0; i < 10; ++i) s += in.point_features[p * 10 + i] * w[i * cb + c];
      best = std::max(best, std::max(0.0, s));
    }
    CHECK(feat.value()[c] == doctest::Approx(best).epsilon(1e-14));
  }

  // Duplicating every point changes neither the voxel mean nor the max.
  auto doubled = pts;
  doubled.insert(doubled.end(), pts.begin(), pts.end());
  GridConfig big = g;
  big.max_points_per_scan = 64;
  auto in2 = prepare_voxel_inputs(voxelize(frame_with(2, doubled), big), big);
  Var feat2 = base_voxel_features(t, store, in2);
  for (std::size_t c = 0; c < cb; ++c) CHECK(feat2.value()[c] == doctest::Approx(feat.value()[c]).epsilon(1e-14));

  auto one = prepare_voxel_inputs(voxelize(frame_with(2, {pts[0]}), g), g);
  Var f1 = base_voxel_features(t, store, one);
  Var direct = ops::relu(nn::linear(t, store, "vfe.point", t.constant(one.point_features)));
  CHECK(f1.value().data().size() == direct.value().data().size());
  for (std::size_t c = 0; c < cb; ++c) CHECK(f1.value()[c] == direct.value()[c]);
}

TEST_CASE("scatter_to_bev: empty, single voxel, mass, voxel-mode stacking") {
  GridConfig g = small_grid();
  Tape t;
  VoxelInputs empty;
  Var z = scatter_to_bev(t, Var(), empty, g, 4);
  CHECK(z.shape() == Shape{4, 8, 8});
  for (double v : z.value().data()) CHECK(v == 0.0);

  auto in = prepare_voxel_inputs(voxelize(frame_with(2, {{1, {3.5, 5.5, 1.0, 0.5, -0.05}}}), g), g);
  Var feat = t.constant(Tensor(Shape{1, 3}, std::vector<double>{1.0, -2.0, 3.0}));
  Var canvas = scatter_to_bev(t, feat, in, g, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const double v = canvas.value().at({c, y, x});
        if (y == 5 && x == 3) {
          CHECK(v == feat.value()[c]);
        } else {
          CHECK(v == 0.0);
        }
      }

  Rng rng(7);
  Frame f = frame_with(2, {});
  for (int i = 0; i < 200; ++i)
    f.scans[rng.index(2)].points.push_back({rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(0, 4), 0.5, -0.05});
  auto many = prepare_voxel_inputs(voxelize(f, g), g);
  Tensor fv = testing::random_tensor({many.num_voxels, 5}, rng);
  Var c2 = scatter_to_bev(t, t.constant(fv), many, g, 5);
  double s1 = 0, s2 = 0;
  for (double v : fv.data()) s1 += v;
  for (double v : c2.value().data()) s2 += v;
  CHECK(s1 == doctest::Approx(s2).epsilon(1e-12));

  GridConfig stacked = g;
  stacked.size[2] = 2.0;  // Dv = 2
  auto two = prepare_voxel_inputs(
      voxelize(frame_with(2, {{1, {1.5, 1.5, 0.5, 0.5, -0.05}}, {2, {1.5, 1.5, 3.0, 0.5, 0.0}}}), stacked),
      stacked);
  REQUIRE(two.num_voxels == 2);
  Var c3 = scatter_to_bev(t, t.constant(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4})), two, stacked, 2);
  CHECK(c3.shape() == Shape{4, 8, 8});
  CHECK(c3.value().at({0, 1, 1}) == 1.0);
  CHECK(c3.value().at({2, 1, 1}) == 3.0);

  VoxelInputs dup = in;
  dup.num_voxels = 2;
  dup.ix = {3, 3};
  dup.iy = {5, 5};
  dup.iz = {0, 0};
  CHECK_THROWS_AS(scatter_to_bev(t, t.constant(Tensor(Shape{2, 3})), dup, g, 3), InternalError);
}

TEST_CASE("encode_voxels: width contract and occupancy channel") {
  EncoderConfig cfg;
  ParamStore store = encoder_store(10, cfg);
  Sequence seq = generate_scene(SceneSpec{}, 8);
  auto in = prepare_voxel_inputs(voxelize(seq.current(), GridConfig{}), GridConfig{});
  Tape t;
  Var f = encode_voxels(t, store, cfg, in);
  CHECK(f.shape() == Shape{in.num_voxels, cfg.voxel_width()});
  CHECK(cfg.voxel_width() == 64);

  cfg.occupancy_channel = true;
  ParamStore occ = encoder_store(10, cfg);
  auto in_occ = prepare_voxel_inputs(voxelize(seq.current(), GridConfig{}), GridConfig{}, true);
  CHECK(in_occ.deltas.dim(2) == 6);
  Var fo = encode_voxels(t, occ, cfg, in_occ);
  CHECK(fo.shape() == Shape{in.num_voxels, 64});
}
