#include <cmath>

#include "doctest.h"
#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/stfa.hpp"
#include "support/gradcheck.hpp"
#include "support/naive.hpp"

using namespace mgta;

namespace {

StfaConfig small_config(std::size_t k, std::size_t m, std::size_t j, std::size_t c) {
  StfaConfig cfg;
  cfg.frames = k;
  cfg.heads = m;
  cfg.points = j;
  cfg.channels = c;
  cfg.layers = 1;
  cfg.ffn_hidden = 2 * c;
  cfg.dropout = 0.0;
  return cfg;
}

void set_identity(Tensor& w) {
  w.fill(0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i) w.at({i, i}) = 1.0;
}

std::vector<Var> constants(Tape& t, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const Tensor& x : xs) out.push_back(t.constant(x));
  return out;
}

}  // namespace

TEST_CASE("stfa: config validation") {
  StfaConfig cfg;
  cfg.channels = 30;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.channels = 32;
  cfg.points = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.points = 4;
  cfg.frames = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("stfa: derivative queries") {
  ParamStore store(1);
  register_stfa(store, small_config(3, 2, 2, 4));
  Rng rng(2);
  Tape t;
  Var q = t.constant(testing::random_tensor({4, 5, 5}, rng));
  std::vector<Var> only = derive_queries(t, store, 0, q, {});
  REQUIRE(only.size() == 1);
  CHECK(only[0].id() == q.id());

  store.get("stfa.l0.derive.weight").value.fill(0.0);
  std::vector<Var> prev = {t.constant(testing::random_tensor({4, 5, 5}, rng)),
                           t.constant(testing::random_tensor({4, 5, 5}, rng))};
  std::vector<Var> hs = derive_queries(t, store, 0, q, prev);
  REQUIRE(hs.size() == 3);
  for (std::size_t k = 0; k < 2; ++k)
    for (double v : hs[k].value().data()) CHECK(v == 0.0);
  CHECK(hs[2].id() == q.id());

  CHECK_THROWS_AS(derive_queries(t, store, 0, q, {t.constant(Tensor(Shape{4, 5, 6}))}), ConfigError);
}

TEST_CASE("stfa: derivative query gradients") {
  ParamStore store(3);
  register_stfa(store, small_config(2, 1, 2, 3));
  testing::randomize(store, 4, 0.5);
  Rng rng(5);
  std::vector<Tensor> in = {testing::random_tensor({3, 4, 4}, rng), testing::random_tensor({3, 4, 4}, rng)};
  auto res = testing::gradcheck(
      [&store](Tape& t, std::span<const Var> v) { return derive_queries(t, store, 0, v[0], {v[1]})[0]; },
      in, &store);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("stfa: single frame, single point passthrough") {
  const StfaConfig cfg = small_config(1, 1, 1, 3);
  ParamStore store(6);
  register_stfa(store, cfg);
  set_identity(store.get("stfa.l0.value.weight").value);
  set_identity(store.get("stfa.l0.out.weight").value);
  Rng rng(7);
  Tensor x = testing::random_tensor({20, 3}, rng);
  Tape t;
  Var y = deformable_cross_attention(t, store, cfg, 0, {t.constant(x)}, {t.constant(x)}, 4, 5);
  CHECK(y.value().identical(x));
}

TEST_CASE("stfa: attention weights are normalized") {
  Rng rng(8);
  for (bool joint : {false, true}) {
    StfaConfig cfg = small_config(3, 2, 3, 4);
    cfg.joint_softmax = joint;
    ParamStore store(9);
    register_stfa(store, cfg);
    testing::randomize(store, 10, 1.5);
    Tape t;
    std::vector<Var> xs;
    for (int k = 0; k < 3; ++k) xs.push_back(t.constant(testing::random_tensor({12, 4}, rng)));
    AttentionLayerRecord rec;
    deformable_cross_attention(t, store, cfg, 0, xs, xs, 3, 4, &rec);
    REQUIRE(rec.weights.size() == 3);
    for (std::size_t q = 0; q < 12; ++q)
      for (std::size_t m = 0; m < 2; ++m) {
        double total = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          double per_frame = 0.0;
          for (std::size_t j = 0; j < 3; ++j) per_frame += rec.weights[k].value().at({q, m * 3 + j});
          if (!joint) CHECK(std::abs(per_frame - 1.0) < 1e-6);
          total += per_frame;
        }
        CHECK(std::abs(total - (joint ? 1.0 : 3.0)) < 1e-6);
      }
  }
}

TEST_CASE("stfa: cross attention matches a loop reference") {
  const StfaConfig cfg = small_config(2, 2, 3, 4);
  ParamStore store(11);
  register_stfa(store, cfg);
  testing::randomize(store, 12, 0.8);
  Rng rng(13);
  std::vector<Tensor> qs = {testing::random_tensor({25, 4}, rng), testing::random_tensor({25, 4}, rng)};
  std::vector<Tensor> xs = {testing::random_tensor({25, 4}, rng), testing::random_tensor({25, 4}, rng)};
  Tape t;
  Var y = deformable_cross_attention(t, store, cfg, 0, constants(t, qs), constants(t, xs), 5, 5);
  Tensor ref = testing::naive_cross_attention(store, cfg, 0, qs, xs, 5, 5);
  CHECK(testing::max_abs_diff(y.value(), ref) < 1e-12);
}

TEST_CASE("stfa: frames with equal maps and zero offsets reduce to a closed form") {
  const StfaConfig cfg = small_config(3, 2, 2, 4);
  ParamStore store(14);
  register_stfa(store, cfg);
  Rng rng(15);
  Tensor x = testing::random_tensor({16, 4}, rng);
  Tape t;
  std::vector<Var> xs(3, t.constant(x));
  Var y = deformable_cross_attention(t, store, cfg, 0, xs, xs, 4, 4);
  // Each frame's weights sum to 1 per head, so y = W_out(3 W' x).
  Tensor v = testing::naive_matmul(x, store.get("stfa.l0.value.weight").value);
  for (double& e : v.data()) e *= 3.0;
  Tensor ref = testing::naive_matmul(v, store.get("stfa.l0.out.weight").value);
  CHECK(testing::max_abs_diff(y.value(), ref) < 1e-12);
}

TEST_CASE("stfa: frame order does not change the output") {
  const StfaConfig cfg = small_config(3, 2, 2, 4);
  ParamStore store(16);
  register_stfa(store, cfg);
  testing::randomize(store, 17, 0.8);
  Rng rng(18);
  std::vector<Tensor> qs, xs;
  for (int k = 0; k < 3; ++k) {
    qs.push_back(testing::random_tensor({16, 4}, rng));
    xs.push_back(testing::random_tensor({16, 4}, rng));
  }
  Tape t;
  Var a = deformable_cross_attention(t, store, cfg, 0, constants(t, qs), constants(t, xs), 4, 4);
  std::swap(qs[0], qs[1]);
  std::swap(xs[0], xs[1]);
  Var b = deformable_cross_attention(t, store, cfg, 0, constants(t, qs), constants(t, xs), 4, 4);
  CHECK(testing::max_abs_diff(a.value(), b.value()) < 1e-12);
}

TEST_CASE("stfa: layer update normalization") {
  const StfaConfig cfg = small_config(1, 2, 2, 6);
  ParamStore store(19);
  register_stfa(store, cfg);
  Rng rng(20);
  Tensor q = testing::random_tensor({10, 6}, rng, -3.0, 5.0);
  Tape t;
  Var out = layer_update(t, store, cfg, 0, t.constant(Tensor(Shape{10, 6})), t.constant(q), {});
  for (std::size_t r = 0; r < 10; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 6; ++c) mean += out.value().at({r, c}) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) var += std::pow(out.value().at({r, c}) - mean, 2) / 6.0;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }

  // With a silent FFN the update is LN2(LN1(Q)).
  store.get("stfa.l0.ffn2.weight").value.fill(0.0);
  Tape t2;
  Var y0 = t2.constant(Tensor(Shape{10, 6}));
  Var qv = t2.constant(q);
  Var upd = layer_update(t2, store, cfg, 0, y0, qv, {});
  Var ref = nn::layer_norm(t2, store, "stfa.l0.ln2", nn::layer_norm(t2, store, "stfa.l0.ln1", qv));
  CHECK(upd.value().identical(ref.value()));

  StfaConfig plain = cfg;
  plain.ffn_residual = false;
  ParamStore ps(21);
  register_stfa(ps, plain);
  CHECK_FALSE(ps.contains("stfa.l0.ln2.gamma"));
}

TEST_CASE("stfa: layer update gradients") {
  const StfaConfig cfg = small_config(1, 2, 2, 4);
  ParamStore store(22);
  register_stfa(store, cfg);
  testing::randomize(store, 23, 0.6);
  Rng rng(24);
  std::vector<Tensor> in = {testing::random_tensor({16, 4}, rng), testing::random_tensor({16, 4}, rng)};
  auto res = testing::gradcheck(
      [&](Tape& t, std::span<const Var> v) { return layer_update(t, store, cfg, 0, v[0], v[1], {}); },
      in, &store);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("stfa: forward contract") {
  StfaConfig cfg = small_config(3, 2, 2, 4);
  cfg.layers = 2;
  ParamStore store(25);
  register_stfa(store, cfg);
  Rng rng(26);
  Tape t;
  Var ft = t.constant(testing::random_tensor({4, 6, 4}, rng));
  std::vector<Var> prev = {t.constant(testing::random_tensor({4, 6, 4}, rng)),
                           t.constant(testing::random_tensor({4, 6, 4}, rng))};
  std::vector<AttentionLayerRecord> trace;
  StfaContext ctx;
  ctx.trace = &trace;
  Var out = stfa_forward(t, store, cfg, ft, prev, ctx);
  CHECK(out.shape() == Shape{4, 6, 4});
  CHECK(trace.size() == 2);
  CHECK(trace[0].offsets.size() == 3);
  CHECK(trace[0].offsets[0].shape() == Shape{24, 8});
  CHECK_THROWS_AS(stfa_forward(t, store, cfg, ft, {prev[0]}), ConfigError);

  cfg.layers = 0;
  CHECK(stfa_forward(t, store, cfg, ft, prev).id() == ft.id());
}

TEST_CASE("stfa: end-to-end gradients on 4x4 maps") {
  StfaConfig cfg = small_config(2, 2, 2, 4);
  ParamStore store(27);
  register_stfa(store, cfg);
  testing::randomize(store, 28, 0.5);
  Rng rng(29);
  std::vector<Tensor> in = {testing::random_tensor({4, 4, 4}, rng), testing::random_tensor({4, 4, 4}, rng)};
  auto res = testing::gradcheck(
      [&](Tape& t, std::span<const Var> v) { return stfa_forward(t, store, cfg, v[0], {v[1]}); },
      in, &store);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}
