#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgta/ops.hpp"
#include "mgta/param_store.hpp"
#include "mgta/tape.hpp"

namespace mgta {

struct StfaConfig {
  std::size_t frames = 3;    // K
  std::size_t heads = 4;     // M
  std::size_t points = 4;    // J
  std::size_t layers = 2;    // L
  std::size_t channels = 32; // C
  std::size_t ffn_hidden = 64;
  double dropout = 0.1;
  // Softmax over all K*J samples of a head instead of over J per frame.
  bool joint_softmax = false;
  // FFN(z) = LN2(z + FC2(ReLU(FC1(z)))); false gives the plain two-layer MLP.
  bool ffn_residual = true;

  // Throws ConfigError on C % M != 0, J == 0, K == 0.
  void validate() const;
  bool operator==(const StfaConfig&) const = default;
};

void register_stfa(ParamStore& store, const StfaConfig& cfg);

/// Per-layer sampling record, channels-last over the H*W queries.
struct AttentionLayerRecord {
  std::vector<Var> offsets;  // per frame: [HW, M*J*2] as (dx, dy)
  std::vector<Var> weights;  // per frame: [HW, M*J]
};

struct StfaContext {
  ops::Mode mode = ops::Mode::kEval;
  std::uint64_t seed = 0;                            // dropout stream
  std::vector<AttentionLayerRecord>* trace = nullptr;  // optional dump of every layer
};

/// H_{t-k} = conv3x3([X_{t-k}, Q]) for the previous frames, H_t = Q. maps and
/// the result are [C,H,W]; previous frames first, the current frame last.
std::vector<Var> derive_queries(Tape& tape, ParamStore& store, std::size_t layer, Var query,
                                const std::vector<Var>& previous);

/// y = W_out(Σ_k Σ_j A · W'(X_k)(p_q + Δ)) over heads; inputs/queries
/// channels-last [HW, C], same order as derive_queries.
Var deformable_cross_attention(Tape& tape, ParamStore& store, const StfaConfig& cfg,
                               std::size_t layer, const std::vector<Var>& queries,
                               const std::vector<Var>& inputs, std::size_t height,
                               std::size_t width, AttentionLayerRecord* record = nullptr);

/// Q' = FFN(LN(Dropout(y) + Q)), channels-last.
Var layer_update(Tape& tape, ParamStore& store, const StfaConfig& cfg, std::size_t layer, Var y,
                 Var query, const StfaContext& ctx);

/// F̂_t after cfg.layers decoding layers, starting from Q = F_t. `previous`
/// holds the K-1 (aligned) earlier maps, oldest first.
Var stfa_forward(Tape& tape, ParamStore& store, const StfaConfig& cfg, Var f_t,
                 const std::vector<Var>& previous, const StfaContext& ctx = {});

}  // namespace mgta
