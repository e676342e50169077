#include "mgta/stfa.hpp"

#include <string>

#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/rng.hpp"

namespace mgta {
namespace {

std::string layer_name(std::size_t layer, const char* part) {
  return "stfa.l" + std::to_string(layer) + "." + part;
}

}  // namespace

void StfaConfig::validate() const {
  if (frames == 0) throw ConfigError("stfa needs K >= 1");
  if (points == 0) throw ConfigError("stfa needs J >= 1");
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("stfa channels (" + std::to_string(channels) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("stfa dropout must lie in [0, 1)");
}

void register_stfa(ParamStore& store, const StfaConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, mj = cfg.heads * cfg.points;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (cfg.frames > 1) nn::register_conv(store, layer_name(l, "derive"), 2 * c, c, 3);
    nn::register_linear(store, layer_name(l, "offset"), c, 2 * mj, false, Init::kZeros);
    nn::register_linear(store, layer_name(l, "attn"), c, mj, false);
    nn::register_linear(store, layer_name(l, "value"), c, c, false);
    nn::register_linear(store, layer_name(l, "out"), c, c, false);
    nn::register_layer_norm(store, layer_name(l, "ln1"), c);
    nn::register_linear(store, layer_name(l, "ffn1"), c, cfg.ffn_hidden);
    nn::register_linear(store, layer_name(l, "ffn2"), cfg.ffn_hidden, c);
    if (cfg.ffn_residual) nn::register_layer_norm(store, layer_name(l, "ln2"), c);
  }
}

std::vector<Var> derive_queries(Tape& tape, ParamStore& store, std::size_t layer, Var query,
                                const std::vector<Var>& previous) {
  std::vector<Var> out;
  for (const Var& x : previous) {
    if (x.shape() != query.shape()) {
      throw ConfigError("derivative query inputs differ in shape: " + to_string(x.shape()) +
                        " vs " + to_string(query.shape()));
    }
    const Var parts[2] = {x, query};
    out.push_back(nn::conv_same(tape, store, layer_name(layer, "derive"), ops::concat(parts, 0)));
  }
  out.push_back(query);
  return out;
}

Var deformable_cross_attention(Tape& tape, ParamStore& store, const StfaConfig& cfg,
                               std::size_t layer, const std::vector<Var>& queries,
                               const std::vector<Var>& inputs, std::size_t height,
                               std::size_t width, AttentionLayerRecord* record) {
  cfg.validate();
  if (queries.size() != inputs.size() || queries.empty()) {
    throw ConfigError("stfa needs one derivative query per input map");
  }
  const std::size_t kk = queries.size(), hw = height * width;
  const std::size_t m = cfg.heads, j = cfg.points;
  std::vector<Var> offsets, weights, values;
  std::vector<Var> logits;
  for (std::size_t k = 0; k < kk; ++k) {
    offsets.push_back(nn::linear(tape, store, layer_name(layer, "offset"), queries[k]));
    logits.push_back(nn::linear(tape, store, layer_name(layer, "attn"), queries[k]));
    values.push_back(nn::linear(tape, store, layer_name(layer, "value"), inputs[k]));
  }
  if (cfg.joint_softmax) {
    std::vector<Var> parts;
    for (const Var& lg : logits) parts.push_back(ops::reshape(lg, Shape{hw, m, j}));
    Var joint = ops::softmax(ops::concat(parts, 2));  // [HW, M, K*J]
    for (std::size_t k = 0; k < kk; ++k) {
      weights.push_back(ops::reshape(ops::slice(joint, 2, k * j, (k + 1) * j), Shape{hw, m * j}));
    }
  } else {
    for (const Var& lg : logits) {
      weights.push_back(ops::reshape(ops::softmax(ops::reshape(lg, Shape{hw * m, j})), Shape{hw, m * j}));
    }
  }
  if (record) {
    record->offsets = offsets;
    record->weights = weights;
  }
  Var core = ops::deform_attn_core(values, offsets, weights, height, width, m, j);
  return nn::linear(tape, store, layer_name(layer, "out"), core);
}

Var layer_update(Tape& tape, ParamStore& store, const StfaConfig& cfg, std::size_t layer, Var y,
                 Var query, const StfaContext& ctx) {
  Var dropped = ops::dropout(y, cfg.dropout, ctx.mode, derive_seed(ctx.seed, layer, 0x57fa));
  Var z = nn::layer_norm(tape, store, layer_name(layer, "ln1"), ops::add(dropped, query));
  Var h = nn::linear(tape, store, layer_name(layer, "ffn2"),
                     ops::relu(nn::linear(tape, store, layer_name(layer, "ffn1"), z)));
  if (!cfg.ffn_residual) return h;
  return nn::layer_norm(tape, store, layer_name(layer, "ln2"), ops::add(z, h));
}

Var stfa_forward(Tape& tape, ParamStore& store, const StfaConfig& cfg, Var f_t,
                 const std::vector<Var>& previous, const StfaContext& ctx) {
  cfg.validate();
  if (previous.size() + 1 != cfg.frames) {
    throw ConfigError("stfa configured for K=" + std::to_string(cfg.frames) + " but got " +
                      std::to_string(previous.size() + 1) + " maps");
  }
  if (cfg.layers == 0) return f_t;
  const std::size_t height = f_t.dim(1), width = f_t.dim(2);
  std::vector<Var> prev_rows;
  for (const Var& x : previous) prev_rows.push_back(nn::to_channels_last(x));
  if (ctx.trace) ctx.trace->clear();

  Var q_map = f_t;
  Var q = nn::to_channels_last(f_t);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<Var> queries;
    for (const Var& h : derive_queries(tape, store, l, q_map, previous)) {
      queries.push_back(h.id() == q_map.id() ? q : nn::to_channels_last(h));
    }
    std::vector<Var> inputs = prev_rows;
    inputs.push_back(q);
    AttentionLayerRecord rec;
    Var y = deformable_cross_attention(tape, store, cfg, l, queries, inputs, height, width,
                                       ctx.trace ? &rec : nullptr);
    if (ctx.trace) ctx.trace->push_back(std::move(rec));
    q = layer_update(tape, store, cfg, l, y, q, ctx);
    q_map = nn::to_channels_first(q, height, width);
  }
  return q_map;
}

}  // namespace mgta
