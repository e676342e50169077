#include "mgta/model.hpp"

#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/rng.hpp"

namespace mgta {

const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kNone: return "none";
    case Aggregation::kConcat: return "concat";
    case Aggregation::kStfa: return "stfa";
  }
  return "?";
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "none") return Aggregation::kNone;
  if (s == "concat") return Aggregation::kConcat;
  if (s == "stfa") return Aggregation::kStfa;
  throw ConfigError("unknown aggregation '" + s + "' (expected none, concat or stfa)");
}

StfaConfig ModelConfig::resolved_stfa() const {
  StfaConfig s = stfa;
  s.frames = frames;
  s.channels = channels;
  return s;
}

void ModelConfig::validate() const {
  grid.validate();
  if (grid.nx() % 2 != 0 || grid.ny() % 2 != 0) {
    throw ConfigError("BEV grid must have even dims, got " + std::to_string(grid.ny()) + "x" +
                      std::to_string(grid.nx()));
  }
  if (scans < 2) throw ConfigError("need at least 2 scans per frame");
  if (channels == 0 || encoder.c_b == 0 || encoder.c_q == 0 || encoder.c_m == 0) {
    throw ConfigError("model widths must be positive");
  }
  if (frames == 0) throw ConfigError("frames must be >= 1");
  if (frames == 1 && (aggregation != Aggregation::kNone || align)) {
    throw ConfigError("single-frame model takes no aggregation or alignment");
  }
  if (frames > 1 && aggregation == Aggregation::kNone) {
    throw ConfigError("K > 1 needs an aggregation (concat or stfa)");
  }
  if (head.num_classes == 0) throw ConfigError("head needs at least one class");
  if (aggregation == Aggregation::kStfa) resolved_stfa().validate();
}

ModelConfig ModelConfig::single_frame() const {
  ModelConfig c = *this;
  c.frames = 1;
  c.aggregation = Aggregation::kNone;
  c.align = false;
  return c;
}

void register_model(ParamStore& store, const ModelConfig& cfg) {
  cfg.validate();
  register_voxel_encoder(store, cfg.encoder, cfg.scans);
  register_backbone(store, cfg.grid.nz() * cfg.encoder.voxel_width(), cfg.channels);
  if (cfg.align) register_mgda(store, cfg.channels);
  if (cfg.aggregation == Aggregation::kStfa) register_stfa(store, cfg.resolved_stfa());
  if (cfg.aggregation == Aggregation::kConcat) {
    nn::register_conv(store, "agg.concat", cfg.frames * cfg.channels, cfg.channels, 3);
  }
  register_head(store, cfg.channels, cfg.head.num_classes);
}

std::vector<VoxelInputs> prepare_frames(const Sequence& aligned, const ModelConfig& cfg,
                                        std::uint64_t seed) {
  if (aligned.frames.size() < cfg.frames) {
    throw DataError("sequence has " + std::to_string(aligned.frames.size()) +
                    " frames, model needs " + std::to_string(cfg.frames));
  }
  std::vector<VoxelInputs> out;
  const std::size_t first = aligned.frames.size() - cfg.frames;
  for (std::size_t k = first; k < aligned.frames.size(); ++k) {
    const Frame& f = aligned.frames[k];
    if (f.scans.size() != cfg.scans) {
      throw DataError("frame " + std::to_string(f.index) + " has " + std::to_string(f.scans.size()) +
                      " scans, model expects " + std::to_string(cfg.scans));
    }
    out.push_back(prepare_voxel_inputs(voxelize(f, cfg.grid, derive_seed(seed, k, 0x70e1)),
                                       cfg.grid, cfg.encoder.occupancy_channel));
  }
  return out;
}

ModelOutput model_forward(Tape& tape, ParamStore& store, const ModelConfig& cfg,
                          const std::vector<VoxelInputs>& frames, const ForwardOptions& opt) {
  if (frames.size() != cfg.frames) {
    throw ConfigError("model configured for K=" + std::to_string(cfg.frames) + " but got " +
                      std::to_string(frames.size()) + " frames");
  }
  ModelOutput out;
  const std::size_t width = cfg.encoder.voxel_width();
  for (const VoxelInputs& in : frames) {
    Var canvas;
    if (in.num_voxels == 0) {
      canvas = tape.constant(Tensor(Shape{cfg.grid.nz() * width, cfg.grid.ny(), cfg.grid.nx()}));
    } else {
      canvas = scatter_to_bev(tape, encode_voxels(tape, store, cfg.encoder, in), in, cfg.grid, width);
    }
    out.canvases.push_back(canvas);
    out.features.push_back(backbone_forward(tape, store, canvas));
  }
  const BevFeatures& cur = out.features.back();
  std::vector<Var> previous;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    if (cfg.align) {
      out.alignment.push_back(mgda_forward(tape, store, out.features[k], cur));
      previous.push_back(out.alignment.back().aligned);
    } else {
      previous.push_back(out.features[k].f);
    }
  }
  switch (cfg.aggregation) {
    case Aggregation::kNone:
      out.fused = cur.f;
      break;
    case Aggregation::kConcat: {
      std::vector<Var> parts = previous;
      parts.push_back(cur.f);
      out.fused = ops::relu(nn::conv_same(tape, store, "agg.concat", ops::concat(parts, 0)));
      break;
    }
    case Aggregation::kStfa: {
      StfaContext ctx;
      ctx.mode = opt.mode;
      ctx.seed = opt.seed;
      ctx.trace = opt.record_attention ? &out.attention : nullptr;
      out.fused = stfa_forward(tape, store, cfg.resolved_stfa(), cur.f, previous, ctx);
      break;
    }
  }
  out.head = head_forward(tape, store, out.fused);
  return out;
}

}  // namespace mgta
