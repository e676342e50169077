#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mgta/backbone.hpp"
#include "mgta/detection.hpp"
#include "mgta/mgda.hpp"
#include "mgta/sequence.hpp"
#include "mgta/stfa.hpp"
#include "mgta/voxel.hpp"

namespace mgta {

enum class Aggregation { kNone, kConcat, kStfa };

const char* to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

struct ModelConfig {
  GridConfig grid;
  EncoderConfig encoder;
  std::size_t scans = 10;     // N
  std::size_t channels = 32;  // C of the BEV maps
  std::size_t frames = 1;     // K; 1 is the single-frame model
  Aggregation aggregation = Aggregation::kNone;
  bool align = false;  // MGDA on each earlier frame
  StfaConfig stfa;     // frames and channels follow the fields above
  HeadConfig head;

  // Throws ConfigError on inconsistent switches.
  void validate() const;
  // The single-frame model used for the first training stage.
  ModelConfig single_frame() const;
  StfaConfig resolved_stfa() const;
  bool operator==(const ModelConfig&) const = default;
};

void register_model(ParamStore& store, const ModelConfig& cfg);

/// Per-frame voxel tensors for the last K frames of an aligned sequence,
/// oldest first.
std::vector<VoxelInputs> prepare_frames(const Sequence& aligned, const ModelConfig& cfg,
                                        std::uint64_t seed);

struct ModelOutput {
  HeadOutput head;
  std::vector<Var> canvases;          // per frame, oldest first
  std::vector<BevFeatures> features;  // per frame
  std::vector<MgdaOutput> alignment;  // per earlier frame when align is on
  std::vector<AttentionLayerRecord> attention;
  Var fused;  // map fed to the head
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::kEval;
  std::uint64_t seed = 0;  // dropout
  bool record_attention = false;
};

ModelOutput model_forward(Tape& tape, ParamStore& store, const ModelConfig& cfg,
                          const std::vector<VoxelInputs>& frames, const ForwardOptions& opt = {});

}  // namespace mgta
