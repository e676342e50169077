#pragma once

#include <cstddef>

#include "mgta/param_store.hpp"
#include "mgta/tape.hpp"

namespace mgta {

struct BevFeatures {
  Var f1;  // [C, H, W]
  Var f2;  // [C, H/2, W/2]
  Var f;   // [C, H, W], fused per-frame map
};

void register_backbone(ParamStore& store, std::size_t in_channels, std::size_t channels);

/// Two stride-1 conv+ReLU -> F1; stride-2 conv+ReLU and two conv+ReLU -> F2;
/// F = conv+ReLU over [F1 ‖ upsample(F2)]. Odd H or W is a ConfigError.
BevFeatures backbone_forward(Tape& tape, ParamStore& store, Var canvas);

}  // namespace mgta
