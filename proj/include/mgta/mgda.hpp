#pragma once

#include <cstddef>

#include "mgta/backbone.hpp"
#include "mgta/param_store.hpp"
#include "mgta/tape.hpp"

namespace mgta {

inline constexpr std::size_t kAlignKernel = 3;
inline constexpr std::size_t kAlignTaps = kAlignKernel * kAlignKernel;

struct AlignmentMask {
  Var offsets;     // [2*9, H, W], (dy, dx) per tap, grid cells
  Var modulation;  // [9, H, W], sigmoid
};

struct MgdaOutput {
  Var motion;  // M̂ [C, H, W]
  AlignmentMask mask;
  Var aligned;  // [C, H, W]
};

/// One parameter set shared by every frame lag. The mask head starts at zero
/// (offsets 0, modulation 0.5) and the alignment kernel at twice the center
/// delta, so the initial alignment is the identity.
void register_mgda(ParamStore& store, std::size_t channels);

/// Per scale: M̃ = conv3x3([F_prev, F_cur - F_prev]); M = M̃ + NL(M̃).
/// M̂ = M^1 + upsample(M^2).
Var motion_features(Tape& tape, ParamStore& store, const BevFeatures& prev,
                    const BevFeatures& cur);

/// 1x1 conv to 27 channels: 18 raw offsets, 9 sigmoid modulation values.
AlignmentMask predict_mask(Tape& tape, ParamStore& store, Var motion);

/// Modulated deformable 3x3 convolution of F_prev with the predicted mask.
Var deform_align(Tape& tape, ParamStore& store, Var f_prev, const AlignmentMask& mask);

MgdaOutput mgda_forward(Tape& tape, ParamStore& store, const BevFeatures& prev,
                        const BevFeatures& cur);

}  // namespace mgta
