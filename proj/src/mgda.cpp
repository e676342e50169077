#include "mgta/mgda.hpp"

#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/ops.hpp"

namespace mgta {

void register_mgda(ParamStore& store, std::size_t channels) {
  nn::register_conv(store, "mgda.motion1", 2 * channels, channels, 3);
  nn::register_conv(store, "mgda.motion2", 2 * channels, channels, 3);
  nn::register_nonlocal_block(store, "mgda.nl1", channels);
  nn::register_nonlocal_block(store, "mgda.nl2", channels);
  nn::register_conv(store, "mgda.mask", channels, 3 * kAlignTaps, 1, Init::kZeros);
  nn::register_conv(store, "mgda.align", channels, channels, kAlignKernel, Init::kZeros);
  // Twice the center delta: modulation starts at sigmoid(0) = 0.5.
  Tensor& w = store.get("mgda.align.weight").value;
  for (std::size_t c = 0; c < channels; ++c) w.at({c, c, 1, 1}) = 2.0;
}

namespace {

Var scale_motion(Tape& tape, ParamStore& store, const char* conv, const char* nl, Var prev,
                 Var cur) {
  if (prev.shape() != cur.shape()) {
    throw ConfigError("MGDA scale shapes differ: " + to_string(prev.shape()) + " vs " +
                      to_string(cur.shape()));
  }
  const Var parts[2] = {prev, ops::sub(cur, prev)};
  Var m_tilde = nn::conv_same(tape, store, conv, ops::concat(parts, 0));
  return ops::add(m_tilde, nn::nonlocal_block(tape, store, nl, m_tilde));
}

}  // namespace

Var motion_features(Tape& tape, ParamStore& store, const BevFeatures& prev,
                    const BevFeatures& cur) {
  Var m1 = scale_motion(tape, store, "mgda.motion1", "mgda.nl1", prev.f1, cur.f1);
  Var m2 = scale_motion(tape, store, "mgda.motion2", "mgda.nl2", prev.f2, cur.f2);
  return ops::add(m1, ops::resize_bilinear(m2, m1.dim(1), m1.dim(2)));
}

AlignmentMask predict_mask(Tape& tape, ParamStore& store, Var motion) {
  Var raw = nn::conv_same(tape, store, "mgda.mask", motion);
  AlignmentMask mask;
  mask.offsets = ops::slice(raw, 0, 0, 2 * kAlignTaps);
  mask.modulation = ops::sigmoid(ops::slice(raw, 0, 2 * kAlignTaps, 3 * kAlignTaps));
  return mask;
}

Var deform_align(Tape& tape, ParamStore& store, Var f_prev, const AlignmentMask& mask) {
  if (mask.offsets.dim(1) != f_prev.dim(1) || mask.offsets.dim(2) != f_prev.dim(2)) {
    throw ConfigError("alignment mask " + to_string(mask.offsets.shape()) +
                      " does not match feature map " + to_string(f_prev.shape()));
  }
  return ops::deform_conv2d(f_prev, mask.offsets, mask.modulation,
                            tape.param(store, "mgda.align.weight"),
                            tape.param(store, "mgda.align.bias"));
}

MgdaOutput mgda_forward(Tape& tape, ParamStore& store, const BevFeatures& prev,
                        const BevFeatures& cur) {
  MgdaOutput out;
  out.motion = motion_features(tape, store, prev, cur);
  out.mask = predict_mask(tape, store, out.motion);
  out.aligned = deform_align(tape, store, prev.f, out.mask);
  return out;
}

}  // namespace mgta
