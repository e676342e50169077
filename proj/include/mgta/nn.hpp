#pragma once

#include <cstddef>
#include <string>

#include "mgta/ops.hpp"
#include "mgta/param_store.hpp"
#include "mgta/tape.hpp"

/// Parameterized layers built from ops. A layer is identified by a name
/// prefix in the ParamStore; register_* creates its tensors and the forward
/// function looks them up by the same prefix.
namespace mgta::nn {

// <prefix>.weight [cin, cout], <prefix>.bias [cout] (bias optional).
void register_linear(ParamStore& store, const std::string& prefix, std::size_t cin,
                     std::size_t cout, bool bias = true, Init weight_init = Init::kUniformFanIn);
Var linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

// <prefix>.weight [cout, cin, k, k], <prefix>.bias [cout].
void register_conv(ParamStore& store, const std::string& prefix, std::size_t cin,
                   std::size_t cout, std::size_t k, Init weight_init = Init::kUniformFanIn);
Var conv_same(Tape& tape, ParamStore& store, const std::string& prefix, Var x);
Var conv(Tape& tape, ParamStore& store, const std::string& prefix, Var x, std::size_t stride,
         std::size_t padding);

// <prefix>.gamma, <prefix>.beta of shape [c].
void register_layer_norm(ParamStore& store, const std::string& prefix, std::size_t c);
Var layer_norm(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

inline constexpr std::size_t kSqueezeReduction = 4;

/// Squeeze-excitation gate: mean over the set axis, FC(C -> C/r), ReLU,
/// FC(C/r -> C), sigmoid, rescale. x: [B,S,C] (each of the B groups gets its
/// own gate) or [S,C] (a single group).
void register_channel_wise_attention(ParamStore& store, const std::string& prefix,
                                     std::size_t channels,
                                     std::size_t reduction = kSqueezeReduction);
Var channel_wise_attention(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

/// Embedded-Gaussian non-local operation on x: [C,H,W] with a C/2 bottleneck.
/// Returns W_out(softmax(theta(x) phi(x)^T) g(x)) without the residual add.
void register_nonlocal_block(ParamStore& store, const std::string& prefix, std::size_t channels);
Var nonlocal_block(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

// [C,H,W] <-> [H*W, C]
Var to_channels_last(Var x);
Var to_channels_first(Var x, std::size_t height, std::size_t width);

}  // namespace mgta::nn
