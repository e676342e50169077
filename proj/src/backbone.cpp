#include "mgta/backbone.hpp"

#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/ops.hpp"

namespace mgta {

void register_backbone(ParamStore& store, std::size_t in_channels, std::size_t channels) {
  nn::register_conv(store, "bb.s1a", in_channels, channels, 3);
  nn::register_conv(store, "bb.s1b", channels, channels, 3);
  nn::register_conv(store, "bb.s2down", channels, channels, 3);
  nn::register_conv(store, "bb.s2a", channels, channels, 3);
  nn::register_conv(store, "bb.s2b", channels, channels, 3);
  nn::register_conv(store, "bb.fuse", 2 * channels, channels, 3);
}

BevFeatures backbone_forward(Tape& tape, ParamStore& store, Var canvas) {
  const std::size_t h = canvas.dim(1), w = canvas.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("backbone needs even BEV dims, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  BevFeatures out;
  Var x = ops::relu(nn::conv_same(tape, store, "bb.s1a", canvas));
  out.f1 = ops::relu(nn::conv_same(tape, store, "bb.s1b", x));
  Var y = ops::relu(nn::conv(tape, store, "bb.s2down", out.f1, 2, 1));
  y = ops::relu(nn::conv_same(tape, store, "bb.s2a", y));
  out.f2 = ops::relu(nn::conv_same(tape, store, "bb.s2b", y));
  const Var parts[2] = {out.f1, ops::upsample2x(out.f2)};
  out.f = ops::relu(nn::conv_same(tape, store, "bb.fuse", ops::concat(parts, 0)));
  return out;
}

}  // namespace mgta
