#include "mgta/nn.hpp"

#include <array>

#include "mgta/errors.hpp"

namespace mgta::nn {

void register_linear(ParamStore& store, const std::string& prefix, std::size_t cin,
                     std::size_t cout, bool bias, Init weight_init) {
  store.add(prefix + ".weight", Shape{cin, cout}, weight_init, cin);
  if (bias) store.add(prefix + ".bias", Shape{cout}, Init::kZeros);
}

Var linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  Var w = tape.param(store, prefix + ".weight");
  if (store.contains(prefix + ".bias")) return ops::fc(x, w, tape.param(store, prefix + ".bias"));
  return ops::fc(x, w);
}

void register_conv(ParamStore& store, const std::string& prefix, std::size_t cin,
                   std::size_t cout, std::size_t k, Init weight_init) {
  store.add(prefix + ".weight", Shape{cout, cin, k, k}, weight_init, cin * k * k);
  store.add(prefix + ".bias", Shape{cout}, Init::kZeros);
}

Var conv_same(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  return ops::conv2d_same(x, tape.param(store, prefix + ".weight"),
                          tape.param(store, prefix + ".bias"));
}

Var conv(Tape& tape, ParamStore& store, const std::string& prefix, Var x, std::size_t stride,
         std::size_t padding) {
  return ops::conv2d(x, tape.param(store, prefix + ".weight"), tape.param(store, prefix + ".bias"),
                     stride, padding);
}

void register_layer_norm(ParamStore& store, const std::string& prefix, std::size_t c) {
  store.add(prefix + ".gamma", Shape{c}, Init::kOnes);
  store.add(prefix + ".beta", Shape{c}, Init::kZeros);
}

Var layer_norm(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  return ops::layer_norm(x, tape.param(store, prefix + ".gamma"),
                         tape.param(store, prefix + ".beta"));
}

void register_channel_wise_attention(ParamStore& store, const std::string& prefix,
                                     std::size_t channels, std::size_t reduction) {
  if (channels < 2 || reduction == 0 || channels < reduction) {
    throw ConfigError("channel-wise attention needs C >= r (C=" + std::to_string(channels) +
                      ", r=" + std::to_string(reduction) + ")");
  }
  const std::size_t hidden = channels / reduction;
  register_linear(store, prefix + ".squeeze", channels, hidden);
  register_linear(store, prefix + ".excite", hidden, channels);
}

Var channel_wise_attention(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  Shape original = x.shape();
  if (original.size() == 2) {
    x = ops::reshape(x, Shape{1, original[0], original[1]});
  } else if (original.size() != 3) {
    throw DimensionError("channel-wise attention expects [B,S,C] or [S,C], got " +
                         to_string(original));
  }
  Var squeezed = ops::mean_middle(x);
  Var hidden = ops::relu(linear(tape, store, prefix + ".squeeze", squeezed));
  Var gate = ops::sigmoid(linear(tape, store, prefix + ".excite", hidden));
  Var y = ops::mul_broadcast_middle(x, gate);
  if (original.size() == 2) y = ops::reshape(y, original);
  return y;
}

void register_nonlocal_block(ParamStore& store, const std::string& prefix, std::size_t channels) {
  if (channels < 2) throw ConfigError("non-local block needs at least 2 channels");
  const std::size_t inner = channels / 2;
  register_linear(store, prefix + ".theta", channels, inner);
  register_linear(store, prefix + ".phi", channels, inner);
  register_linear(store, prefix + ".g", channels, inner);
  register_linear(store, prefix + ".out", inner, channels);
}

Var nonlocal_block(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  if (x.shape().size() != 3) {
    throw DimensionError("non-local block expects [C,H,W], got " + to_string(x.shape()));
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  Var rows = to_channels_last(x);
  Var theta = linear(tape, store, prefix + ".theta", rows);
  Var phi = linear(tape, store, prefix + ".phi", rows);
  Var g = linear(tape, store, prefix + ".g", rows);
  Var affinity = ops::softmax(ops::matmul(theta, phi, false, true));
  Var mixed = ops::matmul(affinity, g);
  Var out = linear(tape, store, prefix + ".out", mixed);
  return to_channels_first(out, h, w);
}

Var to_channels_last(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("to_channels_last expects [C,H,W]");
  return ops::transpose(ops::reshape(x, Shape{s[0], s[1] * s[2]}));
}

Var to_channels_first(Var x, std::size_t height, std::size_t width) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[0] != height * width) {
    throw DimensionError("to_channels_first: rows " + to_string(s) + " for a " +
                         std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  const std::size_t c = s[1];
  return ops::reshape(ops::transpose(x), Shape{c, height, width});
}

}  // namespace mgta::nn
