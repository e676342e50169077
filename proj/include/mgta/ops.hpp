#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mgta/tape.hpp"
#include "mgta/tensor.hpp"

/// Differentiable primitives. Every op records itself on the tape of its
/// inputs and supplies an analytic backward. Spatial maps are [C,H,W];
/// per-location features are channels-last [rows, C].
namespace mgta::ops {

enum class Mode { kTrain, kEval };

// Element-wise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);

Var reshape(Var a, Shape shape);
// 2-D transpose.
Var transpose(Var a);
Var concat(std::span<const Var> xs, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
// Sum of all elements as a [1] tensor.
Var sum(Var a);

/// y = x W + b over the last axis of x. x: [..., Cin], W: [Cin, Cout], b: [Cout].
Var fc(Var x, Var w, Var b);
Var fc(Var x, Var w);

/// C = op(A) op(B) for 2-D operands.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

/// Cross-correlation. x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or unbound.
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding);
/// Stride 1, padding (k-1)/2. Throws ConfigError for even kernels.
Var conv2d_same(Var x, Var w, Var b);

/// Bilinear sampling with zero padding. x: [C,H,W]; locations: [P,2] holding
/// (x, y) = (column, row) in grid units. Returns [P,C].
Var bilinear_sample(Var x, Var locations);

/// Bilinear resize with half-pixel centers. x: [C,H,W] -> [C,out_h,out_w].
Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);
Var upsample2x(Var x);

/// Softmax over the last axis, max-subtracted.
Var softmax(Var x);

/// Normalizes over the last axis; eps inside the square root.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Inverted dropout. Identity in eval mode. rate must lie in [0, 1).
Var dropout(Var x, double rate, Mode mode, std::uint64_t seed);

// x: [B,S,C] -> [B,C], mean over S.
Var mean_middle(Var x);
// x: [B,S,C], g: [B,C] -> x * g broadcast over S.
Var mul_broadcast_middle(Var x, Var g);

/// Modulated deformable convolution (stride 1, "same" padding).
/// x: [C,H,W], offset: [2*kh*kw,H,W] as (dy,dx) per tap, mask: [kh*kw,H,W],
/// w: [Cout,C,kh,kw], b: [Cout] or unbound.
Var deform_conv2d(Var x, Var offset, Var mask, Var w, Var b);

/// Sampling core of multi-head deformable attention over several value maps.
/// values[k]: [H*W, C] channels-last (head m owns channels [m*C/M, (m+1)*C/M)),
/// offsets[k]: [H*W, M*J*2] as (dx,dy) per (m,j), weights[k]: [H*W, M*J].
/// out[q, m*Dh+d] = sum_k sum_j w * bilinear(values[k][., m*Dh+d], p_q + offset).
Var deform_attn_core(std::span<const Var> values, std::span<const Var> offsets,
                     std::span<const Var> weights, std::size_t height, std::size_t width,
                     std::size_t heads, std::size_t points);

/// Per-segment element-wise max. x: [P,C]; segment[r] < num_segments; every
/// segment must be non-empty. Ties route the gradient to the lowest row.
Var segment_max(Var x, std::span<const std::size_t> segment, std::size_t num_segments);

/// Writes row v of x: [V,C] into out[block[v]*C + c, cell[v]] of a zero
/// canvas [blocks*C, H, W]. Duplicate (block, cell) pairs throw InternalError.
Var scatter_rows(Var x, std::span<const std::size_t> block, std::span<const std::size_t> cell,
                 std::size_t blocks, std::size_t height, std::size_t width);

/// Gaussian focal loss on probabilities, normalized by max(1, #positives)
/// where positives are cells with target exactly 1.
Var gaussian_focal_loss(Var prob, const Tensor& target, double alpha = 2.0, double beta = 4.0);

/// sum over channels and cells with mask != 0 of |pred - target|, divided by norm.
/// pred/target: [C,H,W], mask: [H,W].
Var masked_l1(Var pred, const Tensor& target, const Tensor& mask, double norm);

// Plain-tensor helpers shared with tooling.
namespace kernels {

struct BilinearTap {
  // Flat indices into an H*W plane, -1 for out-of-bounds corners.
  long idx[4];
  double w[4];
  // d(weight)/dx and d(weight)/dy per corner.
  double dwx[4];
  double dwy[4];
};

BilinearTap bilinear_tap(double px, double py, std::size_t height, std::size_t width);

// Sample every channel of x: [C,H,W] at (px, py).
std::vector<double> sample(const Tensor& x, double px, double py);

}  // namespace kernels

}  // namespace mgta::ops
