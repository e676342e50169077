#pragma once

// Loop-level reference implementations used as oracles. Deliberately written
// without any of the library kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mgta/param_store.hpp"
#include "mgta/sequence.hpp"
#include "mgta/stfa.hpp"
#include "mgta/tensor.hpp"
#include "mgta/voxel.hpp"

namespace mgta::testing {

// Zero-padded bilinear read of plane c of x: [C,H,W] at column px, row py.
inline double naive_bilinear(const Tensor& x, std::size_t c, double px, double py) {
  const long h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
  const long x0 = static_cast<long>(std::floor(px)), y0 = static_cast<long>(std::floor(py));
  const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
  double s = 0.0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const long yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
      const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      s += wgt * x[(c * static_cast<std::size_t>(h) + static_cast<std::size_t>(yy)) *
                       static_cast<std::size_t>(w) +
                   static_cast<std::size_t>(xx)];
    }
  return s;
}

// Modulated deformable 3x3-style convolution, one output pixel at a time.
// offset: [2T,H,W] (dy,dx per tap), mask: [T,H,W], w: [Cout,Cin,kh,kw], b: [Cout].
inline Tensor naive_deform_conv(const Tensor& x, const Tensor& offset, const Tensor& mask,
                                const Tensor& w, const Tensor& b) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  Tensor out(Shape{cout, h, wd});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx) {
        double s = b[co];
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t tap = ky * kw + kx;
            const double py = static_cast<double>(y) + static_cast<double>(ky) -
                              static_cast<double>(kh / 2) + offset.at({2 * tap, y, xx});
            const double px = static_cast<double>(xx) + static_cast<double>(kx) -
                              static_cast<double>(kw / 2) + offset.at({2 * tap + 1, y, xx});
            const double m = mask.at({tap, y, xx});
            for (std::size_t ci = 0; ci < cin; ++ci)
              s += w.at({co, ci, ky, kx}) * m * naive_bilinear(x, ci, px, py);
          }
        out.at({co, y, xx}) = s;
      }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Tensor naive_matmul(const Tensor& x, const Tensor& w) {  // [N,A] x [A,B]
  Tensor out(Shape{x.dim(0), w.dim(1)});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t b = 0; b < w.dim(1); ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < x.dim(1); ++a) s += x.at({n, a}) * w.at({a, b});
      out.at({n, b}) = s;
    }
  return out;
}

// x channels-last [HW, C] as a [C, H, W] tensor.
inline Tensor planes(const Tensor& rows, std::size_t h, std::size_t w) {
  const std::size_t c = rows.dim(1);
  Tensor out(Shape{c, h, w});
  for (std::size_t q = 0; q < h * w; ++q)
    for (std::size_t i = 0; i < c; ++i) out[i * h * w + q] = rows[q * c + i];
  return out;
}

// Deformable cross attention of one STFA layer, straight from the definition:
// softmax over J per frame, or over all K*J when cfg.joint_softmax is set.
inline Tensor naive_cross_attention(const ParamStore& s, const StfaConfig& cfg, std::size_t layer,
                                    const std::vector<Tensor>& queries,
                                    const std::vector<Tensor>& inputs, std::size_t h, std::size_t w) {
  const std::string pre = "stfa.l" + std::to_string(layer) + ".";
  const std::size_t c = cfg.channels, m = cfg.heads, j = cfg.points, dh = c / m;
  const std::size_t k_all = queries.size();
  std::vector<Tensor> off, logit, val;
  for (std::size_t k = 0; k < k_all; ++k) {
    off.push_back(naive_matmul(queries[k], s.get(pre + "offset.weight").value));
    logit.push_back(naive_matmul(queries[k], s.get(pre + "attn.weight").value));
    val.push_back(planes(naive_matmul(inputs[k], s.get(pre + "value.weight").value), h, w));
  }
  Tensor acc(Shape{h * w, c});
  for (std::size_t q = 0; q < h * w; ++q) {
    const double qx = static_cast<double>(q % w), qy = static_cast<double>(q / w);
    for (std::size_t mm = 0; mm < m; ++mm) {
      // Normalizer per frame, or one shared across frames.
      std::vector<double> mx(k_all, -1e300), z(k_all, 0.0);
      for (std::size_t k = 0; k < k_all; ++k)
        for (std::size_t jj = 0; jj < j; ++jj) mx[k] = std::max(mx[k], logit[k].at({q, mm * j + jj}));
      if (cfg.joint_softmax) {
        double g = -1e300;
        for (double v : mx) g = std::max(g, v);
        for (double& v : mx) v = g;
      }
      for (std::size_t k = 0; k < k_all; ++k)
        for (std::size_t jj = 0; jj < j; ++jj) z[k] += std::exp(logit[k].at({q, mm * j + jj}) - mx[k]);
      if (cfg.joint_softmax) {
        double total = 0.0;
        for (double v : z) total += v;
        for (double& v : z) v = total;
      }
      for (std::size_t k = 0; k < k_all; ++k)
        for (std::size_t jj = 0; jj < j; ++jj) {
          const std::size_t p = mm * j + jj;
          const double a = std::exp(logit[k].at({q, p}) - mx[k]) / z[k];
          const double px = qx + off[k].at({q, 2 * p}), py = qy + off[k].at({q, 2 * p + 1});
          for (std::size_t d = 0; d < dh; ++d)
            acc.at({q, mm * dh + d}) += a * naive_bilinear(val[k], mm * dh + d, px, py);
        }
    }
  }
  return naive_matmul(acc, s.get(pre + "out.weight").value);
}

// Embedded-Gaussian non-local block, O((HW)^2) over position pairs.
inline Tensor naive_nonlocal(const ParamStore& s, const std::string& prefix, const Tensor& x) {
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  auto proj = [&](const std::string& name, std::size_t pos, std::size_t o) {
    const Tensor& w = s.get(prefix + "." + name + ".weight").value;
    double v = s.get(prefix + "." + name + ".bias").value[o];
    for (std::size_t i = 0; i < c; ++i) v += x[i * hw + pos] * w.at({i, o});
    return v;
  };
  const Tensor& wo = s.get(prefix + ".out.weight").value;
  const Tensor& bo = s.get(prefix + ".out.bias").value;
  const std::size_t inner = wo.dim(0);
  Tensor out(x.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    std::vector<double> logits(hw);
    double mx = -1e300;
    for (std::size_t q = 0; q < hw; ++q) {
      double dot = 0.0;
      for (std::size_t i = 0; i < inner; ++i) dot += proj("theta", p, i) * proj("phi", q, i);
      logits[q] = dot;
      mx = std::max(mx, dot);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    std::vector<double> mixed(inner, 0.0);
    for (std::size_t q = 0; q < hw; ++q) {
      const double a = std::exp(logits[q] - mx) / z;
      for (std::size_t i = 0; i < inner; ++i) mixed[i] += a * proj("g", q, i);
    }
    for (std::size_t o = 0; o < c; ++o) {
      double v = bo[o];
      for (std::size_t i = 0; i < inner; ++i) v += mixed[i] * wo.at({i, o});
      out[o * hw + p] = v;
    }
  }
  return out;
}

// Point count per voxel (ix, iy, iz) by direct binning of every point.
inline std::map<std::array<long, 3>, std::size_t> brute_force_bins(const Frame& f, const GridConfig& g) {
  std::map<std::array<long, 3>, std::size_t> bins;
  for (const auto& s : f.scans)
    for (const auto& p : s.points) {
      const double c[3] = {p.x, p.y, p.z};
      std::array<long, 3> idx{};
      bool in = true;
      for (int a = 0; a < 3; ++a) {
        idx[a] = static_cast<long>(std::floor((c[a] - g.min[a]) / g.size[a]));
        in = in && c[a] >= g.min[a] && c[a] < g.max[a];
      }
      if (in) ++bins[idx];
    }
  return bins;
}

inline std::map<std::array<long, 3>, std::size_t> voxel_counts(const std::vector<TemporalVoxel>& voxels) {
  std::map<std::array<long, 3>, std::size_t> got;
  for (const auto& v : voxels) {
    std::size_t n = 0;
    for (const auto& b : v.buckets) n += b.size();
    got[{static_cast<long>(v.ix), static_cast<long>(v.iy), static_cast<long>(v.iz)}] = n;
  }
  return got;
}

}  // namespace mgta::testing
