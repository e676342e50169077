#include "mgta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mgta/errors.hpp"
#include "mgta/rng.hpp"

namespace mgta::ops {
namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw InternalError("unbound Var passed to an op");
  return *v.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(a.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src, double s = 1.0) {
  if (!dst) return;
  double* d = dst->ptr();
  const double* g = src.ptr();
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s * g[i];
}

// C[n,m] (+)= op(A) op(B); A is [n,k] or [k,n], B is [k,m] or [m,k].
void gemm(const double* a, bool ta, const double* b, bool tb, double* c, std::size_t n,
          std::size_t m, std::size_t k) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = c + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* bp = b + p * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < m; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * m + j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * n;
      const double* bp = b + p * m;
      for (std::size_t i = 0; i < n; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + i * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * b[j * k + p];
        c[i * m + j] += s;
      }
    }
  }
}

template <typename Fwd, typename Bwd>
Var unary(const char* op, Var a, Fwd fwd, Bwd dfdx) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return t.record(op, std::move(y), {a}, [a, dfdx](Tape& tp, const Tensor& g) {
    if (Tensor* dx = tp.grad_buffer(a.id())) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < x.size(); ++i) (*dx)[i] += g[i] * dfdx(x[i]);
    }
  });
}

}  // namespace

namespace kernels {

BilinearTap bilinear_tap(double px, double py, std::size_t height, std::size_t width) {
  BilinearTap tap{};
  const double fx = std::floor(px);
  const double fy = std::floor(py);
  const double lx = px - fx;
  const double ly = py - fy;
  const double hx = 1.0 - lx;
  const double hy = 1.0 - ly;
  const bool finite = std::abs(fx) < 1e9 && std::abs(fy) < 1e9;
  const long x0 = finite ? static_cast<long>(fx) : -2;
  const long y0 = finite ? static_cast<long>(fy) : -2;
  const long h = static_cast<long>(height);
  const long w = static_cast<long>(width);
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const double dwx[4] = {-hy, hy, -ly, ly};
  const double dwy[4] = {-hx, -lx, hx, lx};
  for (int c = 0; c < 4; ++c) {
    const bool inside = xs[c] >= 0 && xs[c] < w && ys[c] >= 0 && ys[c] < h;
    tap.idx[c] = inside ? ys[c] * w + xs[c] : -1;
    tap.w[c] = ws[c];
    tap.dwx[c] = dwx[c];
    tap.dwy[c] = dwy[c];
  }
  return tap;
}

std::vector<double> sample(const Tensor& x, double px, double py) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto tap = bilinear_tap(px, py, h, w);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = x.ptr() + ch * h * w;
    double v = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (tap.idx[k] >= 0) v += tap.w[k] * plane[tap.idx[k]];
    }
    out[ch] = v;
  }
  return out;
}

}  // namespace kernels

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape_of(a).record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t.grad_buffer(a.id()), g);
    accumulate(t.grad_buffer(b.id()), g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return tape_of(a).record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t.grad_buffer(a.id()), g);
    accumulate(t.grad_buffer(b.id()), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* da = t.grad_buffer(a.id())) {
      const Tensor& y = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * y[i];
    }
    if (Tensor* db = t.grad_buffer(b.id())) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double s) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return tape_of(a).record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    accumulate(t.grad_buffer(a.id()), g, s);
  });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary("sigmoid", a, sig, [sig](double v) {
    const double s = sig(v);
    return s * (1.0 - s);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record("reshape", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    accumulate(t.grad_buffer(a.id()), g);
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const Tensor& x = a.value();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return tape_of(a).record("transpose", std::move(out), {a}, [a, r, c](Tape& t, const Tensor& g) {
    if (Tensor* dx = t.grad_buffer(a.id())) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*dx)[i * c + j] += g[j * r + i];
    }
  });
}

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> widths;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw DimensionError("concat: shape mismatch " + to_string(first) + " vs " +
                             to_string(s));
      }
    }
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  const std::size_t row = total * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& x = xs[k].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.ptr() + o * widths[k], widths[k], out.ptr() + o * row + col);
    }
    col += widths[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape_of(xs[0]).record(
      "concat", std::move(out), xs, [inputs, widths, outer, row](Tape& t, const Tensor& g) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (Tensor* dx = t.grad_buffer(inputs[k].id())) {
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.ptr() + o * row + col;
              double* dst = dx->ptr() + o * widths[k];
              for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
            }
          }
          col += widths[k];
        }
      });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on axis " + std::to_string(axis) +
                         " of " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t src_row = s[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t off = begin * inner;
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.ptr() + o * src_row + off, width, out.ptr() + o * width);
  }
  return tape_of(a).record("slice", std::move(out), {a},
                           [a, outer, src_row, width, off](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(a.id())) {
                               for (std::size_t o = 0; o < outer; ++o) {
                                 double* dst = dx->ptr() + o * src_row + off;
                                 const double* src = g.ptr() + o * width;
                                 for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                               }
                             }
                           });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  return tape_of(a).record("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* dx = t.grad_buffer(a.id())) {
      for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += g[0];
    }
  });
}

Var fc(Var x, Var w) { return fc(x, w, Var()); }

Var fc(Var x, Var w, Var b) {
  const Shape& xs = x.shape();
  require_rank("fc weight", w, 2);
  if (xs.empty() || xs.back() != w.dim(0)) {
    throw DimensionError("fc: input " + to_string(xs) + " incompatible with weight " +
                         to_string(w.shape()));
  }
  const std::size_t cin = w.dim(0), cout = w.dim(1);
  if (b.valid() && (b.shape().size() != 1 || b.dim(0) != cout)) {
    throw DimensionError("fc: bias " + to_string(b.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  }
  const std::size_t rows = x.value().size() / cin;
  Shape out_shape = xs;
  out_shape.back() = cout;
  Tensor out(out_shape);
  if (b.valid()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(b.value().ptr(), cout, out.ptr() + r * cout);
  }
  gemm(x.value().ptr(), false, w.value().ptr(), false, out.ptr(), rows, cout, cin);
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return tape_of(x).record("fc", std::move(out), inputs,
                           [x, w, b, rows, cin, cout](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(x.id())) {
                               gemm(g.ptr(), false, w.value().ptr(), true, dx->ptr(), rows, cin,
                                    cout);
                             }
                             if (Tensor* dw = t.grad_buffer(w.id())) {
                               gemm(x.value().ptr(), true, g.ptr(), false, dw->ptr(), cin, cout,
                                    rows);
                             }
                             if (b.valid()) {
                               if (Tensor* db = t.grad_buffer(b.id())) {
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < cout; ++j)
                                     (*db)[j] += g[r * cout + j];
                               }
                             }
                           });
}

Var matmul(Var a, Var b, bool ta, bool tb) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = ta ? a.dim(1) : a.dim(0);
  const std::size_t k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t m = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw DimensionError("matmul: inner dims differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Tensor out(Shape{n, m});
  gemm(a.value().ptr(), ta, b.value().ptr(), tb, out.ptr(), n, m, k);
  return tape_of(a).record("matmul", std::move(out), {a, b},
                           [a, b, ta, tb, n, m, k](Tape& t, const Tensor& g) {
                             // C = A' B' with A' = op(A), B' = op(B).
                             if (Tensor* da = t.grad_buffer(a.id())) {
                               if (!ta) {
                                 // dA = dC B'^T : [n,k]
                                 gemm(g.ptr(), false, b.value().ptr(), !tb, da->ptr(), n, k, m);
                               } else {
                                 // dA = B' dC^T : [k,n]
                                 gemm(b.value().ptr(), tb, g.ptr(), true, da->ptr(), k, n, m);
                               }
                             }
                             if (Tensor* db = t.grad_buffer(b.id())) {
                               if (!tb) {
                                 // dB = A'^T dC : [k,m]
                                 gemm(a.value().ptr(), !ta, g.ptr(), false, db->ptr(), k, m, n);
                               } else {
                                 // dB = dC^T A' : [m,k]
                                 gemm(g.ptr(), true, a.value().ptr(), ta, db->ptr(), m, k, n);
                               }
                             }
                           });
}

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding) {
  require_rank("conv2d input", x, 3);
  require_rank("conv2d kernel", w, 4);
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " incompatible with kernel " +
                         to_string(w.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (h + 2 * padding < kh || wd + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  }
  if (b.valid() && (b.shape().size() != 1 || b.dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + to_string(b.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * padding - kw) / stride + 1;
  const long pad = static_cast<long>(padding);
  const long sl = static_cast<long>(stride);

  // Output column range [lo, hi) for which ix = ox*stride + kx - pad is in [0, wd).
  auto col_range = [=](std::size_t kx, std::size_t& lo, std::size_t& hi) {
    const long off = static_cast<long>(kx) - pad;
    long l = off >= 0 ? 0 : (-off + sl - 1) / sl;
    long hgh = (static_cast<long>(wd) - 1 - off) >= 0
                   ? (static_cast<long>(wd) - 1 - off) / sl + 1
                   : 0;
    l = std::min<long>(l, static_cast<long>(ow));
    hgh = std::clamp<long>(hgh, l, static_cast<long>(ow));
    lo = static_cast<std::size_t>(l);
    hi = static_cast<std::size_t>(hgh);
  };

  Tensor out(Shape{cout, oh, ow});
  const double* xin = x.value().ptr();
  const double* wt = w.value().ptr();
  for (std::size_t co = 0; co < cout; ++co) {
    double* op = out.ptr() + co * oh * ow;
    if (b.valid()) std::fill_n(op, oh * ow, b.value()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* ip = xin + ci * h * wd;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
          if (wv == 0.0) continue;
          std::size_t lo, hi;
          col_range(kx, lo, hi);
          const long xoff = static_cast<long>(kx) - pad;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy) * sl + static_cast<long>(ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const double* irow = ip + iy * static_cast<long>(wd);
            double* orow = op + oy * ow;
            if (stride == 1) {
              const double* src = irow + xoff;
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox)
                orow[ox] += wv * irow[static_cast<long>(ox) * sl + xoff];
            }
          }
        }
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return tape_of(x).record(
      "conv2d", std::move(out), inputs,
      [=](Tape& t, const Tensor& g) {
        Tensor* dx = t.grad_buffer(x.id());
        Tensor* dw = t.grad_buffer(w.id());
        const double* xin = x.value().ptr();
        const double* wt = w.value().ptr();
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gp = g.ptr() + co * oh * ow;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* ip = xin + ci * h * wd;
            double* dip = dx ? dx->ptr() + ci * h * wd : nullptr;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                const double wv = wt[widx];
                std::size_t lo, hi;
                col_range(kx, lo, hi);
                const long xoff = static_cast<long>(kx) - pad;
                double acc = 0.0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy) * sl + static_cast<long>(ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  const double* grow = gp + oy * ow;
                  const long rowoff = iy * static_cast<long>(wd);
                  if (stride == 1) {
                    const double* src = ip + rowoff + xoff;
                    if (dw) {
                      for (std::size_t ox = lo; ox < hi; ++ox) acc += grow[ox] * src[ox];
                    }
                    if (dip && wv != 0.0) {
                      double* dst = dip + rowoff + xoff;
                      for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * grow[ox];
                    }
                  } else {
                    for (std::size_t ox = lo; ox < hi; ++ox) {
                      const long ix = static_cast<long>(ox) * sl + xoff;
                      if (dw) acc += grow[ox] * ip[rowoff + ix];
                      if (dip) dip[rowoff + ix] += wv * grow[ox];
                    }
                  }
                }
                if (dw) (*dw)[widx] += acc;
              }
            }
          }
        }
        if (b.valid()) {
          if (Tensor* db = t.grad_buffer(b.id())) {
            for (std::size_t co = 0; co < cout; ++co) {
              double s = 0.0;
              const double* gp = g.ptr() + co * oh * ow;
              for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
              (*db)[co] += s;
            }
          }
        }
      });
}

Var conv2d_same(Var x, Var w, Var b) {
  require_rank("conv2d kernel", w, 4);
  const std::size_t kh = w.dim(2), kw = w.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d: 'same' padding requires odd kernel sizes, got " +
                      std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (kh != kw) throw ConfigError("conv2d: 'same' padding requires a square kernel");
  return conv2d(x, w, b, 1, (kh - 1) / 2);
}

Var bilinear_sample(Var x, Var locations) {
  require_rank("bilinear_sample input", x, 3);
  require_rank("bilinear_sample locations", locations, 2);
  if (locations.dim(1) != 2) {
    throw DimensionError("bilinear_sample: locations must be [P,2], got " +
                         to_string(locations.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), np = locations.dim(0);
  const Tensor& xv = x.value();
  const Tensor& lv = locations.value();
  Tensor out(Shape{np, c});
  for (std::size_t p = 0; p < np; ++p) {
    const auto tap = kernels::bilinear_tap(lv[2 * p], lv[2 * p + 1], h, w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = xv.ptr() + ch * h * w;
      double v = 0.0;
      for (int k = 0; k < 4; ++k)
        if (tap.idx[k] >= 0) v += tap.w[k] * plane[tap.idx[k]];
      out[p * c + ch] = v;
    }
  }
  return tape_of(x).record(
      "bilinear_sample", std::move(out), {x, locations},
      [x, locations, c, h, w, np](Tape& t, const Tensor& g) {
        Tensor* dx = t.grad_buffer(x.id());
        Tensor* dl = t.grad_buffer(locations.id());
        const Tensor& xv = x.value();
        const Tensor& lv = locations.value();
        for (std::size_t p = 0; p < np; ++p) {
          const auto tap = kernels::bilinear_tap(lv[2 * p], lv[2 * p + 1], h, w);
          double gx = 0.0, gy = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double go = g[p * c + ch];
            const double* plane = xv.ptr() + ch * h * w;
            for (int k = 0; k < 4; ++k) {
              if (tap.idx[k] < 0) continue;
              if (dx) (*dx)[ch * h * w + tap.idx[k]] += go * tap.w[k];
              gx += go * tap.dwx[k] * plane[tap.idx[k]];
              gy += go * tap.dwy[k] * plane[tap.idx[k]];
            }
          }
          if (dl) {
            (*dl)[2 * p] += gx;
            (*dl)[2 * p + 1] += gy;
          }
        }
      });
}

namespace {

struct AxisInterp {
  std::vector<std::size_t> i0, i1;
  std::vector<double> l0, l1;
};

AxisInterp make_axis(std::size_t in, std::size_t out) {
  AxisInterp a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.l0.resize(out);
  a.l1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double l = src - static_cast<double>(lo);
    a.i0[o] = lo;
    a.i1[o] = hi;
    a.l1[o] = l;
    a.l0[o] = 1.0 - l;
  }
  return a;
}

}  // namespace

Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  require_rank("resize_bilinear", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear: empty spatial dims");
  }
  auto ay = make_axis(h, out_h);
  auto ax = make_axis(w, out_w);
  const Tensor& xv = x.value();
  Tensor out(Shape{c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = xv.ptr() + ch * h * w;
    double* o = out.ptr() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* r0 = p + ay.i0[oy] * w;
      const double* r1 = p + ay.i1[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        o[oy * out_w + ox] =
            ay.l0[oy] * (ax.l0[ox] * r0[ax.i0[ox]] + ax.l1[ox] * r0[ax.i1[ox]]) +
            ay.l1[oy] * (ax.l0[ox] * r1[ax.i0[ox]] + ax.l1[ox] * r1[ax.i1[ox]]);
      }
    }
  }
  return tape_of(x).record(
      "resize_bilinear", std::move(out), {x},
      [x, c, h, w, out_h, out_w, ay, ax](Tape& t, const Tensor& g) {
        Tensor* dx = t.grad_buffer(x.id());
        if (!dx) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* d = dx->ptr() + ch * h * w;
          const double* gp = g.ptr() + ch * out_h * out_w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            double* r0 = d + ay.i0[oy] * w;
            double* r1 = d + ay.i1[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const double gv = gp[oy * out_w + ox];
              r0[ax.i0[ox]] += gv * ay.l0[oy] * ax.l0[ox];
              r0[ax.i1[ox]] += gv * ay.l0[oy] * ax.l1[ox];
              r1[ax.i0[ox]] += gv * ay.l1[oy] * ax.l0[ox];
              r1[ax.i1[ox]] += gv * ay.l1[oy] * ax.l1[ox];
            }
          }
        }
      });
}

Var upsample2x(Var x) {
  require_rank("upsample2x", x, 3);
  return resize_bilinear(x, 2 * x.dim(1), 2 * x.dim(2));
}

Var softmax(Var a) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) throw DimensionError("softmax: empty last axis");
  const std::size_t j = s.back();
  const std::size_t rows = a.value().size() / j;
  const Tensor& x = a.value();
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * j;
    double* yr = out.ptr() + r * j;
    double mx = xr[0];
    for (std::size_t i = 1; i < j; ++i) mx = std::max(mx, xr[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < j; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      z += yr[i];
    }
    for (std::size_t i = 0; i < j; ++i) yr[i] /= z;
  }
  Tape& t = tape_of(a);
  const std::size_t yid = t.size();
  return t.record("softmax", std::move(out), {a}, [a, yid, j, rows](Tape& tp, const Tensor& g) {
    Tensor* dx = tp.grad_buffer(a.id());
    if (!dx) return;
    const Tensor& y = tp.value(yid);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * j;
      const double* gr = g.ptr() + r * j;
      double dot = 0.0;
      for (std::size_t i = 0; i < j; ++i) dot += gr[i] * yr[i];
      double* dr = dx->ptr() + r * j;
      for (std::size_t i = 0; i < j; ++i) dr[i] += yr[i] * (gr[i] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() < 2) {
    throw DimensionError("layer_norm: need at least 2 channels, got shape " + to_string(s));
  }
  const std::size_t c = s.back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: affine params must be [" + std::to_string(c) + "]");
  }
  const std::size_t rows = x.value().size() / c;
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(s);
  Tensor xhat(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.ptr() + r * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += xr[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < c; ++i) {
      const double h = (xr[i] - mean) * is;
      xhat[r * c + i] = h;
      out[r * c + i] = gv[i] * h + bv[i];
    }
  }
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, const Tensor& g) {
        const Tensor& gv = gamma.value();
        if (Tensor* dg = t.grad_buffer(gamma.id())) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i) (*dg)[i] += g[r * c + i] * xhat[r * c + i];
        }
        if (Tensor* db = t.grad_buffer(beta.id())) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i) (*db)[i] += g[r * c + i];
        }
        if (Tensor* dx = t.grad_buffer(x.id())) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t i = 0; i < c; ++i) {
              const double d = g[r * c + i] * gv[i];
              mean_d += d;
              mean_dh += d * xhat[r * c + i];
            }
            mean_d *= inv_c;
            mean_dh *= inv_c;
            for (std::size_t i = 0; i < c; ++i) {
              const double d = g[r * c + i] * gv[i];
              (*dx)[r * c + i] += inv_std[r] * (d - mean_d - xhat[r * c + i] * mean_dh);
            }
          }
        }
      });
}

Var dropout(Var x, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  Rng rng(seed);
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(xv.size());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return tape_of(x).record("dropout", std::move(out), {x},
                           [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(x.id())) {
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 (*dx)[i] += g[i] * mask[i];
                             }
                           });
}

Var mean_middle(Var x) {
  require_rank("mean_middle", x, 3);
  const std::size_t b = x.dim(0), s = x.dim(1), c = x.dim(2);
  if (s == 0) throw DimensionError("mean_middle: empty middle axis");
  const Tensor& xv = x.value();
  Tensor out(Shape{b, c});
  const double inv = 1.0 / static_cast<double>(s);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += xv[(i * s + j) * c + k] * inv;
  return tape_of(x).record("mean_middle", std::move(out), {x},
                           [x, b, s, c, inv](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(x.id())) {
                               for (std::size_t i = 0; i < b; ++i)
                                 for (std::size_t j = 0; j < s; ++j)
                                   for (std::size_t k = 0; k < c; ++k)
                                     (*dx)[(i * s + j) * c + k] += g[i * c + k] * inv;
                             }
                           });
}

Var mul_broadcast_middle(Var x, Var gate) {
  require_rank("mul_broadcast_middle", x, 3);
  const std::size_t b = x.dim(0), s = x.dim(1), c = x.dim(2);
  if (gate.shape() != Shape{b, c}) {
    throw DimensionError("mul_broadcast_middle: gate " + to_string(gate.shape()) +
                         " for input " + to_string(x.shape()));
  }
  const Tensor& xv = x.value();
  const Tensor& gv = gate.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < c; ++k)
        out[(i * s + j) * c + k] = xv[(i * s + j) * c + k] * gv[i * c + k];
  return tape_of(x).record("mul_broadcast_middle", std::move(out), {x, gate},
                           [x, gate, b, s, c](Tape& t, const Tensor& g) {
                             const Tensor& xv = x.value();
                             const Tensor& gv = gate.value();
                             Tensor* dx = t.grad_buffer(x.id());
                             Tensor* dg = t.grad_buffer(gate.id());
                             for (std::size_t i = 0; i < b; ++i)
                               for (std::size_t j = 0; j < s; ++j)
                                 for (std::size_t k = 0; k < c; ++k) {
                                   const std::size_t o = (i * s + j) * c + k;
                                   if (dx) (*dx)[o] += g[o] * gv[i * c + k];
                                   if (dg) (*dg)[i * c + k] += g[o] * xv[o];
                                 }
                           });
}

Var deform_conv2d(Var x, Var offset, Var mask, Var w, Var b) {
  require_rank("deform_conv2d input", x, 3);
  require_rank("deform_conv2d kernel", w, 4);
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t taps = kh * kw, hw = h * wd;
  if (w.dim(1) != cin) {
    throw DimensionError("deform_conv2d: input " + to_string(x.shape()) +
                         " incompatible with kernel " + to_string(w.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("deform_conv2d: kernel sizes must be odd");
  if (offset.shape() != Shape{2 * taps, h, wd} || mask.shape() != Shape{taps, h, wd}) {
    throw DimensionError("deform_conv2d: offset " + to_string(offset.shape()) + " / mask " +
                         to_string(mask.shape()) + " do not match input " +
                         to_string(x.shape()));
  }
  if (b.valid() && b.shape() != Shape{cout}) {
    throw DimensionError("deform_conv2d: bias shape " + to_string(b.shape()));
  }
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const Tensor& xv = x.value();
  const Tensor& ov = offset.value();
  const Tensor& mv = mask.value();
  // col[(ci*taps + i) * hw + p] = mask_i(p) * x_ci(p + p_i + offset_i(p))
  Tensor col(Shape{cin * taps, hw});
  for (std::size_t i = 0; i < taps; ++i) {
    const long ky = static_cast<long>(i / kw), kx = static_cast<long>(i % kw);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < wd; ++xx) {
        const std::size_t p = y * wd + xx;
        const double py = static_cast<double>(static_cast<long>(y) + ky - ph) + ov[(2 * i) * hw + p];
        const double px =
            static_cast<double>(static_cast<long>(xx) + kx - pw) + ov[(2 * i + 1) * hw + p];
        const double m = mv[i * hw + p];
        const auto tap = kernels::bilinear_tap(px, py, h, wd);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* plane = xv.ptr() + ci * hw;
          double v = 0.0;
          for (int k = 0; k < 4; ++k)
            if (tap.idx[k] >= 0) v += tap.w[k] * plane[tap.idx[k]];
          col[(ci * taps + i) * hw + p] = m * v;
        }
      }
    }
  }
  Tensor out(Shape{cout, h, wd});
  if (b.valid()) {
    for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.ptr() + co * hw, hw, b.value()[co]);
  }
  gemm(w.value().ptr(), false, col.ptr(), false, out.ptr(), cout, hw, cin * taps);
  std::vector<Var> inputs{x, offset, mask, w};
  if (b.valid()) inputs.push_back(b);
  return tape_of(x).record(
      "deform_conv2d", std::move(out), inputs,
      [=, col = std::move(col)](Tape& t, const Tensor& g) {
        if (Tensor* dw = t.grad_buffer(w.id())) {
          gemm(g.ptr(), false, col.ptr(), true, dw->ptr(), cout, cin * taps, hw);
        }
        if (b.valid()) {
          if (Tensor* db = t.grad_buffer(b.id())) {
            for (std::size_t co = 0; co < cout; ++co) {
              double s = 0.0;
              for (std::size_t p = 0; p < hw; ++p) s += g[co * hw + p];
              (*db)[co] += s;
            }
          }
        }
        Tensor* dx = t.grad_buffer(x.id());
        Tensor* doff = t.grad_buffer(offset.id());
        Tensor* dmask = t.grad_buffer(mask.id());
        if (!dx && !doff && !dmask) return;
        Tensor dcol(Shape{cin * taps, hw});
        gemm(w.value().ptr(), true, g.ptr(), false, dcol.ptr(), cin * taps, hw, cout);
        const Tensor& xv = x.value();
        const Tensor& ov = offset.value();
        const Tensor& mv = mask.value();
        for (std::size_t i = 0; i < taps; ++i) {
          const long ky = static_cast<long>(i / kw), kx = static_cast<long>(i % kw);
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < wd; ++xx) {
              const std::size_t p = y * wd + xx;
              const double py =
                  static_cast<double>(static_cast<long>(y) + ky - ph) + ov[(2 * i) * hw + p];
              const double px =
                  static_cast<double>(static_cast<long>(xx) + kx - pw) + ov[(2 * i + 1) * hw + p];
              const double m = mv[i * hw + p];
              const auto tap = kernels::bilinear_tap(px, py, h, wd);
              double gm = 0.0, gx = 0.0, gy = 0.0;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double gc = dcol[(ci * taps + i) * hw + p];
                if (gc == 0.0) continue;
                const double* plane = xv.ptr() + ci * hw;
                double v = 0.0, vx = 0.0, vy = 0.0;
                for (int k = 0; k < 4; ++k) {
                  if (tap.idx[k] < 0) continue;
                  const double pv = plane[tap.idx[k]];
                  v += tap.w[k] * pv;
                  vx += tap.dwx[k] * pv;
                  vy += tap.dwy[k] * pv;
                  if (dx) (*dx)[ci * hw + tap.idx[k]] += gc * m * tap.w[k];
                }
                gm += gc * v;
                gx += gc * m * vx;
                gy += gc * m * vy;
              }
              if (dmask) (*dmask)[i * hw + p] += gm;
              if (doff) {
                (*doff)[(2 * i) * hw + p] += gy;
                (*doff)[(2 * i + 1) * hw + p] += gx;
              }
            }
          }
        }
      });
}

Var deform_attn_core(std::span<const Var> values, std::span<const Var> offsets,
                     std::span<const Var> weights, std::size_t height, std::size_t width,
                     std::size_t heads, std::size_t points) {
  const std::size_t nk = values.size();
  if (nk == 0 || offsets.size() != nk || weights.size() != nk) {
    throw DimensionError("deform_attn_core: need matching non-empty value/offset/weight lists");
  }
  const std::size_t hw = height * width;
  const std::size_t c = values[0].shape().size() == 2 ? values[0].dim(1) : 0;
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("deform_attn_core: channels " + std::to_string(c) +
                      " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = c / heads;
  for (std::size_t k = 0; k < nk; ++k) {
    if (values[k].shape() != Shape{hw, c} || offsets[k].shape() != Shape{hw, heads * points * 2} ||
        weights[k].shape() != Shape{hw, heads * points}) {
      throw DimensionError("deform_attn_core: frame " + std::to_string(k) + " has value " +
                           to_string(values[k].shape()) + ", offset " +
                           to_string(offsets[k].shape()) + ", weight " +
                           to_string(weights[k].shape()));
    }
  }
  Tensor out(Shape{hw, c});
  for (std::size_t k = 0; k < nk; ++k) {
    const Tensor& v = values[k].value();
    const Tensor& o = offsets[k].value();
    const Tensor& a = weights[k].value();
    for (std::size_t q = 0; q < hw; ++q) {
      const double qx = static_cast<double>(q % width);
      const double qy = static_cast<double>(q / width);
      double* oq = out.ptr() + q * c;
      for (std::size_t m = 0; m < heads; ++m) {
        for (std::size_t j = 0; j < points; ++j) {
          const std::size_t mj = m * points + j;
          const double aw = a[q * heads * points + mj];
          const auto tap = kernels::bilinear_tap(qx + o[(q * heads * points + mj) * 2],
                                                 qy + o[(q * heads * points + mj) * 2 + 1],
                                                 height, width);
          for (int cr = 0; cr < 4; ++cr) {
            if (tap.idx[cr] < 0) continue;
            const double s = aw * tap.w[cr];
            const double* vr = v.ptr() + static_cast<std::size_t>(tap.idx[cr]) * c + m * dh;
            for (std::size_t d = 0; d < dh; ++d) oq[m * dh + d] += s * vr[d];
          }
        }
      }
    }
  }
  std::vector<Var> inputs;
  inputs.insert(inputs.end(), values.begin(), values.end());
  inputs.insert(inputs.end(), offsets.begin(), offsets.end());
  inputs.insert(inputs.end(), weights.begin(), weights.end());
  return tape_of(values[0]).record(
      "deform_attn_core", std::move(out), inputs,
      [inputs, nk, hw, c, dh, heads, points, height, width](Tape& t, const Tensor& g) {
        std::vector<double> vals(dh), grad_x(dh), grad_y(dh);
        for (std::size_t k = 0; k < nk; ++k) {
          const Var vk = inputs[k], ok = inputs[nk + k], ak = inputs[2 * nk + k];
          Tensor* dv = t.grad_buffer(vk.id());
          Tensor* dof = t.grad_buffer(ok.id());
          Tensor* da = t.grad_buffer(ak.id());
          if (!dv && !dof && !da) continue;
          const Tensor& v = vk.value();
          const Tensor& o = ok.value();
          const Tensor& a = ak.value();
          for (std::size_t q = 0; q < hw; ++q) {
            const double qx = static_cast<double>(q % width);
            const double qy = static_cast<double>(q / width);
            const double* gq = g.ptr() + q * c;
            for (std::size_t m = 0; m < heads; ++m) {
              for (std::size_t j = 0; j < points; ++j) {
                const std::size_t mj = q * heads * points + m * points + j;
                const double aw = a[mj];
                const auto tap = kernels::bilinear_tap(qx + o[mj * 2], qy + o[mj * 2 + 1], height,
                                                       width);
                double ga = 0.0, gx = 0.0, gy = 0.0;
                for (int cr = 0; cr < 4; ++cr) {
                  if (tap.idx[cr] < 0) continue;
                  const std::size_t row = static_cast<std::size_t>(tap.idx[cr]) * c + m * dh;
                  const double* vr = v.ptr() + row;
                  double dot = 0.0;
                  for (std::size_t d = 0; d < dh; ++d) dot += gq[m * dh + d] * vr[d];
                  ga += tap.w[cr] * dot;
                  gx += tap.dwx[cr] * dot;
                  gy += tap.dwy[cr] * dot;
                  if (dv) {
                    const double s = aw * tap.w[cr];
                    double* dvr = dv->ptr() + row;
                    for (std::size_t d = 0; d < dh; ++d) dvr[d] += s * gq[m * dh + d];
                  }
                }
                if (da) (*da)[mj] += ga;
                if (dof) {
                  (*dof)[mj * 2] += aw * gx;
                  (*dof)[mj * 2 + 1] += aw * gy;
                }
              }
            }
          }
        }
      });
}

Var segment_max(Var x, std::span<const std::size_t> segment, std::size_t num_segments) {
  require_rank("segment_max", x, 2);
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (segment.size() != rows) {
    throw DimensionError("segment_max: " + std::to_string(segment.size()) + " segment ids for " +
                         std::to_string(rows) + " rows");
  }
  const Tensor& xv = x.value();
  Tensor out(Shape{num_segments, c}, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(num_segments * c, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t s = segment[r];
    if (s >= num_segments) throw InternalError("segment_max: segment id out of range");
    for (std::size_t k = 0; k < c; ++k) {
      const double v = xv[r * c + k];
      if (arg[s * c + k] == rows || v > out[s * c + k]) {
        out[s * c + k] = v;
        arg[s * c + k] = r;
      }
    }
  }
  for (std::size_t i = 0; i < arg.size(); ++i) {
    if (arg[i] == rows) throw InternalError("segment_max: empty segment");
  }
  return tape_of(x).record("segment_max", std::move(out), {x},
                           [x, c, arg = std::move(arg)](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(x.id())) {
                               for (std::size_t i = 0; i < arg.size(); ++i)
                                 (*dx)[arg[i] * c + i % c] += g[i];
                             }
                           });
}

Var scatter_rows(Var x, std::span<const std::size_t> block, std::span<const std::size_t> cell,
                 std::size_t blocks, std::size_t height, std::size_t width) {
  require_rank("scatter_rows", x, 2);
  const std::size_t v = x.dim(0), c = x.dim(1), hw = height * width;
  if (block.size() != v || cell.size() != v) {
    throw DimensionError("scatter_rows: coordinate count does not match rows");
  }
  std::vector<std::size_t> dest(v);
  std::vector<char> used(blocks * hw, 0);
  for (std::size_t r = 0; r < v; ++r) {
    if (block[r] >= blocks || cell[r] >= hw) {
      throw DimensionError("scatter_rows: coordinate outside the canvas");
    }
    const std::size_t key = block[r] * hw + cell[r];
    if (used[key]) throw InternalError("scatter_rows: duplicate canvas coordinate");
    used[key] = 1;
    dest[r] = key;
  }
  const Tensor& xv = x.value();
  Tensor out(Shape{blocks * c, height, width});
  for (std::size_t r = 0; r < v; ++r) {
    const std::size_t b = dest[r] / hw, p = dest[r] % hw;
    for (std::size_t k = 0; k < c; ++k) out[(b * c + k) * hw + p] = xv[r * c + k];
  }
  return tape_of(x).record("scatter_rows", std::move(out), {x},
                           [x, c, hw, dest = std::move(dest)](Tape& t, const Tensor& g) {
                             if (Tensor* dx = t.grad_buffer(x.id())) {
                               for (std::size_t r = 0; r < dest.size(); ++r) {
                                 const std::size_t b = dest[r] / hw, p = dest[r] % hw;
                                 for (std::size_t k = 0; k < c; ++k)
                                   (*dx)[r * c + k] += g[(b * c + k) * hw + p];
                               }
                             }
                           });
}

namespace {
constexpr double kLogFloor = 1e-12;
double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }
}  // namespace

Var gaussian_focal_loss(Var prob, const Tensor& target, double alpha, double beta) {
  if (prob.shape() != target.shape()) {
    throw DimensionError("gaussian_focal_loss: prediction " + to_string(prob.shape()) +
                         " vs target " + to_string(target.shape()));
  }
  const Tensor& p = prob.value();
  double num_pos = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] == 1.0) num_pos += 1.0;
  const double norm = std::max(1.0, num_pos);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (target[i] == 1.0) {
      loss -= std::pow(1.0 - pi, alpha) * safe_log(pi);
    } else {
      loss -= std::pow(1.0 - target[i], beta) * std::pow(pi, alpha) * safe_log(1.0 - pi);
    }
  }
  return tape_of(prob).record(
      "gaussian_focal_loss", Tensor::scalar(loss / norm), {prob},
      [prob, target, alpha, beta, norm](Tape& t, const Tensor& g) {
        Tensor* dp = t.grad_buffer(prob.id());
        if (!dp) return;
        const Tensor& p = prob.value();
        const double s = g[0] / norm;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double pi = p[i];
          double d;
          if (target[i] == 1.0) {
            const double one_m = 1.0 - pi;
            d = alpha * std::pow(one_m, alpha - 1.0) * safe_log(pi) -
                std::pow(one_m, alpha) / std::max(pi, kLogFloor);
          } else {
            const double w = std::pow(1.0 - target[i], beta);
            d = -w * (alpha * std::pow(pi, alpha - 1.0) * safe_log(1.0 - pi) -
                      std::pow(pi, alpha) / std::max(1.0 - pi, kLogFloor));
          }
          (*dp)[i] += s * d;
        }
      });
}

Var masked_l1(Var pred, const Tensor& target, const Tensor& mask, double norm) {
  require_rank("masked_l1", pred, 3);
  if (pred.shape() != target.shape() || mask.shape() != Shape{pred.dim(1), pred.dim(2)}) {
    throw DimensionError("masked_l1: prediction " + to_string(pred.shape()) + ", target " +
                         to_string(target.shape()) + ", mask " + to_string(mask.shape()));
  }
  if (!(norm > 0.0)) throw ConfigError("masked_l1: norm must be positive");
  const std::size_t c = pred.dim(0), hw = pred.dim(1) * pred.dim(2);
  const Tensor& pv = pred.value();
  double loss = 0.0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i)
      if (mask[i] != 0.0) loss += std::abs(pv[k * hw + i] - target[k * hw + i]);
  return tape_of(pred).record(
      "masked_l1", Tensor::scalar(loss / norm), {pred},
      [pred, target, mask, c, hw, norm](Tape& t, const Tensor& g) {
        Tensor* dp = t.grad_buffer(pred.id());
        if (!dp) return;
        const Tensor& pv = pred.value();
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t i = 0; i < hw; ++i) {
            if (mask[i] == 0.0) continue;
            const double diff = pv[k * hw + i] - target[k * hw + i];
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            (*dp)[k * hw + i] += g[0] * sgn / norm;
          }
      });
}

}  // namespace mgta::ops
