#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vsscrowd/tensor.hpp"

namespace vsscrowd {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
}

// Stable logistic, clamped into the open interval (0,1). The clamp keeps the
// "strictly inside" contract even where exp() underflows.
inline double stable_sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    double e = std::exp(-x);
    s = 1.0 / (1.0 + e);
  } else {
    double e = std::exp(x);
    s = e / (1.0 + e);
  }
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::min(std::max(s, lo), hi);
}

inline double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (detail::should_record({&a, &b})) {
    detail::mark_output(out, true);
    Tensor ac = a, bc = b, oc = out;
    Tape::record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const int64_t m = oc.numel();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (detail::should_record({&a, &b})) {
    detail::mark_output(out, true);
    Tensor ac = a, bc = b, oc = out;
    Tape::record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const int64_t m = oc.numel();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t i = 0; i < m; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::should_record({&a, &b})) {
    detail::mark_output(out, true);
    Tensor ac = a, bc = b, oc = out;
    Tape::record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const int64_t m = oc.numel();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        const double* pb2 = bc.data();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        const double* pa2 = ac.data();
        for (int64_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc, s]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp_elem(const Tensor& a) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const double* po2 = oc.data();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * po2[i];
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const double* pa2 = ac.data();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i)
        if (pa2[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

/// Elementwise logistic; outputs strictly inside (0,1) for all finite inputs.
inline Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = detail::stable_sigmoid(pa[i]);
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const double* s = oc.data();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
    });
  }
  return out;
}

inline Tensor silu(const Tensor& a) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * detail::stable_sigmoid(pa[i]);
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const double* pa2 = ac.data();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) {
        double s = detail::stable_sigmoid(pa2[i]);
        ga[i] += g[i] * s * (1.0 + pa2[i] * (1.0 - s));
      }
    });
  }
  return out;
}

inline Tensor softplus(const Tensor& a) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = detail::stable_softplus(pa[i]);
  if (detail::should_record({&a})) {
    detail::mark_output(out, true);
    Tensor ac = a, oc = out;
    Tape::record([ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      const double* pa2 = ac.data();
      double* ga = ac.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * detail::stable_sigmoid(pa2[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// broadcast products: the two patterns the model needs
// ---------------------------------------------------------------------------

/// w has numel C (stored as (C) or (C,1,1)); x is (C,...). out[c,p] = w[c]*x[c,p].
inline Tensor mul_channel(const Tensor& w, const Tensor& x) {
  const int64_t c = x.dim(0);
  if (w.numel() != c)
    throw DimensionError("mul_channel: weight numel " + std::to_string(w.numel()) +
                         " vs channels " + std::to_string(c));
  const int64_t plane = x.numel() / c;
  Tensor out(x.shape());
  const double* pw = w.data();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const double wv = pw[ch];
    for (int64_t p = 0; p < plane; ++p) po[ch * plane + p] = wv * px[ch * plane + p];
  }
  if (detail::should_record({&w, &x})) {
    detail::mark_output(out, true);
    Tensor wc = w, xc = x, oc = out;
    Tape::record([wc, xc, oc, c, plane]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      if (wc.requires_grad()) {
        double* gw = wc.grad();
        const double* px2 = xc.data();
        for (int64_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int64_t p = 0; p < plane; ++p) acc += g[ch * plane + p] * px2[ch * plane + p];
          gw[ch] += acc;
        }
      }
      if (xc.requires_grad()) {
        double* gx = xc.grad();
        const double* pw2 = wc.data();
        for (int64_t ch = 0; ch < c; ++ch) {
          const double wv = pw2[ch];
          for (int64_t p = 0; p < plane; ++p) gx[ch * plane + p] += wv * g[ch * plane + p];
        }
      }
    });
  }
  return out;
}

/// gate has numel H*W (stored as (1,H,W) or (H,W)); x is (C,H,W).
inline Tensor mul_spatial(const Tensor& gate, const Tensor& x) {
  if (x.ndim() != 3) throw DimensionError("mul_spatial: x must be (C,H,W)");
  const int64_t c = x.dim(0);
  const int64_t plane = x.numel() / c;
  if (gate.numel() != plane)
    throw DimensionError("mul_spatial: gate numel " + std::to_string(gate.numel()) +
                         " vs plane " + std::to_string(plane));
  Tensor out(x.shape());
  const double* pg = gate.data();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t p = 0; p < plane; ++p) po[ch * plane + p] = pg[p] * px[ch * plane + p];
  if (detail::should_record({&gate, &x})) {
    detail::mark_output(out, true);
    Tensor gc = gate, xc = x, oc = out;
    Tape::record([gc, xc, oc, c, plane]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      if (gc.requires_grad()) {
        double* gg = gc.grad();
        const double* px2 = xc.data();
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t p = 0; p < plane; ++p) gg[p] += g[ch * plane + p] * px2[ch * plane + p];
      }
      if (xc.requires_grad()) {
        double* gx = xc.grad();
        const double* pg2 = gc.data();
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t p = 0; p < plane; ++p) gx[ch * plane + p] += pg2[p] * g[ch * plane + p];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape surgery
// ---------------------------------------------------------------------------

/// Slice [r0, r1) along the first dimension.
inline Tensor rows(const Tensor& x, int64_t r0, int64_t r1) {
  const int64_t r = x.dim(0);
  if (r0 < 0 || r1 > r || r0 >= r1)
    throw DimensionError("rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") for extent " + std::to_string(r));
  const int64_t inner = x.numel() / r;
  std::vector<int64_t> oshape = x.shape();
  oshape[0] = r1 - r0;
  Tensor out(oshape);
  std::copy(x.data() + r0 * inner, x.data() + r1 * inner, out.data());
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc, r0, inner]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* gx = xc.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) gx[r0 * inner + i] += g[i];
    });
  }
  return out;
}

/// Concatenate along the first dimension; trailing shapes must agree.
inline Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ParameterError("concat0: no inputs");
  std::vector<int64_t> oshape = parts[0].shape();
  int64_t inner = parts[0].numel() / parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != parts[0].ndim() || p.numel() / p.dim(0) != inner)
      throw DimensionError("concat0: trailing shape mismatch");
    total += p.dim(0);
  }
  oshape[0] = total;
  Tensor out(oshape);
  int64_t off = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
    needs = needs || p.requires_grad();
  }
  if (Tape::recording() && needs) {
    detail::mark_output(out, true);
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    Tape::record([pc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      int64_t off2 = 0;
      for (Tensor& p : pc) {
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off2 + i];
        }
        off2 += p.numel();
      }
    });
  }
  return out;
}

/// Same data in a new shape (numel must match); a copy, not a view.
inline Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape) {
  Tensor out(std::move(new_shape));
  if (out.numel() != x.numel())
    throw DimensionError("reshape: numel mismatch " + shape_to_string(x.shape()) + " -> " +
                         shape_to_string(out.shape()));
  std::copy(x.data(), x.data() + x.numel(), out.data());
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* gx = xc.grad();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// x is (C, ...) with trailing extent L; picks columns by flat index -> (C, K).
inline Tensor gather_cols(const Tensor& x, const std::vector<int64_t>& idx) {
  const int64_t c = x.dim(0);
  const int64_t l = x.numel() / c;
  const int64_t k = static_cast<int64_t>(idx.size());
  if (k == 0) throw ParameterError("gather_cols: empty index list");
  for (int64_t i : idx)
    if (i < 0 || i >= l) throw DimensionError("gather_cols: index out of range");
  Tensor out({c, k});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t j = 0; j < k; ++j) po[ch * k + j] = px[ch * l + idx[j]];
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    std::vector<int64_t> ic = idx;
    Tape::record([xc, oc, ic, c, l, k]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* gx = xc.grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t j = 0; j < k; ++j) gx[ch * l + ic[j]] += g[ch * k + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(acc);
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0];
      double* gx = xc.grad();
      const int64_t m = xc.numel();
      for (int64_t i = 0; i < m; ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// neural primitives
// ---------------------------------------------------------------------------

enum class PoolMode { max, avg };

/// Square-kernel 2D convolution with zero padding.
/// x: (Cin,H,W), w: (Cout,Cin,k,k), optional bias (Cout).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int64_t stride,
                     int64_t padding) {
  if (x.ndim() != 3 || w.ndim() != 4) throw DimensionError("conv2d: expects (Cin,H,W) and (Cout,Cin,k,k)");
  const int64_t cin = x.dim(0), h = x.dim(1), wdt = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw DimensionError("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                         " input channels, got " + std::to_string(cin));
  if (stride < 1 || padding < 0) throw ParameterError("conv2d: stride >= 1 and padding >= 0 required");
  const int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const int64_t wo = (wdt + 2 * padding - kw) / stride + 1;
  if (ho < 1 || wo < 1) throw DimensionError("conv2d: kernel larger than padded input");
  if (bias && bias->numel() != cout) throw DimensionError("conv2d: bias numel mismatch");

  Tensor out({cout, ho, wo});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t co = 0; co < cout; ++co) {
    double* oplane = po + co * ho * wo;
    if (bias) {
      const double bv = bias->data()[co];
      for (int64_t i = 0; i < ho * wo; ++i) oplane[i] = bv;
    }
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* iplane = px + ci * h * wdt;
      const double* wk = pw + (co * cin + ci) * kh * kw;
      for (int64_t ky = 0; ky < kh; ++ky) {
        for (int64_t kx = 0; kx < kw; ++kx) {
          const double wv = wk[ky * kw + kx];
          if (wv == 0.0) continue;
          for (int64_t oy = 0; oy < ho; ++oy) {
            const int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const double* irow = iplane + iy * wdt;
            double* orow = oplane + oy * wo;
            for (int64_t ox = 0; ox < wo; ++ox) {
              const int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= wdt) continue;
              orow[ox] += wv * irow[ix];
            }
          }
        }
      }
    }
  }

  bool needs = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
  if (Tape::recording() && needs) {
    detail::mark_output(out, true);
    Tensor xc = x, wc = w, oc = out;
    Tensor bc = bias ? *bias : Tensor();
    const bool has_bias = bias != nullptr;
    Tape::record([xc, wc, bc, oc, has_bias, stride, padding, cin, cout, h, wdt, kh, kw, ho,
                  wo]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      if (has_bias && bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          const double* gplane = g + co * ho * wo;
          for (int64_t i = 0; i < ho * wo; ++i) acc += gplane[i];
          gb[co] += acc;
        }
      }
      const bool need_x = xc.requires_grad();
      const bool need_w = wc.requires_grad();
      if (!need_x && !need_w) return;
      const double* px2 = xc.data();
      const double* pw2 = wc.data();
      double* gx = need_x ? xc.grad() : nullptr;
      double* gw = need_w ? wc.grad() : nullptr;
      for (int64_t co = 0; co < cout; ++co) {
        const double* gplane = g + co * ho * wo;
        for (int64_t ci = 0; ci < cin; ++ci) {
          const double* iplane = px2 + ci * h * wdt;
          const double* wk = pw2 + (co * cin + ci) * kh * kw;
          double* gwk = need_w ? gw + (co * cin + ci) * kh * kw : nullptr;
          double* gxplane = need_x ? gx + ci * h * wdt : nullptr;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              const double wv = wk[ky * kw + kx];
              double wacc = 0.0;
              for (int64_t oy = 0; oy < ho; ++oy) {
                const int64_t iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                const double* irow = iplane + iy * wdt;
                const double* grow = gplane + oy * wo;
                double* gxrow = need_x ? gxplane + iy * wdt : nullptr;
                for (int64_t ox = 0; ox < wo; ++ox) {
                  const int64_t ix = ox * stride - padding + kx;
                  if (ix < 0 || ix >= wdt) continue;
                  const double gv = grow[ox];
                  if (need_w) wacc += gv * irow[ix];
                  if (need_x) gxrow[ix] += gv * wv;
                }
              }
              if (need_w) gwk[ky * kw + kx] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
                     int64_t padding) {
  return conv2d(x, w, &bias, stride, padding);
}

/// Per-channel reduction over all spatial positions -> (C,1,1).
inline Tensor global_pool(const Tensor& x, PoolMode mode) {
  if (x.ndim() != 3) throw DimensionError("global_pool: expects (C,H,W)");
  const int64_t c = x.dim(0);
  const int64_t plane = x.dim(1) * x.dim(2);
  Tensor out({c, 1, 1});
  const double* px = x.data();
  double* po = out.data();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (mode == PoolMode::max) argmax->resize(c);
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* p = px + ch * plane;
    if (mode == PoolMode::max) {
      int64_t best = 0;
      for (int64_t i = 1; i < plane; ++i)
        if (p[i] > p[best]) best = i;
      (*argmax)[ch] = best;
      po[ch] = p[best];
    } else {
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      po[ch] = acc / static_cast<double>(plane);
    }
  }
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc, mode, argmax, c, plane]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* gx = xc.grad();
      if (mode == PoolMode::max) {
        for (int64_t ch = 0; ch < c; ++ch) gx[ch * plane + (*argmax)[ch]] += g[ch];
      } else {
        const double inv = 1.0 / static_cast<double>(plane);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double gv = g[ch] * inv;
          for (int64_t i = 0; i < plane; ++i) gx[ch * plane + i] += gv;
        }
      }
    });
  }
  return out;
}

/// Cross-channel max and mean over channel range [c0,c1) -> (2,H,W).
/// Row 0 is the max map, row 1 the mean map.
inline Tensor channel_range_stats(const Tensor& x, int64_t c0, int64_t c1) {
  if (x.ndim() != 3) throw DimensionError("channel_range_stats: expects (C,H,W)");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (c0 < 0 || c1 > c || c0 >= c1) throw DimensionError("channel_range_stats: bad channel range");
  const int64_t plane = h * w;
  const int64_t span = c1 - c0;
  Tensor out({2, h, w});
  const double* px = x.data();
  double* po = out.data();
  auto argmax = std::make_shared<std::vector<int64_t>>(plane);
  for (int64_t p = 0; p < plane; ++p) {
    int64_t best = c0;
    double bv = px[c0 * plane + p];
    double acc = bv;
    for (int64_t ch = c0 + 1; ch < c1; ++ch) {
      const double v = px[ch * plane + p];
      acc += v;
      if (v > bv) {
        bv = v;
        best = ch;
      }
    }
    (*argmax)[p] = best;
    po[p] = bv;
    po[plane + p] = acc / static_cast<double>(span);
  }
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc, argmax, c0, c1, plane, span]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      double* gx = xc.grad();
      const double inv = 1.0 / static_cast<double>(span);
      for (int64_t p = 0; p < plane; ++p) {
        gx[(*argmax)[p] * plane + p] += g[p];
        const double gm = g[plane + p] * inv;
        for (int64_t ch = c0; ch < c1; ++ch) gx[ch * plane + p] += gm;
      }
    });
  }
  return out;
}

/// Bilinear upsampling by an integer factor, half-pixel centers.
inline Tensor upsample_bilinear(const Tensor& x, int64_t factor) {
  if (x.ndim() != 3) throw DimensionError("upsample_bilinear: expects (C,H,W)");
  if (factor < 1) throw ParameterError("upsample_bilinear: factor must be >= 1");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t ho = h * factor, wo = w * factor;

  // Per-axis taps: out index -> (lo index, hi index, hi weight).
  auto make_taps = [factor](int64_t in_extent, int64_t out_extent) {
    std::vector<int64_t> lo(out_extent), hi(out_extent);
    std::vector<double> whi(out_extent);
    for (int64_t o = 0; o < out_extent; ++o) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      int64_t l = static_cast<int64_t>(std::floor(src));
      double t = src - static_cast<double>(l);
      int64_t lc = std::clamp<int64_t>(l, 0, in_extent - 1);
      int64_t hc = std::clamp<int64_t>(l + 1, 0, in_extent - 1);
      lo[o] = lc;
      hi[o] = hc;
      whi[o] = t;
    }
    return std::tuple(lo, hi, whi);
  };
  auto [ylo, yhi, wy] = make_taps(h, ho);
  auto [xlo, xhi, wx] = make_taps(w, wo);

  Tensor out({c, ho, wo});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* ip = px + ch * h * w;
    double* op = po + ch * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy) {
      const double* r0 = ip + ylo[oy] * w;
      const double* r1 = ip + yhi[oy] * w;
      const double ty = wy[oy];
      for (int64_t ox = 0; ox < wo; ++ox) {
        const double tx = wx[ox];
        const double top = r0[xlo[ox]] * (1.0 - tx) + r0[xhi[ox]] * tx;
        const double bot = r1[xlo[ox]] * (1.0 - tx) + r1[xhi[ox]] * tx;
        op[oy * wo + ox] = top * (1.0 - ty) + bot * ty;
      }
    }
  }
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    auto taps = std::make_shared<std::tuple<std::vector<int64_t>, std::vector<int64_t>,
                                            std::vector<double>, std::vector<int64_t>,
                                            std::vector<int64_t>, std::vector<double>>>(
        ylo, yhi, wy, xlo, xhi, wx);
    Tape::record([xc, oc, taps, c, h, w, ho, wo]() mutable {
      if (!oc.has_grad()) return;
      const auto& [ylo2, yhi2, wy2, xlo2, xhi2, wx2] = *taps;
      const double* g = oc.grad();
      double* gx = xc.grad();
      for (int64_t ch = 0; ch < c; ++ch) {
        double* gp = gx + ch * h * w;
        const double* go = g + ch * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const double ty = wy2[oy];
          for (int64_t ox = 0; ox < wo; ++ox) {
            const double tx = wx2[ox];
            const double gv = go[oy * wo + ox];
            gp[ylo2[oy] * w + xlo2[ox]] += gv * (1.0 - ty) * (1.0 - tx);
            gp[ylo2[oy] * w + xhi2[ox]] += gv * (1.0 - ty) * tx;
            gp[yhi2[oy] * w + xlo2[ox]] += gv * ty * (1.0 - tx);
            gp[yhi2[oy] * w + xhi2[ox]] += gv * ty * tx;
          }
        }
      }
    });
  }
  return out;
}

/// y[o, t] = sum_i w[o,i] * x[i, t] (+ b[o]); x is (Ci, ...) with any trailing
/// extent. Covers 1x1 convolutions and per-position projections of sequences.
inline Tensor linear_cl(const Tensor& w, const Tensor& x, const Tensor* bias = nullptr) {
  if (w.ndim() != 2) throw DimensionError("linear_cl: weight must be (Co,Ci)");
  const int64_t co = w.dim(0), ci = w.dim(1);
  if (x.dim(0) != ci)
    throw DimensionError("linear_cl: x has " + std::to_string(x.dim(0)) + " channels, weight expects " +
                         std::to_string(ci));
  if (bias && bias->numel() != co) throw DimensionError("linear_cl: bias numel mismatch");
  const int64_t l = x.numel() / ci;
  std::vector<int64_t> oshape = x.shape();
  oshape[0] = co;
  Tensor out(oshape);
  const double* pw = w.data();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < co; ++o) {
    double* orow = po + o * l;
    if (bias) {
      const double bv = bias->data()[o];
      for (int64_t t = 0; t < l; ++t) orow[t] = bv;
    }
    for (int64_t i = 0; i < ci; ++i) {
      const double wv = pw[o * ci + i];
      if (wv == 0.0) continue;
      const double* xrow = px + i * l;
      for (int64_t t = 0; t < l; ++t) orow[t] += wv * xrow[t];
    }
  }
  bool needs = w.requires_grad() || x.requires_grad() || (bias && bias->requires_grad());
  if (Tape::recording() && needs) {
    detail::mark_output(out, true);
    Tensor wc = w, xc = x, oc = out;
    Tensor bc = bias ? *bias : Tensor();
    const bool has_bias = bias != nullptr;
    Tape::record([wc, xc, bc, oc, has_bias, co, ci, l]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      if (has_bias && bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t o = 0; o < co; ++o) {
          double acc = 0.0;
          for (int64_t t = 0; t < l; ++t) acc += g[o * l + t];
          gb[o] += acc;
        }
      }
      if (wc.requires_grad()) {
        double* gw = wc.grad();
        const double* px2 = xc.data();
        for (int64_t o = 0; o < co; ++o) {
          const double* grow = g + o * l;
          for (int64_t i = 0; i < ci; ++i) {
            const double* xrow = px2 + i * l;
            double acc = 0.0;
            for (int64_t t = 0; t < l; ++t) acc += grow[t] * xrow[t];
            gw[o * ci + i] += acc;
          }
        }
      }
      if (xc.requires_grad()) {
        double* gx = xc.grad();
        const double* pw2 = wc.data();
        for (int64_t o = 0; o < co; ++o) {
          const double* grow = g + o * l;
          for (int64_t i = 0; i < ci; ++i) {
            const double wv = pw2[o * ci + i];
            if (wv == 0.0) continue;
            double* gxrow = gx + i * l;
            for (int64_t t = 0; t < l; ++t) gxrow[t] += wv * grow[t];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor linear_cl(const Tensor& w, const Tensor& x, const Tensor& bias) {
  return linear_cl(w, x, &bias);
}

namespace detail {

// Shared layer-norm core. Normalizes `groups` groups of `span` elements; the
// element (g, c) lives at data[g * gstride + c * cstride].
inline void layer_norm_forward(const double* px, double* po, const double* gamma,
                               const double* beta, int64_t groups, int64_t span, int64_t gstride,
                               int64_t cstride, double eps, std::vector<double>* save_mean,
                               std::vector<double>* save_inv) {
  for (int64_t g = 0; g < groups; ++g) {
    const double* p = px + g * gstride;
    double mean = 0.0;
    for (int64_t c = 0; c < span; ++c) mean += p[c * cstride];
    mean /= static_cast<double>(span);
    double var = 0.0;
    for (int64_t c = 0; c < span; ++c) {
      const double d = p[c * cstride] - mean;
      var += d * d;
    }
    var /= static_cast<double>(span);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (save_mean) (*save_mean)[g] = mean;
    if (save_inv) (*save_inv)[g] = inv;
    double* o = po + g * gstride;
    for (int64_t c = 0; c < span; ++c)
      o[c * cstride] = gamma[c] * ((p[c * cstride] - mean) * inv) + beta[c];
  }
}

inline void layer_norm_backward(const double* px, const double* g, const double* gamma,
                                double* gx, double* ggamma, double* gbeta, int64_t groups,
                                int64_t span, int64_t gstride, int64_t cstride,
                                const std::vector<double>& mean, const std::vector<double>& inv) {
  for (int64_t grp = 0; grp < groups; ++grp) {
    const double* p = px + grp * gstride;
    const double* go = g + grp * gstride;
    const double mu = mean[grp];
    const double iv = inv[grp];
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int64_t c = 0; c < span; ++c) {
      const double xhat = (p[c * cstride] - mu) * iv;
      const double gy = go[c * cstride] * gamma[c];
      sum_gy += gy;
      sum_gy_xhat += gy * xhat;
      if (ggamma) ggamma[c] += go[c * cstride] * xhat;
      if (gbeta) gbeta[c] += go[c * cstride];
    }
    if (gx) {
      const double invspan = 1.0 / static_cast<double>(span);
      for (int64_t c = 0; c < span; ++c) {
        const double xhat = (p[c * cstride] - mu) * iv;
        const double gy = go[c * cstride] * gamma[c];
        gx[grp * gstride + c * cstride] +=
            iv * (gy - invspan * sum_gy - xhat * invspan * sum_gy_xhat);
      }
    }
  }
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace detail

/// Normalizes the last axis to zero mean / unit variance (eps inside the
/// square root), then applies the per-position affine gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const int64_t span = x.shape().back();
  if (gamma.numel() != span || beta.numel() != span)
    throw DimensionError("layer_norm: affine parameters must match last axis");
  const int64_t groups = x.numel() / span;
  Tensor out(x.shape());
  auto mean = std::make_shared<std::vector<double>>(groups);
  auto inv = std::make_shared<std::vector<double>>(groups);
  detail::layer_norm_forward(x.data(), out.data(), gamma.data(), beta.data(), groups, span, span,
                             1, detail::kLayerNormEps, mean.get(), inv.get());
  if (detail::should_record({&x, &gamma, &beta})) {
    detail::mark_output(out, true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    Tape::record([xc, gc, bc, oc, mean, inv, groups, span]() mutable {
      if (!oc.has_grad()) return;
      detail::layer_norm_backward(xc.data(), oc.grad(), gc.data(),
                                  xc.requires_grad() ? xc.grad() : nullptr,
                                  gc.requires_grad() ? gc.grad() : nullptr,
                                  bc.requires_grad() ? bc.grad() : nullptr, groups, span, span, 1,
                                  *mean, *inv);
    });
  }
  return out;
}

/// Layer norm across the channel axis of a (C,H,W) map, per spatial position.
inline Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.ndim() != 3) throw DimensionError("channel_norm: expects (C,H,W)");
  const int64_t c = x.dim(0);
  const int64_t plane = x.dim(1) * x.dim(2);
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("channel_norm: affine parameters must match channel count");
  Tensor out(x.shape());
  auto mean = std::make_shared<std::vector<double>>(plane);
  auto inv = std::make_shared<std::vector<double>>(plane);
  detail::layer_norm_forward(x.data(), out.data(), gamma.data(), beta.data(), plane, c, 1, plane,
                             detail::kLayerNormEps, mean.get(), inv.get());
  if (detail::should_record({&x, &gamma, &beta})) {
    detail::mark_output(out, true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    Tape::record([xc, gc, bc, oc, mean, inv, c, plane]() mutable {
      if (!oc.has_grad()) return;
      detail::layer_norm_backward(xc.data(), oc.grad(), gc.data(),
                                  xc.requires_grad() ? xc.grad() : nullptr,
                                  gc.requires_grad() ? gc.grad() : nullptr,
                                  bc.requires_grad() ? bc.grad() : nullptr, plane, c, 1, plane,
                                  *mean, *inv);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss kernels
// ---------------------------------------------------------------------------

/// Mean binary cross entropy from raw logits; targets in [0,1].
inline Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
  const int64_t n = logits.numel();
  if (n != static_cast<int64_t>(targets.size()))
    throw DimensionError("bce_with_logits_mean: target count mismatch");
  const double* pl = logits.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double l = pl[i];
    acc += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (detail::should_record({&logits})) {
    detail::mark_output(out, true);
    Tensor lc = logits, oc = out;
    auto tc = std::make_shared<std::vector<double>>(targets);
    Tape::record([lc, oc, tc, n]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0] / static_cast<double>(n);
      const double* pl2 = lc.data();
      double* gl = lc.grad();
      for (int64_t i = 0; i < n; ++i)
        gl[i] += g * (detail::stable_sigmoid(pl2[i]) - (*tc)[i]);
    });
  }
  return out;
}

/// Smooth-L1 against fixed targets, transition at 1.0; the sum is divided by
/// `divisor` (callers pass the pair count).
inline Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target, double divisor) {
  const int64_t n = pred.numel();
  if (n != static_cast<int64_t>(target.size()))
    throw DimensionError("smooth_l1: target count mismatch");
  if (divisor <= 0.0) throw ParameterError("smooth_l1: divisor must be positive");
  const double* pp = pred.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pp[i] - target[i];
    const double a = std::abs(d);
    acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  Tensor out = Tensor::scalar(acc / divisor);
  if (detail::should_record({&pred})) {
    detail::mark_output(out, true);
    Tensor pc = pred, oc = out;
    auto tc = std::make_shared<std::vector<double>>(target);
    Tape::record([pc, oc, tc, n, divisor]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0] / divisor;
      const double* pp2 = pc.data();
      double* gp = pc.grad();
      for (int64_t i = 0; i < n; ++i) {
        const double d = pp2[i] - (*tc)[i];
        gp[i] += g * std::clamp(d, -1.0, 1.0);
      }
    });
  }
  return out;
}

/// Sum of sigmoids of all elements (soft count).
inline Tensor sigmoid_sum(const Tensor& logits) {
  const double* pl = logits.data();
  const int64_t n = logits.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += detail::stable_sigmoid(pl[i]);
  Tensor out = Tensor::scalar(acc);
  if (detail::should_record({&logits})) {
    detail::mark_output(out, true);
    Tensor lc = logits, oc = out;
    Tape::record([lc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0];
      const double* pl2 = lc.data();
      double* gl = lc.grad();
      for (int64_t i = 0; i < n; ++i) {
        const double s = detail::stable_sigmoid(pl2[i]);
        gl[i] += g * s * (1.0 - s);
      }
    });
  }
  return out;
}

/// |x - c| for a scalar tensor; subgradient 0 at the kink.
inline Tensor abs_sub_const(const Tensor& x, double c) {
  if (x.numel() != 1) throw DimensionError("abs_sub_const: expects a scalar tensor");
  const double d = x.data()[0] - c;
  Tensor out = Tensor::scalar(std::abs(d));
  if (detail::should_record({&x})) {
    detail::mark_output(out, true);
    Tensor xc = x, oc = out;
    Tape::record([xc, oc, c]() mutable {
      if (!oc.has_grad()) return;
      const double d2 = xc.data()[0] - c;
      const double s = d2 > 0.0 ? 1.0 : (d2 < 0.0 ? -1.0 : 0.0);
      xc.grad()[0] += oc.grad()[0] * s;
    });
  }
  return out;
}

}  // namespace vsscrowd
