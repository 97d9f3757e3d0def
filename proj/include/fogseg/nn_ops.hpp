#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "fogseg/autodiff.hpp"

// Differentiable ops on {C,H,W} activations. Convolutions run as im2col plus
// a GEMM; backward reuses the cached column buffer. Every op skips gradient
// work for parents that do not need it, which is what keeps the frozen
// teacher network cheap on the alignment-loss path.

namespace fogseg {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = conv_out_extent(H, kh, stride, pad);
  const int Wo = conv_out_extent(W, kw, stride, pad);
  Tensor<T> cols({C * kh * kw, Ho * Wo}, T(0));
  T* out = cols.mutable_data();
  const T* src = x.data();
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = out + int64_t((c * kh + ki) * kw + kj) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + int64_t(c) * H * W + int64_t(iy) * W;
          T* drow = row + int64_t(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) drow[ox] = srow[ix];
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back onto the image grid.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, int C, int H, int W, int kh, int kw, int stride,
                 int pad) {
  const int Ho = conv_out_extent(H, kh, stride, pad);
  const int Wo = conv_out_extent(W, kw, stride, pad);
  Tensor<T> img({C, H, W}, T(0));
  T* dst = img.mutable_data();
  const T* src = cols.data();
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = src + int64_t((c * kh + ki) * kw + kj) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* drow = dst + int64_t(c) * H * W + int64_t(iy) * W;
          const T* srow = row + int64_t(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
  return img;
}

// y = w * x + b with w {Cout,Cin,kh,kw}, x {Cin,H,W}.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const int Cin = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != Cin)
    throw DimensionError("conv2d: weight input channels do not match activation");
  const int Ho = conv_out_extent(H, kh, stride, pad);
  const int Wo = conv_out_extent(W, kw, stride, pad);

  auto cols = std::make_shared<Tensor<T>>(im2col(x->value, kh, kw, stride, pad));
  Tensor<T> y({Cout, Ho, Wo}, T(0));
  {
    ECMap<T> wm(w->value.data(), Cout, Cin * kh * kw);
    ECMap<T> cm(cols->data(), Cin * kh * kw, Ho * Wo);
    EMap<T> ym(y.mutable_data(), Cout, Ho * Wo);
    ym.noalias() = wm * cm;
    const T* bias = b->value.data();
    T* yd = y.mutable_data();
    for (int c = 0; c < Cout; ++c) {
      T* row = yd + int64_t(c) * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) row[i] += bias[c];
    }
  }

  return make_op<T>(std::move(y), {x, w, b}, [=](Node<T>& self) {
    const Var<T>&xp = self.parents[0], &wp = self.parents[1], &bp = self.parents[2];
    ECMap<T> gy(self.grad.data(), Cout, Ho * Wo);
    if (wp->needs) {
      Tensor<T> dw(wp->value.dims(), T(0));
      EMap<T> dwm(dw.mutable_data(), Cout, Cin * kh * kw);
      ECMap<T> cm(cols->data(), Cin * kh * kw, Ho * Wo);
      dwm.noalias() = gy * cm.transpose();
      wp->accumulate(dw);
    }
    if (bp->needs) {
      Tensor<T> db(bp->value.dims(), T(0));
      T* dbd = db.mutable_data();
      const T* g = self.grad.data();
      for (int c = 0; c < Cout; ++c) {
        T acc = T(0);
        const T* row = g + int64_t(c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) acc += row[i];
        dbd[c] = acc;
      }
      bp->accumulate(db);
    }
    if (xp->needs) {
      Tensor<T> dcols({Cin * kh * kw, Ho * Wo}, T(0));
      EMap<T> dcm(dcols.mutable_data(), Cin * kh * kw, Ho * Wo);
      ECMap<T> wm(wp->value.data(), Cout, Cin * kh * kw);
      dcm.noalias() = wm.transpose() * gy;
      xp->accumulate(col2im(dcols, Cin, H, W, kh, kw, stride, pad));
    }
  });
}

// Transposed convolution, w {Cin,Cout,kh,kw}, output (H-1)*stride + kh.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride) {
  const int Cin = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (w->value.dim(0) != Cin)
    throw DimensionError("conv_transpose2d: weight input channels do not match activation");
  const int Cout = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  const int Ho = (H - 1) * stride + kh;
  const int Wo = (W - 1) * stride + kw;

  Tensor<T> cols({Cout * kh * kw, H * W}, T(0));
  {
    ECMap<T> wm(w->value.data(), Cin, Cout * kh * kw);
    ECMap<T> xm(x->value.data(), Cin, H * W);
    EMap<T> cm(cols.mutable_data(), Cout * kh * kw, H * W);
    cm.noalias() = wm.transpose() * xm;
  }
  Tensor<T> y = col2im(cols, Cout, Ho, Wo, kh, kw, stride, 0);
  {
    const T* bias = b->value.data();
    T* yd = y.mutable_data();
    for (int c = 0; c < Cout; ++c) {
      T* row = yd + int64_t(c) * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) row[i] += bias[c];
    }
  }

  return make_op<T>(std::move(y), {x, w, b}, [=](Node<T>& self) {
    const Var<T>&xp = self.parents[0], &wp = self.parents[1], &bp = self.parents[2];
    Tensor<T> gcols = im2col(self.grad, kh, kw, stride, 0);  // {Cout*kh*kw, H*W}
    if (bp->needs) {
      Tensor<T> db(bp->value.dims(), T(0));
      T* dbd = db.mutable_data();
      const T* g = self.grad.data();
      for (int c = 0; c < Cout; ++c) {
        T acc = T(0);
        const T* row = g + int64_t(c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) acc += row[i];
        dbd[c] = acc;
      }
      bp->accumulate(db);
    }
    if (wp->needs) {
      Tensor<T> dw(wp->value.dims(), T(0));
      EMap<T> dwm(dw.mutable_data(), Cin, Cout * kh * kw);
      ECMap<T> xm(xp->value.data(), Cin, H * W);
      ECMap<T> gcm(gcols.data(), Cout * kh * kw, H * W);
      dwm.noalias() = xm * gcm.transpose();
      wp->accumulate(dw);
    }
    if (xp->needs) {
      Tensor<T> dx({Cin, H, W}, T(0));
      EMap<T> dxm(dx.mutable_data(), Cin, H * W);
      ECMap<T> wm(wp->value.data(), Cin, Cout * kh * kw);
      ECMap<T> gcm(gcols.data(), Cout * kh * kw, H * W);
      dxm.noalias() = wm * gcm;
      xp->accumulate(dx);
    }
  });
}

// Per-channel normalization against fixed statistics followed by a learned
// affine: y = gamma * (x - mean) / sqrt(var + eps) + beta. The statistics are
// plain tensors, never graph nodes, so normalization is frozen by
// construction inside any loss graph.
template <typename T>
Var<T> channel_norm_affine(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, T eps = T(1e-5)) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  auto istd = std::make_shared<std::vector<T>>(size_t(C));
  for (int c = 0; c < C; ++c) (*istd)[c] = T(1) / std::sqrt(var[c] + eps);

  Tensor<T> y(x->value.dims(), T(0));
  {
    T* yd = y.mutable_data();
    const T* xd = x->value.data();
    const T* g = gamma->value.data();
    const T* bt = beta->value.data();
    const T* mu = mean.data();
    for (int c = 0; c < C; ++c) {
      const T a = g[c] * (*istd)[c];
      const T sh = bt[c] - mu[c] * a;
      const int64_t off = int64_t(c) * H * W;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) yd[off + i] = a * xd[off + i] + sh;
    }
  }

  Tensor<T> mean_copy = mean, var_copy = var;
  return make_op<T>(std::move(y), {x, gamma, beta}, [=](Node<T>& self) {
    const Var<T>&xp = self.parents[0], &gp = self.parents[1], &bp = self.parents[2];
    const int64_t hw = int64_t(H) * W;
    const T* g = self.grad.data();
    if (xp->needs) {
      Tensor<T> dx(xp->value.dims(), T(0));
      T* dxd = dx.mutable_data();
      const T* ga = gp->value.data();
      for (int c = 0; c < C; ++c) {
        const T a = ga[c] * (*istd)[c];
        const int64_t off = int64_t(c) * hw;
        for (int64_t i = 0; i < hw; ++i) dxd[off + i] = g[off + i] * a;
      }
      xp->accumulate(dx);
    }
    if (gp->needs || bp->needs) {
      Tensor<T> dg({C}, T(0)), db({C}, T(0));
      T* dgd = dg.mutable_data();
      T* dbd = db.mutable_data();
      const T* xd = xp->value.data();
      const T* mu = mean_copy.data();
      for (int c = 0; c < C; ++c) {
        T sg = T(0), sb = T(0);
        const int64_t off = int64_t(c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sg += g[off + i] * (xd[off + i] - mu[c]) * (*istd)[c];
          sb += g[off + i];
        }
        dgd[c] = sg;
        dbd[c] = sb;
      }
      if (gp->needs) gp->accumulate(dg);
      if (bp->needs) bp->accumulate(db);
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y = x->value.clone();
  T* yd = y.mutable_data();
  for (int64_t i = 0; i < y.numel(); ++i) yd[i] = yd[i] > T(0) ? yd[i] : T(0);
  return make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    const Var<T>& xp = self.parents[0];
    if (!xp->needs) return;
    Tensor<T> dx(xp->value.dims(), T(0));
    T* dxd = dx.mutable_data();
    const T* g = self.grad.data();
    const T* xd = xp->value.data();
    for (int64_t i = 0; i < dx.numel(); ++i) dxd[i] = xd[i] > T(0) ? g[i] : T(0);
    xp->accumulate(dx);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x->value.dims(), T(0));
  T* yd = y.mutable_data();
  const T* xd = x->value.data();
  for (int64_t i = 0; i < y.numel(); ++i) yd[i] = T(1) / (T(1) + std::exp(-xd[i]));
  auto yv = std::make_shared<Tensor<T>>(y);
  return make_op<T>(std::move(y), {x}, [yv](Node<T>& self) {
    const Var<T>& xp = self.parents[0];
    if (!xp->needs) return;
    Tensor<T> dx(xp->value.dims(), T(0));
    T* dxd = dx.mutable_data();
    const T* g = self.grad.data();
    const T* s = yv->data();
    for (int64_t i = 0; i < dx.numel(); ++i) dxd[i] = g[i] * s[i] * (T(1) - s[i]);
    xp->accumulate(dx);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> y(a->value.dims(), T(0));
  T* yd = y.mutable_data();
  const T* ad = a->value.data();
  const T* bd = b->value.data();
  for (int64_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] + bd[i];
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->needs) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->needs) self.parents[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y(a->value.dims(), T(0));
  T* yd = y.mutable_data();
  const T* ad = a->value.data();
  for (int64_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] * s;
  return make_op<T>(std::move(y), {a}, [s](Node<T>& self) {
    const Var<T>& ap = self.parents[0];
    if (!ap->needs) return;
    Tensor<T> da(ap->value.dims(), T(0));
    T* dad = da.mutable_data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < da.numel(); ++i) dad[i] = g[i] * s;
    ap->accumulate(da);
  });
}

namespace detail {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight on i1; weight on i0 is 1-w1
};

inline LerpAxis lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  const double scale = double(in) / double(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    const int lo = int(std::floor(src));
    ax.i0[i] = lo;
    ax.i1[i] = std::min(lo + 1, in - 1);
    ax.w1[i] = src - lo;
  }
  return ax;
}
}  // namespace detail

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Ho = H * factor, Wo = W * factor;
  auto ay = std::make_shared<detail::LerpAxis>(detail::lerp_axis(H, Ho));
  auto axx = std::make_shared<detail::LerpAxis>(detail::lerp_axis(W, Wo));

  Tensor<T> y({C, Ho, Wo}, T(0));
  {
    T* yd = y.mutable_data();
    const T* xd = x->value.data();
    for (int c = 0; c < C; ++c) {
      const T* xc = xd + int64_t(c) * H * W;
      T* yc = yd + int64_t(c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = ay->i0[oy], y1 = ay->i1[oy];
        const T wy1 = T(ay->w1[oy]), wy0 = T(1) - wy1;
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = axx->i0[ox], x1 = axx->i1[ox];
          const T wx1 = T(axx->w1[ox]), wx0 = T(1) - wx1;
          yc[int64_t(oy) * Wo + ox] = wy0 * (wx0 * xc[int64_t(y0) * W + x0] + wx1 * xc[int64_t(y0) * W + x1]) +
                                      wy1 * (wx0 * xc[int64_t(y1) * W + x0] + wx1 * xc[int64_t(y1) * W + x1]);
        }
      }
    }
  }

  return make_op<T>(std::move(y), {x}, [=](Node<T>& self) {
    const Var<T>& xp = self.parents[0];
    if (!xp->needs) return;
    Tensor<T> dx({C, H, W}, T(0));
    T* dxd = dx.mutable_data();
    const T* g = self.grad.data();
    for (int c = 0; c < C; ++c) {
      T* dxc = dxd + int64_t(c) * H * W;
      const T* gc = g + int64_t(c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = ay->i0[oy], y1 = ay->i1[oy];
        const T wy1 = T(ay->w1[oy]), wy0 = T(1) - wy1;
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = axx->i0[ox], x1 = axx->i1[ox];
          const T wx1 = T(axx->w1[ox]), wx0 = T(1) - wx1;
          const T gv = gc[int64_t(oy) * Wo + ox];
          dxc[int64_t(y0) * W + x0] += gv * wy0 * wx0;
          dxc[int64_t(y0) * W + x1] += gv * wy0 * wx1;
          dxc[int64_t(y1) * W + x0] += gv * wy1 * wx0;
          dxc[int64_t(y1) * W + x1] += gv * wy1 * wx1;
        }
      }
    }
    xp->accumulate(dx);
  });
}

// Broadcast a single-channel map to n identical channels (backward sums).
template <typename T>
Var<T> replicate_channels(const Var<T>& x, int n) {
  if (x->value.dim(0) != 1) throw DimensionError("replicate_channels: input must be {1,H,W}");
  const int H = x->value.dim(1), W = x->value.dim(2);
  const int64_t hw = int64_t(H) * W;
  Tensor<T> y({n, H, W}, T(0));
  T* yd = y.mutable_data();
  const T* xd = x->value.data();
  for (int c = 0; c < n; ++c)
    for (int64_t i = 0; i < hw; ++i) yd[c * hw + i] = xd[i];
  return make_op<T>(std::move(y), {x}, [n, hw](Node<T>& self) {
    const Var<T>& xp = self.parents[0];
    if (!xp->needs) return;
    Tensor<T> dx(xp->value.dims(), T(0));
    T* dxd = dx.mutable_data();
    const T* g = self.grad.data();
    for (int c = 0; c < n; ++c)
      for (int64_t i = 0; i < hw; ++i) dxd[i] += g[c * hw + i];
    xp->accumulate(dx);
  });
}

// Scalar projection f = sum_i w_i * x_i against fixed weights; used to probe
// gradients of multi-output ops.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w) {
  check_same_shape(x->value, w, "weighted_sum");
  T acc = T(0);
  const T* xd = x->value.data();
  const T* wd = w.data();
  for (int64_t i = 0; i < w.numel(); ++i) acc += xd[i] * wd[i];
  Tensor<T> y({1}, acc);
  Tensor<T> w_copy = w;
  return make_op<T>(std::move(y), {x}, [w_copy](Node<T>& self) {
    const Var<T>& xp = self.parents[0];
    if (!xp->needs) return;
    Tensor<T> dx(xp->value.dims(), T(0));
    T* dxd = dx.mutable_data();
    const T* wd = w_copy.data();
    const T g = self.grad[0];
    for (int64_t i = 0; i < dx.numel(); ++i) dxd[i] = g * wd[i];
    xp->accumulate(dx);
  });
}

// Mean of |a - b| over all elements; the shared kernel of the similarity and
// pixel losses. Gradients flow to both sides.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mean_abs_diff");
  const int64_t n = a->value.numel();
  if (n == 0) throw DimensionError("mean_abs_diff: empty input");
  T acc = T(0);
  {
    const T* ad = a->value.data();
    const T* bd = b->value.data();
    for (int64_t i = 0; i < n; ++i) acc += std::abs(ad[i] - bd[i]);
  }
  Tensor<T> y({1}, acc / T(n));
  return make_op<T>(std::move(y), {a, b}, [n](Node<T>& self) {
    const Var<T>&ap = self.parents[0], &bp = self.parents[1];
    const T g = self.grad[0] / T(n);
    const T* ad = ap->value.data();
    const T* bd = bp->value.data();
    Tensor<T> d(ap->value.dims(), T(0));
    T* dd = d.mutable_data();
    for (int64_t i = 0; i < d.numel(); ++i) {
      const T diff = ad[i] - bd[i];
      dd[i] = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
    }
    if (ap->needs) ap->accumulate(d);
    if (bp->needs) {
      T* p = d.mutable_data();
      for (int64_t i = 0; i < d.numel(); ++i) p[i] = -p[i];
      bp->accumulate(d);
    }
  });
}

namespace detail {
// Per-pixel log-softmax over the channel axis of a {K,H,W} tensor.
template <typename T>
void log_softmax_chw(const Tensor<T>& x, Tensor<T>& out) {
  const int K = x.dim(0);
  const int64_t hw = int64_t(x.dim(1)) * x.dim(2);
  const T* xd = x.data();
  T* od = out.mutable_data();
  for (int64_t p = 0; p < hw; ++p) {
    T mx = xd[p];
    for (int k = 1; k < K; ++k) mx = std::max(mx, xd[k * hw + p]);
    T sum = T(0);
    for (int k = 0; k < K; ++k) sum += std::exp(xd[k * hw + p] - mx);
    const T lse = mx + std::log(sum);
    for (int k = 0; k < K; ++k) od[k * hw + p] = xd[k * hw + p] - lse;
  }
}
}  // namespace detail

// Mean over non-ignore pixels of -log softmax(logits)[label].
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensori& labels, int ignore_label) {
  const int K = logits->value.dim(0);
  const int H = logits->value.dim(1), W = logits->value.dim(2);
  if (labels.dim(0) != H || labels.dim(1) != W)
    throw DimensionError("cross_entropy: label map does not match logit spatial shape");
  const int64_t hw = int64_t(H) * W;

  auto lsm = std::make_shared<Tensor<T>>(logits->value.dims(), T(0));
  detail::log_softmax_chw(logits->value, *lsm);

  int64_t kept = 0;
  T acc = T(0);
  const int32_t* lab = labels.data();
  const T* ls = lsm->data();
  for (int64_t p = 0; p < hw; ++p) {
    const int32_t y = lab[p];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K) throw RangeError("cross_entropy: label out of range");
    acc -= ls[int64_t(y) * hw + p];
    ++kept;
  }
  if (kept == 0) throw DegenerateBatchError("cross_entropy: every pixel is ignored");

  Tensor<T> y({1}, acc / T(kept));
  Tensori labels_copy = labels;
  return make_op<T>(std::move(y), {logits}, [=](Node<T>& self) {
    const Var<T>& lp = self.parents[0];
    if (!lp->needs) return;
    const T g = self.grad[0] / T(kept);
    Tensor<T> dx(lp->value.dims(), T(0));
    T* dxd = dx.mutable_data();
    const T* ls = lsm->data();
    const int32_t* lab = labels_copy.data();
    for (int64_t p = 0; p < hw; ++p) {
      const int32_t yl = lab[p];
      if (yl == ignore_label) continue;
      for (int k = 0; k < K; ++k) {
        const T soft = std::exp(ls[int64_t(k) * hw + p]);
        dxd[int64_t(k) * hw + p] = g * (soft - (k == yl ? T(1) : T(0)));
      }
    }
    lp->accumulate(dx);
  });
}

// Mean over pixels of KL(softmax(ref) || softmax(other)). Gradient flows into
// both logit maps. Log-probabilities are floored before use.
template <typename T>
Var<T> kl_divergence_logits(const Var<T>& ref, const Var<T>& other, T prob_floor = T(1e-12)) {
  check_same_shape(ref->value, other->value, "kl_consistency");
  const int K = ref->value.dim(0);
  const int64_t hw = int64_t(ref->value.dim(1)) * ref->value.dim(2);
  const T lf = std::log(prob_floor);

  auto la = std::make_shared<Tensor<T>>(ref->value.dims(), T(0));
  auto lb = std::make_shared<Tensor<T>>(ref->value.dims(), T(0));
  detail::log_softmax_chw(ref->value, *la);
  detail::log_softmax_chw(other->value, *lb);

  T acc = T(0);
  {
    const T* lad = la->data();
    const T* lbd = lb->data();
    for (int64_t i = 0; i < int64_t(K) * hw; ++i) {
      const T a = std::max(lad[i], lf);
      const T b = std::max(lbd[i], lf);
      acc += std::exp(a) * (a - b);
    }
  }

  Tensor<T> y({1}, acc / T(hw));
  return make_op<T>(std::move(y), {ref, other}, [=](Node<T>& self) {
    const Var<T>&rp = self.parents[0], &op = self.parents[1];
    const T g = self.grad[0] / T(hw);
    const T* lad = la->data();
    const T* lbd = lb->data();
    // d/d la_k of exp(la')(la' - lb') is exp(la)(la - lb' + 1) where not
    // floored; d/d lb_k is -exp(la') where not floored. Both then map back
    // through the log-softmax jacobian (delta_kj - softmax_j).
    if (rp->needs) {
      Tensor<T> dref(rp->value.dims(), T(0));
      T* d = dref.mutable_data();
      for (int64_t p = 0; p < hw; ++p) {
        T gsum = T(0);
        for (int k = 0; k < K; ++k) {
          const int64_t i = int64_t(k) * hw + p;
          const T fa = (lad[i] > lf) ? std::exp(lad[i]) * (lad[i] - std::max(lbd[i], lf) + T(1))
                                     : T(0);
          d[i] = fa;
          gsum += fa;
        }
        for (int k = 0; k < K; ++k) {
          const int64_t i = int64_t(k) * hw + p;
          d[i] = g * (d[i] - std::exp(lad[i]) * gsum);
        }
      }
      rp->accumulate(dref);
    }
    if (op->needs) {
      Tensor<T> doth(op->value.dims(), T(0));
      T* d = doth.mutable_data();
      for (int64_t p = 0; p < hw; ++p) {
        T gsum = T(0);
        for (int k = 0; k < K; ++k) {
          const int64_t i = int64_t(k) * hw + p;
          const T fb = (lbd[i] > lf) ? -std::exp(std::max(lad[i], lf)) : T(0);
          d[i] = fb;
          gsum += fb;
        }
        for (int k = 0; k < K; ++k) {
          const int64_t i = int64_t(k) * hw + p;
          d[i] = g * (d[i] - std::exp(lbd[i]) * gsum);
        }
      }
      op->accumulate(doth);
    }
  });
}

}  // namespace fogseg
