#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "core/tensor.hpp"

namespace efcn {

// Finite-difference checks on kinked nonlinearities are only meaningful away
// from the kink. relu() reports the smallest |preactivation| it saw while the
// tracker is armed, so test harnesses can resample unlucky inputs.
struct KinkTracker {
  static double& min_abs() {
    thread_local double v = std::numeric_limits<double>::infinity();
    return v;
  }
  static bool& armed() {
    thread_local bool a = false;
    return a;
  }
  static void reset() {
    min_abs() = std::numeric_limits<double>::infinity();
    armed() = true;
  }
  static void disarm() { armed() = false; }
  static void note(double a) {
    if (armed() && a < min_abs()) min_abs() = a;
  }
};

namespace detail {

template <class T>
bool wants_grad(const Tensor<T>& t) {
  return grad_enabled() && t.defined() && t.requires_grad();
}

template <class T>
bool any_grad(std::initializer_list<const Tensor<T>*> ts) {
  if (!grad_enabled()) return false;
  for (auto* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------- conv1x1 --

// x:(N,Ci,H,W)  w:(Co,Ci,1,1)  optional b:(1,Co,1,1)
template <class T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.h != 1 || ws.w != 1)
    throw ShapeError(cat("conv1x1: weight must be (Co,Ci,1,1), got ", ws.str()));
  if (ws.c != xs.c)
    throw ShapeError(cat("conv1x1: input ", xs.str(), " vs weight ", ws.str()));
  if (b.defined()) {
    const Shape& bs = b.shape();
    if (bs.n != 1 || bs.c != ws.n || bs.h != 1 || bs.w != 1)
      throw ShapeError(cat("conv1x1: bias ", bs.str(), " vs weight ", ws.str()));
  }
  const int N = xs.n, Ci = xs.c, Co = ws.n;
  const i64 hw = i64(xs.h) * xs.w;

  Tensor<T> out = Tensor<T>::zeros({N, Co, xs.h, xs.w});
  {
    const T* xp = x.data();
    const T* wp = w.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < Co; ++o) {
        T* orow = op + (i64(n) * Co + o) * hw;
        if (b.defined()) {
          T bv = b.data()[o];
          for (i64 p = 0; p < hw; ++p) orow[p] = bv;
        }
        for (int i = 0; i < Ci; ++i) {
          T wv = wp[i64(o) * Ci + i];
          const T* xrow = xp + (i64(n) * Ci + i) * hw;
          for (i64 p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
        }
      }
    }
  }

  if (detail::any_grad<T>({&x, &w, &b})) {
    Tensor<T> xc = x, wc = w, bc = b;
    out.set_parents(b.defined() ? std::vector<Tensor<T>>{x, w, b}
                                : std::vector<Tensor<T>>{x, w});
    out.set_backprop([xc, wc, bc, N, Ci, Co, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      if (xc.requires_grad()) {
        T* gx = xc.grad().data();
        const T* wp = wc.data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < Co; ++o) {
            const T* grow = go + (i64(n) * Co + o) * hw;
            for (int i = 0; i < Ci; ++i) {
              T wv = wp[i64(o) * Ci + i];
              T* gxrow = gx + (i64(n) * Ci + i) * hw;
              for (i64 p = 0; p < hw; ++p) gxrow[p] += wv * grow[p];
            }
          }
      }
      if (wc.requires_grad()) {
        T* gw = wc.grad().data();
        const T* xp = xc.data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < Co; ++o) {
            const T* grow = go + (i64(n) * Co + o) * hw;
            for (int i = 0; i < Ci; ++i) {
              const T* xrow = xp + (i64(n) * Ci + i) * hw;
              T acc = 0;
              for (i64 p = 0; p < hw; ++p) acc += grow[p] * xrow[p];
              gw[i64(o) * Ci + i] += acc;
            }
          }
      }
      if (bc.defined() && bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < Co; ++o) {
            const T* grow = go + (i64(n) * Co + o) * hw;
            T acc = 0;
            for (i64 p = 0; p < hw; ++p) acc += grow[p];
            gb[o] += acc;
          }
      }
    });
  }
  return out;
}

// ----------------------------------------------------------------- conv2d --

// General KxK convolution with stride/zero-padding/dilation; the toy encoder
// is built from these.  x:(N,Ci,H,W)  w:(Co,Ci,kh,kw)
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int padding, int dilation = 1) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.c != xs.c)
    throw ShapeError(cat("conv2d: input ", xs.str(), " vs weight ", ws.str()));
  if (stride < 1 || dilation < 1 || padding < 0)
    throw ValidationError(cat("conv2d: bad stride/padding/dilation ", stride, "/", padding, "/", dilation));
  if (b.defined()) {
    const Shape& bs = b.shape();
    if (bs.n != 1 || bs.c != ws.n || bs.h != 1 || bs.w != 1)
      throw ShapeError(cat("conv2d: bias ", bs.str(), " vs weight ", ws.str()));
  }
  const int N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
  const int Co = ws.n, kh = ws.h, kw = ws.w;
  const int oh = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const int ow = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw ShapeError(cat("conv2d: empty output for input ", xs.str(), " kernel ", ws.str()));

  Tensor<T> out = Tensor<T>::zeros({N, Co, oh, ow});
  {
    const T* xp = x.data();
    const T* wp = w.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Co; ++o) {
        T* orow = op + (i64(n) * Co + o) * oh * ow;
        if (b.defined()) {
          T bv = b.data()[o];
          for (i64 p = 0; p < i64(oh) * ow; ++p) orow[p] = bv;
        }
        for (int i = 0; i < Ci; ++i) {
          const T* xpl = xp + (i64(n) * Ci + i) * H * W;
          const T* wk = wp + ((i64(o) * Ci + i) * kh) * kw;
          for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
              T acc = 0;
              for (int ky = 0; ky < kh; ++ky) {
                int iy = y * stride - padding + ky * dilation;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  int ix = xo * stride - padding + kx * dilation;
                  if (ix < 0 || ix >= W) continue;
                  acc += wk[ky * kw + kx] * xpl[i64(iy) * W + ix];
                }
              }
              orow[i64(y) * ow + xo] += acc;
            }
        }
      }
  }

  if (detail::any_grad<T>({&x, &w, &b})) {
    Tensor<T> xc = x, wc = w, bc = b;
    out.set_parents(b.defined() ? std::vector<Tensor<T>>{x, w, b}
                                : std::vector<Tensor<T>>{x, w});
    out.set_backprop([xc, wc, bc, stride, padding, dilation, N, Ci, H, W, Co, kh,
                      kw, oh, ow](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      const bool need_x = xc.requires_grad();
      const bool need_w = wc.requires_grad();
      T* gx = need_x ? xc.grad().data() : nullptr;
      T* gw = need_w ? wc.grad().data() : nullptr;
      const T* xp = xc.data();
      const T* wp = wc.data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Co; ++o) {
          const T* grow = go + (i64(n) * Co + o) * oh * ow;
          for (int i = 0; i < Ci; ++i) {
            const T* xpl = xp + (i64(n) * Ci + i) * H * W;
            const T* wk = wp + ((i64(o) * Ci + i) * kh) * kw;
            T* gxpl = need_x ? gx + (i64(n) * Ci + i) * H * W : nullptr;
            T* gwk = need_w ? gw + ((i64(o) * Ci + i) * kh) * kw : nullptr;
            for (int y = 0; y < oh; ++y)
              for (int xo = 0; xo < ow; ++xo) {
                T g = grow[i64(y) * ow + xo];
                if (g == T(0)) continue;
                for (int ky = 0; ky < kh; ++ky) {
                  int iy = y * stride - padding + ky * dilation;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    int ix = xo * stride - padding + kx * dilation;
                    if (ix < 0 || ix >= W) continue;
                    if (need_x) gxpl[i64(iy) * W + ix] += wk[ky * kw + kx] * g;
                    if (need_w) gwk[ky * kw + kx] += xpl[i64(iy) * W + ix] * g;
                  }
                }
              }
          }
        }
      if (bc.defined() && bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < Co; ++o) {
            const T* grow = go + (i64(n) * Co + o) * oh * ow;
            T acc = 0;
            for (i64 p = 0; p < i64(oh) * ow; ++p) acc += grow[p];
            gb[o] += acc;
          }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- batch norm --

// Per-channel batch statistics over (N,H,W) in training mode; running
// estimates (momentum blend) in eval mode.  At batch size 1 this degrades to
// instance statistics.  gamma/beta/running_*: (1,C,1,1).
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     double momentum = 0.9, double eps = 1e-5) {
  const Shape& xs = x.shape();
  const int C = xs.c;
  auto check_vec = [&](const Tensor<T>& t, const char* who) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != C || s.h != 1 || s.w != 1)
      throw ShapeError(cat("batch_norm: ", who, " ", s.str(), " vs input ", xs.str()));
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");
  check_vec(running_mean, "running_mean");
  check_vec(running_var, "running_var");

  const int N = xs.n;
  const i64 hw = i64(xs.h) * xs.w;
  const i64 m = i64(N) * hw;

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double acc = 0;
      for (int n = 0; n < N; ++n) {
        const T* row = x.data() + (i64(n) * C + c) * hw;
        for (i64 p = 0; p < hw; ++p) acc += row[p];
      }
      double mu = acc / double(m);
      double vacc = 0;
      for (int n = 0; n < N; ++n) {
        const T* row = x.data() + (i64(n) * C + c) * hw;
        for (i64 p = 0; p < hw; ++p) {
          double d = double(row[p]) - mu;
          vacc += d * d;
        }
      }
      double var = vacc / double(m);
      mean[c] = T(mu);
      inv_std[c] = T(1.0 / std::sqrt(var + eps));
      running_mean.data()[c] = T(momentum * double(running_mean.data()[c]) + (1.0 - momentum) * mu);
      running_var.data()[c] = T(momentum * double(running_var.data()[c]) + (1.0 - momentum) * var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = T(1.0 / std::sqrt(double(running_var.data()[c]) + eps));
    }
  }

  Tensor<T> out = Tensor<T>::zeros(xs);
  {
    const T* xp = x.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T g = gamma.data()[c], bta = beta.data()[c], mu = mean[c], is = inv_std[c];
        const T* xrow = xp + (i64(n) * C + c) * hw;
        T* orow = op + (i64(n) * C + c) * hw;
        for (i64 p = 0; p < hw; ++p) orow[p] = g * (xrow[p] - mu) * is + bta;
      }
  }

  if (detail::any_grad<T>({&x, &gamma, &beta})) {
    Tensor<T> xc = x, gc = gamma, bc = beta;
    out.set_parents({x, gamma, beta});
    out.set_backprop([xc, gc, bc, mean, inv_std, training, N, C, hw, m](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      const T* xp = xc.data();
      // per-channel reductions shared by the input and gamma grads
      std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* xrow = xp + (i64(n) * C + c) * hw;
          const T* grow = go + (i64(n) * C + c) * hw;
          double mu = mean[c], is = inv_std[c];
          for (i64 p = 0; p < hw; ++p) {
            double dy = grow[p];
            sum_dy[c] += dy;
            sum_dy_xhat[c] += dy * (double(xrow[p]) - mu) * is;
          }
        }
      if (gc.requires_grad()) {
        T* gg = gc.grad().data();
        for (int c = 0; c < C; ++c) gg[c] += T(sum_dy_xhat[c]);
      }
      if (bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (int c = 0; c < C; ++c) gb[c] += T(sum_dy[c]);
      }
      if (xc.requires_grad()) {
        T* gx = xc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const T* xrow = xp + (i64(n) * C + c) * hw;
            const T* grow = go + (i64(n) * C + c) * hw;
            T* gxrow = gx + (i64(n) * C + c) * hw;
            double g = gc.data()[c], mu = mean[c], is = inv_std[c];
            if (training) {
              double mdy = sum_dy[c] / double(m);
              double mdyx = sum_dy_xhat[c] / double(m);
              for (i64 p = 0; p < hw; ++p) {
                double xhat = (double(xrow[p]) - mu) * is;
                gxrow[p] += T(g * is * (double(grow[p]) - mdy - xhat * mdyx));
              }
            } else {
              for (i64 p = 0; p < hw; ++p) gxrow[p] += T(g * is * double(grow[p]));
            }
          }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------------- relu --

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  const i64 n = x.numel();
  for (i64 i = 0; i < n; ++i) {
    KinkTracker::note(std::abs(double(xp[i])));
    op[i] = xp[i] > T(0) ? xp[i] : T(0);
  }
  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    out.set_backprop([xc, n](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      const T* xp = xc.data();
      T* gx = xc.grad().data();
      for (i64 i = 0; i < n; ++i)
        if (xp[i] > T(0)) gx[i] += go[i];
    });
  }
  return out;
}

// -------------------------------------------------------- bilinear resize --

namespace detail {

struct ResizeAxis {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

// half-pixel centers: src = (dst + 0.5) * (in/out) - 0.5, edge clamped
inline ResizeAxis resize_axis(int in, int out) {
  ResizeAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.frac.resize(out);
  const double scale = double(in) / double(out);
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > double(in - 1)) src = double(in - 1);
    int lo = int(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    int hi = lo + 1 < in ? lo + 1 : in - 1;
    a.i0[d] = lo;
    a.i1[d] = hi;
    a.frac[d] = src - double(lo);
  }
  return a;
}

}  // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  const Shape& xs = x.shape();
  if (out_h <= 0 || out_w <= 0)
    throw ShapeError(cat("bilinear_resize: bad target ", out_h, "x", out_w));
  detail::ResizeAxis ay = detail::resize_axis(xs.h, out_h);
  detail::ResizeAxis ax = detail::resize_axis(xs.w, out_w);

  Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, out_h, out_w});
  {
    const T* xp = x.data();
    T* op = out.data();
    const i64 planes = i64(xs.n) * xs.c;
    for (i64 pl = 0; pl < planes; ++pl) {
      const T* src = xp + pl * xs.h * xs.w;
      T* dst = op + pl * i64(out_h) * out_w;
      for (int y = 0; y < out_h; ++y) {
        const T* r0 = src + i64(ay.i0[y]) * xs.w;
        const T* r1 = src + i64(ay.i1[y]) * xs.w;
        const T fy = T(ay.frac[y]);
        for (int xo = 0; xo < out_w; ++xo) {
          const T fx = T(ax.frac[xo]);
          // lerp form keeps constants (and the identity case) exact
          T top = r0[ax.i0[xo]] + fx * (r0[ax.i1[xo]] - r0[ax.i0[xo]]);
          T bot = r1[ax.i0[xo]] + fx * (r1[ax.i1[xo]] - r1[ax.i0[xo]]);
          dst[i64(y) * out_w + xo] = top + fy * (bot - top);
        }
      }
    }
  }

  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    out.set_backprop([xc, ay, ax, out_h, out_w](TensorNode<T>& self) mutable {
      const Shape& xs = xc.shape();
      const T* go = self.grad.data();
      T* gx = xc.grad().data();
      const i64 planes = i64(xs.n) * xs.c;
      for (i64 pl = 0; pl < planes; ++pl) {
        const T* g = go + pl * i64(out_h) * out_w;
        T* dst = gx + pl * xs.h * xs.w;
        for (int y = 0; y < out_h; ++y) {
          const double fy = ay.frac[y];
          T* r0 = dst + i64(ay.i0[y]) * xs.w;
          T* r1 = dst + i64(ay.i1[y]) * xs.w;
          for (int xo = 0; xo < out_w; ++xo) {
            const double fx = ax.frac[xo];
            const T gv = g[i64(y) * out_w + xo];
            r0[ax.i0[xo]] += T((1 - fy) * (1 - fx)) * gv;
            r0[ax.i1[xo]] += T((1 - fy) * fx) * gv;
            r1[ax.i0[xo]] += T(fy * (1 - fx)) * gv;
            r1[ax.i1[xo]] += T(fy * fx) * gv;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- softmax --

// Normalizes each (n,c) plane over its spatial positions (shift-stable).
template <class T>
Tensor<T> softmax_spatial(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  const i64 hw = i64(xs.h) * xs.w;
  Tensor<T> out = Tensor<T>::zeros(xs);
  const T* xp = x.data();
  T* op = out.data();
  const i64 planes = i64(xs.n) * xs.c;
  for (i64 pl = 0; pl < planes; ++pl) {
    const T* src = xp + pl * hw;
    T* dst = op + pl * hw;
    T mx = src[0];
    for (i64 p = 1; p < hw; ++p) mx = std::max(mx, src[p]);
    double sum = 0;
    for (i64 p = 0; p < hw; ++p) {
      double e = std::exp(double(src[p] - mx));
      dst[p] = T(e);
      sum += e;
    }
    T inv = T(1.0 / sum);
    for (i64 p = 0; p < hw; ++p) dst[p] *= inv;
  }

  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    // Reads the saved softmax output from self.value; capturing the output
    // tensor here would pin the node (and its whole upstream graph) forever.
    out.set_backprop([xc, planes, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      const T* s = self.value.data();
      T* gx = xc.grad().data();
      for (i64 pl = 0; pl < planes; ++pl) {
        const T* grow = go + pl * hw;
        const T* srow = s + pl * hw;
        T* gxrow = gx + pl * hw;
        double dot = 0;
        for (i64 p = 0; p < hw; ++p) dot += double(grow[p]) * srow[p];
        for (i64 p = 0; p < hw; ++p)
          gxrow[p] += T(srow[p] * (double(grow[p]) - dot));
      }
    });
  }
  return out;
}

// Per-position softmax over channels (class probabilities).
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  const int C = xs.c;
  const i64 hw = i64(xs.h) * xs.w;
  Tensor<T> out = Tensor<T>::zeros(xs);
  const T* xp = x.data();
  T* op = out.data();
  for (int n = 0; n < xs.n; ++n)
    for (i64 p = 0; p < hw; ++p) {
      const i64 base = i64(n) * C * hw + p;
      T mx = xp[base];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xp[base + i64(c) * hw]);
      double sum = 0;
      for (int c = 0; c < C; ++c) {
        double e = std::exp(double(xp[base + i64(c) * hw] - mx));
        op[base + i64(c) * hw] = T(e);
        sum += e;
      }
      T inv = T(1.0 / sum);
      for (int c = 0; c < C; ++c) op[base + i64(c) * hw] *= inv;
    }

  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    out.set_backprop([xc, C, hw](TensorNode<T>& self) mutable {
      const Shape& xs = xc.shape();
      const T* go = self.grad.data();
      const T* s = self.value.data();
      T* gx = xc.grad().data();
      for (int n = 0; n < xs.n; ++n)
        for (i64 p = 0; p < hw; ++p) {
          const i64 base = i64(n) * C * hw + p;
          double dot = 0;
          for (int c = 0; c < C; ++c)
            dot += double(go[base + i64(c) * hw]) * s[base + i64(c) * hw];
          for (int c = 0; c < C; ++c)
            gx[base + i64(c) * hw] +=
                T(s[base + i64(c) * hw] * (double(go[base + i64(c) * hw]) - dot));
        }
    });
  }
  return out;
}

// ----------------------------------------------------------------- concat --

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  int ctotal = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError(cat("concat_channels: ", s.str(), " vs ", s0.str()));
    ctotal += s.c;
  }
  const i64 hw = i64(s0.h) * s0.w;
  Tensor<T> out = Tensor<T>::zeros({s0.n, ctotal, s0.h, s0.w});
  T* op = out.data();
  for (int n = 0; n < s0.n; ++n) {
    i64 coff = 0;
    for (const auto& t : xs) {
      const int c = t.shape().c;
      const T* src = t.data() + i64(n) * c * hw;
      std::copy(src, src + i64(c) * hw, op + (i64(n) * ctotal + coff) * hw);
      coff += c;
    }
  }

  bool need = false;
  for (const auto& t : xs) need = need || detail::wants_grad(t);
  if (need) {
    std::vector<Tensor<T>> parents = xs;
    out.set_parents(parents);
    out.set_backprop([parents, ctotal, hw](TensorNode<T>& self) mutable {
      const int N = self.shape.n;
      const T* go = self.grad.data();
      for (int n = 0; n < N; ++n) {
        i64 coff = 0;
        for (auto& t : parents) {
          const int c = t.shape().c;
          if (t.requires_grad()) {
            T* gx = t.grad().data() + i64(n) * c * hw;
            const T* src = go + (i64(n) * ctotal + coff) * hw;
            for (i64 p = 0; p < i64(c) * hw; ++p) gx[p] += src[p];
          }
          coff += c;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------- codebook primitives --

// Spatial expectation of basis maps under per-codeword weighting maps.
// basis:(N,D,H,W)  weights:(N,n,H,W)  ->  codewords:(N,D,n,1)
template <class T>
Tensor<T> weighted_pool(const Tensor<T>& basis, const Tensor<T>& weights) {
  const Shape& bs = basis.shape();
  const Shape& as = weights.shape();
  if (bs.n != as.n || bs.h != as.h || bs.w != as.w)
    throw ShapeError(cat("weighted_pool: basis ", bs.str(), " vs weights ", as.str()));
  const int N = bs.n, D = bs.c, K = as.c;
  const i64 hw = i64(bs.h) * bs.w;

  Tensor<T> out = Tensor<T>::zeros({N, D, K, 1});
  {
    const T* bp = basis.data();
    const T* ap = weights.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < D; ++d) {
        const T* brow = bp + (i64(n) * D + d) * hw;
        for (int i = 0; i < K; ++i) {
          const T* arow = ap + (i64(n) * K + i) * hw;
          double acc = 0;
          for (i64 p = 0; p < hw; ++p) acc += double(arow[p]) * brow[p];
          op[(i64(n) * D + d) * K + i] = T(acc);
        }
      }
  }

  if (detail::any_grad<T>({&basis, &weights})) {
    Tensor<T> bc = basis, ac = weights;
    out.set_parents({basis, weights});
    out.set_backprop([bc, ac, N, D, K, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      if (bc.requires_grad()) {
        T* gb = bc.grad().data();
        const T* ap = ac.data();
        for (int n = 0; n < N; ++n)
          for (int d = 0; d < D; ++d) {
            T* gbrow = gb + (i64(n) * D + d) * hw;
            for (int i = 0; i < K; ++i) {
              const T g = go[(i64(n) * D + d) * K + i];
              const T* arow = ap + (i64(n) * K + i) * hw;
              for (i64 p = 0; p < hw; ++p) gbrow[p] += g * arow[p];
            }
          }
      }
      if (ac.requires_grad()) {
        T* ga = ac.grad().data();
        const T* bp = bc.data();
        for (int n = 0; n < N; ++n)
          for (int i = 0; i < K; ++i) {
            T* garow = ga + (i64(n) * K + i) * hw;
            for (int d = 0; d < D; ++d) {
              const T g = go[(i64(n) * D + d) * K + i];
              const T* brow = bp + (i64(n) * D + d) * hw;
              for (i64 p = 0; p < hw; ++p) garow[p] += g * brow[p];
            }
          }
      }
    });
  }
  return out;
}

// Per-position linear combination of codewords under assembly coefficients.
// coeff:(N,n,H,W)  codewords:(N,D,n,1)  ->  (N,D,H,W)
template <class T>
Tensor<T> assemble(const Tensor<T>& coeff, const Tensor<T>& codewords) {
  const Shape& ws = coeff.shape();
  const Shape& cs = codewords.shape();
  if (cs.n != ws.n || cs.h != ws.c || cs.w != 1)
    throw ShapeError(cat("assemble: coeff ", ws.str(), " vs codewords ", cs.str()));
  const int N = ws.n, K = ws.c, D = cs.c;
  const i64 hw = i64(ws.h) * ws.w;

  Tensor<T> out = Tensor<T>::zeros({N, D, ws.h, ws.w});
  {
    const T* wp = coeff.data();
    const T* cp = codewords.data();
    T* op = out.data();
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < D; ++d) {
        T* orow = op + (i64(n) * D + d) * hw;
        for (int i = 0; i < K; ++i) {
          const T cv = cp[(i64(n) * D + d) * K + i];
          const T* wrow = wp + (i64(n) * K + i) * hw;
          for (i64 p = 0; p < hw; ++p) orow[p] += cv * wrow[p];
        }
      }
  }

  if (detail::any_grad<T>({&coeff, &codewords})) {
    Tensor<T> wc = coeff, cc = codewords;
    out.set_parents({coeff, codewords});
    out.set_backprop([wc, cc, N, K, D, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      if (wc.requires_grad()) {
        T* gw = wc.grad().data();
        const T* cp = cc.data();
        for (int n = 0; n < N; ++n)
          for (int i = 0; i < K; ++i) {
            T* gwrow = gw + (i64(n) * K + i) * hw;
            for (int d = 0; d < D; ++d) {
              const T cv = cp[(i64(n) * D + d) * K + i];
              const T* grow = go + (i64(n) * D + d) * hw;
              for (i64 p = 0; p < hw; ++p) gwrow[p] += cv * grow[p];
            }
          }
      }
      if (cc.requires_grad()) {
        T* gc = cc.grad().data();
        const T* wp = wc.data();
        for (int n = 0; n < N; ++n)
          for (int d = 0; d < D; ++d) {
            const T* grow = go + (i64(n) * D + d) * hw;
            for (int i = 0; i < K; ++i) {
              const T* wrow = wp + (i64(n) * K + i) * hw;
              double acc = 0;
              for (i64 p = 0; p < hw; ++p) acc += double(grow[p]) * wrow[p];
              gc[(i64(n) * D + d) * K + i] += T(acc);
            }
          }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- reductions --

template <class T>
Tensor<T> global_avg(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  const i64 hw = i64(xs.h) * xs.w;
  Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, 1, 1});
  const T* xp = x.data();
  T* op = out.data();
  const i64 planes = i64(xs.n) * xs.c;
  for (i64 pl = 0; pl < planes; ++pl) {
    double acc = 0;
    const T* src = xp + pl * hw;
    for (i64 p = 0; p < hw; ++p) acc += src[p];
    op[pl] = T(acc / double(hw));
  }

  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    out.set_backprop([xc, planes, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      T* gx = xc.grad().data();
      for (i64 pl = 0; pl < planes; ++pl) {
        const T g = T(double(go[pl]) / double(hw));
        T* dst = gx + pl * hw;
        for (i64 p = 0; p < hw; ++p) dst[p] += g;
      }
    });
  }
  return out;
}

// x:(N,C,H,W) + v:(N,C,1,1), v broadcast over the spatial dims
template <class T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& v) {
  const Shape& xs = x.shape();
  const Shape& vs = v.shape();
  if (vs.n != xs.n || vs.c != xs.c || vs.h != 1 || vs.w != 1)
    throw ShapeError(cat("add_broadcast: ", xs.str(), " vs ", vs.str()));
  const i64 hw = i64(xs.h) * xs.w;
  const i64 planes = i64(xs.n) * xs.c;
  Tensor<T> out = Tensor<T>::zeros(xs);
  const T* xp = x.data();
  const T* vp = v.data();
  T* op = out.data();
  for (i64 pl = 0; pl < planes; ++pl) {
    const T add = vp[pl];
    const T* src = xp + pl * hw;
    T* dst = op + pl * hw;
    for (i64 p = 0; p < hw; ++p) dst[p] = src[p] + add;
  }

  if (detail::any_grad<T>({&x, &v})) {
    Tensor<T> xc = x, vc = v;
    out.set_parents({x, v});
    out.set_backprop([xc, vc, planes, hw](TensorNode<T>& self) mutable {
      const T* go = self.grad.data();
      if (xc.requires_grad()) {
        T* gx = xc.grad().data();
        for (i64 p = 0; p < planes * hw; ++p) gx[p] += go[p];
      }
      if (vc.requires_grad()) {
        T* gv = vc.grad().data();
        for (i64 pl = 0; pl < planes; ++pl) {
          double acc = 0;
          const T* src = go + pl * hw;
          for (i64 p = 0; p < hw; ++p) acc += src[p];
          gv[pl] += T(acc);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------- cross entropy --

// Mean softmax cross entropy over pixels whose label is not ignore_index.
// Out-of-range labels are a validation error; an all-ignored batch yields a
// zero loss with zero gradient.
template <class T>
Tensor<T> cross_entropy_mask(const Tensor<T>& logits, const LabelMap& labels,
                             int ignore_index) {
  const Shape& ls = logits.shape();
  if (labels.n != ls.n || labels.h != ls.h || labels.w != ls.w)
    throw ShapeError(cat("cross_entropy_mask: logits ", ls.str(), " vs labels (",
                         labels.n, ",", labels.h, ",", labels.w, ")"));
  const int N = ls.n, K = ls.c;
  const i64 hw = i64(ls.h) * ls.w;
  const T* zp = logits.data();

  i64 count = 0;
  double total = 0;
  for (int n = 0; n < N; ++n)
    for (i64 p = 0; p < hw; ++p) {
      const int y = labels.v[i64(n) * hw + p];
      if (y == ignore_index) continue;
      if (y < 0 || y >= K)
        throw ValidationError(cat("cross_entropy_mask: label ", y, " outside [0,", K, ") and not ignore_index ", ignore_index));
      const i64 base = i64(n) * K * hw + p;
      double mx = zp[base];
      for (int c = 1; c < K; ++c) mx = std::max(mx, double(zp[base + i64(c) * hw]));
      double sum = 0;
      for (int c = 0; c < K; ++c) sum += std::exp(double(zp[base + i64(c) * hw]) - mx);
      total += mx + std::log(sum) - double(zp[base + i64(y) * hw]);
      ++count;
    }

  Tensor<T> out = Tensor<T>::from_data({1, 1, 1, 1}, {count > 0 ? T(total / double(count)) : T(0)});
  if (detail::wants_grad(logits) && count > 0) {
    Tensor<T> zc = logits;
    LabelMap lc = labels;
    out.set_parents({logits});
    out.set_backprop([zc, lc, ignore_index, N, K, hw, count](TensorNode<T>& self) mutable {
      const T gscale = T(double(self.grad[0]) / double(count));
      const T* zp = zc.data();
      T* gz = zc.grad().data();
      for (int n = 0; n < N; ++n)
        for (i64 p = 0; p < hw; ++p) {
          const int y = lc.v[i64(n) * hw + p];
          if (y == ignore_index) continue;
          const i64 base = i64(n) * K * hw + p;
          double mx = zp[base];
          for (int c = 1; c < K; ++c) mx = std::max(mx, double(zp[base + i64(c) * hw]));
          double sum = 0;
          for (int c = 0; c < K; ++c) sum += std::exp(double(zp[base + i64(c) * hw]) - mx);
          for (int c = 0; c < K; ++c) {
            double sm = std::exp(double(zp[base + i64(c) * hw]) - mx) / sum;
            gz[base + i64(c) * hw] += gscale * T(sm - (c == y ? 1.0 : 0.0));
          }
        }
    });
  }
  return out;
}

// ------------------------------------------------------------------ misc --

// Scalar contraction against fixed weights; the standard reduction used to
// drive gradient checks.
template <class T>
Tensor<T> sum_weighted(const Tensor<T>& x, const std::vector<T>& r) {
  if (static_cast<i64>(r.size()) != x.numel())
    throw ShapeError(cat("sum_weighted: ", r.size(), " weights for ", x.shape().str()));
  double acc = 0;
  const T* xp = x.data();
  for (i64 i = 0; i < x.numel(); ++i) acc += double(r[i]) * xp[i];
  Tensor<T> out = Tensor<T>::from_data({1, 1, 1, 1}, {T(acc)});
  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    std::vector<T> rc = r;
    out.set_parents({x});
    out.set_backprop([xc, rc](TensorNode<T>& self) mutable {
      const T g = self.grad[0];
      T* gx = xc.grad().data();
      for (size_t i = 0; i < rc.size(); ++i) gx[i] += g * rc[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> flip_w(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  Tensor<T> out = Tensor<T>::zeros(xs);
  const T* xp = x.data();
  T* op = out.data();
  const i64 rows = i64(xs.n) * xs.c * xs.h;
  for (i64 r = 0; r < rows; ++r) {
    const T* src = xp + r * xs.w;
    T* dst = op + r * xs.w;
    for (int w = 0; w < xs.w; ++w) dst[w] = src[xs.w - 1 - w];
  }
  if (detail::wants_grad(x)) {
    Tensor<T> xc = x;
    out.set_parents({x});
    out.set_backprop([xc, rows](TensorNode<T>& self) mutable {
      const int W = xc.shape().w;
      const T* go = self.grad.data();
      T* gx = xc.grad().data();
      for (i64 r = 0; r < rows; ++r)
        for (int w = 0; w < W; ++w) gx[r * W + w] += go[r * W + (W - 1 - w)];
    });
  }
  return out;
}

}  // namespace efcn
