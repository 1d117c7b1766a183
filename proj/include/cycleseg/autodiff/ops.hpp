#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycleseg/autodiff/kernels.hpp"
#include "cycleseg/autodiff/variable.hpp"
#include "cycleseg/core/tensor.hpp"

namespace cycleseg::ad {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
inline void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<T>(std::move(out), {an, bn}, [an, bn, n](Node<T>& self) {
    const T* dy = self.grad.data();
    if (an->needs_grad) {
      an->ensure_grad();
      T* g = an->grad.data();
      for (int64_t i = 0; i < n; ++i) g[i] += dy[i];
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      T* g = bn->grad.data();
      for (int64_t i = 0; i < n; ++i) g[i] += dy[i];
    }
  });
}

template <typename T>
inline Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<T>(std::move(out), {an, bn}, [an, bn, n](Node<T>& self) {
    const T* dy = self.grad.data();
    if (an->needs_grad) {
      an->ensure_grad();
      T* g = an->grad.data();
      for (int64_t i = 0; i < n; ++i) g[i] += dy[i];
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      T* g = bn->grad.data();
      for (int64_t i = 0; i < n; ++i) g[i] -= dy[i];
    }
  });
}

template <typename T>
inline Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<T>(std::move(out), {an, bn}, [an, bn, n](Node<T>& self) {
    const T* dy = self.grad.data();
    if (an->needs_grad) {
      an->ensure_grad();
      T* g = an->grad.data();
      const T* bv = bn->value.data();
      for (int64_t i = 0; i < n; ++i) g[i] += dy[i] * bv[i];
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      T* g = bn->grad.data();
      const T* av = an->value.data();
      for (int64_t i = 0; i < n; ++i) g[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
inline Var<T> add_scalar(const Var<T>& x, double s) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  const T sv = static_cast<T>(s);
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] + sv;
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    for (int64_t i = 0; i < n; ++i) g[i] += dy[i];
  });
}

template <typename T>
inline Var<T> mul_scalar(const Var<T>& x, double s) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  const T sv = static_cast<T>(s);
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] * sv;
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n, sv](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    for (int64_t i = 0; i < n; ++i) g[i] += dy[i] * sv;
  });
}

template <typename T>
inline Var<T> square(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] * x.value()[i];
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < n; ++i) g[i] += T(2) * xv[i] * dy[i];
  });
}

template <typename T>
inline Var<T> abs(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::abs(x.value()[i]);
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < n; ++i)
      g[i] += xv[i] > T(0) ? dy[i] : (xv[i] < T(0) ? -dy[i] : T(0));
  });
}

template <typename T>
inline Var<T> log(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::log(x.value()[i]);
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < n; ++i) g[i] += dy[i] / xv[i];
  });
}

/// Clip to [lo, hi]; gradient passes only where the input already lay inside.
template <typename T>
inline Var<T> clamp(const Var<T>& x, double lo, double hi) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  for (int64_t i = 0; i < n; ++i) out[i] = std::min(std::max(x.value()[i], l), h);
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n, l, h](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < n; ++i)
      if (xv[i] >= l && xv[i] <= h) g[i] += dy[i];
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> leaky_relu(const Var<T>& x, double slope) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  const T s = static_cast<T>(slope);
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] > T(0) ? x.value()[i] : s * x.value()[i];
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n, s](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < n; ++i) g[i] += xv[i] > T(0) ? dy[i] : s * dy[i];
  });
}

template <typename T>
inline Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, 0.0);
}

template <typename T>
inline Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(x.value()[i]);
  auto xn = x.node();
  Tensor<T> y = out;  // shares storage; kept for the derivative
  return make_node<T>(std::move(out), {xn}, [xn, n, y](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T* dy = self.grad.data();
    const T* yv = y.data();
    for (int64_t i = 0; i < n; ++i) g[i] += dy[i] * (T(1) - yv[i] * yv[i]);
  });
}

/// Per-pixel softmax over the channel axis of a [K, H, W] or [N, K, H, W]
/// tensor, computed with the usual max-subtraction for stability.
template <typename T>
inline Var<T> softmax_channels(const Var<T>& x) {
  const Shape& s = x.shape();
  detail::require(s.rank() == 3 || s.rank() == 4,
                  "softmax_channels: expected rank 3 or 4, got " + s.str());
  const int64_t n = s.rank() == 4 ? s[0] : 1;
  const int64_t k = s.rank() == 4 ? s[1] : s[0];
  const int64_t hw = s.rank() == 4 ? s[2] * s[3] : s[1] * s[2];
  Tensor<T> out(s);
  for (int64_t b = 0; b < n; ++b) {
    const T* xi = x.value().data() + b * k * hw;
    T* yi = out.data() + b * k * hw;
    for (int64_t j = 0; j < hw; ++j) {
      T mx = xi[j];
      for (int64_t c = 1; c < k; ++c) mx = std::max(mx, xi[c * hw + j]);
      double denom = 0;
      for (int64_t c = 0; c < k; ++c) {
        const T e = std::exp(xi[c * hw + j] - mx);
        yi[c * hw + j] = e;
        denom += static_cast<double>(e);
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (int64_t c = 0; c < k; ++c) yi[c * hw + j] *= inv;
    }
  }
  auto xn = x.node();
  Tensor<T> y = out;
  return make_node<T>(std::move(out), {xn}, [xn, n, k, hw, y](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    for (int64_t b = 0; b < n; ++b) {
      T* g = xn->grad.data() + b * k * hw;
      const T* dy = self.grad.data() + b * k * hw;
      const T* yv = y.data() + b * k * hw;
      for (int64_t j = 0; j < hw; ++j) {
        double dot = 0;
        for (int64_t c = 0; c < k; ++c)
          dot += static_cast<double>(dy[c * hw + j]) * static_cast<double>(yv[c * hw + j]);
        for (int64_t c = 0; c < k; ++c)
          g[c * hw + j] += yv[c * hw + j] * (dy[c * hw + j] - static_cast<T>(dot));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> sum_all(const Var<T>& x) {
  const int64_t n = x.value().numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.value()[i]);
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(acc);
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T dy = self.grad[0];
    for (int64_t i = 0; i < n; ++i) g[i] += dy;
  });
}

template <typename T>
inline Var<T> mean_all(const Var<T>& x) {
  const int64_t n = x.value().numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.value()[i]);
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    T* g = xn->grad.data();
    const T dy = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) g[i] += dy;
  });
}

// ---------------------------------------------------------------------------
// Padding and resampling
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> pad_reflect(const Var<T>& x, int64_t p) {
  const Shape& s = x.shape();
  detail::require(s.rank() == 4, "pad_reflect: expected [N,C,H,W], got " + s.str());
  const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  detail::require(p >= 0 && p < h && p < w,
                  "pad_reflect: pad " + std::to_string(p) + " too large for " + s.str());
  const int64_t oh = h + 2 * p, ow = w + 2 * p;
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.value().data() + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      const int64_t si = reflect_index(i - p, h);
      for (int64_t j = 0; j < ow; ++j) dst[i * ow + j] = src[si * w + reflect_index(j - p, w)];
    }
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn}, [xn, n, c, h, w, p, oh, ow](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    for (int64_t nc = 0; nc < n * c; ++nc) {
      T* g = xn->grad.data() + nc * h * w;
      const T* dy = self.grad.data() + nc * oh * ow;
      for (int64_t i = 0; i < oh; ++i) {
        const int64_t si = reflect_index(i - p, h);
        for (int64_t j = 0; j < ow; ++j) g[si * w + reflect_index(j - p, w)] += dy[i * ow + j];
      }
    }
  });
}

template <typename T>
inline Var<T> upsample_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w) {
  const Shape& s = x.shape();
  detail::require(s.rank() == 4, "upsample_bilinear: expected [N,C,H,W], got " + s.str());
  detail::require(out_h > 0 && out_w > 0, "upsample_bilinear: output dims must be positive");
  const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  const auto ys = bilinear_axis(h, out_h);
  const auto xs = bilinear_axis(w, out_w);
  Tensor<T> out(Shape{n, c, out_h, out_w});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.value().data() + nc * h * w;
    T* dst = out.data() + nc * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const auto& yi = ys[static_cast<size_t>(i)];
      for (int64_t j = 0; j < out_w; ++j) {
        const auto& xj = xs[static_cast<size_t>(j)];
        const double v00 = src[yi.lo * w + xj.lo], v01 = src[yi.lo * w + xj.hi];
        const double v10 = src[yi.hi * w + xj.lo], v11 = src[yi.hi * w + xj.hi];
        const double top = v00 + (v01 - v00) * xj.w_hi;
        const double bot = v10 + (v11 - v10) * xj.w_hi;
        dst[i * out_w + j] = static_cast<T>(top + (bot - top) * yi.w_hi);
      }
    }
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {xn},
                      [xn, n, c, h, w, out_h, out_w, ys, xs](Node<T>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad();
    for (int64_t nc = 0; nc < n * c; ++nc) {
      T* g = xn->grad.data() + nc * h * w;
      const T* dy = self.grad.data() + nc * out_h * out_w;
      for (int64_t i = 0; i < out_h; ++i) {
        const auto& yi = ys[static_cast<size_t>(i)];
        const double wy1 = yi.w_hi, wy0 = 1.0 - wy1;
        for (int64_t j = 0; j < out_w; ++j) {
          const auto& xj = xs[static_cast<size_t>(j)];
          const double d = static_cast<double>(dy[i * out_w + j]);
          const double wx1 = xj.w_hi, wx0 = 1.0 - wx1;
          g[yi.lo * w + xj.lo] += static_cast<T>(d * wy0 * wx0);
          g[yi.lo * w + xj.hi] += static_cast<T>(d * wy0 * wx1);
          g[yi.hi * w + xj.lo] += static_cast<T>(d * wy1 * wx0);
          g[yi.hi * w + xj.hi] += static_cast<T>(d * wy1 * wx1);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// 2D convolution via im2col + GEMM. x [N,C,H,W], w [OC,C,KH,KW], optional
/// bias [OC] (pass a default-constructed Var for none).
template <typename T>
inline Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride,
                     int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& wsh = w.shape();
  detail::require(xs.rank() == 4, "conv2d: input must be [N,C,H,W], got " + xs.str());
  detail::require(wsh.rank() == 4, "conv2d: weight must be [OC,C,KH,KW], got " + wsh.str());
  detail::require(xs[1] == wsh[1], "conv2d: input channels " + std::to_string(xs[1]) +
                                       " != weight channels " + std::to_string(wsh[1]));
  const int64_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const int64_t oc = wsh[0], kh = wsh[2], kw = wsh[3];
  const int64_t oh = conv_out_dim(h, kh, stride, pad);
  const int64_t ow = conv_out_dim(wd, kw, stride, pad);
  detail::require(oh > 0 && ow > 0, "conv2d: kernel does not fit input " + xs.str());
  if (b.defined())
    detail::require(b.shape() == Shape{oc}, "conv2d: bias must be [OC], got " + b.shape().str());

  const int64_t ckk = c * kh * kw;
  Tensor<T> out(Shape{n, oc, oh, ow});
  std::vector<T> cols(static_cast<size_t>(ckk * oh * ow));
  for (int64_t i = 0; i < n; ++i) {
    im2col(x.value().data() + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow, cols.data());
    gemm(false, false, oc, oh * ow, ckk, T(1), w.value().data(), ckk, cols.data(), oh * ow, T(0),
         out.data() + i * oc * oh * ow, oh * ow);
    if (b.defined()) {
      T* dst = out.data() + i * oc * oh * ow;
      for (int64_t o = 0; o < oc; ++o) {
        const T bias = b.value()[o];
        for (int64_t j = 0; j < oh * ow; ++j) dst[o * oh * ow + j] += bias;
      }
    }
  }

  auto xn = x.node(), wn = w.node();
  std::vector<NodePtr<T>> parents{xn, wn};
  NodePtr<T> bn;
  if (b.defined()) {
    bn = b.node();
    parents.push_back(bn);
  }
  return make_node<T>(std::move(out), std::move(parents),
                      [xn, wn, bn, n, c, h, wd, oc, kh, kw, stride, pad, oh, ow,
                       ckk](Node<T>& self) {
    std::vector<T> cols(static_cast<size_t>(ckk * oh * ow));
    std::vector<T> dcols;
    if (xn->needs_grad) {
      xn->ensure_grad();
      dcols.resize(static_cast<size_t>(ckk * oh * ow));
    }
    if (wn->needs_grad) wn->ensure_grad();
    if (bn && bn->needs_grad) bn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const T* dy = self.grad.data() + i * oc * oh * ow;
      if (wn->needs_grad) {
        im2col(xn->value.data() + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
               cols.data());
        // dW [OC, CKK] += dY [OC, OHOW] * cols^T [OHOW, CKK]
        gemm(false, true, oc, ckk, oh * ow, T(1), dy, oh * ow, cols.data(), oh * ow, T(1),
             wn->grad.data(), ckk);
      }
      if (xn->needs_grad) {
        // dcols [CKK, OHOW] = W^T [CKK, OC] * dY [OC, OHOW]
        gemm(true, false, ckk, oh * ow, oc, T(1), wn->value.data(), ckk, dy, oh * ow, T(0),
             dcols.data(), oh * ow);
        col2im(dcols.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
               xn->grad.data() + i * c * h * wd);
      }
      if (bn && bn->needs_grad) {
        T* gb = bn->grad.data();
        for (int64_t o = 0; o < oc; ++o) {
          double acc = 0;
          for (int64_t j = 0; j < oh * ow; ++j) acc += static_cast<double>(dy[o * oh * ow + j]);
          gb[o] += static_cast<T>(acc);
        }
      }
    }
  });
}

/// Transposed 2D convolution (the adjoint of conv2d), weight [IC,OC,KH,KW].
/// out = (in - 1) * stride - 2 * pad + kernel + out_pad per spatial dim.
template <typename T>
inline Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride,
                               int64_t pad, int64_t out_pad) {
  const Shape& xs = x.shape();
  const Shape& wsh = w.shape();
  detail::require(xs.rank() == 4, "conv_transpose2d: input must be [N,C,H,W], got " + xs.str());
  detail::require(wsh.rank() == 4,
                  "conv_transpose2d: weight must be [IC,OC,KH,KW], got " + wsh.str());
  detail::require(xs[1] == wsh[0], "conv_transpose2d: input channels " + std::to_string(xs[1]) +
                                       " != weight in-channels " + std::to_string(wsh[0]));
  detail::require(out_pad >= 0 && out_pad < stride,
                  "conv_transpose2d: out_pad must lie in [0, stride)");
  const int64_t n = xs[0], ic = xs[1], ih = xs[2], iw = xs[3];
  const int64_t oc = wsh[1], kh = wsh[2], kw = wsh[3];
  const int64_t oh = (ih - 1) * stride - 2 * pad + kh + out_pad;
  const int64_t ow = (iw - 1) * stride - 2 * pad + kw + out_pad;
  detail::require(oh > 0 && ow > 0, "conv_transpose2d: empty output for input " + xs.str());
  if (b.defined())
    detail::require(b.shape() == Shape{oc},
                    "conv_transpose2d: bias must be [OC], got " + b.shape().str());

  const int64_t ockk = oc * kh * kw;
  Tensor<T> out(Shape{n, oc, oh, ow});
  std::vector<T> cols(static_cast<size_t>(ockk * ih * iw));
  for (int64_t i = 0; i < n; ++i) {
    // cols [OCKK, IHIW] = W_view^T [OCKK, IC] * X [IC, IHIW]
    gemm(true, false, ockk, ih * iw, ic, T(1), w.value().data(), ockk,
         x.value().data() + i * ic * ih * iw, ih * iw, T(0), cols.data(), ih * iw);
    T* dst = out.data() + i * oc * oh * ow;
    col2im(cols.data(), oc, oh, ow, kh, kw, stride, pad, ih, iw, dst);
    if (b.defined()) {
      for (int64_t o = 0; o < oc; ++o) {
        const T bias = b.value()[o];
        for (int64_t j = 0; j < oh * ow; ++j) dst[o * oh * ow + j] += bias;
      }
    }
  }

  auto xn = x.node(), wn = w.node();
  std::vector<NodePtr<T>> parents{xn, wn};
  NodePtr<T> bn;
  if (b.defined()) {
    bn = b.node();
    parents.push_back(bn);
  }
  return make_node<T>(std::move(out), std::move(parents),
                      [xn, wn, bn, n, ic, ih, iw, oc, kh, kw, stride, pad, oh, ow,
                       ockk](Node<T>& self) {
    std::vector<T> dcols(static_cast<size_t>(ockk * ih * iw));
    if (xn->needs_grad) xn->ensure_grad();
    if (wn->needs_grad) wn->ensure_grad();
    if (bn && bn->needs_grad) bn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const T* dy = self.grad.data() + i * oc * oh * ow;
      im2col(dy, oc, oh, ow, kh, kw, stride, pad, ih, iw, dcols.data());
      if (xn->needs_grad) {
        // dX [IC, IHIW] += W_view [IC, OCKK] * dcols [OCKK, IHIW]
        gemm(false, false, ic, ih * iw, ockk, T(1), wn->value.data(), ockk, dcols.data(), ih * iw,
             T(1), xn->grad.data() + i * ic * ih * iw, ih * iw);
      }
      if (wn->needs_grad) {
        // dW_view [IC, OCKK] += X [IC, IHIW] * dcols^T [IHIW, OCKK]
        gemm(false, true, ic, ockk, ih * iw, T(1), xn->value.data() + i * ic * ih * iw, ih * iw,
             dcols.data(), ih * iw, T(1), wn->grad.data(), ockk);
      }
      if (bn && bn->needs_grad) {
        T* gb = bn->grad.data();
        for (int64_t o = 0; o < oc; ++o) {
          double acc = 0;
          for (int64_t j = 0; j < oh * ow; ++j) acc += static_cast<double>(dy[o * oh * ow + j]);
          gb[o] += static_cast<T>(acc);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Instance normalization with affine parameters gamma/beta of shape [C].
/// Statistics are per sample, per channel over the spatial extent.
template <typename T>
inline Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                            double eps = 1e-5) {
  const Shape& s = x.shape();
  detail::require(s.rank() == 4, "instance_norm: expected [N,C,H,W], got " + s.str());
  const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                  "instance_norm: affine params must be [C]");
  detail::require(hw > 1, "instance_norm: spatial extent must exceed one pixel");

  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv_std(Shape{n, c});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xi = x.value().data() + (i * c + ch) * hw;
      double mean = 0;
      for (int64_t j = 0; j < hw; ++j) mean += static_cast<double>(xi[j]);
      mean /= static_cast<double>(hw);
      double var = 0;
      for (int64_t j = 0; j < hw; ++j) {
        const double d = static_cast<double>(xi[j]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std.at(i, ch) = static_cast<T>(istd);
      T* xh = xhat.data() + (i * c + ch) * hw;
      T* yo = out.data() + (i * c + ch) * hw;
      const T g = gamma.value()[ch], bt = beta.value()[ch];
      for (int64_t j = 0; j < hw; ++j) {
        xh[j] = static_cast<T>((static_cast<double>(xi[j]) - mean) * istd);
        yo[j] = g * xh[j] + bt;
      }
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_node<T>(std::move(out), {xn, gn, bn},
                      [xn, gn, bn, n, c, hw, xhat, inv_std](Node<T>& self) {
    if (xn->needs_grad) xn->ensure_grad();
    if (gn->needs_grad) gn->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* dy = self.grad.data() + (i * c + ch) * hw;
        const T* xh = xhat.data() + (i * c + ch) * hw;
        double s1 = 0, s2 = 0;
        for (int64_t j = 0; j < hw; ++j) {
          s1 += static_cast<double>(dy[j]);
          s2 += static_cast<double>(dy[j]) * static_cast<double>(xh[j]);
        }
        if (gn->needs_grad) gn->grad[ch] += static_cast<T>(s2);
        if (bn->needs_grad) bn->grad[ch] += static_cast<T>(s1);
        if (xn->needs_grad) {
          T* gx = xn->grad.data() + (i * c + ch) * hw;
          const double scale = static_cast<double>(gn->value[ch]) *
                               static_cast<double>(inv_std.at(i, ch));
          const double m1 = s1 / static_cast<double>(hw);
          const double m2 = s2 / static_cast<double>(hw);
          for (int64_t j = 0; j < hw; ++j)
            gx[j] += static_cast<T>(scale * (static_cast<double>(dy[j]) - m1 -
                                             static_cast<double>(xh[j]) * m2));
        }
      }
    }
  });
}

/// Batch normalization. In training mode statistics are per channel over
/// batch and space, and the running buffers are updated in place (with the
/// unbiased variance, following the usual convention). In eval mode the
/// running buffers normalize instead.
template <typename T>
inline Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                         Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                         double momentum = 0.1, double eps = 1e-5) {
  const Shape& s = x.shape();
  detail::require(s.rank() == 4, "batch_norm: expected [N,C,H,W], got " + s.str());
  const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  const int64_t m = n * hw;
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                  "batch_norm: affine params must be [C]");
  detail::require(running_mean.shape() == Shape{c} && running_var.shape() == Shape{c},
                  "batch_norm: running stats must be [C]");
  detail::require(!training || m > 1, "batch_norm: training needs more than one value per channel");

  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv_std(Shape{c});
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      mean = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* xi = x.value().data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) mean += static_cast<double>(xi[j]);
      }
      mean /= static_cast<double>(m);
      var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* xi = x.value().data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const double d = static_cast<double>(xi[j]) - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      running_mean[ch] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[ch]) +
                         momentum * mean);
      running_var[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[ch]) +
                                       momentum * unbiased);
    } else {
      mean = static_cast<double>(running_mean[ch]);
      var = static_cast<double>(running_var[ch]);
    }
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = static_cast<T>(istd);
    const T g = gamma.value()[ch], bt = beta.value()[ch];
    for (int64_t i = 0; i < n; ++i) {
      const T* xi = x.value().data() + (i * c + ch) * hw;
      T* xh = xhat.data() + (i * c + ch) * hw;
      T* yo = out.data() + (i * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) {
        xh[j] = static_cast<T>((static_cast<double>(xi[j]) - mean) * istd);
        yo[j] = g * xh[j] + bt;
      }
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_node<T>(std::move(out), {xn, gn, bn},
                      [xn, gn, bn, n, c, hw, m, xhat, inv_std, training](Node<T>& self) {
    if (xn->needs_grad) xn->ensure_grad();
    if (gn->needs_grad) gn->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      double s1 = 0, s2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* dy = self.grad.data() + (i * c + ch) * hw;
        const T* xh = xhat.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          s1 += static_cast<double>(dy[j]);
          s2 += static_cast<double>(dy[j]) * static_cast<double>(xh[j]);
        }
      }
      if (gn->needs_grad) gn->grad[ch] += static_cast<T>(s2);
      if (bn->needs_grad) bn->grad[ch] += static_cast<T>(s1);
      if (!xn->needs_grad) continue;
      const double scale =
          static_cast<double>(gn->value[ch]) * static_cast<double>(inv_std[ch]);
      if (training) {
        const double m1 = s1 / static_cast<double>(m);
        const double m2 = s2 / static_cast<double>(m);
        for (int64_t i = 0; i < n; ++i) {
          const T* dy = self.grad.data() + (i * c + ch) * hw;
          const T* xh = xhat.data() + (i * c + ch) * hw;
          T* gx = xn->grad.data() + (i * c + ch) * hw;
          for (int64_t j = 0; j < hw; ++j)
            gx[j] += static_cast<T>(scale * (static_cast<double>(dy[j]) - m1 -
                                             static_cast<double>(xh[j]) * m2));
        }
      } else {
        for (int64_t i = 0; i < n; ++i) {
          const T* dy = self.grad.data() + (i * c + ch) * hw;
          T* gx = xn->grad.data() + (i * c + ch) * hw;
          for (int64_t j = 0; j < hw; ++j)
            gx[j] += static_cast<T>(scale * static_cast<double>(dy[j]));
        }
      }
    }
  });
}

}  // namespace cycleseg::ad
