#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

namespace cycleseg::ad {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, dispatching to
/// single or double precision BLAS.
inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
                 int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
                 const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
                 int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

inline int64_t conv_out_dim(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Unfold one [C, H, W] image into a [C*KH*KW, OH*OW] matrix with implicit
/// zero padding, so convolution becomes a single GEMM.
template <typename T>
inline void im2col(const T* im, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* cols) {
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((ch * kh + ki) * kw + kj) * oh * ow;
        for (int64_t oi = 0; oi < oh; ++oi) {
          const int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            std::fill(row + oi * ow, row + (oi + 1) * ow, T(0));
            continue;
          }
          const T* src = im + (ch * h + ii) * w;
          for (int64_t oj = 0; oj < ow; ++oj) {
            const int64_t jj = oj * stride - pad + kj;
            row[oi * ow + oj] = (jj >= 0 && jj < w) ? src[jj] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add a [C*KH*KW, OH*OW] matrix back onto a
/// [C, H, W] image. The caller zeroes the image beforehand (or relies on
/// accumulation into an existing gradient buffer).
template <typename T>
inline void col2im(const T* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* im) {
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((ch * kh + ki) * kw + kj) * oh * ow;
        for (int64_t oi = 0; oi < oh; ++oi) {
          const int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          T* dst = im + (ch * h + ii) * w;
          for (int64_t oj = 0; oj < ow; ++oj) {
            const int64_t jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < w) dst[jj] += row[oi * ow + oj];
          }
        }
      }
    }
  }
}

/// Source index and lerp weights for bilinear resampling with half-pixel
/// centers (the usual align_corners=false convention).
struct LerpIndex {
  int64_t lo, hi;
  double w_hi;  // weight of hi; lo gets 1 - w_hi
};

inline std::vector<LerpIndex> bilinear_axis(int64_t in, int64_t out) {
  std::vector<LerpIndex> idx(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t lo = static_cast<int64_t>(src);
    if (lo > in - 1) lo = in - 1;
    const int64_t hi = std::min<int64_t>(lo + 1, in - 1);
    idx[static_cast<size_t>(i)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return idx;
}

/// Mirror an out-of-range coordinate back inside [0, n) without repeating the
/// border pixel (reflection padding requires pad < n).
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace cycleseg::ad
