#pragma once

// Raw numeric kernels shared by graph ops and plain (detached) evaluation.
// Convolutions are im2col + dgemm; the three conv kernels (forward, input
// gradient, kernel gradient) form a closed set under differentiation.

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <vector>

#include "rdwn/tensor.hpp"

namespace rdwn::kernels {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void check_conv_shapes(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw Error("conv2d: input and kernel must be rank-4, got " +
                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw Error("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                " vs kernel " + shape_str(w.shape()));
  if (stride < 1) throw Error("conv2d: stride must be positive");
  if (pad < 0) throw Error("conv2d: padding must be non-negative");
  if (w.dim(2) > x.dim(2) + 2 * pad || w.dim(3) > x.dim(3) + 2 * pad)
    throw Error("conv2d: kernel larger than padded input");
}

// col is [C*kh*kw, Ho*Wo] row-major for a single image.
inline void im2col(const double* x, int64_t C, int64_t H, int64_t W,
                   int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                   int64_t Ho, int64_t Wo, double* col) {
  const int64_t cols = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t p = 0; p < kh; ++p)
      for (int64_t q = 0; q < kw; ++q) {
        double* row = col + ((c * kh + p) * kw + q) * cols;
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t u = i * stride - pad + p;
          if (u < 0 || u >= H) {
            std::fill(row + i * Wo, row + (i + 1) * Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + u) * W;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t v = j * stride - pad + q;
            row[i * Wo + j] = (v >= 0 && v < W) ? src[v] : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* col, int64_t C, int64_t H, int64_t W,
                       int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                       int64_t Ho, int64_t Wo, double* x) {
  const int64_t cols = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t p = 0; p < kh; ++p)
      for (int64_t q = 0; q < kw; ++q) {
        const double* row = col + ((c * kh + p) * kw + q) * cols;
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t u = i * stride - pad + p;
          if (u < 0 || u >= H) continue;
          double* dst = x + (c * H + u) * W;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t v = j * stride - pad + q;
            if (v >= 0 && v < W) dst[v] += row[i * Wo + j];
          }
        }
      }
}

/// y[b,o,i,j] = sum_{c,p,q} x[b,c,i*s-P+p,j*s-P+q] * w[o,c,p,q]
inline Tensor conv_fwd(const Tensor& x, const Tensor& w, int stride, int pad) {
  check_conv_shapes(x, w, stride, pad);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = conv_out_dim(H, kh, stride, pad);
  const int64_t Wo = conv_out_dim(W, kw, stride, pad);
  Tensor y({B, O, Ho, Wo});
  const int64_t K = C * kh * kw, N = Ho * Wo;
  std::vector<double> col(K * N);
  for (int64_t b = 0; b < B; ++b) {
    im2col(x.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)O, (int)N, (int)K,
                1.0, w.data(), (int)K, col.data(), (int)N, 0.0,
                y.data() + b * O * N, (int)N);
  }
  return y;
}

/// Gradient of conv_fwd w.r.t. its input: gx = W^T applied to gy, scattered.
inline Tensor conv_dx(const Tensor& gy, const Tensor& w, int stride, int pad,
                      int64_t H, int64_t W) {
  const int64_t B = gy.dim(0), O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor gx({B, C, H, W});
  const int64_t K = C * kh * kw, N = Ho * Wo;
  std::vector<double> col(K * N);
  for (int64_t b = 0; b < B; ++b) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)K, (int)N, (int)O,
                1.0, w.data(), (int)K, gy.data() + b * O * N, (int)N, 0.0,
                col.data(), (int)N);
    col2im_add(col.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
               gx.data() + b * C * H * W);
  }
  return gx;
}

/// Gradient of conv_fwd w.r.t. the kernel: gw = gy applied to im2col(x)^T.
inline Tensor conv_dw(const Tensor& x, const Tensor& gy, int stride, int pad,
                      int64_t kh, int64_t kw) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  Tensor gw({O, C, kh, kw});
  const int64_t K = C * kh * kw, N = Ho * Wo;
  std::vector<double> col(K * N);
  for (int64_t b = 0; b < B; ++b) {
    im2col(x.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)O, (int)K, (int)N,
                1.0, gy.data() + b * O * N, (int)N, col.data(), (int)N, 1.0,
                gw.data(), (int)K);
  }
  return gw;
}

inline Tensor bias_broadcast(const Tensor& bias, const std::vector<int64_t>& shape) {
  if (bias.rank() != 1 || shape.size() != 4 || bias.dim(0) != shape[1])
    throw Error("bias: expected [O] bias for [B,O,H,W] output");
  Tensor y(shape);
  const int64_t B = shape[0], O = shape[1], HW = shape[2] * shape[3];
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      std::fill_n(y.data() + (b * O + o) * HW, HW, bias.data()[o]);
  return y;
}

inline Tensor bias_sum(const Tensor& g) {
  const int64_t B = g.dim(0), O = g.dim(1), HW = g.dim(2) * g.dim(3);
  Tensor out({O});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o) {
      const double* p = g.data() + (b * O + o) * HW;
      double s = 0;
      for (int64_t k = 0; k < HW; ++k) s += p[k];
      out.data()[o] += s;
    }
  return out;
}

inline Tensor upsample_nearest(const Tensor& x, int f) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({B, C, H * f, W * f});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = x.data() + bc * H * W;
    double* dst = y.data() + bc * H * W * f * f;
    for (int64_t i = 0; i < H * f; ++i)
      for (int64_t j = 0; j < W * f; ++j)
        dst[i * W * f + j] = src[(i / f) * W + (j / f)];
  }
  return y;
}

inline Tensor upsample_nearest_adj(const Tensor& g, int f) {
  const int64_t B = g.dim(0), C = g.dim(1), Hf = g.dim(2), Wf = g.dim(3);
  const int64_t H = Hf / f, W = Wf / f;
  Tensor gx({B, C, H, W});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = g.data() + bc * Hf * Wf;
    double* dst = gx.data() + bc * H * W;
    for (int64_t i = 0; i < Hf; ++i)
      for (int64_t j = 0; j < Wf; ++j)
        dst[(i / f) * W + (j / f)] += src[i * Wf + j];
  }
  return gx;
}

struct LerpCoef {
  int64_t lo, hi;
  double wlo, whi;
};

inline std::vector<LerpCoef> bilinear_coefs(int64_t out, int64_t in, int f) {
  // align_corners = false
  std::vector<LerpCoef> c(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (i + 0.5) / f - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    int64_t lo = (int64_t)std::floor(src);
    int64_t hi = std::min(lo + 1, in - 1);
    double t = src - lo;
    c[i] = {lo, hi, 1.0 - t, t};
  }
  return c;
}

inline Tensor upsample_bilinear(const Tensor& x, int f) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ci = bilinear_coefs(H * f, H, f), cj = bilinear_coefs(W * f, W, f);
  Tensor y({B, C, H * f, W * f});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = x.data() + bc * H * W;
    double* dst = y.data() + bc * H * W * f * f;
    for (int64_t i = 0; i < H * f; ++i)
      for (int64_t j = 0; j < W * f; ++j)
        dst[i * W * f + j] =
            ci[i].wlo * (cj[j].wlo * src[ci[i].lo * W + cj[j].lo] +
                         cj[j].whi * src[ci[i].lo * W + cj[j].hi]) +
            ci[i].whi * (cj[j].wlo * src[ci[i].hi * W + cj[j].lo] +
                         cj[j].whi * src[ci[i].hi * W + cj[j].hi]);
  }
  return y;
}

inline Tensor upsample_bilinear_adj(const Tensor& g, int f) {
  const int64_t B = g.dim(0), C = g.dim(1), Hf = g.dim(2), Wf = g.dim(3);
  const int64_t H = Hf / f, W = Wf / f;
  auto ci = bilinear_coefs(Hf, H, f), cj = bilinear_coefs(Wf, W, f);
  Tensor gx({B, C, H, W});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = g.data() + bc * Hf * Wf;
    double* dst = gx.data() + bc * H * W;
    for (int64_t i = 0; i < Hf; ++i)
      for (int64_t j = 0; j < Wf; ++j) {
        const double v = src[i * Wf + j];
        dst[ci[i].lo * W + cj[j].lo] += ci[i].wlo * cj[j].wlo * v;
        dst[ci[i].lo * W + cj[j].hi] += ci[i].wlo * cj[j].whi * v;
        dst[ci[i].hi * W + cj[j].lo] += ci[i].whi * cj[j].wlo * v;
        dst[ci[i].hi * W + cj[j].hi] += ci[i].whi * cj[j].whi * v;
      }
  }
  return gx;
}

}  // namespace rdwn::kernels
