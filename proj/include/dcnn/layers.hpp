#pragma once

// Forward and adjoint kernels for single samples. Convolutions are valid
// (unpadded) cross-correlations over (depth, height, width), lowered to one
// matrix product via im2col.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dcnn/tensor.hpp"

namespace dcnn::tensornet {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Geometry of one convolution application.
struct ConvGeometry {
  Shape in;
  Shape out;
  int kh, kw, kd;
  int sh, sw, sd;

  int rows() const { return in.c * kd * kh * kw; }
  int cols() const { return out.d * out.h * out.w; }
};

inline ConvGeometry conv_geometry(const LayerSpec& s, const Shape& in) {
  return {in, output_shape(s, in), s.kh, s.kw, s.kd, s.sh, s.sw, s.sd};
}

/// Kernel covering the whole remaining extent of `in`: how a fully connected
/// layer acts when slid over a larger feature map.
inline ConvGeometry fc_as_conv_geometry(const Shape& patch_in, const Shape& dense_in, int units) {
  if (dense_in.c != patch_in.c || dense_in.d != patch_in.d || dense_in.h < patch_in.h || dense_in.w < patch_in.w)
    throw ShapeError("dense fc: feature map " + dense_in.str() + " cannot host patch input " + patch_in.str());
  return {dense_in, Shape{units, 1, dense_in.h - patch_in.h + 1, dense_in.w - patch_in.w + 1},
          patch_in.h, patch_in.w, patch_in.d, 1, 1, 1};
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const int P = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.in.h) * g.in.w;
  for (int c = 0; c < g.in.c; ++c)
    for (int kz = 0; kz < g.kd; ++kz)
      for (int ky = 0; ky < g.kh; ++ky)
        for (int kx = 0; kx < g.kw; ++kx) {
          T* row = col + static_cast<std::size_t>(((c * g.kd + kz) * g.kh + ky) * g.kw + kx) * P;
          for (int oz = 0; oz < g.out.d; ++oz) {
            const T* src_plane = in + (static_cast<std::size_t>(c) * g.in.d + oz * g.sd + kz) * plane;
            for (int oy = 0; oy < g.out.h; ++oy) {
              const T* src = src_plane + static_cast<std::size_t>(oy * g.sh + ky) * g.in.w + kx;
              T* dst = row + (static_cast<std::size_t>(oz) * g.out.h + oy) * g.out.w;
              if (g.sw == 1) {
                std::copy(src, src + g.out.w, dst);
              } else {
                for (int ox = 0; ox < g.out.w; ++ox) dst[ox] = src[ox * g.sw];
              }
            }
          }
        }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in_grad) {
  const int P = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.in.h) * g.in.w;
  for (int c = 0; c < g.in.c; ++c)
    for (int kz = 0; kz < g.kd; ++kz)
      for (int ky = 0; ky < g.kh; ++ky)
        for (int kx = 0; kx < g.kw; ++kx) {
          const T* row = col + static_cast<std::size_t>(((c * g.kd + kz) * g.kh + ky) * g.kw + kx) * P;
          for (int oz = 0; oz < g.out.d; ++oz) {
            T* dst_plane = in_grad + (static_cast<std::size_t>(c) * g.in.d + oz * g.sd + kz) * plane;
            for (int oy = 0; oy < g.out.h; ++oy) {
              T* dst = dst_plane + static_cast<std::size_t>(oy * g.sh + ky) * g.in.w + kx;
              const T* src = row + (static_cast<std::size_t>(oz) * g.out.h + oy) * g.out.w;
              for (int ox = 0; ox < g.out.w; ++ox) dst[ox * g.sw] += src[ox];
            }
          }
        }
}

/// out[f] = bias[f] + sum over (c, kz, ky, kx) of weights * input.
/// Weights are laid out [filters][in.c][kd][kh][kw]. `col` is scratch.
template <typename T>
void conv_forward(const T* in, const ConvGeometry& g, const T* weights, const T* bias, T* out, std::vector<T>& col) {
  const int K = g.rows(), P = g.cols(), F = g.out.c;
  col.resize(static_cast<std::size_t>(K) * P);
  im2col(in, g, col.data());
  ConstMatMap<T> W(weights, F, K);
  ConstMatMap<T> X(col.data(), K, P);
  MatMap<T> Y(out, F, P);
  Y.noalias() = W * X;
  for (int f = 0; f < F; ++f) Y.row(f).array() += bias[f];
}

/// Accumulates weight/bias gradients and, when in_grad is non-null, overwrites
/// in_grad with the input gradient.
template <typename T>
void conv_backward(const T* in, const ConvGeometry& g, const T* weights, const T* out_grad, T* w_grad, T* b_grad,
                   T* in_grad, std::vector<T>& col) {
  const int K = g.rows(), P = g.cols(), F = g.out.c;
  col.resize(static_cast<std::size_t>(K) * P);
  im2col(in, g, col.data());
  ConstMatMap<T> X(col.data(), K, P);
  ConstMatMap<T> dY(out_grad, F, P);
  MatMap<T> dW(w_grad, F, K);
  dW.noalias() += dY * X.transpose();
  for (int f = 0; f < F; ++f) b_grad[f] += dY.row(f).sum();
  if (in_grad) {
    ConstMatMap<T> W(weights, F, K);
    MatMap<T> dX(col.data(), K, P);
    dX.noalias() = W.transpose() * dY;
    std::fill(in_grad, in_grad + g.in.size(), T(0));
    col2im_add(col.data(), g, in_grad);
  }
}

/// Spatial max pooling with floor semantics. `argmax` receives, per output
/// element, the flat input index of the first maximum in row-major scan order.
template <typename T>
void maxpool_forward(const T* in, const Shape& is, const LayerSpec& s, T* out, std::int32_t* argmax) {
  const Shape os = output_shape(s, is);
  for (int c = 0; c < is.c; ++c)
    for (int z = 0; z < is.d; ++z) {
      const std::size_t in_plane = (static_cast<std::size_t>(c) * is.d + z) * is.h * is.w;
      const std::size_t out_plane = (static_cast<std::size_t>(c) * os.d + z) * os.h * os.w;
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          std::size_t best = in_plane + static_cast<std::size_t>(oy * s.sh) * is.w + ox * s.sw;
          T m = in[best];
          for (int ky = 0; ky < s.kh; ++ky)
            for (int kx = 0; kx < s.kw; ++kx) {
              std::size_t idx = in_plane + static_cast<std::size_t>(oy * s.sh + ky) * is.w + ox * s.sw + kx;
              if (in[idx] > m) {
                m = in[idx];
                best = idx;
              }
            }
          const std::size_t o = out_plane + static_cast<std::size_t>(oy) * os.w + ox;
          out[o] = m;
          if (argmax) argmax[o] = static_cast<std::int32_t>(best);
        }
    }
}

template <typename T>
void maxpool_backward(const Shape& is, const Shape& os, const std::int32_t* argmax, const T* out_grad, T* in_grad) {
  std::fill(in_grad, in_grad + is.size(), T(0));
  for (std::size_t o = 0; o < os.size(); ++o) in_grad[argmax[o]] += out_grad[o];
}

template <typename T>
void relu_forward(const T* in, std::size_t n, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

// Uses the forward output: relu(x) > 0 exactly when x > 0.
template <typename T>
void relu_backward(const T* out, const T* out_grad, std::size_t n, T* in_grad) {
  for (std::size_t i = 0; i < n; ++i) in_grad[i] = out[i] > T(0) ? out_grad[i] : T(0);
}

/// Batched affine map. in is [N x I], weights [U x I], out [N x U].
template <typename T>
void fc_forward(const T* in, int n, int in_width, const T* weights, const T* bias, int units, T* out) {
  ConstMatMap<T> X(in, n, in_width);
  ConstMatMap<T> W(weights, units, in_width);
  MatMap<T> Y(out, n, units);
  Y.noalias() = X * W.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias, units);
  Y.rowwise() += b;
}

template <typename T>
void fc_backward(const T* in, int n, int in_width, const T* weights, int units, const T* out_grad, T* w_grad,
                 T* b_grad, T* in_grad) {
  ConstMatMap<T> X(in, n, in_width);
  ConstMatMap<T> dY(out_grad, n, units);
  MatMap<T> dW(w_grad, units, in_width);
  dW.noalias() += dY.transpose() * X;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(b_grad, units);
  db += dY.colwise().sum();
  if (in_grad) {
    ConstMatMap<T> W(weights, units, in_width);
    MatMap<T> dX(in_grad, n, in_width);
    dX.noalias() = dY * W;
  }
}

// log(1 + exp(a)) without overflow.
template <typename T>
T softplus(T a) {
  return std::max(a, T(0)) + std::log1p(std::exp(-std::abs(a)));
}

template <typename T>
struct XentResult {
  T loss;
  T s;                    // probability of class 1
  std::array<T, 2> grad;  // d loss / d logits
};

/// Two-class softmax cross-entropy, -(t log s + (1-t) log(1-s)) with s the
/// class-1 probability. Evaluated in log-sum-exp form.
template <typename T>
XentResult<T> softmax_xent(T z0, T z1, int t) {
  const T a = z0 - z1;
  const T s = T(1) / (T(1) + std::exp(a));  // exp overflow gives s = 0, which is the limit
  const T log_s = -softplus(a);
  const T log_1ms = -softplus(-a);
  const T tt = static_cast<T>(t);
  XentResult<T> r;
  r.loss = -(tt * log_s + (T(1) - tt) * log_1ms);
  r.s = s;
  r.grad = {(T(1) - s) - (T(1) - tt), s - tt};
  return r;
}

/// Class-1 probability only.
template <typename T>
T class1_probability(T z0, T z1) {
  return T(1) / (T(1) + std::exp(z0 - z1));
}

}  // namespace dcnn::tensornet
