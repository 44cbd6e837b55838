// Forward and backward math kernels for the operator set the encoder needs.
// All convolutions are stride-1 cross-correlations with zero same-padding,
// so spatial shapes are preserved and residual adds line up.

#pragma once

#include "dconv/tensor.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <optional>

namespace dconv {

// ---------------------------------------------------------------------------
// GELU, exact erf form: x * Phi(x).

template <class S>
inline S gelu_scalar(S x) {
  const double xd = static_cast<double>(x);
  const double phi = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  return static_cast<S>(xd * phi);
}

template <class S>
inline S gelu_grad_scalar(S x) {
  const double xd = static_cast<double>(x);
  const double phi = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
  return static_cast<S>(phi + xd * pdf);
}

template <class S>
inline TensorT<S> gelu_forward(const TensorT<S>& x) {
  TensorT<S> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = gelu_scalar(x.data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// 2D convolution on (h, w, cin) with kernel (kh, kw, cin, cout).
// Each (row, kernel-offset) pair reduces to one row-block GEMM.

template <class S>
inline void conv2d_check(const Shape& in, const Shape& k, const Shape& b) {
  if (in.size() != 3)
    throw std::invalid_argument("conv2d: input must be rank 3 (h,w,channels), got " + shape_str(in));
  if (k.size() != 4)
    throw std::invalid_argument("conv2d: kernel must be rank 4 (kh,kw,cin,cout), got " + shape_str(k));
  if (b.size() != 1)
    throw std::invalid_argument("conv2d: bias must be rank 1 (cout), got " + shape_str(b));
  if (k[0] % 2 == 0 || k[1] % 2 == 0)
    throw std::invalid_argument("conv2d: kernel dims must be odd, got " + shape_str(k));
  if (k[2] != in[2])
    throw std::invalid_argument("conv2d: kernel cin " + std::to_string(k[2]) +
                                " != input channel axis " + std::to_string(in[2]));
  if (b[0] != k[3])
    throw std::invalid_argument("conv2d: bias size " + std::to_string(b[0]) +
                                " != kernel cout axis " + std::to_string(k[3]));
}

template <class S>
inline TensorT<S> conv2d_same_forward(const TensorT<S>& in, const TensorT<S>& kernel,
                                      const TensorT<S>& bias) {
  conv2d_check<S>(in.shape, kernel.shape, bias.shape);
  const int h = in.shape[0], w = in.shape[1], cin = in.shape[2];
  const int kh = kernel.shape[0], kw = kernel.shape[1], cout = kernel.shape[3];
  const int oy = (kh - 1) / 2, ox = (kw - 1) / 2;

  TensorT<S> out(Shape{h, w, cout});
  for (int p = 0; p < h; ++p)
    for (int q = 0; q < w; ++q)
      for (int co = 0; co < cout; ++co) out.at(p, q, co) = bias.at(co);

  for (int p = 0; p < h; ++p) {
    for (int dy = 0; dy < kh; ++dy) {
      const int ip = p + dy - oy;
      if (ip < 0 || ip >= h) continue;
      for (int dx = 0; dx < kw; ++dx) {
        const int qlo = std::max(0, ox - dx);
        const int qhi = std::min(w, w + ox - dx);
        if (qlo >= qhi) continue;
        const int iq = qlo + dx - ox;
        gemm_nn_acc(&in.data[(static_cast<size_t>(ip) * w + iq) * cin],
                    &kernel.data[(static_cast<size_t>(dy) * kw + dx) * cin * cout],
                    &out.data[(static_cast<size_t>(p) * w + qlo) * cout],
                    qhi - qlo, cin, cout);
      }
    }
  }
  return out;
}

// Accumulates into d_in/d_kernel/d_bias (callers pass zero- or grad-filled buffers).
template <class S>
inline void conv2d_same_backward(const TensorT<S>& in, const TensorT<S>& kernel,
                                 const TensorT<S>& d_out, std::vector<S>* d_in,
                                 std::vector<S>* d_kernel, std::vector<S>* d_bias) {
  const int h = in.shape[0], w = in.shape[1], cin = in.shape[2];
  const int kh = kernel.shape[0], kw = kernel.shape[1], cout = kernel.shape[3];
  const int oy = (kh - 1) / 2, ox = (kw - 1) / 2;

  if (d_bias) {
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q)
        for (int co = 0; co < cout; ++co)
          (*d_bias)[static_cast<size_t>(co)] += d_out.at(p, q, co);
  }

  for (int p = 0; p < h; ++p) {
    for (int dy = 0; dy < kh; ++dy) {
      const int ip = p + dy - oy;
      if (ip < 0 || ip >= h) continue;
      for (int dx = 0; dx < kw; ++dx) {
        const int qlo = std::max(0, ox - dx);
        const int qhi = std::min(w, w + ox - dx);
        if (qlo >= qhi) continue;
        const int iq = qlo + dx - ox;
        const int m = qhi - qlo;
        const S* dout_blk = &d_out.data[(static_cast<size_t>(p) * w + qlo) * cout];
        if (d_in) {
          gemm_nt_acc(dout_blk,
                      &kernel.data[(static_cast<size_t>(dy) * kw + dx) * cin * cout],
                      &(*d_in)[(static_cast<size_t>(ip) * w + iq) * cin], m, cout, cin);
        }
        if (d_kernel) {
          gemm_tn_acc(&in.data[(static_cast<size_t>(ip) * w + iq) * cin], dout_blk,
                      &(*d_kernel)[(static_cast<size_t>(dy) * kw + dx) * cin * cout],
                      m, cin, cout);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 1D convolution on (seq, cin) with kernel (k, cin, cout): the h=1 case of
// conv2d with the sequence as the width axis.

template <class S>
inline void conv1d_check(const Shape& in, const Shape& k, const Shape& b) {
  if (in.size() != 2)
    throw std::invalid_argument("conv1d: input must be rank 2 (seq,channels), got " + shape_str(in));
  if (k.size() != 3)
    throw std::invalid_argument("conv1d: kernel must be rank 3 (k,cin,cout), got " + shape_str(k));
  if (b.size() != 1)
    throw std::invalid_argument("conv1d: bias must be rank 1 (cout), got " + shape_str(b));
  if (k[0] % 2 == 0)
    throw std::invalid_argument("conv1d: kernel size must be odd, got " + std::to_string(k[0]));
  if (k[1] != in[1])
    throw std::invalid_argument("conv1d: kernel cin " + std::to_string(k[1]) +
                                " != input channel axis " + std::to_string(in[1]));
  if (b[0] != k[2])
    throw std::invalid_argument("conv1d: bias size " + std::to_string(b[0]) +
                                " != kernel cout axis " + std::to_string(k[2]));
}

template <class S>
inline TensorT<S> as_rank3_row(const TensorT<S>& in) {
  TensorT<S> v;
  v.shape = {1, in.shape[0], in.shape[1]};
  v.data = in.data;
  return v;
}

template <class S>
inline TensorT<S> conv1d_same_forward(const TensorT<S>& in, const TensorT<S>& kernel,
                                      const TensorT<S>& bias) {
  conv1d_check<S>(in.shape, kernel.shape, bias.shape);
  TensorT<S> in3 = as_rank3_row(in);
  TensorT<S> k4;
  k4.shape = {1, kernel.shape[0], kernel.shape[1], kernel.shape[2]};
  k4.data = kernel.data;
  TensorT<S> out3 = conv2d_same_forward(in3, k4, bias);
  TensorT<S> out;
  out.shape = {in.shape[0], kernel.shape[2]};
  out.data = std::move(out3.data);
  return out;
}

template <class S>
inline void conv1d_same_backward(const TensorT<S>& in, const TensorT<S>& kernel,
                                 const TensorT<S>& d_out, std::vector<S>* d_in,
                                 std::vector<S>* d_kernel, std::vector<S>* d_bias) {
  TensorT<S> in3 = as_rank3_row(in);
  TensorT<S> k4;
  k4.shape = {1, kernel.shape[0], kernel.shape[1], kernel.shape[2]};
  k4.data = kernel.data;
  TensorT<S> dout3 = as_rank3_row(d_out);
  conv2d_same_backward(in3, k4, dout3, d_in, d_kernel, d_bias);
}

// ---------------------------------------------------------------------------
// Max-pool that removes one axis. The optional mask (same shape as the input)
// marks valid positions; ties resolve to the first index along the axis.

enum class EmptySlice { kError, kZeroFill };

struct PoolPlan {
  int outer = 1, axis_n = 1, inner = 1;
};

inline PoolPlan pool_plan(const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw std::invalid_argument("maxpool: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(shape));
  PoolPlan p;
  for (int i = 0; i < axis; ++i) p.outer *= shape[i];
  p.axis_n = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) p.inner *= shape[i];
  return p;
}

inline Shape pool_out_shape(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);  // pooling a rank-1 tensor yields a scalar
  return out;
}

// Returns pooled values; argmax[j] = winning index along the axis for output
// element j, or -1 for a zero-filled slice.
template <class S>
inline TensorT<S> maxpool_axis_forward(const TensorT<S>& in, int axis, const Mask* mask,
                                       EmptySlice empty, std::vector<int>* argmax_out) {
  if (mask && mask->shape != in.shape)
    throw std::invalid_argument("maxpool: mask shape " + shape_str(mask->shape) +
                                " != input shape " + shape_str(in.shape));
  const PoolPlan p = pool_plan(in.shape, axis);
  TensorT<S> out(pool_out_shape(in.shape, axis));
  std::vector<int> argmax(static_cast<size_t>(p.outer) * p.inner, -1);

  for (int o = 0; o < p.outer; ++o) {
    for (int i = 0; i < p.inner; ++i) {
      S best = std::numeric_limits<S>::lowest();
      int best_a = -1;
      for (int a = 0; a < p.axis_n; ++a) {
        const size_t idx = (static_cast<size_t>(o) * p.axis_n + a) * p.inner + i;
        if (mask && !mask->data[idx]) continue;
        if (best_a < 0 || in.data[idx] > best) {
          best = in.data[idx];
          best_a = a;
        }
      }
      const size_t oidx = static_cast<size_t>(o) * p.inner + i;
      if (best_a < 0) {
        if (empty == EmptySlice::kError)
          throw std::runtime_error("maxpool: slice with no valid positions along axis " +
                                   std::to_string(axis) + " (empty utterance reached pooling)");
        out.data[oidx] = S(0);
      } else {
        out.data[oidx] = best;
        argmax[oidx] = best_a;
      }
    }
  }
  if (argmax_out) *argmax_out = std::move(argmax);
  return out;
}

template <class S>
inline void maxpool_axis_backward(const Shape& in_shape, int axis,
                                  const std::vector<int>& argmax, const TensorT<S>& d_out,
                                  std::vector<S>* d_in) {
  const PoolPlan p = pool_plan(in_shape, axis);
  for (int o = 0; o < p.outer; ++o) {
    for (int i = 0; i < p.inner; ++i) {
      const size_t oidx = static_cast<size_t>(o) * p.inner + i;
      const int a = argmax[oidx];
      if (a < 0) continue;
      (*d_in)[(static_cast<size_t>(o) * p.axis_n + a) * p.inner + i] += d_out.data[oidx];
    }
  }
}

}  // namespace dconv
