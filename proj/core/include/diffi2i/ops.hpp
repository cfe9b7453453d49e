#pragma once

#include <cstddef>
#include <vector>

#include "diffi2i/tensor.hpp"

// Differentiable primitives. Image tensors are NCHW; vectors are [N, D].
// Every op throws DimensionError naming the offending axes on a shape
// mismatch.
namespace diffi2i::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.1);

// Reductions to a scalar of shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Same storage order, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

// Concatenation along `axis`; all other axes must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// out[n,o,h,w] = sum_i w[o,i] x[n,i,h,w] + b[o];  w: [C_out, C_in], b: [C_out].
Tensor conv2d_pointwise(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-channel 3x3 cross-correlation, zero padding 1, stride 1.
// w: [C, 3, 3], b: [C].
Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b);

// Affine map over the trailing axis. w: [D_out, D_in], b: [D_out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalizes over the channel axis at every (n, h, w), eps added to the
// variance, then applies per-channel gamma/beta.
inline constexpr double kLayerNormEps = 1e-6;
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// [N, 2C, H, W] -> [N, C, H, W]: first half times second half.
Tensor simple_gate(const Tensor& x);

// [N, C, H, W] -> [N, C] spatial mean.
Tensor global_avg_pool(const Tensor& x);

// x[N,C,H,W] * s[N,C] broadcast over H, W.
Tensor mul_channel(const Tensor& x, const Tensor& s);

// x[N,C,H,W] + v[N,C] broadcast over H, W.
Tensor add_channel(const Tensor& x, const Tensor& v);

// Space-to-depth: every r x r block becomes r^2 channels in row-major
// block order. Output channel c*r*r + i*r + j holds x[c, h*r+i, w*r+j].
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

// Exact inverse of pixel_unshuffle.
Tensor pixel_shuffle(const Tensor& x, std::size_t r);

// Over the trailing axis.
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);

}  // namespace diffi2i::ops
