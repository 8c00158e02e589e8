#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cwt/rng.hpp"
#include "cwt/tensor.hpp"

// Differentiable operations. Every op records itself on the tape when grad
// recording is enabled and at least one input requires gradients.
namespace cwt {

// [m x k] * [k x p]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// Adds bias [n] to every row of x [m x n].
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Numerically stable row-wise softmax of x [m x n].
Tensor softmax_rows(const Tensor& x);

// Row-wise normalization of x [m x n] followed by the affine map gamma, beta [n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Mean over rows of the cross-entropy between softmax(logits) and a smoothed
// one-hot target: 1 - epsilon on the label, epsilon / (C - 1) elsewhere.
Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> labels, double epsilon);

// Inverted dropout. Identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool train, CounterRng& rng);

// Columns [begin, end) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);

// Same-padded stride-1 convolution. x [N x C x H x W], weight [O x C x k x k],
// bias [O] -> [N x O x H x W].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// [N x C x H x W] -> [N*H*W x C], pixel-major in row-major spatial order.
Tensor pixel_rows(const Tensor& x);

}  // namespace cwt
