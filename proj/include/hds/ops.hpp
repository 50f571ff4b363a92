#pragma once

#include <span>

#include "hds/rng.hpp"
#include "hds/tensor.hpp"

// Differentiable tensor operations. Every function records a backward node
// when grad recording is enabled and at least one input requires a gradient.
// Reductions run in a fixed order so results are reproducible bit for bit.

namespace hds {

/// 2-D cross-correlation. x: [N,C,H,W], w: [K,C,kh,kw], b: [K] or undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                      int stride, int pad);

/// Non-overlapping max pooling, window == stride. Ties go to the first
/// element in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, int stride);

/// Non-overlapping mean pooling, window == stride. Stride 1 returns `x`.
template <typename Scalar>
Tensor<Scalar> avgpool2d(const Tensor<Scalar>& x, int stride);

/// Bilinear upsampling with half-pixel centers and edge clamping.
/// Factor 1 returns `x`.
template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, int factor);

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

/// Natural log; rejects non-positive inputs.
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x);

/// Elementwise clamp; the gradient is zero where the bound is active.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Elementwise product of equally shaped tensors.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scalar_mul(const Tensor<Scalar>& x, Scalar c);

/// Sum of all elements, returned as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& x);

/// Per-(n, c) maximum over H and W: [N,C,H,W] -> [N,C].
template <typename Scalar>
Tensor<Scalar> reduce_max_spatial(const Tensor<Scalar>& x);

/// Inverted dropout: survivors are scaled by 1/(1-rate). Identity when
/// `training` is false or rate is zero.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool training, RngState rng);

/// Mean over N*H*W of -log softmax(logits)[target] along the channel axis.
/// logits: [N,K,H,W]; target: [N,H,W] holding class indices in [0, K).
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target);

/// Softmax along the channel axis (no graph).
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits);

/// Throws NumericError naming `where` if any element is NaN or infinite.
template <typename Scalar>
void check_finite(const Tensor<Scalar>& x, const char* where);

namespace testing {
/// Fault-injection hook: when set, conv2d's weight gradient is scaled by
/// 1.01 so that gradient checks must fail.
void set_conv_backward_fault(bool on);
bool conv_backward_fault();
}  // namespace testing

}  // namespace hds
