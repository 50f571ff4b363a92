#pragma once

#include <functional>

#include "hds/tensor.hpp"

namespace hds {

/// Reverse-mode sweep from a scalar `loss`. Leaf tensors that require a
/// gradient accumulate d(loss)/d(leaf) into their grad buffer; callers zero
/// gradients between steps. Intermediate gradients are released afterwards,
/// so repeated calls on the same graph accumulate exactly.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

/// Central-difference estimate of d f / d p for every element of `p`.
/// `f` must be deterministic; it is evaluated with graph recording off.
template <typename Scalar>
Tensor<Scalar> finite_difference_grad(const std::function<Scalar()>& f, Tensor<Scalar> p,
                                      double eps = 1e-4);

/// ||a - b|| / max(||a||, ||b||), or 0 when both vanish.
template <typename Scalar>
double relative_error(const Vec<Scalar>& a, const Vec<Scalar>& b);

}  // namespace hds
