#pragma once

#include <span>
#include <vector>

#include "hds/model.hpp"
#include "hds/tensor.hpp"

namespace hds {

/// Weights of the HDS objective.
struct LossWeights {
  double alpha = 0.03;    // classification loss weight
  double lambda = 0.0005;  // L2 weight decay
  double mu = 1e-6;       // MIL sparsity weight
  std::vector<double> eta{1.0, 1.5, 2.0, 2.5, 3.0, 3.5};  // one per supervision level
  double eta_floor_fraction = 0.005;
};

/// Paper level weights eta_d for each level in `levels`.
std::vector<double> default_eta(std::span<const int> levels);

/// Default weights with eta sized to the architecture's supervision levels.
LossWeights loss_weights_for(const ArchConfig& arch);

void validate(const LossWeights& weights, std::size_t levels);

template <typename Scalar>
struct LossBreakdown {
  std::vector<double> seg_per_level;
  std::vector<double> cls_per_level;
  double l_seg = 0.0;
  double l_cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  Tensor<Scalar> objective;  // scalar tensor to call backward() on

  /// |total - (l_seg + alpha l_cls + lambda reg)| / max(1, |total|).
  double reassembly_error(const LossWeights& w) const;
};

/// Mean pixel-wise cross-entropy. logits: [N,2,H,W]; mask: [N,H,W] of {0,1}.
template <typename Scalar>
Tensor<Scalar> seg_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& mask);

/// Sparse MIL cost, averaged over the batch:
///   -log p(y = y_I | I) + mu * sum_{i,j} r_{i,j},
/// with p(y = 1 | I) = max r_{i,j} and p(y = 0 | I) = 1 - max r_{i,j}.
template <typename Scalar>
Tensor<Scalar> mil_cls_loss(const Tensor<Scalar>& cls_map, std::span<const int> labels, double mu);

/// Sum of squares over decay-flagged parameters.
template <typename Scalar>
Tensor<Scalar> l2_reg(std::span<const Parameter<Scalar>> params);

/// total = sum_d eta_d J_d^seg + alpha sum_d eta_d J_d^cls + lambda reg.
/// `eta_now` holds one weight per supervision level present in `outputs`.
template <typename Scalar>
LossBreakdown<Scalar> hds_total(const HDSOutputs<Scalar>& outputs, const Tensor<Scalar>& seg_target,
                                std::span<const int> cls_target, const LossWeights& weights,
                                std::span<const double> eta_now,
                                std::span<const Parameter<Scalar>> params);

}  // namespace hds
