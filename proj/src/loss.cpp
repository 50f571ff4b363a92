#include "hds/loss.hpp"

#include <cmath>

#include "hds/ops.hpp"

namespace hds {

namespace {
constexpr double kProbabilityFloor = 1e-7;
const double kPaperEta[6] = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
}  // namespace

std::vector<double> default_eta(std::span<const int> levels) {
  std::vector<double> eta;
  for (int d : levels) {
    if (d < 0 || d > 5) throw ValueError("no default eta for level " + std::to_string(d));
    eta.push_back(kPaperEta[d]);
  }
  return eta;
}

LossWeights loss_weights_for(const ArchConfig& arch) {
  LossWeights w;
  w.eta = default_eta(arch.supervision_levels);
  return w;
}

void validate(const LossWeights& w, std::size_t levels) {
  auto fail = [](const std::string& what) { throw ValueError("loss weights: " + what); };
  if (!(w.alpha >= 0)) fail("alpha must be non-negative");
  if (!(w.lambda >= 0)) fail("lambda must be non-negative");
  if (!(w.mu >= 0)) fail("mu must be non-negative");
  if (!(w.eta_floor_fraction >= 0)) fail("eta_floor_fraction must be non-negative");
  for (double e : w.eta) if (!(e >= 0)) fail("eta entries must be non-negative");
  if (w.eta.size() != levels) {
    fail("eta has " + std::to_string(w.eta.size()) + " entries for " + std::to_string(levels) +
         " supervision levels");
  }
}

template <typename Scalar>
double LossBreakdown<Scalar>::reassembly_error(const LossWeights& w) const {
  const double rebuilt = l_seg + w.alpha * l_cls + w.lambda * reg;
  return std::abs(total - rebuilt) / std::max(1.0, std::abs(total));
}

template <typename Scalar>
Tensor<Scalar> seg_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& mask) {
  if (logits.ndim() != 4 || logits.dim(1) != 2) {
    throw ShapeError("seg_cross_entropy: expected logits (N,2,H,W), got " + to_string(logits.shape()));
  }
  if ((mask.values() != Scalar(0) && mask.values() != Scalar(1)).any()) {
    throw ValueError("seg_cross_entropy: mask is not binary");
  }
  return softmax_cross_entropy(logits, mask);
}

template <typename Scalar>
Tensor<Scalar> mil_cls_loss(const Tensor<Scalar>& cls_map, std::span<const int> labels, double mu) {
  if (cls_map.ndim() != 4 || cls_map.dim(1) != 1) {
    throw ShapeError("mil_cls_loss: expected map (N,1,h,w), got " + to_string(cls_map.shape()));
  }
  const Index batch = cls_map.dim(0);
  if (static_cast<Index>(labels.size()) != batch) {
    throw ShapeError("mil_cls_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  // p(y = y_I) = sign * max + offset, i.e. max for y = 1 and 1 - max for y = 0.
  Tensor<Scalar> sign(Shape{batch, 1});
  Tensor<Scalar> offset(Shape{batch, 1});
  for (Index n = 0; n < batch; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y != 0 && y != 1) throw ValueError("mil_cls_loss: label " + std::to_string(y) + " is not 0 or 1");
    sign.values()[n] = y == 1 ? Scalar(1) : Scalar(-1);
    offset.values()[n] = y == 1 ? Scalar(0) : Scalar(1);
  }
  const Tensor<Scalar> bag = image_probability(cls_map);
  const Tensor<Scalar> p_true = add(mul(bag, sign), offset);
  const auto lo = static_cast<Scalar>(kProbabilityFloor);
  const Tensor<Scalar> nll = scalar_mul(reduce_sum(log(clamp(p_true, lo, Scalar(1) - lo))),
                                        static_cast<Scalar>(-1.0 / static_cast<double>(batch)));
  const Tensor<Scalar> sparsity =
      scalar_mul(reduce_sum(cls_map), static_cast<Scalar>(mu / static_cast<double>(batch)));
  return add(nll, sparsity);
}

template <typename Scalar>
Tensor<Scalar> l2_reg(std::span<const Parameter<Scalar>> params) {
  Tensor<Scalar> total = Tensor<Scalar>::scalar(0);
  for (const auto& p : params) {
    if (!p.decay) continue;
    total = add(total, reduce_sum(mul(p.tensor, p.tensor)));
  }
  return total;
}

template <typename Scalar>
LossBreakdown<Scalar> hds_total(const HDSOutputs<Scalar>& outputs, const Tensor<Scalar>& seg_target,
                                std::span<const int> cls_target, const LossWeights& weights,
                                std::span<const double> eta_now,
                                std::span<const Parameter<Scalar>> params) {
  const std::size_t levels = outputs.levels.size();
  if (eta_now.size() != levels) {
    throw ValueError("hds_total: " + std::to_string(eta_now.size()) + " eta values for " +
                     std::to_string(levels) + " supervision levels");
  }
  if (!outputs.seg_logits.empty() && outputs.seg_logits.size() != levels) {
    throw ValueError("hds_total: seg outputs do not cover every supervision level");
  }
  if (!outputs.cls_maps.empty() && outputs.cls_maps.size() != levels) {
    throw ValueError("hds_total: cls outputs do not cover every supervision level");
  }

  LossBreakdown<Scalar> out;
  Tensor<Scalar> l_seg = Tensor<Scalar>::scalar(0);
  Tensor<Scalar> l_cls = Tensor<Scalar>::scalar(0);
  for (std::size_t k = 0; k < outputs.seg_logits.size(); ++k) {
    const Tensor<Scalar> j = seg_cross_entropy(outputs.seg_logits[k], seg_target);
    out.seg_per_level.push_back(static_cast<double>(j.item()));
    l_seg = add(l_seg, scalar_mul(j, static_cast<Scalar>(eta_now[k])));
  }
  for (std::size_t k = 0; k < outputs.cls_maps.size(); ++k) {
    const Tensor<Scalar> j = mil_cls_loss(outputs.cls_maps[k], cls_target, weights.mu);
    out.cls_per_level.push_back(static_cast<double>(j.item()));
    l_cls = add(l_cls, scalar_mul(j, static_cast<Scalar>(eta_now[k])));
  }
  const Tensor<Scalar> reg = l2_reg(params);
  out.objective = add(add(l_seg, scalar_mul(l_cls, static_cast<Scalar>(weights.alpha))),
                      scalar_mul(reg, static_cast<Scalar>(weights.lambda)));
  out.l_seg = static_cast<double>(l_seg.item());
  out.l_cls = static_cast<double>(l_cls.item());
  out.reg = static_cast<double>(reg.item());
  out.total = static_cast<double>(out.objective.item());
  return out;
}

#define HDS_INSTANTIATE_LOSS(S)                                                                    \
  template struct LossBreakdown<S>;                                                                \
  template Tensor<S> seg_cross_entropy<S>(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> mil_cls_loss<S>(const Tensor<S>&, std::span<const int>, double);              \
  template Tensor<S> l2_reg<S>(std::span<const Parameter<S>>);                                     \
  template LossBreakdown<S> hds_total<S>(const HDSOutputs<S>&, const Tensor<S>&,                   \
                                         std::span<const int>, const LossWeights&,                 \
                                         std::span<const double>, std::span<const Parameter<S>>);

HDS_INSTANTIATE_LOSS(float)
HDS_INSTANTIATE_LOSS(double)

#undef HDS_INSTANTIATE_LOSS

}  // namespace hds
