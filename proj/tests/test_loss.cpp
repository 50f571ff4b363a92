#include "doctest.h"

#include <cmath>
#include <vector>

#include "hds/autograd.hpp"
#include "hds/loss.hpp"
#include "hds/ops.hpp"
#include "test_util.hpp"

using namespace hds;
using hds::test::random_tensor;
using T = Tensor<double>;

TEST_CASE("seg cross-entropy hand values") {
  RngState rng{1, 0};
  T mask(Shape{2, 4, 4});
  for (Index i = 0; i < mask.size(); ++i) mask.values()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  CHECK(seg_cross_entropy(T(Shape{2, 2, 4, 4}, 0.0), mask).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  T confident(Shape{2, 2, 4, 4}, 0.0);
  for (Index n = 0; n < 2; ++n)
    for (Index h = 0; h < 4; ++h)
      for (Index w = 0; w < 4; ++w) confident.at(n, mask.values()[(n * 4 + h) * 4 + w] > 0.5 ? 1 : 0, h, w) = 20.0;
  CHECK(seg_cross_entropy(confident, mask).item() < 1e-8);

  T bad = mask.detach();
  bad.values()[3] = 0.5;
  CHECK_THROWS_AS(seg_cross_entropy(confident, bad), ValueError);
}

TEST_CASE("seg cross-entropy matches a per-pixel loop") {
  RngState rng{2, 0};
  T logits = random_tensor({1, 2, 4, 4}, rng, 2.0);
  T mask(Shape{1, 4, 4});
  for (Index i = 0; i < mask.size(); ++i) mask.values()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  double sum = 0.0;
  for (Index h = 0; h < 4; ++h) {
    for (Index w = 0; w < 4; ++w) {
      const double a = logits.at(0, 0, h, w), b = logits.at(0, 1, h, w);
      const double target = mask.values()[h * 4 + w] > 0.5 ? b : a;
      sum += std::log(std::exp(a) + std::exp(b)) - target;
    }
  }
  CHECK(seg_cross_entropy(logits, mask).item() == doctest::Approx(sum / 16.0).epsilon(1e-12));
}

TEST_CASE("MIL cost hand values") {
  const std::vector<int> neg{0}, pos{1};
  T half(Shape{1, 1, 2, 2}, 0.5);
  CHECK(std::abs(mil_cls_loss(half, neg, 1e-6).item() - (-std::log(0.5) + 2e-6)) < 1e-9);
  T high(Shape{1, 1, 3, 4}, 0.9);
  CHECK(std::abs(mil_cls_loss(high, pos, 1e-6).item() - (-std::log(0.9) + 12 * 0.9e-6)) < 1e-9);
  T floor(Shape{1, 1, 2, 2}, 0.0);
  CHECK(mil_cls_loss(floor, neg, 1e-6).item() < 1e-6);
  CHECK(std::isfinite(mil_cls_loss(floor, pos, 1e-6).item()));

  // Batch mean.
  T both(Shape{2, 1, 2, 2}, 0.5);
  both.at(1, 0, 0, 1) = 0.8;
  const std::vector<int> mixed{0, 1};
  const double expect = 0.5 * ((-std::log(0.5) + 2e-6) + (-std::log(0.8) + 2.3e-6));
  CHECK(std::abs(mil_cls_loss(both, mixed, 1e-6).item() - expect) < 1e-12);

  const std::vector<int> bad{2};
  CHECK_THROWS_AS(mil_cls_loss(half, bad, 1e-6), ValueError);
}

TEST_CASE("MIL gradient flows only through the maximum and the sparsity term") {
  T map(Shape{1, 1, 2, 2}, 0.2);
  map.at(0, 0, 1, 0) = 0.7;
  map.set_requires_grad(true);
  const std::vector<int> pos{1};
  backward(mil_cls_loss(map, pos, 1e-3));
  CHECK(map.grad()[2] == doctest::Approx(-1.0 / 0.7 + 1e-3).epsilon(1e-12));
  CHECK(map.grad()[0] == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("L2 regularizer") {
  Parameter<double> w("w", {3, 4}, true);
  CHECK(l2_reg<double>(std::span<const Parameter<double>>(&w, 1)).item() == 0.0);
  w.tensor.values()[0] = 3.0;
  w.tensor.values()[7] = 4.0;
  CHECK(l2_reg<double>(std::span<const Parameter<double>>(&w, 1)).item() == 25.0);
  std::vector<Parameter<double>> ps{w, Parameter<double>("b", {2}, false)};
  ps[1].tensor.values().setConstant(10.0);
  CHECK(l2_reg<double>(ps).item() == 25.0);
}

TEST_CASE("HDS total") {
  RngState rng{3, 0};
  T mask(Shape{1, 4, 4});
  for (Index i = 0; i < mask.size(); ++i) mask.values()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const std::vector<int> labels{1};
  std::vector<Parameter<double>> params{Parameter<double>("w", {2, 2}, true)};
  params[0].tensor.values() << 1, 2, 3, 4;

  SUBCASE("one level, no cls weight, no decay") {
    HDSOutputs<double> out;
    out.levels = {0};
    out.seg_logits = {random_tensor({1, 2, 4, 4}, rng)};
    LossWeights wts;
    wts.alpha = 0.0;
    wts.lambda = 0.0;
    const std::vector<double> eta{1.0};
    auto b = hds_total<double>(out, mask, labels, wts, eta, params);
    CHECK(b.total == seg_cross_entropy(out.seg_logits[0], mask).item());
  }

  SUBCASE("seg only") {
    HDSOutputs<double> out;
    out.levels = {0, 1};
    out.seg_logits = {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 2, 4, 4}, rng)};
    LossWeights wts;
    const std::vector<double> eta{1.0, 1.5};
    auto b = hds_total<double>(out, mask, labels, wts, eta, params);
    CHECK(b.l_cls == 0.0);
    CHECK(b.reg == 30.0);
    CHECK(b.total == doctest::Approx(b.l_seg + wts.lambda * b.reg).epsilon(1e-14));
    CHECK(b.l_seg == doctest::Approx(b.seg_per_level[0] + 1.5 * b.seg_per_level[1]).epsilon(1e-14));
  }

  SUBCASE("hybrid reassembles") {
    HDSOutputs<double> out;
    out.levels = {0, 1};
    out.seg_logits = {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 2, 4, 4}, rng)};
    out.cls_maps = {T(Shape{1, 1, 1, 1}, 0.3), T(Shape{1, 1, 1, 1}, 0.6)};
    LossWeights wts;
    const std::vector<double> eta{1.0, 1.5};
    auto b = hds_total<double>(out, mask, labels, wts, eta, params);
    CHECK(b.cls_per_level[0] == doctest::Approx(-std::log(0.3) + 0.3e-6).epsilon(1e-12));
    CHECK(b.reassembly_error(wts) < 1e-12);
    const std::vector<double> short_eta{1.0};
    CHECK_THROWS_AS(hds_total<double>(out, mask, labels, wts, short_eta, params), ValueError);
  }
}

TEST_CASE("default level weights") {
  const std::vector<int> all{0, 1, 2, 3, 4, 5};
  CHECK(default_eta(all) == std::vector<double>{1.0, 1.5, 2.0, 2.5, 3.0, 3.5});
  const std::vector<int> three{0, 1, 2};
  CHECK(default_eta(three) == std::vector<double>{1.0, 1.5, 2.0});
  CHECK(loss_weights_for(desk_arch()).eta.size() == 3);
  LossWeights w;
  CHECK(w.alpha == 0.03);
  CHECK(w.lambda == 0.0005);
  CHECK(w.mu == 1e-6);
  CHECK_THROWS_AS(validate(w, 3), ValueError);
}
