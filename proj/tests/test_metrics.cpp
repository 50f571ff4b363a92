#include "doctest.h"

#include <cmath>
#include <vector>

#include "hds/errors.hpp"
#include "hds/metrics.hpp"
#include "hds/rng.hpp"
#include "hds/verify.hpp"

using namespace hds;

namespace {

Mask mask_from(Eigen::Index h, Eigen::Index w, std::initializer_list<std::pair<int, int>> on) {
  Mask m = Mask::Zero(h, w);
  for (auto [y, x] : on) m(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("DSC") {
  Mask g = mask_from(3, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(dsc(g, g) == 1.0);
  CHECK(dsc(mask_from(3, 4, {{2, 3}}), g) == 0.0);
  Mask p = mask_from(3, 4, {{0, 0}, {0, 1}, {1, 0}, {2, 2}, {2, 3}, {0, 3}});
  CHECK(dsc(p, g) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(dsc(Mask::Zero(3, 4), Mask::Zero(3, 4)) == 1.0);
  CHECK_THROWS_AS(dsc(Mask::Zero(3, 3), g), ShapeError);
}

TEST_CASE("sensitivity") {
  Mask g = mask_from(2, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(sensitivity(Mask::Ones(2, 4), g) == 1.0);
  CHECK(sensitivity(mask_from(2, 4, {{0, 3}}), g) == 0.0);
  CHECK(sensitivity(mask_from(2, 4, {{0, 0}, {1, 1}}), g) == 0.5);
  CHECK_THROWS_AS(sensitivity(g, Mask::Zero(2, 4)), UndefinedMetric);
}

TEST_CASE("false positive components") {
  Mask g = mask_from(6, 6, {{1, 1}});
  CHECK(fpi(Mask::Zero(6, 6), g) == 0.0);
  Mask p = mask_from(6, 6, {{1, 1}, {1, 2}, {4, 4}, {5, 5}});
  CHECK(count_components(p) == 2);
  CHECK(fpi(p, g) == 1.0);
  Mask diag = mask_from(4, 4, {{0, 0}, {1, 1}, {2, 2}});
  CHECK(count_components(diag) == 1);
}

TEST_CASE("ROC AUC") {
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(roc_auc(sep, labels) == 1.0);
  const std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
  CHECK(roc_auc(flat, labels) == 0.5);
  const std::vector<int> one{1, 1, 1, 1};
  CHECK_THROWS_AS(roc_auc(sep, one), UndefinedMetric);

  RngState rng{5, 0};
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(20);
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i) {
      s[i] = std::round(rng.uniform() * 8) / 8;
      y[i] = i % 3 == 0 ? 1 : 0;
    }
    CHECK(std::abs(roc_auc(s, y) - oracle::auc(s, y)) < 1e-12);
  }
}

TEST_CASE("classification suite") {
  const std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> labels{1, 1, 0, 0};
  ClsEval e = cls_suite(scores, labels);
  CHECK(e.acc == 1.0);
  CHECK(e.f1 == 1.0);
  CHECK(e.precision == 1.0);
  CHECK(e.recall == 1.0);

  const std::vector<double> all_pos{0.6, 0.7, 0.8, 0.9};
  const std::vector<int> half{1, 0, 1, 0};
  ClsEval h = cls_suite(all_pos, half);
  CHECK(h.precision == 0.5);
  CHECK(h.recall == 1.0);
  CHECK(h.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const std::vector<double> mixed{0.9, 0.3, 0.6, 0.2, 0.5};
  const std::vector<int> y{1, 1, 0, 0, 1};
  const std::vector<int> flipped{0, 0, 1, 1, 0};
  CHECK(cls_suite(mixed, flipped).acc == doctest::Approx(1.0 - cls_suite(mixed, y).acc).epsilon(1e-15));

  ClsEval none = confusion_metrics(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0});
  CHECK(none.precision == 0.0);
  CHECK(std::isnan(none.auc));
  CHECK(none.tn == 2);
}

TEST_CASE("segmentation suite averages DSC over massy images only") {
  std::vector<Mask> preds{mask_from(2, 2, {{0, 0}}), mask_from(2, 2, {{1, 1}}), Mask::Zero(2, 2)};
  std::vector<Mask> gts{mask_from(2, 2, {{0, 0}}), Mask::Zero(2, 2), mask_from(2, 2, {{0, 1}})};
  SegEval e = seg_suite(preds, gts);
  CHECK(e.images == 3);
  CHECK(e.massy_images == 2);
  CHECK(e.dsc == 0.5);
  CHECK(e.sensitivity == 0.5);
  CHECK(e.fpi == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  SegEval none = seg_suite(std::vector<Mask>{Mask::Zero(2, 2)}, std::vector<Mask>{Mask::Zero(2, 2)});
  CHECK(std::isnan(none.dsc));
}

TEST_CASE("binarize and seg-derived score") {
  Image p = Image::Constant(3, 3, 0.3f);
  CHECK(seg_to_cls_score(p) == doctest::Approx(0.3));
  p(1, 2) = 0.99f;
  CHECK(seg_to_cls_score(p) == doctest::Approx(0.99));
  p(0, 0) = 0.5f;
  Mask m = binarize(p);
  CHECK(m.cast<int>().sum() == 2);
  CHECK(m(0, 0) == 1);
}

TEST_CASE("brute-force oracles agree on every 3x3 mask pair") {
  for (const auto& c : metric_oracle_checks(3)) CHECK_MESSAGE(c.passed, c.name);
}
