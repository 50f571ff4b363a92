#include "hds/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>

#include "hds/autograd.hpp"
#include "hds/config.hpp"
#include "hds/loss.hpp"
#include "hds/metrics.hpp"
#include "hds/model.hpp"
#include "hds/ops.hpp"
#include "hds/trainer.hpp"
#include "hds/util.hpp"

namespace hds {

bool VerifyReport::passed() const { return failures() == 0; }

int VerifyReport::failures() const {
  return static_cast<int>(std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.passed; }));
}

void VerifyReport::append(const std::vector<CheckResult>& more) { checks.insert(checks.end(), more.begin(), more.end()); }

namespace {

using T = Tensor<double>;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CheckResult below(std::string name, double value, double tolerance) {
  return {std::move(name), value < tolerance, "< " + num(tolerance), num(value)};
}

CheckResult equal(std::string name, double expected, double actual) {
  return {std::move(name), expected == actual, exact(expected), exact(actual)};
}

CheckResult near(std::string name, double expected, double actual, double tolerance) {
  return {std::move(name), std::abs(expected - actual) <= tolerance, exact(expected) + " +- " + num(tolerance),
          exact(actual)};
}

T random_tensor(Shape shape, RngState& rng) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.normal();
  return t;
}

// Values at least `gap` away from every point in `kinks`.
T away_from(Shape shape, RngState& rng, std::initializer_list<double> kinks, double gap) {
  T t = random_tensor(std::move(shape), rng);
  for (Index i = 0; i < t.size(); ++i) {
    double& v = t.values()[i];
    for (double k : kinks) {
      if (std::abs(v - k) < gap) v = k + (v >= k ? gap : -gap);
    }
  }
  return t;
}

T uniform_tensor(Shape shape, RngState& rng, double lo, double hi) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.uniform(lo, hi);
  return t;
}

// Largest relative error between backward() and central differences over
// all `inputs` of sum(op(inputs) * weights) for fixed random weights.
double op_error(const std::function<T(const std::vector<T>&)>& op, std::vector<T> inputs, RngState& rng) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  T probe;
  {
    NoGradGuard guard;
    probe = op(inputs);
  }
  const T weights = random_tensor(probe.shape(), rng);
  auto objective = [&] { return reduce_sum(mul(op(inputs), weights)); };
  backward(objective());
  double worst = 0.0;
  for (auto& x : inputs) {
    const T fd = finite_difference_grad<double>([&] { return objective().item(); }, x, 1e-6);
    worst = std::max(worst, relative_error<double>(x.grad(), fd.values()));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> op_gradient_checks(std::uint64_t seed, double tolerance) {
  RngState rng = RngState{seed}.fork(fnv1a64("verify.ops"));
  std::vector<CheckResult> out;
  auto check = [&](const std::string& name, const std::function<T(const std::vector<T>&)>& op, std::vector<T> inputs) {
    out.push_back(below("grad " + name, op_error(op, std::move(inputs), rng), tolerance));
  };

  check("conv2d stride 1 pad 1", [](const std::vector<T>& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
        {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)});
  check("conv2d stride 2 pad 1", [](const std::vector<T>& v) { return conv2d(v[0], v[1], v[2], 2, 1); },
        {random_tensor({1, 2, 7, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  check("conv2d 1x1 no bias", [](const std::vector<T>& v) { return conv2d(v[0], v[1], T(), 1, 0); },
        {random_tensor({2, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng)});
  check("maxpool2d", [](const std::vector<T>& v) { return maxpool2d(v[0], 2); }, {random_tensor({2, 2, 4, 6}, rng)});
  check("avgpool2d", [](const std::vector<T>& v) { return avgpool2d(v[0], 2); }, {random_tensor({2, 2, 4, 6}, rng)});
  check("upsample_bilinear x2", [](const std::vector<T>& v) { return upsample_bilinear(v[0], 2); },
        {random_tensor({1, 2, 3, 4}, rng)});
  check("upsample_bilinear x4", [](const std::vector<T>& v) { return upsample_bilinear(v[0], 4); },
        {random_tensor({2, 1, 2, 3}, rng)});
  check("concat_channels", [](const std::vector<T>& v) { return concat_channels(v[0], v[1]); },
        {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)});
  check("relu", [](const std::vector<T>& v) { return relu(v[0]); }, {away_from({2, 3, 4, 4}, rng, {0.0}, 0.05)});
  check("sigmoid", [](const std::vector<T>& v) { return sigmoid(v[0]); }, {random_tensor({2, 3, 4, 4}, rng)});
  check("log", [](const std::vector<T>& v) { return log(v[0]); }, {uniform_tensor({3, 5}, rng, 0.5, 2.0)});
  check("clamp", [](const std::vector<T>& v) { return clamp(v[0], -0.5, 0.5); },
        {away_from({2, 3, 4, 4}, rng, {-0.5, 0.5}, 0.05)});
  check("add", [](const std::vector<T>& v) { return add(v[0], v[1]); },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)});
  check("mul", [](const std::vector<T>& v) { return mul(v[0], v[1]); },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)});
  check("scalar_mul", [](const std::vector<T>& v) { return scalar_mul(v[0], 1.7); }, {random_tensor({4, 3}, rng)});
  check("reduce_sum", [](const std::vector<T>& v) { return reduce_sum(v[0]); }, {random_tensor({2, 3, 4}, rng)});
  check("reduce_max_spatial", [](const std::vector<T>& v) { return reduce_max_spatial(v[0]); },
        {random_tensor({2, 3, 4, 3}, rng)});
  const RngState mask_stream = rng.fork(1);
  check("dropout", [mask_stream](const std::vector<T>& v) { return dropout(v[0], 0.3, true, mask_stream); },
        {random_tensor({2, 4, 3, 3}, rng)});

  T target(Shape{2, 4, 4});
  for (Index i = 0; i < target.size(); ++i) target.values()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  check("softmax_cross_entropy", [target](const std::vector<T>& v) { return softmax_cross_entropy(v[0], target); },
        {random_tensor({2, 2, 4, 4}, rng)});
  check("seg_cross_entropy", [target](const std::vector<T>& v) { return seg_cross_entropy(v[0], target); },
        {random_tensor({2, 2, 4, 4}, rng)});
  const std::vector<int> labels{1, 0, 1};
  check("mil_cls_loss", [labels](const std::vector<T>& v) { return mil_cls_loss(v[0], labels, 0.01); },
        {uniform_tensor({3, 1, 3, 2}, rng, 0.05, 0.95)});
  check("l2_reg", [](const std::vector<T>& v) {
          std::vector<Parameter<double>> params(2);
          params[0].tensor = v[0];
          params[1].tensor = v[1];
          return l2_reg(std::span<const Parameter<double>>(params));
        },
        {random_tensor({3, 2, 3, 3}, rng), random_tensor({4}, rng)});
  return out;
}

namespace {

// Central difference of `f` in `v`. One-sided slopes that disagree mean a
// ReLU or max-pool switch lies inside the step; the step then shrinks until
// they agree. Falls back to the widest step when they never do.
double kink_safe_derivative(const std::function<double()>& f, double& v, double f0) {
  const double v0 = v;
  double first = 0.0;
  for (double eps : {1e-6, 1e-7, 1e-8}) {
    v = v0 + eps;
    const double fp = f();
    v = v0 - eps;
    const double fm = f();
    v = v0;
    const double right = (fp - f0) / eps, left = (f0 - fm) / eps, central = (fp - fm) / (2 * eps);
    if (eps == 1e-6) first = central;
    const double roundoff = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f0), 1.0) / eps;
    if (std::abs(right - left) <= roundoff + 1e-5 * std::abs(central)) return central;
  }
  return first;
}

}  // namespace

std::vector<CheckResult> objective_gradient_checks(std::uint64_t seed, double tolerance) {
  RngState rng = RngState{seed}.fork(fnv1a64("verify.objective"));
  const ArchConfig arch = tiny_arch(2);
  UResNet<double> model = build_model<double>(arch, rng.fork(1));
  auto params = model.parameters();
  // Zero biases put pre-activations of all-zero receptive fields exactly on
  // the ReLU kink; move them off it.
  for (auto& p : params) {
    if (!p.decay) {
      for (Index i = 0; i < p.tensor.size(); ++i) p.tensor.values()[i] = 0.1 * rng.normal();
    }
  }
  const T x = random_tensor({2, 1, 128, 128}, rng);
  T mask(Shape{2, 128, 128});
  for (Index h = 40; h < 70; ++h) {
    for (Index w = 30; w < 52; ++w) mask.values()[h * 128 + w] = 1.0;
  }
  const std::vector<int> labels{1, 0};
  LossWeights weights = loss_weights_for(arch);
  const RngState dropout_stream = rng.fork(2);
  const std::span<const Parameter<double>> view(params);
  auto total = [&] {
    const HDSOutputs<double> out = forward(model, x, true, dropout_stream);
    return hds_total(out, mask, labels, weights, weights.eta, view);
  };

  model.zero_grad();
  backward(total().objective);
  const auto value = [&] {
    NoGradGuard guard;
    return total().objective.item();
  };
  const double f0 = value();
  double worst = 0.0;
  std::string worst_name;
  for (auto& p : params) {
    Vec<double> fd(p.tensor.size());
    for (Index i = 0; i < p.tensor.size(); ++i) fd[i] = kink_safe_derivative(value, p.tensor.values()[i], f0);
    const double err = relative_error<double>(p.tensor.grad(), fd);
    if (err >= worst) {
      worst = err;
      worst_name = p.name;
    }
  }
  return {below("grad full objective (worst: " + worst_name + ")", worst, tolerance)};
}

std::vector<CheckResult> shape_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  const ArchConfig paper = paper_arch();
  const UResNet<float> model = build_model<float>(paper, RngState{seed});
  out.push_back(equal("paper preset 3x3 main-stream convolutions", 45, count_conv3x3(model)));

  auto cls_shape_check = [&](Index h, Index w, Index ch, Index cw) {
    bool ok = true;
    std::string actual;
    for (const LevelShapes& s : infer_output_shapes(paper, h, w)) {
      ok = ok && s.cls_h == ch && s.cls_w == cw && s.seg_h == h && s.seg_w == w;
      actual += "L" + std::to_string(s.level) + ":" + std::to_string(s.cls_h) + "x" + std::to_string(s.cls_w) + "/" +
                std::to_string(s.seg_h) + "x" + std::to_string(s.seg_w) + " ";
    }
    out.push_back({"paper shapes for " + std::to_string(h) + "x" + std::to_string(w), ok,
                   "cls " + std::to_string(ch) + "x" + std::to_string(cw) + ", seg at input size on every level",
                   actual});
  };
  cls_shape_check(512, 384, 4, 3);
  cls_shape_check(1024, 512, 8, 4);

  // Inferred shapes must agree with a real forward pass.
  const ArchConfig desk = desk_arch();
  const UResNet<float> small = build_model<float>(desk, RngState{seed}.fork(1));
  Tensor<float> x(Shape{1, 1, 256, 128});
  RngState rng{seed};
  for (Index i = 0; i < x.size(); ++i) x.values()[i] = static_cast<float>(rng.normal());
  NoGradGuard guard;
  const HDSOutputs<float> result = forward(small, x, false, RngState{});
  const auto inferred = infer_output_shapes(desk, 256, 128);
  bool ok = result.seg_logits.size() == inferred.size() && result.cls_maps.size() == inferred.size();
  for (std::size_t i = 0; ok && i < inferred.size(); ++i) {
    ok = result.seg_logits[i].shape() == Shape{1, 2, inferred[i].seg_h, inferred[i].seg_w} &&
         result.cls_maps[i].shape() == Shape{1, 1, inferred[i].cls_h, inferred[i].cls_w};
  }
  out.push_back({"desk forward shapes match inference", ok, "seg [1,2,256,128], cls [1,1,2,1] per level",
                 ok ? "match" : "mismatch"});
  return out;
}

std::vector<CheckResult> loss_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  {
    const T map(Shape{1, 1, 2, 2}, 0.5);
    const std::vector<int> y{0};
    out.push_back(near("MIL cost, y=0, max 0.5 over 4 cells", -std::log(0.5) + 2e-6, mil_cls_loss(map, y, 1e-6).item(), 1e-9));
  }
  {
    const T map(Shape{1, 1, 3, 4}, 0.9);
    const std::vector<int> y{1};
    out.push_back(
        near("MIL cost, y=1, uniform 0.9 over 3x4 cells", -std::log(0.9) + 12 * 0.9e-6, mil_cls_loss(map, y, 1e-6).item(), 1e-9));
  }

  // Reassembly on a few random points of a tiny model.
  RngState rng = RngState{seed}.fork(fnv1a64("verify.reassembly"));
  const ArchConfig arch = tiny_arch(4);
  const UResNet<double> model = build_model<double>(arch, rng.fork(1));
  const auto params = model.parameters();
  LossWeights weights = loss_weights_for(arch);
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const T x = random_tensor({2, 1, 128, 256}, rng);
    T mask(Shape{2, 128, 256});
    for (Index i = 0; i < mask.size(); ++i) mask.values()[i] = rng.bernoulli(0.05) ? 1.0 : 0.0;
    const std::vector<int> labels{trial % 2, 1};
    NoGradGuard guard;
    const auto br = hds_total(forward(model, x, true, rng.fork(10 + static_cast<std::uint64_t>(trial))), mask, labels,
                              weights, weights.eta, std::span<const Parameter<double>>(params));
    worst = std::max(worst, br.reassembly_error(weights));
  }
  out.push_back(below("loss reassembly relative error", worst, 1e-6));
  return out;
}

std::vector<CheckResult> schedule_checks() {
  std::vector<CheckResult> out;
  const TrainConfig c;
  const LossWeights w;
  const double lr0 = 0.01, f = 0.3;
  const std::vector<std::pair<int, double>> lr_table{
      {0, lr0},           {999, lr0},             {1000, lr0 * f},        {1800, lr0 * f * f},
      {2400, lr0 * f * f * f}, {2410, lr0 * f * f * f * f}, {2799, lr0 * f * f * f * f}};
  for (const auto& [epoch, lr] : lr_table) out.push_back(equal("lr at epoch " + std::to_string(epoch), lr, lr_at_epoch(c, epoch)));

  const double floor = 0.005;
  auto closed_form = [&](int d, int epoch) {
    const double eta = w.eta[static_cast<std::size_t>(d)];
    if (d == 0 || epoch <= 1000) return eta;
    if (epoch >= 2400) return floor * eta;
    const double t = static_cast<double>(epoch - 1000) / 1400.0;
    return eta * (1.0 - t * (1.0 - floor));
  };
  for (int epoch : {0, 999, 1000, 1800, 2400, 2410, 2799}) {
    const auto eta = eta_at_epoch(w, epoch, c);
    for (int d = 0; d < 6; ++d) {
      out.push_back(equal("eta_" + std::to_string(d) + " at epoch " + std::to_string(epoch), closed_form(d, epoch),
                          eta[static_cast<std::size_t>(d)]));
    }
  }
  return out;
}

namespace oracle {

double dsc(const Mask& pred, const Mask& gt) {
  long inter = 0, p = 0, g = 0;
  for (Index y = 0; y < gt.rows(); ++y) {
    for (Index x = 0; x < gt.cols(); ++x) {
      p += pred(y, x) != 0;
      g += gt(y, x) != 0;
      inter += pred(y, x) != 0 && gt(y, x) != 0;
    }
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double sensitivity(const Mask& pred, const Mask& gt) {
  long inter = 0, g = 0;
  for (Index y = 0; y < gt.rows(); ++y) {
    for (Index x = 0; x < gt.cols(); ++x) {
      g += gt(y, x) != 0;
      inter += pred(y, x) != 0 && gt(y, x) != 0;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(g);
}

int false_positive_components(const Mask& pred, const Mask& gt) {
  Mask seen = Mask::Zero(pred.rows(), pred.cols());
  int count = 0;
  for (Index y0 = 0; y0 < pred.rows(); ++y0) {
    for (Index x0 = 0; x0 < pred.cols(); ++x0) {
      if (!pred(y0, x0) || seen(y0, x0)) continue;
      bool touches = false;
      std::deque<std::pair<Index, Index>> queue{{y0, x0}};
      seen(y0, x0) = 1;
      while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        touches = touches || gt(y, x) != 0;
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= pred.rows() || nx >= pred.cols()) continue;
            if (pred(ny, nx) && !seen(ny, nx)) {
              seen(ny, nx) = 1;
              queue.emplace_back(ny, nx);
            }
          }
        }
      }
      count += touches ? 0 : 1;
    }
  }
  return count;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace oracle

std::vector<CheckResult> metric_oracle_checks(std::uint64_t seed, double tolerance) {
  std::vector<Mask> all(512);
  for (int code = 0; code < 512; ++code) {
    all[static_cast<std::size_t>(code)] = Mask(3, 3);
    for (int k = 0; k < 9; ++k) all[static_cast<std::size_t>(code)].data()[k] = (code >> k) & 1;
  }
  double dsc_err = 0.0, se_err = 0.0;
  int fpi_mismatch = 0;
  for (const Mask& p : all) {
    for (const Mask& g : all) {
      dsc_err = std::max(dsc_err, std::abs(dsc(p, g) - oracle::dsc(p, g)));
      if (g.any()) se_err = std::max(se_err, std::abs(sensitivity(p, g) - oracle::sensitivity(p, g)));
      fpi_mismatch += fpi(p, g) != oracle::false_positive_components(p, g);
    }
  }
  std::vector<CheckResult> out;
  out.push_back(below("DSC vs brute force, all 3x3 mask pairs (max abs diff)", dsc_err, tolerance));
  out.push_back(below("SE vs brute force, all 3x3 mask pairs (max abs diff)", se_err, tolerance));
  out.push_back(equal("FPI vs flood fill, all 3x3 mask pairs (mismatches)", 0, fpi_mismatch));

  RngState rng = RngState{seed}.fork(fnv1a64("verify.auc"));
  double auc_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(20);
    std::vector<int> labels(20);
    for (int i = 0; i < 20; ++i) {
      labels[static_cast<std::size_t>(i)] = i < 1 + trial % 19 ? 1 : 0;
      // Coarse grid on even trials so ties occur.
      const double s = rng.uniform();
      scores[static_cast<std::size_t>(i)] = trial % 2 == 0 ? std::floor(s * 5.0) / 5.0 : s;
    }
    auc_err = std::max(auc_err, std::abs(roc_auc(scores, labels) - oracle::auc(scores, labels)));
  }
  out.push_back(below("AUC vs all-pairs count, 20-point sets (max abs diff)", auc_err, tolerance));
  return out;
}

VerifyReport run_verify(std::uint64_t seed) {
  VerifyReport report;
  report.append(op_gradient_checks(seed));
  report.append(objective_gradient_checks(seed));
  report.append(shape_checks(seed));
  report.append(loss_checks(seed));
  report.append(schedule_checks());
  report.append(metric_oracle_checks(seed));
  return report;
}

}  // namespace hds
