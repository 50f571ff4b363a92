// Acceptance gate: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `hds_acceptance 1 3 8`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <array>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hds/config.hpp"
#include "hds/eval.hpp"
#include "hds/verify.hpp"

using namespace hds;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

Outcome from_checks(const std::vector<CheckResult>& checks) {
  Outcome o{true, ""};
  int failed = 0;
  for (const auto& c : checks) {
    if (!c.passed) {
      o.passed = false;
      ++failed;
      std::printf("    failed: %s  [actual %s, expected %s]\n", c.name.c_str(), c.actual.c_str(), c.expected.c_str());
    }
  }
  o.detail = std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " checks";
  return o;
}

Outcome architecture() {
  std::vector<CheckResult> checks = shape_checks(0);
  const UResNet<float> model = build_model<float>(paper_arch(), RngState{1});
  NoGradGuard guard;
  for (auto [h, w, ch, cw] : {std::array<Index, 4>{512, 384, 4, 3}, std::array<Index, 4>{1024, 512, 8, 4}}) {
    Tensor<float> x(Shape{1, 1, h, w});
    RngState rng{2};
    for (Index i = 0; i < x.size(); ++i) x.values()[i] = static_cast<float>(rng.normal());
    const HDSOutputs<float> out = forward(model, x, false, RngState{});
    bool ok = out.seg_logits.size() == 6 && out.cls_maps.size() == 6;
    for (std::size_t k = 0; ok && k < 6; ++k) {
      ok = out.seg_logits[k].shape() == Shape{1, 2, h, w} && out.cls_maps[k].shape() == Shape{1, 1, ch, cw};
    }
    const std::string size = std::to_string(h) + "x" + std::to_string(w);
    checks.push_back({"paper forward at " + size, ok,
                      "seg " + size + ", cls " + std::to_string(ch) + "x" + std::to_string(cw) + " on all six levels",
                      ok ? "as expected" : "mismatch"});
  }
  return from_checks(checks);
}

Outcome gradients() {
  std::vector<CheckResult> checks = op_gradient_checks(0, 1e-4);
  const auto full = objective_gradient_checks(0, 1e-5);
  checks.insert(checks.end(), full.begin(), full.end());
  return from_checks(checks);
}

// Desk training on a handful of full-size synthetic images.
struct DeskRun {
  std::vector<Sample> samples;
  Split train{"train", {}};
  Split val{"val", {}};
  RunConfig config;
};

DeskRun small_desk_run(int epochs) {
  DeskRun r;
  SynthConfig sc = desk_synth();
  sc.count = 6;
  sc.mass_probability = 0.5;
  sc.seed = 17;
  r.samples = generate_synthetic(sc);
  r.train.indices = {0, 1, 2, 3};
  r.val.indices = {4, 5};
  r.config = desk_preset();
  r.config.train = rescaled(r.config.train, epochs);
  r.config.train.val_every = 2;
  return r;
}

Outcome loss_fidelity() {
  std::vector<CheckResult> checks = loss_checks(0);
  const auto sched = schedule_checks();
  checks.insert(checks.end(), sched.begin(), sched.end());

  DeskRun run = small_desk_run(10);
  UResNet<float> model = build_model<float>(run.config.arch, RngState{3});
  Trainer<float> trainer(model, run.samples, run.train, run.val, run.config.train, run.config.loss);
  trainer.run();
  double worst = 0.0;
  int steps = 0;
  for (const auto& r : trainer.log().records) {
    worst = std::max(worst, r.max_reassembly_error);
    steps += r.steps;
  }
  checks.push_back({"objective reassembly over " + std::to_string(steps) + " training steps", worst < 1e-6, "< 1e-6",
                    fmt("%.3g", worst)});
  return from_checks(checks);
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = desk_preset();
  SynthConfig sc = desk_synth();
  sc.seed = 1;
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) {
    SynthConfig c = sc;
    c.mass_probability = i < 2 ? 1.0 : 0.0;
    samples.push_back(generate_one(c, i));
  }
  const Split train{"train", {0, 1, 2, 3}};
  UResNet<float> model = build_model<float>(rc.arch, RngState{0});
  Trainer<float> trainer(model, samples, train, Split{"val", {}}, rc.train, rc.loss);
  trainer.run();
  const EvalResult e = evaluate(model, samples, train.indices, trainer.stats());
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  Outcome o;
  o.passed = e.seg.dsc >= 0.90 && e.cls.acc == 1.0 && minutes <= 15.0;
  o.detail = "train DSC " + fmt("%.4f", e.seg.dsc) + ", accuracy " + fmt("%.3f", e.cls.acc) + ", " +
             std::to_string(rc.train.epochs) + " epochs in " + fmt("%.1f", minutes) + " min";
  return o;
}

Outcome mutual_benefit() {
  SynthConfig sc = desk_synth();
  sc.count = 50;
  sc.mass_probability = 0.5;
  sc.seed = 2024;
  const std::vector<Sample> samples = generate_synthetic(sc);
  Split train{"train", {}}, val{"val", {}};
  for (std::size_t i = 0; i < 50; ++i) (i < 40 ? train : val).indices.push_back(i);

  Outcome o{true, ""};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    EvalResult results[2];
    int k = 0;
    for (Mode mode : {Mode::hybrid, Mode::seg_only}) {
      RunConfig rc = desk_preset();
      set_mode(rc, mode);
      rc.loss.alpha = LossWeights{}.alpha;
      rc.train = rescaled(rc.train, 40);
      rc.train.seed = seed;
      UResNet<float> model = build_model<float>(rc.arch, RngState{seed});
      Trainer<float> trainer(model, samples, train, val, rc.train, rc.loss);
      trainer.run();
      results[k++] = evaluate(model, samples, val.indices, trainer.stats());
    }
    const double dsc_h = results[0].seg.dsc, dsc_s = results[1].seg.dsc;
    const double prec_h = results[0].cls.precision, prec_s = results[1].seg_cls->precision;
    const bool ok = dsc_h >= dsc_s - 0.02 && prec_h >= prec_s - 0.05;
    std::printf("    seed %llu: DSC hybrid %.4f vs seg-only %.4f, precision hybrid %.3f vs seg-only %.3f  %s\n",
                static_cast<unsigned long long>(seed), dsc_h, dsc_s, prec_h, prec_s, ok ? "ok" : "violated");
    std::fflush(stdout);
    o.passed = o.passed && ok;
  }
  o.detail = "3 seeds, 40 train / 10 val, 40 epochs each";
  return o;
}

Outcome metric_oracles() { return from_checks(metric_oracle_checks(0, 1e-12)); }

Outcome determinism_and_resume() {
  const int epochs = 6;
  DeskRun run = small_desk_run(epochs);
  auto train_fresh = [&](int until) {
    auto model = std::make_unique<UResNet<float>>(build_model<float>(run.config.arch, RngState{4}));
    auto trainer = std::make_unique<Trainer<float>>(*model, run.samples, run.train, run.val, run.config.train,
                                                    run.config.loss);
    trainer->run(until);
    return std::pair{std::move(model), std::move(trainer)};
  };
  auto [ma, ta] = train_fresh(epochs);
  auto [mb, tb] = train_fresh(epochs);
  const bool same_log = ta->log().same_results(tb->log());

  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() / ("hds_accept_" + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  auto [mc, tc] = train_fresh(epochs / 2);
  tc->save_checkpoint(dir / "half.hdsw");
  UResNet<float> resumed = build_model<float>(run.config.arch, RngState{999});
  Trainer<float> td(resumed, run.samples, run.train, run.val, run.config.train, run.config.loss);
  td.load_checkpoint(dir / "half.hdsw");
  td.run();
  std::filesystem::remove_all(dir);

  bool same_params = true;
  const auto pa = ma->parameters();
  const auto pd = resumed.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) same_params = same_params && (pa[i].tensor.values() == pd[i].tensor.values()).all();
  const bool same_resume = td.log().same_results(ta->log()) && same_params;

  Outcome o;
  o.passed = same_log && same_resume;
  o.detail = std::string("repeat run ") + (same_log ? "identical" : "differs") + ", resume at epoch " +
             std::to_string(epochs / 2) + " " + (same_resume ? "bit-exact" : "differs");
  return o;
}

Outcome kfold() {
  const auto folds = split_kfold(410, 5, 0);
  const auto parts = kfold_partition(410, 5, 0);
  bool ok = parts.size() == 5 && folds.size() == 5;
  std::set<std::size_t> covered;
  std::size_t total = 0;
  for (const auto& p : parts) {
    ok = ok && p.size() == 82;
    covered.insert(p.begin(), p.end());
    total += p.size();
  }
  ok = ok && covered.size() == 410 && total == 410;
  for (const auto& f : folds) {
    std::set<std::size_t> all(f.train.indices.begin(), f.train.indices.end());
    all.insert(f.val.indices.begin(), f.val.indices.end());
    all.insert(f.test.indices.begin(), f.test.indices.end());
    ok = ok && all.size() == 410 && f.test.indices.size() == 82 && f.val.indices.size() == 82 &&
         f.train.indices.size() == 246;
  }
  return {ok, "five folds of 82, disjoint and covering"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"architecture ledger", architecture},
      {"gradient suite", gradients},
      {"loss fidelity", loss_fidelity},
      {"overfit oracle", overfit},
      {"mutual-benefit direction", mutual_benefit},
      {"metric oracles", metric_oracles},
      {"determinism and resume", determinism_and_resume},
      {"k-fold contract", kfold},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  %d. %s: %s (%.0f s)\n", o.passed ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.passed ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
