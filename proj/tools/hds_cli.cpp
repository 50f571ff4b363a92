// hds: data generation, training, evaluation, prediction and self-checks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hds/config.hpp"
#include "hds/data.hpp"
#include "hds/errors.hpp"
#include "hds/eval.hpp"
#include "hds/ops.hpp"
#include "hds/util.hpp"
#include "hds/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hds;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Invalid user input: flags, config, file contents. Maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_file;
  json config;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

// Exactly one manifest per run, written last so it can checksum everything
// else under the output directory.
void write_manifest(const Manifest& m) {
  json artifacts = json::object();
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(m.out_dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "run_manifest.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) artifacts[fs::relative(f, m.out_dir).generic_string()] = file_checksum(f);
  json j = {{"command", m.command},
            {"argv", m.argv},
            {"config_file", m.config_file.empty() ? json() : json(m.config_file)},
            {"config", m.config},
            {"seed", m.seed},
            {"output_dir", fs::absolute(m.out_dir).generic_string()},
            {"artifacts", artifacts}};
  std::ofstream out(m.out_dir / "run_manifest.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("cannot write " + (m.out_dir / "run_manifest.json").string());
}

void ensure_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError(dir.string() + " is not empty (pass --force to overwrite)");
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  int count = 410;
  std::uint64_t seed = 0;
  fs::path out;
  bool force = false;
  std::string preset = "desk";
  std::optional<int> height, width;
  std::optional<double> mass_probability;
};

int cmd_gen_data(const GenDataArgs& a, Manifest m) {
  SynthConfig sc = a.preset == "paper" ? SynthConfig{} : desk_synth();
  sc.count = a.count;
  sc.seed = a.seed;
  if (a.height) sc.height = *a.height;
  if (a.width) sc.width = *a.width;
  if (a.mass_probability) sc.mass_probability = *a.mass_probability;
  if (sc.count < 0) throw UsageError("--count must be non-negative");
  if (!(sc.mass_probability >= 0 && sc.mass_probability <= 1)) throw UsageError("--mass-probability outside [0, 1]");
  ensure_output_dir(a.out, a.force);
  if (a.force) {
    fs::remove_all(a.out / "images");
    fs::remove_all(a.out / "masks");
  }
  write_dataset(a.out, generate_synthetic(sc));
  std::printf("wrote %d images (%dx%d) to %s\n", sc.count, sc.height, sc.width, a.out.string().c_str());
  m.seed = a.seed;
  m.config = {{"count", sc.count},
              {"height", sc.height},
              {"width", sc.width},
              {"mass_probability", sc.mass_probability},
              {"radius_min", sc.radius_min},
              {"radius_max", sc.radius_max},
              {"seed", sc.seed}};
  m.out_dir = a.out;
  write_manifest(m);
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path data;
  fs::path config;
  std::string preset = "paper";
  std::optional<std::string> mode;
  fs::path out;
  bool dry_run = false;
  fs::path resume;
  bool force = false;
  int folds = 5;
  int fold = 0;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<int> batch_size;
  std::optional<std::string> precision;
  std::optional<int> val_every;
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig rc = preset(a.preset);
  if (!a.config.empty()) rc = load_config_file(a.config, rc);
  if (a.mode) set_mode(rc, parse_mode(*a.mode));
  if (a.epochs) rc.train = rescaled(rc.train, *a.epochs);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.precision) rc.train.precision = *a.precision;
  if (a.val_every) rc.train.val_every = *a.val_every;
  validate(rc);
  return rc;
}

void print_ledger(const RunConfig& rc) {
  const ArchConfig& arch = rc.arch;
  const UResNet<float> model = build_model<float>(arch, RngState{rc.train.seed});
  long params = 0;
  for (const auto& p : model.parameters()) params += static_cast<long>(p.tensor.size());
  std::printf("mode: %s\n", to_string(arch.mode).c_str());
  std::printf("scales: %d, base channels: %d, supervised levels: %zu\n", arch.scales, arch.base_channels,
              arch.supervision_levels.size());
  std::printf("main-stream 3x3 convolutions: %d\n", count_conv3x3(model));
  std::printf("parameters: %ld\n", params);
  const Index ph = rc.train.patch_height, pw = rc.train.patch_width;
  for (const LevelShapes& s : infer_output_shapes(arch, ph, pw)) {
    std::printf("level %d, %ldx%ld patch: seg %ldx%ld, cls map %ldx%ld\n", s.level, static_cast<long>(ph),
                static_cast<long>(pw), static_cast<long>(s.seg_h), static_cast<long>(s.seg_w), static_cast<long>(s.cls_h),
                static_cast<long>(s.cls_w));
  }
  std::printf("epochs: %d, batch: %d, lr0: %g, milestones:", rc.train.epochs, rc.train.batch_size, rc.train.lr0);
  for (int mi : rc.train.lr_milestones) std::printf(" %d", mi);
  std::printf("\n");
}

struct Partition {
  Split train{"train", {}};
  Split val{"val", {}};
  Split test{"test", {}};
};

Partition make_partition(std::size_t n, int folds, int fold, std::uint64_t seed) {
  Partition p;
  if (folds == 1) {
    for (std::size_t i = 0; i < n; ++i) p.train.indices.push_back(i);
    return p;
  }
  if (fold < 0 || fold >= folds) throw UsageError("--fold must lie in [0, --folds)");
  const Fold f = split_kfold(n, folds, seed).at(static_cast<std::size_t>(fold));
  p.train = f.train;
  p.val = f.val;
  p.test = f.test;
  return p;
}

template <typename Scalar>
void train_with(const RunConfig& rc, const std::vector<Sample>& samples, const Partition& part, const TrainArgs& a) {
  UResNet<Scalar> model = build_model<Scalar>(rc.arch, RngState{rc.train.seed});
  Trainer<Scalar> trainer(model, samples, part.train, part.val, rc.train, rc.loss);
  trainer.set_output_dir(a.out);
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume);
    std::printf("resumed at epoch %d\n", trainer.next_epoch());
  }
  trainer.set_epoch_callback([](const EpochRecord& r) {
    std::printf("epoch %4d  lr %.3g  total %.5f  seg %.5f  cls %.5f", r.epoch, r.lr, r.total, r.l_seg, r.l_cls);
    if (r.validated) std::printf("  val dsc %.4f acc %.4f", r.val_dsc, r.val_acc);
    std::printf("  %.1fs\n", r.seconds);
    std::fflush(stdout);
  });
  trainer.run();
}

int cmd_train(const TrainArgs& a, Manifest m) {
  const RunConfig rc = resolve_config(a);
  if (a.dry_run) {
    print_ledger(rc);
    return 0;
  }
  if (a.data.empty()) throw UsageError("--data is required unless --dry-run is given");
  if (a.out.empty()) throw UsageError("--out is required unless --dry-run is given");
  if (a.folds != 1 && a.folds < 3) throw UsageError("--folds must be 1 or at least 3");
  const std::vector<Sample> samples = read_dataset(a.data);
  if (samples.empty()) throw UsageError(a.data.string() + " holds no samples");
  const Partition part = make_partition(samples.size(), a.folds, a.fold, rc.train.seed);
  ensure_output_dir(a.out, a.force || !a.resume.empty());

  {
    std::ofstream cfg(a.out / "config.json", std::ios::trunc);
    cfg << to_json(rc).dump(2) << "\n";
    std::ofstream split(a.out / "split.json", std::ios::trunc);
    split << json{{"folds", a.folds},
                  {"fold", a.fold},
                  {"seed", rc.train.seed},
                  {"data", fs::absolute(a.data).generic_string()},
                  {"train", part.train.indices},
                  {"val", part.val.indices},
                  {"test", part.test.indices}}
                 .dump(2)
          << "\n";
  }
  if (rc.train.precision == "double") {
    train_with<double>(rc, samples, part, a);
  } else {
    train_with<float>(rc, samples, part, a);
  }
  m.config = to_json(rc);
  m.config_file = a.config.empty() ? "" : fs::absolute(a.config).generic_string();
  m.seed = rc.train.seed;
  m.out_dir = a.out;
  write_manifest(m);
  return 0;
}

// ---------------------------------------------------------------- checkpoints

struct LoadedRun {
  RunConfig config;
  NormStats stats;
  int epoch = -1;
  json split;  // split.json next to the checkpoint, when present
};

LoadedRun read_run(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw UsageError("no checkpoint at " + checkpoint.string());
  fs::path side = checkpoint.string() + ".json";
  if (!fs::exists(side)) side = checkpoint.parent_path() / "last.hdsw.json";
  if (!fs::exists(side)) throw UsageError("no sidecar for " + checkpoint.string());
  std::ifstream in(side);
  LoadedRun run;
  try {
    const json j = json::parse(in);
    run.config = merge_json(RunConfig{}, j.at("config"));
    run.stats.mean = j.at("norm").at("mean").get<double>();
    run.stats.std = j.at("norm").at("std").get<double>();
    const bool is_best = checkpoint.filename() == "best.hdsw" || checkpoint.extension() == ".best";
    run.epoch = is_best ? j.at("best").at("epoch").get<int>() : j.at("next_epoch").get<int>() - 1;
  } catch (const json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  const fs::path split = checkpoint.parent_path() / "split.json";
  if (fs::exists(split)) {
    std::ifstream s(split);
    run.split = json::parse(s);
  }
  return run;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  std::string split = "test";
  fs::path out;
  bool overlay = false;
  bool force = false;
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

template <typename Scalar>
EvalResult eval_with(const LoadedRun& run, const fs::path& checkpoint, const std::vector<Sample>& samples,
                     const std::vector<std::size_t>& indices, bool keep) {
  UResNet<Scalar> model = build_model<Scalar>(run.config.arch, RngState{});
  load_weights(model, checkpoint);
  return evaluate(model, samples, indices, run.stats, keep);
}

int cmd_eval(const EvalArgs& a, Manifest m) {
  const LoadedRun run = read_run(a.checkpoint);
  const std::vector<Sample> samples = read_dataset(a.data);
  std::vector<std::size_t> indices;
  if (a.split == "all") {
    for (std::size_t i = 0; i < samples.size(); ++i) indices.push_back(i);
  } else {
    if (a.split != "train" && a.split != "val" && a.split != "test") {
      throw UsageError("--split must be train, val, test or all");
    }
    if (run.split.is_null()) throw UsageError("no split.json next to the checkpoint; use --split all");
    indices = run.split.at(a.split).get<std::vector<std::size_t>>();
    for (std::size_t i : indices) {
      if (i >= samples.size()) throw UsageError("split index " + std::to_string(i) + " outside the dataset");
    }
  }
  if (indices.empty()) throw UsageError("split '" + a.split + "' is empty");
  ensure_output_dir(a.out, a.force);

  const EvalResult r = run.config.train.precision == "double"
                           ? eval_with<double>(run, a.checkpoint, samples, indices, a.overlay)
                           : eval_with<float>(run, a.checkpoint, samples, indices, a.overlay);
  const int fold = run.split.is_null() ? -1 : run.split.at("fold").get<int>();
  std::ofstream csv(a.out / "metrics.csv", std::ios::trunc);
  csv << "split,fold,epoch,source,images,massy_images,dsc,sensitivity,fpi,acc,auc,f1,precision,recall,tp,fp,tn,fn\n";
  auto row = [&](const std::string& source, const ClsEval& c) {
    csv << a.split << ',' << fold << ',' << run.epoch << ',' << source << ',' << r.seg.images << ','
        << r.seg.massy_images << ',' << fmt(r.seg.dsc) << ',' << fmt(r.seg.sensitivity) << ',' << fmt(r.seg.fpi) << ','
        << fmt(c.acc) << ',' << fmt(c.auc) << ',' << fmt(c.f1) << ',' << fmt(c.precision) << ',' << fmt(c.recall)
        << ',' << c.tp << ',' << c.fp << ',' << c.tn << ',' << c.fn << '\n';
  };
  row(has_cls(run.config.arch.mode) ? "cls" : "seg", r.cls);
  if (r.seg_cls && has_cls(run.config.arch.mode)) row("seg", *r.seg_cls);
  csv.close();

  std::printf("images %zu  dsc %s  se %s  fpi %s  acc %s  auc %s  f1 %s\n", indices.size(), fmt(r.seg.dsc).c_str(),
              fmt(r.seg.sensitivity).c_str(), fmt(r.seg.fpi).c_str(), fmt(r.cls.acc).c_str(), fmt(r.cls.auc).c_str(),
              fmt(r.cls.f1).c_str());
  if (a.overlay) {
    fs::create_directories(a.out / "overlays");
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Sample& s = samples[indices[k]];
      const ImagePrediction& p = r.predictions[k];
      const Mask pred = p.mask.size() ? p.mask : Mask(Mask::Zero(s.mask.rows(), s.mask.cols()));
      write_png_rgb(a.out / "overlays" / (s.id + ".png"), render_overlay(s.image, s.mask, pred));
    }
  }
  m.config = to_json(run.config);
  m.seed = run.config.train.seed;
  m.out_dir = a.out;
  write_manifest(m);
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path checkpoint;
  fs::path image;
  fs::path out;
  bool force = false;
};

template <typename Scalar>
ImagePrediction predict_with(const LoadedRun& run, const fs::path& checkpoint, const Image& image) {
  UResNet<Scalar> model = build_model<Scalar>(run.config.arch, RngState{});
  load_weights(model, checkpoint);
  return predict(model, normalize(image, run.stats));
}

int cmd_predict(const PredictArgs& a, Manifest m) {
  const LoadedRun run = read_run(a.checkpoint);
  const Image image = read_png_gray(a.image);
  const Index divisor = required_divisor(run.config.arch);
  const Image padded = reflect_pad(image, divisor);
  const bool was_padded = padded.rows() != image.rows() || padded.cols() != image.cols();
  ensure_output_dir(a.out, a.force);

  ImagePrediction p = run.config.train.precision == "double" ? predict_with<double>(run, a.checkpoint, padded)
                                                              : predict_with<float>(run, a.checkpoint, padded);
  if (was_padded) {
    std::printf("padded %ldx%ld to %ldx%ld by reflection; outputs cropped back\n", static_cast<long>(image.rows()),
                static_cast<long>(image.cols()), static_cast<long>(padded.rows()), static_cast<long>(padded.cols()));
  }
  Mask mask = p.mask.size() ? Mask(p.mask.topLeftCorner(image.rows(), image.cols()))
                            : Mask(Mask::Zero(image.rows(), image.cols()));
  const fs::path mask_path = a.out / (a.image.stem().string() + "_mask.png");
  write_png_mask(mask_path, mask);
  std::printf("image %s (%ldx%ld)\n", a.image.string().c_str(), static_cast<long>(image.rows()),
              static_cast<long>(image.cols()));
  std::printf("mass probability: %.6f\n", p.score());
  for (const LevelShapes& s : p.shapes) {
    std::printf("level %d: seg %ldx%ld, cls map %ldx%ld\n", s.level, static_cast<long>(s.seg_h),
                static_cast<long>(s.seg_w), static_cast<long>(s.cls_h), static_cast<long>(s.cls_w));
  }
  std::printf("mask: %s (%ldx%ld, %ld mass pixels)\n", mask_path.string().c_str(), static_cast<long>(mask.rows()),
              static_cast<long>(mask.cols()), static_cast<long>(mask.template cast<long>().sum()));
  {
    std::ofstream out(a.out / "prediction.json", std::ios::trunc);
    json shapes = json::array();
    for (const LevelShapes& s : p.shapes) {
      shapes.push_back({{"level", s.level}, {"seg", {s.seg_h, s.seg_w}}, {"cls", {s.cls_h, s.cls_w}}});
    }
    out << json{{"image", a.image.generic_string()},
                {"mass_probability", p.score()},
                {"padded", was_padded},
                {"shapes", shapes}}
               .dump(2)
        << "\n";
  }
  m.config = to_json(run.config);
  m.seed = run.config.train.seed;
  m.out_dir = a.out;
  write_manifest(m);
  return 0;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::uint64_t seed = 0;
  bool inject_conv_fault = false;
  fs::path out;
  bool force = false;
};

int cmd_verify(const VerifyArgs& a, Manifest m) {
  testing::set_conv_backward_fault(a.inject_conv_fault);
  const VerifyReport report = run_verify(a.seed);
  testing::set_conv_backward_fault(false);
  json checks = json::array();
  for (const CheckResult& c : report.checks) {
    std::printf("%s  %s  [actual %s, expected %s]\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.actual.c_str(),
                c.expected.c_str());
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"expected", c.expected}, {"actual", c.actual}});
  }
  std::printf("%zu checks, %d failed\n", report.checks.size(), report.failures());
  if (!a.out.empty()) {
    ensure_output_dir(a.out, a.force);
    std::ofstream(a.out / "verify.json", std::ios::trunc) << checks.dump(2) << "\n";
    m.seed = a.seed;
    m.config = {{"seed", a.seed}, {"inject_conv_fault", a.inject_conv_fault}};
    m.out_dir = a.out;
    write_manifest(m);
  }
  return report.passed() ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid deep supervision for joint mass segmentation and classification"};
  app.require_subcommand(1);

  Manifest base;
  for (int i = 0; i < argc; ++i) base.argv.emplace_back(argv[i]);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen_cmd->add_option("--count", gen.count, "Number of images");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");
  gen_cmd->add_option("--preset", gen.preset, "Image size preset")->check(CLI::IsMember({"desk", "paper"}));
  gen_cmd->add_option("--height", gen.height, "Image height");
  gen_cmd->add_option("--width", gen.width, "Image width");
  gen_cmd->add_option("--mass-probability", gen.mass_probability, "Fraction of images with masses");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", tr.data, "Dataset directory");
  train_cmd->add_option("--config", tr.config, "JSON config overriding the preset");
  train_cmd->add_option("--preset", tr.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  train_cmd->add_option("--mode", tr.mode, "hybrid, seg-only, cls-only or no-ds");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_flag("--dry-run", tr.dry_run, "Print the architecture ledger and exit");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_flag("--force", tr.force, "Overwrite a non-empty output directory");
  train_cmd->add_option("--folds", tr.folds, "Number of folds; 1 trains on everything");
  train_cmd->add_option("--fold", tr.fold, "Rotation index: this fold tests, the next validates");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs; the schedule is stretched to fit");
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--batch-size", tr.batch_size, "Images per step");
  train_cmd->add_option("--precision", tr.precision, "float or double");
  train_cmd->add_option("--val-every", tr.val_every, "Validate every k epochs");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on whole images");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Weight file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "train, val, test or all");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_flag("--overlay", ev.overlay, "Write boundary overlays");
  eval_cmd->add_flag("--force", ev.force, "Overwrite a non-empty output directory");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Segment and score one image");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Weight file")->required();
  predict_cmd->add_option("--image", pr.image, "Grayscale PNG")->required();
  predict_cmd->add_option("--out", pr.out, "Output directory")->required();
  predict_cmd->add_flag("--force", pr.force, "Overwrite a non-empty output directory");

  VerifyArgs ve;
  auto* verify_cmd = app.add_subcommand("verify", "Run gradient, shape, loss and metric checks");
  verify_cmd->add_option("--seed", ve.seed, "Seed for random inputs");
  verify_cmd->add_flag("--inject-conv-fault", ve.inject_conv_fault, "Corrupt the conv backward pass (test hook)");
  verify_cmd->add_option("--out", ve.out, "Write the report here");
  verify_cmd->add_flag("--force", ve.force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, Manifest{"gen-data", base.argv, "", {}, 0, {}});
    if (train_cmd->parsed()) return cmd_train(tr, Manifest{"train", base.argv, "", {}, 0, {}});
    if (eval_cmd->parsed()) return cmd_eval(ev, Manifest{"eval", base.argv, "", {}, 0, {}});
    if (predict_cmd->parsed()) return cmd_predict(pr, Manifest{"predict", base.argv, "", {}, 0, {}});
    if (verify_cmd->parsed()) return cmd_verify(ve, Manifest{"verify", base.argv, "", {}, 0, {}});
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitValidation;
}
