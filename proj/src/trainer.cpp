#include "hds/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hds/autograd.hpp"
#include "hds/config.hpp"
#include "hds/eval.hpp"
#include "hds/util.hpp"

namespace hds {

namespace {

constexpr std::uint64_t kEpochStream = fnv1a64("epoch");
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kPatchStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same_values(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), same_value);
}

}  // namespace

TrainConfig rescaled(const TrainConfig& base, int epochs) {
  TrainConfig c = base;
  const double f = static_cast<double>(epochs) / static_cast<double>(base.epochs);
  auto scale = [f](int e) { return static_cast<int>(std::lround(e * f)); };
  c.epochs = epochs;
  for (int& m : c.lr_milestones) m = scale(m);
  // Keep milestones strictly increasing after rounding.
  for (std::size_t i = 1; i < c.lr_milestones.size(); ++i) {
    c.lr_milestones[i] = std::max(c.lr_milestones[i], c.lr_milestones[i - 1] + 1);
  }
  std::erase_if(c.lr_milestones, [epochs](int m) { return m >= epochs; });
  c.eta_decay_start = scale(base.eta_decay_start);
  c.eta_decay_end = std::max(scale(base.eta_decay_end), c.eta_decay_start);
  return c;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ValueError("train config: " + what); };
  if (!(c.lr0 >= 0)) fail("lr0 must be non-negative");
  if (!(c.momentum >= 0 && c.momentum < 1)) fail("momentum must lie in [0, 1)");
  if (!(c.lr_decay_factor > 0)) fail("lr_decay_factor must be positive");
  if (c.epochs < 1) fail("epochs must be positive");
  if (c.batch_size < 1) fail("batch_size must be positive");
  for (std::size_t i = 0; i < c.lr_milestones.size(); ++i) {
    if (i > 0 && c.lr_milestones[i] <= c.lr_milestones[i - 1]) fail("lr_milestones must be strictly increasing");
    if (c.lr_milestones[i] >= c.epochs) fail("lr_milestones must be below epochs");
  }
  if (c.eta_decay_start < 0 || c.eta_decay_end < c.eta_decay_start) fail("eta decay window is inverted");
  if (c.precision != "float" && c.precision != "double") fail("precision must be float or double");
  if (c.patch_height < 1 || c.patch_width < 1) fail("patch extents must be positive");
  if (!(c.positive_center_prob >= 0 && c.positive_center_prob <= 1)) fail("positive_center_prob outside [0, 1]");
  if (c.val_every < 0) fail("val_every must be non-negative");
  if (!(c.max_grad_norm >= 0)) fail("max_grad_norm must be non-negative");
}

double lr_at_epoch(const TrainConfig& c, int epoch) {
  double lr = c.lr0;
  for (int m : c.lr_milestones) {
    if (m <= epoch) lr *= c.lr_decay_factor;
  }
  return lr;
}

std::vector<double> eta_at_epoch(const LossWeights& w, int epoch, const TrainConfig& c, std::span<const int> levels) {
  std::vector<double> eta = w.eta;
  double t = 0.0;
  if (epoch >= c.eta_decay_end) {
    t = 1.0;
  } else if (epoch > c.eta_decay_start) {
    t = static_cast<double>(epoch - c.eta_decay_start) / static_cast<double>(c.eta_decay_end - c.eta_decay_start);
  }
  for (std::size_t i = 0; i < eta.size(); ++i) {
    const int level = levels.empty() ? static_cast<int>(i) : levels[i];
    if (level == 0) continue;
    eta[i] = t == 1.0 ? w.eta_floor_fraction * w.eta[i] : w.eta[i] * (1.0 - t * (1.0 - w.eta_floor_fraction));
  }
  return eta;
}

template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>> params, std::vector<Vec<Scalar>>& velocity, double lr, double momentum) {
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto& p : params) velocity.push_back(Vec<Scalar>::Zero(p.tensor.size()));
  }
  const auto m = static_cast<Scalar>(momentum);
  const auto step = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& t = params[i].tensor;
    velocity[i] = m * velocity[i] + t.grad();
    t.values() -= step * velocity[i];
  }
}

bool same_results(const EpochRecord& a, const EpochRecord& b) {
  return a.epoch == b.epoch && same_value(a.lr, b.lr) && same_values(a.eta, b.eta) && a.steps == b.steps &&
         same_value(a.total, b.total) && same_value(a.l_seg, b.l_seg) && same_value(a.l_cls, b.l_cls) &&
         same_value(a.reg, b.reg) && same_values(a.seg_per_level, b.seg_per_level) &&
         same_values(a.cls_per_level, b.cls_per_level) && same_value(a.max_reassembly_error, b.max_reassembly_error) &&
         a.validated == b.validated && same_value(a.val_dsc, b.val_dsc) &&
         same_value(a.val_sensitivity, b.val_sensitivity) && same_value(a.val_fpi, b.val_fpi) &&
         same_value(a.val_acc, b.val_acc) && same_value(a.val_auc, b.val_auc) && same_value(a.val_f1, b.val_f1) &&
         same_value(a.val_precision, b.val_precision) && same_value(a.val_recall, b.val_recall);
}

bool TrainLog::same_results(const TrainLog& other) const {
  return records.size() == other.records.size() &&
         std::equal(records.begin(), records.end(), other.records.begin(),
                    [](const EpochRecord& a, const EpochRecord& b) { return hds::same_results(a, b); });
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::size_t levels = records.empty() ? 0 : records.front().eta.size();
  out << "epoch,lr";
  for (std::size_t k = 0; k < levels; ++k) out << ",eta_" << k;
  out << ",steps,total,l_seg,l_cls,reg";
  for (std::size_t k = 0; k < levels; ++k) out << ",seg_" << k;
  for (std::size_t k = 0; k < levels; ++k) out << ",cls_" << k;
  out << ",max_reassembly_error,val_dsc,val_se,val_fpi,val_acc,val_auc,val_f1,val_precision,val_recall,seconds\n";
  out.precision(17);
  auto per_level = [&](const std::vector<double>& v) {
    for (std::size_t k = 0; k < levels; ++k) out << ',' << (k < v.size() ? v[k] : 0.0);
  };
  for (const auto& r : records) {
    out << r.epoch << ',' << r.lr;
    per_level(r.eta);
    out << ',' << r.steps << ',' << r.total << ',' << r.l_seg << ',' << r.l_cls << ',' << r.reg;
    per_level(r.seg_per_level);
    per_level(r.cls_per_level);
    out << ',' << r.max_reassembly_error;
    for (double v : {r.val_dsc, r.val_sensitivity, r.val_fpi, r.val_acc, r.val_auc, r.val_f1, r.val_precision,
                     r.val_recall}) {
      out << ',';
      if (r.validated && !std::isnan(v)) out << v;
    }
    out << ',' << r.seconds << '\n';
  }
}

template <typename Scalar>
Trainer<Scalar>::Trainer(UResNet<Scalar>& model, const std::vector<Sample>& samples, Split train, Split val,
                         TrainConfig config, LossWeights weights)
    : model_(model),
      params_(model.parameters()),
      samples_(samples),
      train_(std::move(train)),
      val_(std::move(val)),
      config_(std::move(config)),
      weights_(std::move(weights)) {
  validate(config_);
  validate(weights_, model_.config.supervision_levels.size());
  if (train_.tag != "train") throw ValueError("trainer: training split must be tagged 'train'");
  if (train_.indices.empty()) throw ValueError("trainer: empty training split");
  stats_ = compute_stats(samples_, train_);
  normalized_.resize(samples_.size());
  auto prepare = [&](const Split& split) {
    for (std::size_t i : split.indices) {
      Sample s = samples_.at(i);
      validate(s);
      s.image = normalize(s.image, stats_);
      normalized_[i] = std::move(s);
    }
  };
  prepare(train_);
  prepare(val_);
  for (std::size_t i : train_.indices) {
    const Sample& s = samples_[i];
    if (s.image.rows() < config_.patch_height || s.image.cols() < config_.patch_width) {
      throw ShapeError("trainer: sample " + s.id + " is smaller than the " + std::to_string(config_.patch_height) +
                       "x" + std::to_string(config_.patch_width) + " patch");
    }
  }
}

template <typename Scalar>
EpochRecord Trainer<Scalar>::run_epoch(int epoch) {
  const auto start = std::chrono::steady_clock::now();
  const RngState epoch_rng = RngState{config_.seed}.fork(kEpochStream).fork(static_cast<std::uint64_t>(epoch));
  const auto& levels = model_.config.supervision_levels;

  EpochRecord r;
  r.epoch = epoch;
  r.lr = lr_at_epoch(config_, epoch);
  r.eta = eta_at_epoch(weights_, epoch, config_, levels);

  std::vector<std::size_t> order = train_.indices;
  RngState shuffle = epoch_rng.fork(kShuffleStream);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

  const std::size_t batch = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t first = 0, step = 0; first < order.size(); first += batch, ++step) {
    std::vector<PatchSample> patches;
    std::vector<int> labels;
    for (std::size_t pos = first; pos < std::min(order.size(), first + batch); ++pos) {
      RngState rng = epoch_rng.fork(kPatchStream).fork(pos);
      PatchSample p = sample_patch(normalized_[order[pos]], rng, config_.patch_height, config_.patch_width,
                                   config_.positive_center_prob);
      if (config_.flip) flip_augment(p.image, p.mask, rng);
      labels.push_back(p.label);
      patches.push_back(std::move(p));
    }
    std::vector<const Image*> images;
    std::vector<const Mask*> masks;
    for (const auto& p : patches) {
      images.push_back(&p.image);
      masks.push_back(&p.mask);
    }
    const Tensor<Scalar> x = images_to_tensor<Scalar>(images);
    const Tensor<Scalar> y = masks_to_tensor<Scalar>(masks);

    model_.zero_grad();
    const HDSOutputs<Scalar> out = forward(model_, x, true, epoch_rng.fork(kDropoutStream).fork(step));
    const LossBreakdown<Scalar> loss = hds_total(out, y, labels, weights_, r.eta, std::span<const Parameter<Scalar>>(params_));
    if (!std::isfinite(loss.total)) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                             ": loss is " + std::to_string(loss.total));
    }
    backward(loss.objective);
    for (const auto& p : params_) {
      if (!p.tensor.grad().allFinite()) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + ": non-finite gradient in " + p.name);
      }
    }
    if (config_.max_grad_norm > 0) {
      double sq = 0.0;
      for (const auto& p : params_) sq += p.tensor.grad().template cast<double>().square().sum();
      const double norm = std::sqrt(sq);
      if (norm > config_.max_grad_norm) {
        const auto scale = static_cast<Scalar>(config_.max_grad_norm / norm);
        for (auto& p : params_) p.tensor.grad() *= scale;
      }
    }
    sgd_step(std::span<Parameter<Scalar>>(params_), velocity_, r.lr, config_.momentum);

    r.total += loss.total;
    r.l_seg += loss.l_seg;
    r.l_cls += loss.l_cls;
    r.reg += loss.reg;
    auto accumulate = [](std::vector<double>& sum, const std::vector<double>& v) {
      if (sum.size() < v.size()) sum.resize(v.size(), 0.0);
      for (std::size_t k = 0; k < v.size(); ++k) sum[k] += v[k];
    };
    accumulate(r.seg_per_level, loss.seg_per_level);
    accumulate(r.cls_per_level, loss.cls_per_level);
    r.max_reassembly_error = std::max(r.max_reassembly_error, loss.reassembly_error(weights_));
    ++r.steps;
  }
  const double n = r.steps;
  r.total /= n;
  r.l_seg /= n;
  r.l_cls /= n;
  r.reg /= n;
  for (double& v : r.seg_per_level) v /= n;
  for (double& v : r.cls_per_level) v /= n;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

template <typename Scalar>
void Trainer<Scalar>::validate_epoch(EpochRecord& r) {
  if (val_.indices.empty()) return;
  const NormStats identity{0.0, 1.0, {}};
  const EvalResult e = evaluate(model_, normalized_, val_.indices, identity);
  r.validated = true;
  r.val_dsc = e.seg.dsc;
  r.val_sensitivity = e.seg.sensitivity;
  r.val_fpi = e.seg.fpi;
  r.val_acc = e.cls.acc;
  r.val_auc = e.cls.auc;
  r.val_f1 = e.cls.f1;
  r.val_precision = e.cls.precision;
  r.val_recall = e.cls.recall;
  double score = has_seg(model_.config.mode) ? r.val_dsc : (std::isnan(r.val_auc) ? r.val_acc : r.val_auc);
  if (std::isnan(score)) score = r.val_acc;
  if (score > best_score_) {
    best_score_ = score;
    best_epoch_ = r.epoch;
    best_values_.clear();
    for (const auto& p : params_) best_values_.push_back(p.tensor.values());
    if (!out_dir_.empty()) save_weights(model_, out_dir_ / "best.hdsw");
  }
}

template <typename Scalar>
void Trainer<Scalar>::run(int until) {
  until = std::min(until, config_.epochs);
  while (next_epoch_ < until) {
    EpochRecord r;
    try {
      r = run_epoch(next_epoch_);
    } catch (const TrainingDiverged&) {
      if (!out_dir_.empty()) save_checkpoint(out_dir_ / "last_good.hdsw");
      throw;
    }
    const bool last = next_epoch_ + 1 == config_.epochs;
    if (last || (config_.val_every > 0 && (next_epoch_ + 1) % config_.val_every == 0)) validate_epoch(r);
    ++next_epoch_;
    log_.records.push_back(r);
    if (on_epoch_) on_epoch_(r);
  }
  if (!out_dir_.empty()) {
    log_.write_csv(out_dir_ / "train_log.csv");
    save_checkpoint(out_dir_ / "last.hdsw");
  }
}

template <typename Scalar>
void Trainer<Scalar>::restore_best() {
  if (best_values_.empty()) return;
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.values() = best_values_[i];
}

namespace {

template <typename Scalar>
nlohmann::json vec_to_json(const Vec<Scalar>& v) {
  return nlohmann::json(std::vector<Scalar>(v.data(), v.data() + v.size()));
}

template <typename Scalar>
Vec<Scalar> vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<Scalar>>();
  return Eigen::Map<const Vec<Scalar>>(values.data(), static_cast<Index>(values.size()));
}

nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); }
double from_nullable(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json record_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"eta", r.eta},
          {"steps", r.steps},
          {"total", r.total},
          {"l_seg", r.l_seg},
          {"l_cls", r.l_cls},
          {"reg", r.reg},
          {"seg_per_level", r.seg_per_level},
          {"cls_per_level", r.cls_per_level},
          {"max_reassembly_error", r.max_reassembly_error},
          {"validated", r.validated},
          {"val", {nullable(r.val_dsc), nullable(r.val_sensitivity), nullable(r.val_fpi), nullable(r.val_acc),
                   nullable(r.val_auc), nullable(r.val_f1), nullable(r.val_precision), nullable(r.val_recall)}},
          {"seconds", r.seconds}};
}

EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.eta = j.at("eta").get<std::vector<double>>();
  r.steps = j.at("steps").get<int>();
  r.total = j.at("total").get<double>();
  r.l_seg = j.at("l_seg").get<double>();
  r.l_cls = j.at("l_cls").get<double>();
  r.reg = j.at("reg").get<double>();
  r.seg_per_level = j.at("seg_per_level").get<std::vector<double>>();
  r.cls_per_level = j.at("cls_per_level").get<std::vector<double>>();
  r.max_reassembly_error = j.at("max_reassembly_error").get<double>();
  r.validated = j.at("validated").get<bool>();
  const auto& v = j.at("val");
  double* fields[] = {&r.val_dsc, &r.val_sensitivity, &r.val_fpi, &r.val_acc,
                      &r.val_auc, &r.val_f1,          &r.val_precision, &r.val_recall};
  for (std::size_t i = 0; i < 8; ++i) *fields[i] = from_nullable(v.at(i));
  r.seconds = j.at("seconds").get<double>();
  return r;
}

}  // namespace

template <typename Scalar>
void Trainer<Scalar>::save_checkpoint(const std::filesystem::path& path) const {
  save_weights(model_, path);
  RunConfig run{model_.config, weights_, config_};
  nlohmann::json side;
  side["config"] = to_json(run);
  side["fingerprint"] = hex64(fingerprint(model_.config));
  side["next_epoch"] = next_epoch_;
  side["rng"] = {{"seed", config_.seed}, {"stream", "epoch"}, {"next_epoch", next_epoch_}};
  side["norm"] = {{"mean", stats_.mean}, {"std", stats_.std}, {"source_ids", stats_.source_ids}};
  side["train_indices"] = train_.indices;
  side["val_indices"] = val_.indices;
  nlohmann::json velocity = nlohmann::json::array();
  for (std::size_t i = 0; i < velocity_.size(); ++i) {
    velocity.push_back({{"name", params_[i].name}, {"values", vec_to_json<Scalar>(velocity_[i])}});
  }
  side["velocity"] = velocity;
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : log_.records) records.push_back(record_to_json(r));
  side["log"] = records;
  side["best"] = {{"score", std::isfinite(best_score_) ? nlohmann::json(best_score_) : nlohmann::json()},
                  {"epoch", best_epoch_}};
  if (!best_values_.empty()) {
    UResNet<Scalar> best = build_model<Scalar>(model_.config, RngState{});
    auto best_params = best.parameters();
    for (std::size_t i = 0; i < best_params.size(); ++i) best_params[i].tensor.values() = best_values_[i];
    save_weights(best, path.string() + ".best");
  }
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string() + ".json");
  out << side.dump(1) << '\n';
}

template <typename Scalar>
void Trainer<Scalar>::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw FormatError("cannot read checkpoint sidecar " + path.string() + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ".json: " + e.what());
  }
  try {
    if (side.at("train_indices").get<std::vector<std::size_t>>() != train_.indices) {
      throw FormatError("checkpoint was trained on a different training split");
    }
    std::vector<Vec<Scalar>> velocity;
    const auto& v = side.at("velocity");
    if (!v.empty() && v.size() != params_.size()) throw FormatError("checkpoint velocity does not match the model");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].at("name").get<std::string>() != params_[i].name) {
        throw FormatError("checkpoint velocity entry " + std::to_string(i) + " names " +
                          v[i].at("name").get<std::string>() + ", model has " + params_[i].name);
      }
      velocity.push_back(vec_from_json<Scalar>(v[i].at("values")));
      if (velocity.back().size() != params_[i].tensor.size()) {
        throw FormatError("checkpoint velocity for " + params_[i].name + " has the wrong size");
      }
    }
    std::vector<Vec<Scalar>> best_values;
    const auto& best = side.at("best");
    const auto best_path = std::filesystem::path(path.string() + ".best");
    if (!best.at("score").is_null() && std::filesystem::exists(best_path)) {
      UResNet<Scalar> holder = build_model<Scalar>(model_.config, RngState{});
      load_weights(holder, best_path);
      for (const auto& p : holder.parameters()) best_values.push_back(p.tensor.values());
    }
    TrainLog log;
    for (const auto& r : side.at("log")) log.records.push_back(record_from_json(r));
    load_weights(model_, path);
    log_ = std::move(log);
    velocity_ = std::move(velocity);
    best_values_ = std::move(best_values);
    best_score_ = best.at("score").is_null() ? -std::numeric_limits<double>::infinity() : best.at("score").get<double>();
    best_epoch_ = best.at("epoch").get<int>();
    next_epoch_ = side.at("next_epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ".json: " + e.what());
  }
}

template void sgd_step<float>(std::span<Parameter<float>>, std::vector<Vec<float>>&, double, double);
template void sgd_step<double>(std::span<Parameter<double>>, std::vector<Vec<double>>&, double, double);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace hds
