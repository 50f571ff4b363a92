#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hds/data.hpp"
#include "hds/errors.hpp"
#include "hds/loss.hpp"
#include "hds/model.hpp"

namespace hds {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double lr_decay_factor = 0.3;
  std::vector<int> lr_milestones{1000, 1800, 2400, 2410};
  int epochs = 2800;
  int batch_size = 2;
  int eta_decay_start = 1000;
  int eta_decay_end = 2400;
  std::uint64_t seed = 0;
  std::string precision = "float";  // "float" or "double"
  Index patch_height = 512;
  Index patch_width = 384;
  double positive_center_prob = 0.5;
  bool flip = true;
  int val_every = 0;  // validate every k epochs; 0 validates only after the last epoch
  double max_grad_norm = 0.0;  // global gradient-norm clip before the SGD step; 0 disables
};

/// Same schedule shape stretched to `epochs`: milestones and the eta window
/// keep their fractions of the run. Milestones pushed past the end by
/// rounding are dropped.
TrainConfig rescaled(const TrainConfig& base, int epochs);

void validate(const TrainConfig& config);

/// lr0 * decay^(number of milestones <= epoch).
double lr_at_epoch(const TrainConfig& config, int epoch);

/// Level-0 weight stays constant; every other level decays linearly from
/// eta_d at eta_decay_start to floor * eta_d at eta_decay_end. `levels`
/// names the level of each eta entry; empty means entry i is level i.
std::vector<double> eta_at_epoch(const LossWeights& weights, int epoch, const TrainConfig& config,
                                 std::span<const int> levels = {});

/// v <- momentum v + grad; p <- p - lr v. `velocity` is zero-filled on first use.
template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>> params, std::vector<Vec<Scalar>>& velocity, double lr,
              double momentum);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  std::vector<double> eta;
  int steps = 0;
  // Means over the epoch's steps.
  double total = 0.0;
  double l_seg = 0.0;
  double l_cls = 0.0;
  double reg = 0.0;
  std::vector<double> seg_per_level;
  std::vector<double> cls_per_level;
  double max_reassembly_error = 0.0;
  bool validated = false;
  double val_dsc = std::numeric_limits<double>::quiet_NaN();
  double val_sensitivity = std::numeric_limits<double>::quiet_NaN();
  double val_fpi = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();
  double val_f1 = std::numeric_limits<double>::quiet_NaN();
  double val_precision = std::numeric_limits<double>::quiet_NaN();
  double val_recall = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;  // wall clock, excluded from comparisons
};

/// Field-wise equality except wall-clock time; NaN equals NaN.
bool same_results(const EpochRecord& a, const EpochRecord& b);

struct TrainLog {
  std::vector<EpochRecord> records;

  void write_csv(const std::filesystem::path& path) const;
  bool same_results(const TrainLog& other) const;
};

/// Raised when a step produces a non-finite loss or gradient. The model
/// still holds the parameters from before that step.
class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

/// SGD training over patches sampled from `samples[train.indices]`.
/// Normalization statistics come from the training split. Every epoch draws
/// from RNG streams keyed by (seed, epoch), so stopping and resuming from a
/// checkpoint reproduces an uninterrupted run exactly.
template <typename Scalar>
class Trainer {
 public:
  Trainer(UResNet<Scalar>& model, const std::vector<Sample>& samples, Split train, Split val, TrainConfig config,
          LossWeights weights);

  /// Runs epochs [next_epoch(), until).
  void run(int until);
  void run() { run(config_.epochs); }

  int next_epoch() const { return next_epoch_; }
  const TrainLog& log() const { return log_; }
  const NormStats& stats() const { return stats_; }
  const TrainConfig& config() const { return config_; }
  const LossWeights& weights() const { return weights_; }
  double best_score() const { return best_score_; }
  int best_epoch() const { return best_epoch_; }

  /// Copies the best-validation parameters into the model (no-op if none).
  void restore_best();

  /// Weights at `path`, sidecar JSON at `path` + ".json`, best weights at
  /// `path` + ".best" when a validation has happened.
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores weights, velocity, epoch counter and best state. The
  /// architecture fingerprint and training split must match.
  void load_checkpoint(const std::filesystem::path& path);

  /// When set, the log CSV and last/best checkpoints are kept here.
  void set_output_dir(std::filesystem::path dir) { out_dir_ = std::move(dir); }
  void set_epoch_callback(std::function<void(const EpochRecord&)> cb) { on_epoch_ = std::move(cb); }

 private:
  EpochRecord run_epoch(int epoch);
  void validate_epoch(EpochRecord& record);

  UResNet<Scalar>& model_;
  std::vector<Parameter<Scalar>> params_;
  const std::vector<Sample>& samples_;
  std::vector<Sample> normalized_;  // same indexing as samples_, train and val entries filled
  Split train_;
  Split val_;
  TrainConfig config_;
  LossWeights weights_;
  NormStats stats_;
  std::vector<Vec<Scalar>> velocity_;
  int next_epoch_ = 0;
  TrainLog log_;
  double best_score_ = -std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  std::vector<Vec<Scalar>> best_values_;
  std::filesystem::path out_dir_;
  std::function<void(const EpochRecord&)> on_epoch_;
};

}  // namespace hds
