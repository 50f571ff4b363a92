#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "hds/data.hpp"
#include "hds/metrics.hpp"
#include "hds/model.hpp"

namespace hds {

/// Whole-image inference result taken from the finest supervised level.
struct ImagePrediction {
  Image mass_probability;  // softmax mass channel; empty without seg heads
  Mask mask;               // mass_probability >= 0.5
  double cls_score = std::numeric_limits<double>::quiet_NaN();  // max of the cls map
  double seg_score = std::numeric_limits<double>::quiet_NaN();  // max of mass_probability
  std::vector<LevelShapes> shapes;

  /// The image-level score: cls_score when a cls head exists, else seg_score.
  double score() const;
};

/// `image` must already be normalized; dropout is off.
template <typename Scalar>
ImagePrediction predict(const UResNet<Scalar>& model, const Image& image);

struct EvalResult {
  SegEval seg;              // NaN fields without seg heads
  ClsEval cls;              // from score(); auc NaN for single-class sets
  std::optional<ClsEval> seg_cls;  // from seg_score when seg heads exist
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<ImagePrediction> predictions;  // filled when requested
};

/// Runs predict() on samples[indices] after normalizing with `stats`.
template <typename Scalar>
EvalResult evaluate(const UResNet<Scalar>& model, const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices, const NormStats& stats,
                    bool keep_predictions = false);

/// Gray rendering of `image` ([0,1]) with ground-truth boundaries in red and
/// predicted boundaries in green (yellow where they coincide).
RgbImage render_overlay(const Image& image, const Mask& gt, const Mask& pred);

/// Reflect-pads to the next multiple of `divisor` on the bottom and right.
Image reflect_pad(const Image& image, Index divisor);

}  // namespace hds
