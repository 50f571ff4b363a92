#pragma once

#include <span>
#include <vector>

#include "hds/image_io.hpp"

namespace hds {

/// 2|P∩G| / (|P|+|G|), and 1 when both masks are empty.
double dsc(const Mask& pred, const Mask& gt);

/// Pixel-level |P∩G| / |G|. Throws UndefinedMetric for an empty ground truth.
double sensitivity(const Mask& pred, const Mask& gt);

/// Number of 8-connected components in `mask`.
int count_components(const Mask& mask);

/// Predicted 8-connected components with no ground-truth pixel.
int false_positive_components(const Mask& pred, const Mask& gt);
inline double fpi(const Mask& pred, const Mask& gt) { return false_positive_components(pred, gt); }

/// Mann-Whitney estimate of P(s+ > s-) + P(s+ == s-)/2.
/// Throws UndefinedMetric unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct ClsEval {
  double acc = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Confusion-matrix metrics with auc left NaN; valid for single-class input.
ClsEval confusion_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Predictions are score >= threshold.
ClsEval cls_suite(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct SegEval {
  double dsc = 0.0;          // mean over images with a nonempty ground truth
  double sensitivity = 0.0;  // same averaging as dsc
  double fpi = 0.0;          // mean over all images
  int images = 0;
  int massy_images = 0;
};

/// Set-level segmentation metrics. DSC and SE are NaN when no image has a mass.
SegEval seg_suite(std::span<const Mask> preds, std::span<const Mask> gts);

/// Mass-class probability map thresholded with `>=`.
Mask binarize(const Image& probability, double threshold = 0.5);

/// Largest mass probability in a segmentation map, used as the image score.
double seg_to_cls_score(const Image& probability);

}  // namespace hds
