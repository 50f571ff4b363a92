#include "hds/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hds/errors.hpp"

namespace hds {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": mask extents differ (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

Eigen::Index count(const Mask& m) { return (m.array() != 0).count(); }

Eigen::Index overlap(const Mask& a, const Mask& b) { return ((a.array() != 0) && (b.array() != 0)).count(); }

struct DisjointSets {
  std::vector<Eigen::Index> parent;
  explicit DisjointSets(Eigen::Index n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
  }
  Eigen::Index find(Eigen::Index i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(Eigen::Index a, Eigen::Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Union-find labels; -1 marks background. Labels are component roots.
std::vector<Eigen::Index> label_components(const Mask& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  DisjointSets sets(h * w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const Eigen::Index i = y * w + x;
      // Already-visited neighbours: W, NW, N, NE.
      if (x > 0 && mask(y, x - 1)) sets.unite(i, i - 1);
      if (y > 0) {
        if (x > 0 && mask(y - 1, x - 1)) sets.unite(i, i - w - 1);
        if (mask(y - 1, x)) sets.unite(i, i - w);
        if (x + 1 < w && mask(y - 1, x + 1)) sets.unite(i, i - w + 1);
      }
    }
  }
  std::vector<Eigen::Index> labels(static_cast<std::size_t>(h * w), -1);
  for (Eigen::Index i = 0; i < h * w; ++i) {
    if (mask.data()[i]) labels[static_cast<std::size_t>(i)] = sets.find(i);
  }
  return labels;
}

}  // namespace

double dsc(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "dsc");
  const auto denom = count(pred) + count(gt);
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap(pred, gt)) / static_cast<double>(denom);
}

double sensitivity(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "sensitivity");
  const auto g = count(gt);
  if (g == 0) throw UndefinedMetric("sensitivity: ground truth has no positive pixel");
  return static_cast<double>(overlap(pred, gt)) / static_cast<double>(g);
}

int count_components(const Mask& mask) {
  const auto labels = label_components(mask);
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) n += labels[i] == static_cast<Eigen::Index>(i);
  return n;
}

int false_positive_components(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "fpi");
  const auto labels = label_components(pred);
  std::vector<char> hit(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && gt.data()[i]) hit[static_cast<std::size_t>(labels[i])] = 1;
  }
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    n += labels[i] == static_cast<Eigen::Index>(i) && !hit[i];
  }
  return n;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0, negatives = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw ValueError("roc_auc: labels must be 0 or 1");
      if (y == 1) {
        positives += 1;
        rank_sum += mid_rank;
      } else {
        negatives += 1;
      }
    }
    i = j;
  }
  if (positives == 0 || negatives == 0) throw UndefinedMetric("roc_auc: needs both classes");
  return (rank_sum - positives * (positives + 1) / 2) / (positives * negatives);
}

ClsEval confusion_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValueError("cls_suite: threshold must lie in (0, 1)");
  if (scores.size() != labels.size()) throw ShapeError("cls_suite: scores and labels differ in length");
  ClsEval e;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] == 1;
    if (labels[i] != 0 && labels[i] != 1) throw ValueError("cls_suite: labels must be 0 or 1");
    (predicted ? (actual ? e.tp : e.fp) : (actual ? e.fn : e.tn)) += 1;
  }
  const double n = static_cast<double>(scores.size());
  e.acc = n > 0 ? (e.tp + e.tn) / n : 0.0;
  e.precision = e.tp + e.fp > 0 ? static_cast<double>(e.tp) / (e.tp + e.fp) : 0.0;
  e.recall = e.tp + e.fn > 0 ? static_cast<double>(e.tp) / (e.tp + e.fn) : 0.0;
  e.f1 = e.precision + e.recall > 0 ? 2 * e.precision * e.recall / (e.precision + e.recall) : 0.0;
  e.auc = std::numeric_limits<double>::quiet_NaN();
  return e;
}

ClsEval cls_suite(std::span<const double> scores, std::span<const int> labels, double threshold) {
  ClsEval e = confusion_metrics(scores, labels, threshold);
  e.auc = roc_auc(scores, labels);
  return e;
}

SegEval seg_suite(std::span<const Mask> preds, std::span<const Mask> gts) {
  if (preds.size() != gts.size()) throw ShapeError("seg_suite: prediction and ground-truth counts differ");
  SegEval e;
  double dsc_sum = 0, se_sum = 0, fp_sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    fp_sum += fpi(preds[i], gts[i]);
    if (count(gts[i]) == 0) continue;
    dsc_sum += dsc(preds[i], gts[i]);
    se_sum += sensitivity(preds[i], gts[i]);
    ++e.massy_images;
  }
  e.images = static_cast<int>(preds.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  e.dsc = e.massy_images ? dsc_sum / e.massy_images : nan;
  e.sensitivity = e.massy_images ? se_sum / e.massy_images : nan;
  e.fpi = e.images ? fp_sum / e.images : 0.0;
  return e;
}

Mask binarize(const Image& probability, double threshold) {
  return (probability.array() >= static_cast<float>(threshold)).cast<std::uint8_t>();
}

double seg_to_cls_score(const Image& probability) {
  if (probability.size() == 0) throw ShapeError("seg_to_cls_score: empty map");
  return static_cast<double>(probability.maxCoeff());
}

}  // namespace hds
