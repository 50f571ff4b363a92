#include "hds/eval.hpp"

#include <algorithm>

#include "hds/errors.hpp"
#include "hds/ops.hpp"

namespace hds {

double ImagePrediction::score() const { return std::isnan(cls_score) ? seg_score : cls_score; }

template <typename Scalar>
ImagePrediction predict(const UResNet<Scalar>& model, const Image& image) {
  NoGradGuard no_grad;
  const std::vector<const Image*> batch{&image};
  const HDSOutputs<Scalar> out = forward(model, images_to_tensor<Scalar>(batch), false, RngState{});
  ImagePrediction p;
  p.shapes = infer_output_shapes(model.config, image.rows(), image.cols());
  if (!out.seg_logits.empty()) {
    const Tensor<Scalar> prob = softmax_channels(out.seg_logits.front());
    const Index plane = image.size();
    p.mass_probability = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                             prob.data() + plane, image.rows(), image.cols())
                             .template cast<float>();
    p.mask = binarize(p.mass_probability);
    p.seg_score = seg_to_cls_score(p.mass_probability);
  }
  if (!out.cls_maps.empty()) {
    p.cls_score = static_cast<double>(out.cls_maps.front().values().maxCoeff());
  }
  return p;
}

template <typename Scalar>
EvalResult evaluate(const UResNet<Scalar>& model, const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices, const NormStats& stats, bool keep_predictions) {
  EvalResult r;
  std::vector<Mask> preds, gts;
  std::vector<double> seg_scores;
  for (std::size_t i : indices) {
    const Sample& s = samples.at(i);
    ImagePrediction p = predict(model, normalize(s.image, stats));
    r.scores.push_back(p.score());
    r.labels.push_back(s.label);
    if (p.mask.size() != 0) {
      preds.push_back(p.mask);
      gts.push_back(s.mask);
      seg_scores.push_back(p.seg_score);
    }
    if (keep_predictions) r.predictions.push_back(std::move(p));
  }
  const bool both_classes = std::count(r.labels.begin(), r.labels.end(), 1) > 0 &&
                            std::count(r.labels.begin(), r.labels.end(), 0) > 0;
  auto suite = [&](const std::vector<double>& scores) {
    return both_classes ? cls_suite(scores, r.labels) : confusion_metrics(scores, r.labels);
  };
  if (!indices.empty()) r.cls = suite(r.scores);
  if (!preds.empty()) {
    r.seg = seg_suite(preds, gts);
    r.seg_cls = suite(seg_scores);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.seg.dsc = r.seg.sensitivity = r.seg.fpi = nan;
  }
  return r;
}

namespace {

Mask boundary(const Mask& m) {
  Mask b = Mask::Zero(m.rows(), m.cols());
  for (Index y = 0; y < m.rows(); ++y) {
    for (Index x = 0; x < m.cols(); ++x) {
      if (!m(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == m.rows() || x + 1 == m.cols() || !m(y - 1, x) ||
                        !m(y + 1, x) || !m(y, x - 1) || !m(y, x + 1);
      b(y, x) = edge;
    }
  }
  return b;
}

}  // namespace

RgbImage render_overlay(const Image& image, const Mask& gt, const Mask& pred) {
  if (gt.rows() != image.rows() || gt.cols() != image.cols() || pred.rows() != image.rows() ||
      pred.cols() != image.cols()) {
    throw ShapeError("render_overlay: image and masks differ in extent");
  }
  RgbImage out(static_cast<int>(image.rows()), static_cast<int>(image.cols()));
  const Mask gb = boundary(gt), pb = boundary(pred);
  for (Index y = 0; y < image.rows(); ++y) {
    for (Index x = 0; x < image.cols(); ++x) {
      std::uint8_t* px = out.at(static_cast<int>(y), static_cast<int>(x));
      const auto g = static_cast<std::uint8_t>(std::clamp(image(y, x), 0.0f, 1.0f) * 255.0f + 0.5f);
      px[0] = px[1] = px[2] = g;
      if (gb(y, x) || pb(y, x)) {
        px[0] = gb(y, x) ? 255 : 0;
        px[1] = pb(y, x) ? 255 : 0;
        px[2] = 0;
      }
    }
  }
  return out;
}

Image reflect_pad(const Image& image, Index divisor) {
  const Index h = image.rows(), w = image.cols();
  const Index ph = (h + divisor - 1) / divisor * divisor, pw = (w + divisor - 1) / divisor * divisor;
  if (ph - h >= h || pw - w >= w) {
    throw ShapeError("reflect_pad: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " too small to reflect up to " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  auto reflect = [](Index i, Index n) { return i < n ? i : 2 * n - 2 - i; };
  Image out(ph, pw);
  for (Index y = 0; y < ph; ++y) {
    for (Index x = 0; x < pw; ++x) out(y, x) = image(reflect(y, h), reflect(x, w));
  }
  return out;
}

template ImagePrediction predict<float>(const UResNet<float>&, const Image&);
template ImagePrediction predict<double>(const UResNet<double>&, const Image&);
template EvalResult evaluate<float>(const UResNet<float>&, const std::vector<Sample>&, std::span<const std::size_t>,
                                    const NormStats&, bool);
template EvalResult evaluate<double>(const UResNet<double>&, const std::vector<Sample>&,
                                     std::span<const std::size_t>, const NormStats&, bool);

}  // namespace hds
