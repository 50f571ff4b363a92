#include "hds/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hds/errors.hpp"

namespace hds {

namespace {

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Bilinearly interpolated lattice of uniform values in [-1, 1]: a cheap
// band-limited texture.
Image value_noise(Index height, Index width, int cells_y, int cells_x, RngState& rng) {
  Eigen::MatrixXd lattice(cells_y + 1, cells_x + 1);
  for (Index i = 0; i < lattice.size(); ++i) lattice.data()[i] = rng.uniform(-1.0, 1.0);
  Image out(height, width);
  for (Index y = 0; y < height; ++y) {
    const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(height) * cells_y;
    const auto y0 = std::min<Index>(static_cast<Index>(gy), cells_y - 1);
    const double ty = smoothstep(gy - static_cast<double>(y0));
    for (Index x = 0; x < width; ++x) {
      const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(width) * cells_x;
      const auto x0 = std::min<Index>(static_cast<Index>(gx), cells_x - 1);
      const double tx = smoothstep(gx - static_cast<double>(x0));
      const double top = (1 - tx) * lattice(y0, x0) + tx * lattice(y0, x0 + 1);
      const double bottom = (1 - tx) * lattice(y0 + 1, x0) + tx * lattice(y0 + 1, x0 + 1);
      out(y, x) = static_cast<float>((1 - ty) * top + ty * bottom);
    }
  }
  return out;
}

struct Bump {
  double cy, cx, sigma, amplitude;
};

// Grows one mass into `mask`/`image`. Returns false if the blob would push
// the total mass area over `max_area`.
bool add_mass(Image& image, Mask& mask, double cy, double cx, double radius, Index max_area,
              RngState& rng) {
  const Index height = image.rows(), width = image.cols();
  std::vector<Bump> bumps(2 + rng.below(3));
  for (auto& b : bumps) {
    b.cy = cy + 0.35 * radius * rng.normal();
    b.cx = cx + 0.35 * radius * rng.normal();
    b.sigma = radius * rng.uniform(0.45, 0.7);
    b.amplitude = rng.uniform(0.7, 1.0);
  }
  const auto span = static_cast<Index>(std::ceil(2.5 * radius));
  const Index y0 = std::max<Index>(0, static_cast<Index>(cy) - span);
  const Index y1 = std::min<Index>(height, static_cast<Index>(cy) + span + 1);
  const Index x0 = std::max<Index>(0, static_cast<Index>(cx) - span);
  const Index x1 = std::min<Index>(width, static_cast<Index>(cx) + span + 1);
  Eigen::MatrixXd field = Eigen::MatrixXd::Zero(y1 - y0, x1 - x0);
  for (Index y = y0; y < y1; ++y) {
    for (Index x = x0; x < x1; ++x) {
      double f = 0.0;
      for (const auto& b : bumps) {
        const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
        f += b.amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
      }
      field(y - y0, x - x0) = f;
    }
  }
  Index peak_y = 0, peak_x = 0;
  const double peak = field.maxCoeff(&peak_y, &peak_x);
  if (!(peak > 0.0)) return false;
  const double level = 0.5 * peak;

  // Connected (4-neighbour) component of {field >= level} containing the peak.
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> inside =
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(field.rows(), field.cols());
  std::vector<std::pair<Index, Index>> stack{{peak_y, peak_x}}, region;
  inside(peak_y, peak_x) = 1;
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    region.emplace_back(y, x);
    const Index ny[4] = {y - 1, y + 1, y, y};
    const Index nx[4] = {x, x, x - 1, x + 1};
    for (int k = 0; k < 4; ++k) {
      if (ny[k] < 0 || nx[k] < 0 || ny[k] >= field.rows() || nx[k] >= field.cols()) continue;
      if (inside(ny[k], nx[k]) || field(ny[k], nx[k]) < level) continue;
      inside(ny[k], nx[k]) = 1;
      stack.emplace_back(ny[k], nx[k]);
    }
  }
  Index added = 0;
  for (const auto& [y, x] : region) added += mask(y + y0, x + x0) == 0;
  if (mask.cast<Index>().sum() + added > max_area) return false;

  const double contrast = rng.uniform(0.25, 0.4);
  for (const auto& [y, x] : region) {
    mask(y + y0, x + x0) = 1;
    image(y + y0, x + x0) += static_cast<float>(contrast * (0.55 + 0.45 * field(y, x) / peak));
  }
  return true;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

bool mask_nonempty(const Mask& mask) { return (mask.array() != 0).any(); }

void validate(const Sample& s) {
  if (s.image.rows() != s.mask.rows() || s.image.cols() != s.mask.cols()) {
    throw ShapeError("sample " + s.id + ": image and mask extents differ");
  }
  if (s.label != 0 && s.label != 1) throw ValueError("sample " + s.id + ": label must be 0 or 1");
  if (s.label != static_cast<int>(mask_nonempty(s.mask))) {
    throw ValueError("sample " + s.id + ": label disagrees with mask");
  }
}

SynthConfig desk_synth() {
  SynthConfig c;
  c.height = 512;
  c.width = 256;
  c.radius_min = 20.0;
  c.radius_max = 40.0;
  return c;
}

Sample generate_one(const SynthConfig& config, int index) {
  const Index height = config.height, width = config.width;
  RngState rng = RngState{config.seed}.fork(static_cast<std::uint64_t>(index));

  const auto blank = static_cast<Index>(std::floor(rng.uniform(0.0, config.max_blank_fraction) * static_cast<double>(width)));
  const bool blank_left = rng.bernoulli(0.5);
  const Index tx0 = blank_left ? blank : 0;
  const Index tx1 = blank_left ? width : width - blank;

  const Image coarse = value_noise(height, width, 8, 4, rng);
  const Image fine = value_noise(height, width, 24, 12, rng);
  Sample s;
  s.image = Image::Zero(height, width);
  const double edge = 0.15 * static_cast<double>(width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = tx0; x < tx1; ++x) {
      // The skin line sits on the side opposite the chest wall.
      const double to_skin = blank_left ? static_cast<double>(x - tx0) : static_cast<double>(tx1 - 1 - x);
      const double falloff = 0.6 + 0.4 * smoothstep(to_skin / edge);
      const double v = falloff * (0.4 + 0.12 * coarse(y, x) + 0.05 * fine(y, x)) + 0.02 * rng.normal();
      s.image(y, x) = static_cast<float>(std::clamp(v, 0.05, 1.0));
    }
  }
  s.mask = Mask::Zero(height, width);

  if (rng.bernoulli(config.mass_probability)) {
    const int masses = config.min_masses +
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_masses - config.min_masses + 1)));
    const auto max_area = static_cast<Index>(config.max_mass_area_fraction * static_cast<double>(height * width));
    for (int m = 0; m < masses; ++m) {
      double radius = rng.uniform(config.radius_min, config.radius_max);
      for (int attempt = 0; attempt < 20; ++attempt) {
        const double margin = radius + 2.0;
        const double ylo = margin, yhi = static_cast<double>(height) - margin;
        const double xlo = static_cast<double>(tx0) + margin, xhi = static_cast<double>(tx1) - margin;
        const double cy = ylo < yhi ? rng.uniform(ylo, yhi) : 0.5 * static_cast<double>(height);
        const double cx = xlo < xhi ? rng.uniform(xlo, xhi) : 0.5 * static_cast<double>(tx0 + tx1);
        if (add_mass(s.image, s.mask, cy, cx, radius, max_area, rng)) break;
        radius *= 0.8;
      }
    }
    s.image = s.image.cwiseMin(1.0f);
  }
  s.label = mask_nonempty(s.mask) ? 1 : 0;
  char id[32];
  std::snprintf(id, sizeof(id), "syn_%05d", index);
  s.id = id;
  s.provenance = "synthetic:seed=" + std::to_string(config.seed) + ",index=" + std::to_string(index);
  return s;
}

std::vector<Sample> generate_synthetic(const SynthConfig& config) {
  if (config.count < 0) throw ValueError("synth: count must be non-negative");
  if (config.height < 1 || config.width < 1) throw ValueError("synth: size must be positive");
  if (config.min_masses < 1 || config.max_masses < config.min_masses) throw ValueError("synth: bad masses_per_image range");
  if (!(config.radius_min > 0 && config.radius_max >= config.radius_min)) throw ValueError("synth: bad radius range");
  if (!(config.mass_probability >= 0 && config.mass_probability <= 1)) throw ValueError("synth: mass_probability outside [0, 1]");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(config.count));
  for (int i = 0; i < config.count; ++i) out.push_back(generate_one(config, i));
  return out;
}

CropResult crop_blank(const Image& image, double fraction) {
  CropResult r;
  r.image = image;
  r.right = image.cols();
  if (image.size() == 0) {
    r.fully_blank = true;
    return r;
  }
  const float lo = image.minCoeff(), hi = image.maxCoeff();
  if (!(hi > lo)) {
    r.fully_blank = true;
    return r;
  }
  const float threshold = lo + static_cast<float>(fraction) * (hi - lo);
  const Eigen::RowVectorXf colmax = image.colwise().maxCoeff();
  Index left = 0, right = image.cols();
  while (left < right && colmax(left) < threshold) ++left;
  while (right > left && colmax(right - 1) < threshold) --right;
  r.left = left;
  r.right = right;
  r.image = image.middleCols(left, right - left);
  return r;
}

Sample crop_blank(const Sample& sample, double fraction) {
  const CropResult c = crop_blank(sample.image, fraction);
  Sample out = sample;
  out.image = c.image;
  out.mask = sample.mask.middleCols(c.left, c.right - c.left);
  out.label = mask_nonempty(out.mask) ? 1 : 0;
  return out;
}

Image resize_image(const Image& image, Index height, Index width) {
  if (height < 1 || width < 1) throw ValueError("resize: target extents must be positive");
  auto taps = [](Index in, Index out) {
    std::vector<std::tuple<Index, Index, float>> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<Index>(std::floor(src));
      const Index i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
    }
    return t;
  };
  const auto rows = taps(image.rows(), height);
  const auto cols = taps(image.cols(), width);
  Image out(height, width);
  for (Index y = 0; y < height; ++y) {
    const auto [r0, r1, wr] = rows[static_cast<std::size_t>(y)];
    for (Index x = 0; x < width; ++x) {
      const auto [c0, c1, wc] = cols[static_cast<std::size_t>(x)];
      const float top = (1 - wc) * image(r0, c0) + wc * image(r0, c1);
      const float bottom = (1 - wc) * image(r1, c0) + wc * image(r1, c1);
      out(y, x) = (1 - wr) * top + wr * bottom;
    }
  }
  return out;
}

Mask resize_mask(const Mask& mask, Index height, Index width) {
  if (height < 1 || width < 1) throw ValueError("resize: target extents must be positive");
  Mask out(height, width);
  for (Index y = 0; y < height; ++y) {
    const Index sy = std::min<Index>(mask.rows() - 1, (2 * y + 1) * mask.rows() / (2 * height));
    for (Index x = 0; x < width; ++x) {
      const Index sx = std::min<Index>(mask.cols() - 1, (2 * x + 1) * mask.cols() / (2 * width));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

Sample resize_to(const Sample& sample, Index height, Index width) {
  Sample out = sample;
  if (sample.image.rows() != height || sample.image.cols() != width) {
    out.image = resize_image(sample.image, height, width);
    out.mask = resize_mask(sample.mask, height, width);
  }
  out.label = mask_nonempty(out.mask) ? 1 : 0;
  return out;
}

NormStats compute_stats(const std::vector<Sample>& samples, const Split& split) {
  if (split.tag != "train") {
    throw ValueError("compute_stats: statistics must come from the training split, got '" + split.tag + "'");
  }
  if (split.indices.empty()) throw ValueError("compute_stats: empty training split");
  NormStats stats;
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t i : split.indices) {
    const Sample& s = samples.at(i);
    sum += s.image.cast<double>().sum();
    count += static_cast<double>(s.image.size());
    stats.source_ids.push_back(s.id);
  }
  stats.mean = sum / count;
  double sq = 0.0;
  for (std::size_t i : split.indices) {
    sq += (samples[i].image.cast<double>().array() - stats.mean).square().sum();
  }
  stats.std = std::sqrt(sq / count);
  if (!(stats.std > 0.0)) throw ValueError("compute_stats: training split has zero variance");
  return stats;
}

Image normalize(const Image& image, const NormStats& stats) {
  if (!(stats.std > 0.0)) throw ValueError("normalize: std must be positive");
  return ((image.cast<double>().array() - stats.mean) / stats.std).cast<float>().matrix();
}

PatchSample sample_patch(const Sample& sample, RngState& rng, Index patch_h, Index patch_w,
                         double positive_center_prob) {
  const Index height = sample.image.rows(), width = sample.image.cols();
  if (patch_h % 128 != 0 || patch_w % 128 != 0 || patch_h < 1 || patch_w < 1) {
    throw ShapeError("sample_patch: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " must be a positive multiple of 128");
  }
  if (patch_h > height || patch_w > width) {
    throw ShapeError("sample_patch: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " larger than image " + std::to_string(height) + "x" + std::to_string(width));
  }
  PatchSample p;
  const Index positives = sample.mask.cast<Index>().sum();
  if (positives > 0 && rng.bernoulli(positive_center_prob)) {
    auto pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(positives)));
    Index cy = 0, cx = 0;
    for (Index i = 0; i < sample.mask.size(); ++i) {
      if (sample.mask.data()[i] && pick-- == 0) {
        cy = i / width;
        cx = i % width;
        break;
      }
    }
    p.top = std::clamp<Index>(cy - patch_h / 2, 0, height - patch_h);
    p.left = std::clamp<Index>(cx - patch_w / 2, 0, width - patch_w);
    p.positive_centered = true;
  } else {
    p.top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(height - patch_h + 1)));
    p.left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(width - patch_w + 1)));
  }
  p.image = sample.image.block(p.top, p.left, patch_h, patch_w);
  p.mask = sample.mask.block(p.top, p.left, patch_h, patch_w);
  p.label = mask_nonempty(p.mask) ? 1 : 0;
  return p;
}

void flip_horizontal(Image& image, Mask& mask) {
  image.rowwise().reverseInPlace();
  mask.rowwise().reverseInPlace();
}

void flip_vertical(Image& image, Mask& mask) {
  image.colwise().reverseInPlace();
  mask.colwise().reverseInPlace();
}

void flip_augment(Image& image, Mask& mask, RngState& rng) {
  if (rng.bernoulli(0.5)) flip_vertical(image, mask);
  if (rng.bernoulli(0.5)) flip_horizontal(image, mask);
}

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, int k, std::uint64_t seed) {
  if (k < 3) throw ValueError("split_kfold: k must be at least 3");
  if (n < static_cast<std::size_t>(k)) {
    throw ValueError("split_kfold: " + std::to_string(n) + " items cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngState rng{seed};
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  const std::size_t base = n / static_cast<std::size_t>(k), extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

std::vector<Fold> split_kfold(std::size_t n, int k, std::uint64_t seed) {
  const auto folds = kfold_partition(n, k, seed);
  std::vector<Fold> out;
  for (int i = 0; i < k; ++i) {
    Fold f{{"train", {}}, {"val", {}}, {"test", {}}};
    f.test.indices = folds[static_cast<std::size_t>(i)];
    f.val.indices = folds[static_cast<std::size_t>((i + 1) % k)];
    for (int j = 0; j < k; ++j) {
      if (j == i || j == (i + 1) % k) continue;
      const auto& src = folds[static_cast<std::size_t>(j)];
      f.train.indices.insert(f.train.indices.end(), src.begin(), src.end());
    }
    std::sort(f.train.indices.begin(), f.train.indices.end());
    out.push_back(std::move(f));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw FormatError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,image_path,mask_path,label\n";
  for (const auto& s : samples) {
    validate(s);
    if (s.id.find(',') != std::string::npos) throw ValueError("sample id may not contain commas: " + s.id);
    const std::string image_rel = "images/" + s.id + ".png";
    const std::string mask_rel = "masks/" + s.id + ".png";
    write_png_gray16(dir / image_rel, s.image);
    write_png_mask(dir / mask_rel, s.mask);
    manifest << s.id << ',' << image_rel << ',' << mask_rel << ',' << s.label << '\n';
  }
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.csv";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot read " + manifest_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,image_path,mask_path,label") {
    throw FormatError(manifest_path.string() + ": expected header 'id,image_path,mask_path,label'");
  }
  std::vector<Sample> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(row) + ": expected 4 fields");
    }
    Sample s;
    s.id = fields[0];
    const std::filesystem::path image_path = std::filesystem::path(fields[1]).is_absolute() ? std::filesystem::path(fields[1]) : dir / fields[1];
    const std::filesystem::path mask_path = std::filesystem::path(fields[2]).is_absolute() ? std::filesystem::path(fields[2]) : dir / fields[2];
    s.image = read_png_gray(image_path);
    s.mask = read_png_mask(mask_path);
    if (fields[3] != "0" && fields[3] != "1") {
      throw FormatError(manifest_path.string() + ":" + std::to_string(row) + ": label must be 0 or 1");
    }
    s.label = fields[3] == "1" ? 1 : 0;
    s.provenance = image_path.string();
    try {
      validate(s);
    } catch (const std::exception& e) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const Index h = images[0]->rows(), w = images[0]->cols();
  Tensor<Scalar> t(Shape{static_cast<Index>(images.size()), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->rows() != h || images[n]->cols() != w) throw ShapeError("images_to_tensor: ragged batch");
    t.values().segment(static_cast<Index>(n) * h * w, h * w) =
        Eigen::Map<const Eigen::ArrayXf>(images[n]->data(), h * w).template cast<Scalar>();
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> masks_to_tensor(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ShapeError("masks_to_tensor: empty batch");
  const Index h = masks[0]->rows(), w = masks[0]->cols();
  Tensor<Scalar> t(Shape{static_cast<Index>(masks.size()), h, w});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->rows() != h || masks[n]->cols() != w) throw ShapeError("masks_to_tensor: ragged batch");
    for (Index i = 0; i < h * w; ++i) {
      t.values()[static_cast<Index>(n) * h * w + i] = masks[n]->data()[i] ? Scalar(1) : Scalar(0);
    }
  }
  return t;
}

template Tensor<float> images_to_tensor<float>(const std::vector<const Image*>&);
template Tensor<double> images_to_tensor<double>(const std::vector<const Image*>&);
template Tensor<float> masks_to_tensor<float>(const std::vector<const Mask*>&);
template Tensor<double> masks_to_tensor<double>(const std::vector<const Mask*>&);

}  // namespace hds
