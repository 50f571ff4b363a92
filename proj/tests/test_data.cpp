#include "doctest.h"

#include <algorithm>
#include <set>

#include "hds/data.hpp"
#include "test_util.hpp"

using namespace hds;
using hds::test::TempDir;

namespace {

SynthConfig small_synth(int count, double mass_probability, std::uint64_t seed = 0) {
  SynthConfig c = desk_synth();
  c.count = count;
  c.mass_probability = mass_probability;
  c.seed = seed;
  return c;
}

Sample blank_sample(Index h, Index w) {
  Sample s;
  s.image = Image::Constant(h, w, 0.5f);
  s.mask = Mask::Zero(h, w);
  s.id = "blank";
  return s;
}

}  // namespace

TEST_CASE("synthetic generator respects the mass probability extremes") {
  for (const auto& s : generate_synthetic(small_synth(10, 0.0))) {
    CHECK(s.label == 0);
    CHECK_FALSE(mask_nonempty(s.mask));
    CHECK_NOTHROW(validate(s));
  }
  for (const auto& s : generate_synthetic(small_synth(10, 1.0))) {
    CHECK(s.label == 1);
    CHECK(mask_nonempty(s.mask));
    CHECK(s.image.rows() == 512);
    CHECK(s.image.cols() == 256);
    CHECK(s.image.minCoeff() >= 0.0f);
    CHECK(s.image.maxCoeff() <= 1.0f);
  }
}

TEST_CASE("synthetic positive fraction concentrates around the mass probability") {
  SynthConfig c = small_synth(500, 0.26, 3);
  c.height = 256;
  c.width = 128;
  c.radius_min = 6;
  c.radius_max = 12;
  int pos = 0;
  for (const auto& s : generate_synthetic(c)) pos += s.label;
  CHECK(pos >= 100);
  CHECK(pos <= 160);
}

TEST_CASE("synthetic samples are a pure function of seed and index") {
  SynthConfig c = small_synth(3, 0.5, 11);
  auto all = generate_synthetic(c);
  Sample one = generate_one(c, 2);
  CHECK(one.image == all[2].image);
  CHECK(one.mask == all[2].mask);
  c.seed = 12;
  CHECK_FALSE(generate_one(c, 2).image == all[2].image);
  c.count = -1;
  CHECK_THROWS_AS(generate_synthetic(c), ValueError);
}

TEST_CASE("crop_blank trims edge columns only") {
  Image img = Image::Zero(64, 300);
  img.leftCols(200).setConstant(0.7f);
  img(10, 20) = 1.0f;
  auto r = crop_blank(img);
  CHECK(r.image.cols() == 200);
  CHECK(r.left == 0);
  CHECK(r.right == 200);

  Image full = (Image::Random(64, 100).array() * 0.3f + 0.6f).matrix();
  full(5, 50) = 0.0f;
  CHECK(crop_blank(full).image.cols() == 100);

  auto blank = crop_blank(Image::Zero(8, 8).eval());
  CHECK(blank.fully_blank);
  CHECK(blank.image.cols() == 8);

  Image gap = Image::Constant(16, 30, 0.6f);
  gap.middleCols(10, 5).setZero();
  gap.leftCols(3).setZero();
  auto g = crop_blank(gap);
  CHECK(g.left == 3);
  CHECK(g.image.cols() == 27);
}

TEST_CASE("resize") {
  Sample s = generate_one(small_synth(1, 1.0), 0);
  Sample same = resize_to(s, 512, 256);
  CHECK(same.mask == s.mask);
  CHECK((same.image - s.image).cwiseAbs().maxCoeff() < 1e-6f);

  Image c = Image::Constant(30, 20, 0.25f);
  Image big = resize_image(c, 64, 48);
  CHECK(big.rows() == 64);
  CHECK((big.array() - 0.25f).abs().maxCoeff() < 1e-6f);
  CHECK_THROWS_AS(resize_image(c, 0, 10), ValueError);

  Mask m = Mask::Zero(4, 4);
  m(1, 1) = 1;
  Mask up = resize_mask(m, 8, 8);
  CHECK(up.cast<int>().sum() == 4);
  CHECK(((up.array() == 0) || (up.array() == 1)).all());
}

TEST_CASE("normalization statistics") {
  auto samples = generate_synthetic(small_synth(6, 0.5, 5));
  Split train{"train", {0, 1, 2, 3}};
  NormStats st = compute_stats(samples, train);
  CHECK(st.source_ids.size() == 4);
  double sum = 0, sq = 0, n = 0;
  for (std::size_t i : train.indices) {
    Image z = normalize(samples[i].image, st);
    sum += z.cast<double>().sum();
    sq += z.cast<double>().array().square().sum();
    n += static_cast<double>(z.size());
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std::sqrt(sq / n - mean * mean) - 1.0) < 1e-6);

  Image x = samples[0].image;
  CHECK(normalize(x, NormStats{0.0, 1.0, {}}) == x);

  CHECK_THROWS_AS(compute_stats(samples, Split{"val", {4}}), ValueError);
  std::vector<Sample> flat{blank_sample(8, 8), blank_sample(8, 8)};
  CHECK_THROWS_AS(compute_stats(flat, Split{"train", {0, 1}}), ValueError);
}

TEST_CASE("patch sampling") {
  RngState rng{7, 0};
  Sample empty = blank_sample(256, 256);
  for (int i = 0; i < 50; ++i) {
    auto p = sample_patch(empty, rng, 128, 128);
    CHECK(p.label == 0);
    CHECK_FALSE(p.positive_centered);
    CHECK(p.image.rows() == 128);
  }
  CHECK_THROWS_AS(sample_patch(empty, rng, 384, 128), ShapeError);

  Sample dot = blank_sample(512, 384);
  dot.mask(400, 20) = 1;
  dot.label = 1;
  for (int i = 0; i < 50; ++i) {
    auto p = sample_patch(dot, rng, 128, 128, 1.0);
    CHECK(p.positive_centered);
    CHECK(p.label == 1);
    CHECK(p.top <= 400);
    CHECK(p.top + 128 > 400);
    CHECK(p.left <= 20);
    CHECK(p.left + 128 > 20);
  }

  int centered = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) centered += sample_patch(dot, rng, 128, 128).positive_centered ? 1 : 0;
  CHECK(std::abs(centered / static_cast<double>(draws) - 0.5) < 0.02);
}

TEST_CASE("flips") {
  Sample s = generate_one(small_synth(1, 1.0, 2), 0);
  Image img = s.image;
  Mask m = s.mask;
  flip_horizontal(img, m);
  CHECK_FALSE(img == s.image);
  CHECK(img(0, 0) == s.image(0, s.image.cols() - 1));
  flip_horizontal(img, m);
  CHECK(img == s.image);
  CHECK(m == s.mask);
  flip_vertical(img, m);
  flip_vertical(img, m);
  CHECK(img == s.image);

  RngState rng{1, 0};
  int changed = 0;
  for (int i = 0; i < 200; ++i) {
    Image a = s.image;
    Mask b = s.mask;
    flip_augment(a, b, rng);
    changed += (a == s.image) ? 0 : 1;
    CHECK(b.cast<int>().sum() == s.mask.cast<int>().sum());
  }
  CHECK(changed > 120);
  CHECK(changed < 180);
}

TEST_CASE("k-fold splits") {
  auto parts = kfold_partition(410, 5, 9);
  REQUIRE(parts.size() == 5);
  std::set<std::size_t> seen;
  for (const auto& p : parts) {
    CHECK(p.size() == 82);
    seen.insert(p.begin(), p.end());
  }
  CHECK(seen.size() == 410);

  auto folds = split_kfold(410, 5, 9);
  REQUIRE(folds.size() == 5);
  for (int i = 0; i < 5; ++i) {
    const auto& f = folds[static_cast<std::size_t>(i)];
    CHECK(f.test.tag == "test");
    CHECK(f.val.tag == "val");
    CHECK(f.train.tag == "train");
    CHECK(f.test.indices == parts[static_cast<std::size_t>(i)]);
    CHECK(f.val.indices == parts[static_cast<std::size_t>((i + 1) % 5)]);
    CHECK(f.train.indices.size() == 246);
    std::set<std::size_t> all(f.train.indices.begin(), f.train.indices.end());
    all.insert(f.val.indices.begin(), f.val.indices.end());
    all.insert(f.test.indices.begin(), f.test.indices.end());
    CHECK(all.size() == 410);
  }
  CHECK(kfold_partition(410, 5, 9) == parts);
  CHECK_FALSE(kfold_partition(410, 5, 10) == parts);
  for (const auto& p : kfold_partition(11, 3, 0)) CHECK((p.size() == 3 || p.size() == 4));
  CHECK_THROWS_AS(split_kfold(4, 5, 0), ValueError);
}

TEST_CASE("dataset directories round-trip") {
  TempDir dir("hds_data");
  auto samples = generate_synthetic(small_synth(3, 0.5, 4));
  write_dataset(dir.path(), samples);
  auto back = read_dataset(dir.path());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].label == samples[i].label);
    CHECK(back[i].mask == samples[i].mask);
    CHECK((back[i].image - samples[i].image).cwiseAbs().maxCoeff() <= 1.0f / 65535.0f);
  }
  CHECK_THROWS_AS(read_dataset(dir / "missing"), FormatError);
}

TEST_CASE("batch tensors") {
  Image a = Image::Constant(4, 6, 1.0f), b = Image::Constant(4, 6, 2.0f);
  auto t = images_to_tensor<float>({&a, &b});
  CHECK(t.shape() == Shape{2, 1, 4, 6});
  CHECK(t.at(1, 0, 3, 5) == 2.0f);
  Mask m = Mask::Ones(4, 6);
  CHECK(masks_to_tensor<float>({&m}).shape() == Shape{1, 4, 6});
  Image c = Image::Zero(4, 5);
  CHECK_THROWS_AS(images_to_tensor<float>({&a, &c}), ShapeError);
}
