#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hds/image_io.hpp"
#include "hds/rng.hpp"
#include "hds/tensor.hpp"

namespace hds {

/// One mammogram-like image with its mass mask. label == (mask has a mass pixel).
struct Sample {
  Image image;
  Mask mask;
  int label = 0;
  std::string id;
  std::string provenance;  // "synthetic:seed=..,index=.." or a file path
};

/// Checks label/mask consistency and matching extents.
void validate(const Sample& sample);
bool mask_nonempty(const Mask& mask);

struct SynthConfig {
  int count = 410;
  int height = 1024;
  int width = 512;
  double mass_probability = 0.26;
  int min_masses = 1;
  int max_masses = 2;
  double radius_min = 12.0;
  double radius_max = 48.0;
  double max_blank_fraction = 0.15;  // blank band width on one side, fraction of width
  double max_mass_area_fraction = 0.05;
  std::uint64_t seed = 0;
};

/// 512 x 256 images; masses keep their size relative to a 128 x 128 cell.
SynthConfig desk_synth();

/// Smooth bright blobs (superposed Gaussians thresholded to one connected
/// region) over low-frequency textured tissue, with a blank band on the
/// left or right. Deterministic per (seed, index).
std::vector<Sample> generate_synthetic(const SynthConfig& config);
Sample generate_one(const SynthConfig& config, int index);

struct CropResult {
  Image image;
  Index left = 0;   // first kept column
  Index right = 0;  // one past the last kept column
  bool fully_blank = false;
};

/// Trims columns whose maximum is below min + fraction * (max - min) from
/// the left and right edges only.
CropResult crop_blank(const Image& image, double fraction = 0.02);
/// Applies the same column crop to image and mask.
Sample crop_blank(const Sample& sample, double fraction = 0.02);

/// Image resampled bilinearly (half-pixel centers), mask by nearest neighbour.
Image resize_image(const Image& image, Index height, Index width);
Mask resize_mask(const Mask& mask, Index height, Index width);
/// Resizes both and recomputes the label from the resampled mask.
Sample resize_to(const Sample& sample, Index height, Index width);

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  std::vector<std::string> source_ids;  // training samples the statistics came from
};

/// Index list carrying the name of the split it belongs to.
struct Split {
  std::string tag;  // "train", "val" or "test"
  std::vector<std::size_t> indices;
};

/// Pooled pixel mean and standard deviation over a training split.
/// Rejects any split not tagged "train" and zero variance.
NormStats compute_stats(const std::vector<Sample>& samples, const Split& split);
Image normalize(const Image& image, const NormStats& stats);

struct PatchSample {
  Image image;
  Mask mask;
  int label = 0;
  Index top = 0;
  Index left = 0;
  bool positive_centered = false;
};

/// With probability `positive_center_prob` (only when the image has mass
/// pixels) the window is centered on a uniformly chosen mass pixel, clipped
/// to stay inside the image; otherwise its position is uniform.
PatchSample sample_patch(const Sample& sample, RngState& rng, Index patch_h, Index patch_w,
                         double positive_center_prob = 0.5);

void flip_horizontal(Image& image, Mask& mask);
void flip_vertical(Image& image, Mask& mask);
/// Flips each axis independently with probability 0.5.
void flip_augment(Image& image, Mask& mask, RngState& rng);

struct Fold {
  Split train;
  Split val;
  Split test;
};

/// Shuffles [0, n) by `seed`, cuts it into k near-equal folds and builds
/// rotation i: fold i tests, fold (i+1) mod k validates, the rest train.
std::vector<Fold> split_kfold(std::size_t n, int k, std::uint64_t seed);
/// The k folds themselves (before rotation).
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, int k, std::uint64_t seed);

/// Directory layout: manifest.csv (id,image_path,mask_path,label) with
/// paths relative to the directory; 16-bit image PNGs and 0/255 mask PNGs.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

/// Stacks images and masks into network inputs: [N,1,H,W] and [N,H,W].
template <typename Scalar>
Tensor<Scalar> images_to_tensor(const std::vector<const Image*>& images);
template <typename Scalar>
Tensor<Scalar> masks_to_tensor(const std::vector<const Mask*>& masks);

}  // namespace hds
