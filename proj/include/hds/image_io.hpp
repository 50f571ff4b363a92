#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hds {

/// Grayscale intensities, row-major H x W.
using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Binary mask, 0 = background, 1 = mass.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit RGB raster, three channels interleaved per row.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
};

/// Reads an 8- or 16-bit grayscale PNG (RGB is converted to gray) and scales
/// intensities to [0, 1].
Image read_png_gray(const std::filesystem::path& path);

/// Writes intensities clamped to [0, 1] as a 16-bit grayscale PNG.
void write_png_gray16(const std::filesystem::path& path, const Image& image);

/// Writes a mask as an 8-bit PNG with 0 = background and 255 = mass.
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

/// Reads an 8-bit mask PNG; any nonzero pixel counts as mass.
Mask read_png_mask(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace hds
