#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <vector>

#include "hds/errors.hpp"
#include "hds/image_io.hpp"

namespace hds {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

// Raw decoded raster: 1 channel, 8 or 16 bits, big-endian samples for 16-bit.
struct Raster {
  int height = 0;
  int width = 0;
  int depth = 8;
  std::vector<png_byte> bytes;

  unsigned sample(int y, int x) const {
    const std::size_t stride = static_cast<std::size_t>(width) * (depth / 8);
    const png_byte* row = bytes.data() + static_cast<std::size_t>(y) * stride;
    if (depth == 16) return (unsigned(row[2 * x]) << 8) | row[2 * x + 1];
    return row[x];
  }
};

// setjmp-based error handling lives here; no objects with destructors are
// created between setjmp and the end of the decode.
bool decode_gray(std::FILE* file, Raster* out, char* error) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::snprintf(error, 64, "libpng decode failure");
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  out->height = static_cast<int>(png_get_image_height(png, info));
  out->width = static_cast<int>(png_get_image_width(png, info));
  out->depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (png_get_channels(png, info) != 1 || stride != static_cast<std::size_t>(out->width) * (out->depth / 8)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(error, 64, "unsupported PNG layout");
    return false;
  }
  out->bytes.resize(stride * static_cast<std::size_t>(out->height));
  for (int y = 0; y < out->height; ++y) {
    png_read_row(png, out->bytes.data() + stride * static_cast<std::size_t>(y), nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

Raster read_raster(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + ": not a PNG file");
  }
  std::rewind(f.get());
  Raster r;
  char error[64] = {0};
  if (!decode_gray(f.get(), &r, error)) throw FormatError(path.string() + ": " + error);
  return r;
}

bool encode(std::FILE* file, int height, int width, int depth, int color, const png_byte* data,
            std::size_t stride) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write(const std::filesystem::path& path, int height, int width, int depth, int color,
           const std::vector<png_byte>& data) {
  FilePtr f = open_file(path, "wb");
  const int channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
  if (!encode(f.get(), height, width, depth, color, data.data(), stride)) {
    throw FormatError("failed to encode " + path.string());
  }
}

}  // namespace

Image read_png_gray(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  const float scale = r.depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  Image img(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) img(y, x) = static_cast<float>(r.sample(y, x)) * scale;
  }
  return img;
}

Mask read_png_mask(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  Mask m(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) m(y, x) = r.sample(y, x) != 0 ? 1 : 0;
  }
  return m;
}

void write_png_gray16(const std::filesystem::path& path, const Image& image) {
  std::vector<png_byte> data(static_cast<std::size_t>(image.size()) * 2);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, image.data()[i]));
    const auto q = static_cast<unsigned>(v * 65535.0f + 0.5f);
    data[2 * static_cast<std::size_t>(i)] = static_cast<png_byte>(q >> 8);
    data[2 * static_cast<std::size_t>(i) + 1] = static_cast<png_byte>(q & 0xff);
  }
  write(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 16, PNG_COLOR_TYPE_GRAY, data);
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<png_byte> data(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) data[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  write(path, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), 8, PNG_COLOR_TYPE_GRAY, data);
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  write(path, image.height, image.width, 8, PNG_COLOR_TYPE_RGB, image.pixels);
}

}  // namespace hds
