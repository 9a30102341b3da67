#include "adarelu/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace adarelu {

std::uint8_t to_byte(float value) {
  const double q = std::floor((static_cast<double>(value) + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

float from_byte(std::uint8_t value) { return static_cast<float>(value / 127.5 - 1.0); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_png(const Tensor<float>& image, const std::string& path) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("save_png: expected a (1, 3, H, W) image, got " + s.str());
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(3 * s.w));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < s.h; ++y) {
    for (Index x = 0; x < s.w; ++x) {
      for (Index c = 0; c < 3; ++c) row[static_cast<std::size_t>(3 * x + c)] = to_byte(image(0, c, y, x));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> load_png(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("malformed PNG: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  Tensor<float> out;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("malformed PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  const int channels = png_get_channels(png, info);
  if (type != PNG_COLOR_TYPE_RGB || channels != 3 || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG layout in " + path + ": expected 8-bit RGB, found " +
                             std::to_string(channels) + " channel(s) at " + std::to_string(depth) + " bits");
  }
  out = Tensor<float>({1, 3, static_cast<Index>(h), static_cast<Index>(w)});
  row.resize(static_cast<std::size_t>(3) * w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) out(0, c, y, x) = from_byte(row[3 * x + static_cast<std::size_t>(c)]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

Tensor<float> tile_grid(const Tensor<float>& batch, Index cols) {
  const Shape& s = batch.shape();
  if (cols < 1 || s.n < 1) throw std::invalid_argument("tile_grid: empty grid");
  const Index rows = (s.n + cols - 1) / cols;
  Tensor<float> out = Tensor<float>::constant({1, s.c, rows * s.h, cols * s.w}, -1.0f);
  for (Index n = 0; n < s.n; ++n) {
    const Index oy = (n / cols) * s.h, ox = (n % cols) * s.w;
    for (Index c = 0; c < s.c; ++c) {
      for (Index y = 0; y < s.h; ++y) {
        for (Index x = 0; x < s.w; ++x) out(0, c, oy + y, ox + x) = batch(n, c, y, x);
      }
    }
  }
  return out;
}

}  // namespace adarelu
