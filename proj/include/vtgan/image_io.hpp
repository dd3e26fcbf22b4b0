#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// 8-bit PNG in/out. Values map linearly between [0,255] and [-1,1];
// 1-channel files load as HxWx1, color files as HxWx3.

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

template <typename T = double>
Tensor<T> read_png(const std::string& filename) {
  detail::FilePtr fp(std::fopen(filename.c_str(), "rb"));
  check<DataError>(fp != nullptr, "cannot open image: ", filename);
  png_byte sig[8];
  check<DataError>(std::fread(sig, 1, 8, fp.get()) == 8 &&
                       png_sig_cmp(sig, 0, 8) == 0,
                   "not a PNG file: ", filename);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed for " + filename);
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng failed decoding " + filename);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  check<DataError>(channels == 1 || channels == 3, "unsupported channel count ",
                   channels, " in ", filename);

  pixels.resize(static_cast<std::size_t>(width) * height * channels);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = &pixels[static_cast<std::size_t>(y) * width * channels];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<T> data(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    data[i] = static_cast<T>(pixels[i]) / T(127.5) - T(1);
  return Tensor<T>::from_data({height, width, static_cast<std::size_t>(channels)},
                              std::move(data));
}

template <typename T = double>
void write_png(const std::string& filename, const Tensor<T>& image) {
  check<ShapeError>(image.rank() == 3 &&
                        (image.dim(2) == 1 || image.dim(2) == 3),
                    "write_png expects HxWx1 or HxWx3, got ",
                    shape_str(image.shape()));
  std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::vector<png_byte> pixels(h * w * c);
  const auto& d = image.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double v = (static_cast<double>(d[i]) + 1.0) * 127.5;
    pixels[i] = static_cast<png_byte>(std::min(255.0, std::max(0.0, std::round(v))));
  }

  detail::FilePtr fp(std::fopen(filename.c_str(), "wb"));
  check<DataError>(fp != nullptr, "cannot write image: ", filename);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed for " + filename);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed encoding " + filename);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = &pixels[y * w * c];
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace vtgan
