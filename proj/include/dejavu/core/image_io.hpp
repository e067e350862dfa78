#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dejavu/core/errors.hpp"
#include "dejavu/core/image.hpp"

namespace dejavu {

// Interleaved 8-bit RGB raster.
struct Rgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

// Clamp to [0,1], then round half up to the nearest 1/255 step.
template <typename T>
std::uint8_t quantize_unit(T v) {
  double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(x * 255.0 + 0.5));
}

inline Rgb8 read_png_rgb8(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw FormatError("cannot decode " + path.string() + ": " + img.message);
  const auto fmt = img.format;
  const bool color = fmt & PNG_FORMAT_FLAG_COLOR;
  const bool alpha = fmt & PNG_FORMAT_FLAG_ALPHA;
  const bool linear = fmt & PNG_FORMAT_FLAG_LINEAR;
  if (!color || alpha || linear) {
    png_image_free(&img);
    throw FormatError(path.string() + " is not an 8-bit RGB raster");
  }
  img.format = PNG_FORMAT_RGB;
  Rgb8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

inline void write_png_rgb8(const Rgb8& raster, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raster.width);
  img.height = static_cast<png_uint_32>(raster.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, raster.pixels.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

template <typename T = double>
ImageTensor<T> load_image(const std::filesystem::path& path) {
  const Rgb8 r = read_png_rgb8(path);
  ImageTensor<T> out(3, r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<T>(r.pixels[(static_cast<std::size_t>(y) * r.width + x) * 3 + c]) / T(255);
  return out;
}

// Single-channel images are written as gray RGB.
template <typename T>
Rgb8 to_rgb8(const ImageTensor<T>& img) {
  const int c = img.channels();
  if (c != 3 && c != 1) throw DimensionError("save_image expects 1 or 3 channels");
  if (!img.data.all_finite()) throw FormatError("save_image: non-finite values");
  Rgb8 r{img.width(), img.height(), {}};
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * 3);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int k = 0; k < 3; ++k)
        r.pixels[(static_cast<std::size_t>(y) * r.width + x) * 3 + k] = quantize_unit(img.at(c == 3 ? k : 0, y, x));
  return r;
}

template <typename T>
void save_image(const ImageTensor<T>& img, const std::filesystem::path& path) {
  write_png_rgb8(to_rgb8(img), path);
}

}  // namespace dejavu
