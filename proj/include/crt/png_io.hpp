#pragma once

// 8-bit RGB PNG interchange. Loading divides by 255; saving rounds half-up.

#include <png.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "crt/error.hpp"
#include "crt/image.hpp"

namespace crt {

inline Image load_image(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError(path.string() + ": unreadable PNG (" + png.message + ")");
  }
  const auto original = png.format;
  auto reject = [&](const std::string& why) {
    png_image_free(&png);
    throw DataError(path.string() + ": " + why);
  };
  if (!(original & PNG_FORMAT_FLAG_COLOR)) reject("non-RGB (grayscale image)");
  if (original & PNG_FORMAT_FLAG_ALPHA) reject("non-RGB (has alpha channel)");
  if (original & PNG_FORMAT_FLAG_LINEAR) reject("not an 8-bit image");
  if (png.height < kMinImageSide || png.width < kMinImageSide) {
    reject("dimensions " + std::to_string(png.height) + "x" + std::to_string(png.width) + " below minimum " +
           std::to_string(kMinImageSide));
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    throw DataError(path.string() + ": PNG decode failed (" + png.message + ")");
  }
  Image img(png.height, png.width);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
  return img;
}

inline std::uint8_t quantize(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0f + 0.5f));
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_image(const Image& img, const std::filesystem::path& path) {
  std::vector<png_byte> buffer(img.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = quantize(img.pixels[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&png, tmp.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError(path.string() + ": PNG write failed (" + png.message + ")");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace crt
