#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crt/error.hpp"
#include "crt/tensor.hpp"

namespace crt {

inline constexpr std::size_t kMinImageSide = 16;

/// H x W x 3 raster, interleaved row-major (y, x, channel), values in [0, 1].
struct Image {
  static constexpr std::size_t channels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;

  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * channels, fill) {
    if (h < kMinImageSide || w < kMinImageSide) {
      throw DataError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the minimum " +
                      std::to_string(kMinImageSide) + "x" + std::to_string(kMinImageSide));
    }
  }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  bool same_size(const Image& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_size(const Image& a, const Image& b, std::string_view what) {
  if (!a.same_size(b)) {
    throw DataError(std::string(what) + ": dimension mismatch " + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

inline void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

/// Stacks images into a [B, 3, H, W] tensor (channel-planar).
template <class T>
ad::Tensor<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: empty batch");
  const std::size_t H = images[0].height, W = images[0].width;
  std::vector<T> data(images.size() * 3 * H * W);
  for (std::size_t b = 0; b < images.size(); ++b) {
    require_same_size(images[0], images[b], "to_tensor");
    T* dst = data.data() + b * 3 * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) dst[(c * H + y) * W + x] = static_cast<T>(images[b].at(y, x, c));
  }
  return ad::Tensor<T>({images.size(), 3, H, W}, std::move(data));
}

template <class T>
ad::Tensor<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::span<const Image>(&image, 1));
}

/// Extracts batch element `b` of a [B, 3, H, W] tensor, clamped to [0, 1].
template <class T>
Image from_tensor(const ad::Tensor<T>& t, std::size_t b = 0) {
  if (t.rank() != 4 || t.dim(1) != 3) throw std::invalid_argument("from_tensor: expected [B,3,H,W], got " + ad::to_string(t.shape()));
  const std::size_t H = t.dim(2), W = t.dim(3);
  Image img(H, W);
  const T* src = t.data().data() + b * 3 * H * W;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = std::clamp(static_cast<float>(src[(c * H + y) * W + x]), 0.0f, 1.0f);
  return img;
}

}  // namespace crt
