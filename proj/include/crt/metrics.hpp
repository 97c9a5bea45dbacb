#pragma once

// Gaussian blur and the full-reference quality metrics (PSNR, windowed SSIM).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "crt/image.hpp"

namespace crt {

/// Normalized 1D Gaussian with the given radius (length 2*radius+1).
inline std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    total += (k[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (auto& v : k) v /= total;
  return k;
}

inline std::size_t blur_radius(double sigma) { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

/// Blurred values of the rectangle [y0,y1) x [x0,x1) of the full-image blur,
/// HWC over the rectangle. Values equal gaussian_blur's at the same pixels.
inline std::vector<float> gaussian_blur_region(const Image& img, double sigma, std::size_t y0, std::size_t y1,
                                               std::size_t x0, std::size_t x1) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  if (y0 >= y1 || x0 >= x1 || y1 > img.height || x1 > img.width) throw std::invalid_argument("gaussian_blur: bad region");
  const std::size_t r = blur_radius(sigma);
  const auto k = gaussian_kernel(sigma, r);
  const auto H = static_cast<std::ptrdiff_t>(img.height), W = static_cast<std::ptrdiff_t>(img.width);
  const auto R = static_cast<std::ptrdiff_t>(r);
  const std::size_t RW = x1 - x0;
  // Horizontal pass over every row the vertical pass can reach.
  const auto ty0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y0) - R);
  const auto ty1 = std::min<std::ptrdiff_t>(H, static_cast<std::ptrdiff_t>(y1) + R);
  std::vector<double> tmp(static_cast<std::size_t>(ty1 - ty0) * RW * 3);
  for (std::ptrdiff_t y = ty0; y < ty1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -R; d <= R; ++d) {
          const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + d, 0, W - 1);
          acc += k[static_cast<std::size_t>(d + R)] * img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c);
        }
        tmp[(static_cast<std::size_t>(y - ty0) * RW + (x - x0)) * 3 + c] = acc;
      }
  std::vector<float> out((y1 - y0) * RW * 3);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -R; d <= R; ++d) {
          const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + d, 0, H - 1);
          acc += k[static_cast<std::size_t>(d + R)] * tmp[(static_cast<std::size_t>(yy - ty0) * RW + (x - x0)) * 3 + c];
        }
        out[((y - y0) * RW + (x - x0)) * 3 + c] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
  return out;
}

/// Separable Gaussian blur, radius ceil(3 sigma), clamp-to-edge borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  Image out(img.height, img.width);
  out.pixels = gaussian_blur_region(img, sigma, 0, img.height, 0, img.width);
  return out;
}

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio for unit dynamic range; identical images give kPsnrCap.
inline double psnr(const Image& a, const Image& b) {
  require_same_size(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

  void validate() const {
    if (window % 2 == 0 || window == 0) throw std::invalid_argument("ssim: window side must be odd");
    if (!(sigma > 0)) throw std::invalid_argument("ssim: window sigma must be positive");
  }

  std::vector<double> window_1d() const { return gaussian_kernel(sigma, window / 2); }

  /// Row-major window x window weights; positive and summing to one.
  std::vector<double> window_2d() const {
    const auto w = window_1d();
    std::vector<double> out(window * window);
    for (std::size_t i = 0; i < window; ++i)
      for (std::size_t j = 0; j < window; ++j) out[i * window + j] = w[i] * w[j];
    return out;
  }
};

/// Windowed SSIM averaged over every valid window position and the three
/// channels. Local statistics use separable Gaussian weighting.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  require_same_size(a, b, "ssim");
  p.validate();
  if (a.height < p.window || a.width < p.window) throw DataError("ssim: image smaller than window");
  const std::size_t H = a.height, W = a.width, K = p.window;
  const std::size_t OH = H - K + 1, OW = W - K + 1;
  const auto w = p.window_1d();
  const double c1 = p.c1(), c2 = p.c2();

  // Vertical-then-horizontal valid filtering of a plane.
  auto filter = [&](const std::vector<double>& plane) {
    std::vector<double> rows(OH * W, 0.0);
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t u = 0; u < K; ++u)
        for (std::size_t x = 0; x < W; ++x) rows[i * W + x] += w[u] * plane[(i + u) * W + x];
    std::vector<double> out(OH * OW, 0.0);
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        double acc = 0.0;
        for (std::size_t v = 0; v < K; ++v) acc += w[v] * rows[i * W + j + v];
        out[i * OW + j] = acc;
      }
    return out;
  };

  double total = 0.0;
  std::vector<double> pa(H * W), pb(H * W), paa(H * W), pbb(H * W), pab(H * W);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      pa[i] = a.pixels[i * 3 + c];
      pb[i] = b.pixels[i * 3 + c];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter(pa), mu_b = filter(pb), e_aa = filter(paa), e_bb = filter(pbb), e_ab = filter(pab);
    for (std::size_t i = 0; i < OH * OW; ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
  }
  return total / static_cast<double>(3 * OH * OW);
}

}  // namespace crt
