#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <filesystem>

#include "crt/gradcheck.hpp"
#include "crt/metrics.hpp"
#include "crt/png_io.hpp"
#include "crt/rng.hpp"
#include "crt/ssim_loss.hpp"

namespace fs = std::filesystem;
using crt::Image;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  crt::CounterRng rng(seed);
  Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("crt_imaging_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Direct sliding-window SSIM: explicit 2D Gaussian weights normalized over the
// whole window, centered second moments, no separability.
double brute_force_ssim(const Image& a, const Image& b) {
  constexpr int K = 11;
  constexpr double sigma = 1.5, c1 = 0.0001, c2 = 0.0009;
  double w[K][K];
  double wsum = 0.0;
  for (int u = 0; u < K; ++u)
    for (int v = 0; v < K; ++v) {
      const double du = u - K / 2, dv = v - K / 2;
      wsum += (w[u][v] = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma)));
    }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i + K <= a.height; ++i)
      for (std::size_t j = 0; j + K <= a.width; ++j) {
        double ma = 0, mb = 0;
        for (int u = 0; u < K; ++u)
          for (int v = 0; v < K; ++v) {
            ma += w[u][v] / wsum * a.at(i + u, j + v, c);
            mb += w[u][v] / wsum * b.at(i + u, j + v, c);
          }
        double va = 0, vb = 0, cov = 0;
        for (int u = 0; u < K; ++u)
          for (int v = 0; v < K; ++v) {
            const double da = a.at(i + u, j + v, c) - ma, db = b.at(i + u, j + v, c) - mb;
            va += w[u][v] / wsum * da * da;
            vb += w[u][v] / wsum * db * db;
            cov += w[u][v] / wsum * da * db;
          }
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(ImageType, RejectsTinyImages) { EXPECT_THROW(Image(15, 32), crt::DataError); }

TEST(ImageType, TensorRoundTripPreservesValues) {
  const Image img = random_image(16, 24, 3);
  const auto t = crt::to_tensor<float>(img);
  EXPECT_EQ(t.shape(), (crt::ad::Shape{1, 3, 16, 24}));
  EXPECT_EQ(crt::from_tensor(t), img);
}

TEST(PngIo, SaveLoadQuantizationBound) {
  const auto dir = temp_dir("quant");
  const Image half(32, 32, 0.5f);
  crt::save_image(half, dir / "half.png");
  const Image back = crt::load_image(dir / "half.png");
  ASSERT_TRUE(back.same_size(half));
  for (float v : back.pixels) EXPECT_LE(std::abs(v - 0.5f), 1.0f / 510.0f + 1e-7f);  // float rounding of k/255

  const Image noisy = random_image(20, 30, 9);
  crt::save_image(noisy, dir / "noisy.png");
  const Image back2 = crt::load_image(dir / "noisy.png");
  for (std::size_t i = 0; i < noisy.pixels.size(); ++i) EXPECT_LE(std::abs(back2.pixels[i] - noisy.pixels[i]), 1.0f / 510.0f + 1e-7f);
}

TEST(PngIo, LoadsLiberoResolution) {
  const auto dir = temp_dir("res");
  crt::save_image(Image(360, 360, 0.25f), dir / "libero.png");
  const Image img = crt::load_image(dir / "libero.png");
  EXPECT_EQ(img.height, 360u);
  EXPECT_EQ(img.width, 360u);
}

TEST(PngIo, RejectsGrayscaleSmallAndMissing) {
  const auto dir = temp_dir("reject");
  std::vector<png_byte> gray(32 * 32, 128);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = 32;
  png.height = 32;
  png.format = PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&png, (dir / "gray.png").c_str(), 0, gray.data(), 0, nullptr));
  try {
    crt::load_image(dir / "gray.png");
    FAIL() << "expected rejection";
  } catch (const crt::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("non-RGB"), std::string::npos);
  }

  std::vector<png_byte> rgb(8 * 8 * 3, 0);
  png.width = 8;
  png.height = 8;
  png.format = PNG_FORMAT_RGB;
  ASSERT_TRUE(png_image_write_to_file(&png, (dir / "small.png").c_str(), 0, rgb.data(), 0, nullptr));
  EXPECT_THROW(crt::load_image(dir / "small.png"), crt::DataError);
  EXPECT_THROW(crt::load_image(dir / "missing.png"), crt::DataError);
}

TEST(Psnr, IdenticalImagesHitCap) {
  const Image a = random_image(16, 16, 1);
  EXPECT_EQ(crt::psnr(a, a), 99.0);
}

TEST(Psnr, UniformOffsets) {
  const Image a = random_image(32, 32, 2, 0.0f, 0.85f);
  for (const auto& [delta, expected] : {std::pair{0.1, 20.0}, std::pair{0.01, 40.0}}) {
    Image b = a;
    for (auto& v : b.pixels) v += static_cast<float>(delta);
    EXPECT_NEAR(crt::psnr(a, b), expected, 1e-4);
  }
}

TEST(Psnr, StrictlyDecreasingInPerturbation) {
  const Image a = random_image(32, 32, 3, 0.2f, 0.7f);
  double previous = crt::psnr(a, a);
  for (float delta : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
    Image b = a;
    for (auto& v : b.pixels) v += delta;
    const double p = crt::psnr(a, b);
    EXPECT_LT(p, previous);
    previous = p;
  }
}

TEST(Psnr, DimensionMismatch) { EXPECT_THROW(crt::psnr(Image(16, 16), Image(16, 17)), crt::DataError); }

TEST(Ssim, IdentityIsOne) {
  const Image a = random_image(32, 32, 4);
  EXPECT_NEAR(crt::ssim(a, a), 1.0, 1e-6);
}

TEST(Ssim, BlackVersusWhiteClosedForm) {
  const double c1 = 0.0001;
  EXPECT_NEAR(crt::ssim(Image(16, 16, 0.0f), Image(16, 16, 1.0f)), c1 / (1 + c1), 1e-9);
}

TEST(Ssim, MatchesBruteForceSlidingWindow) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image a = random_image(32, 32, 100 + s), b = random_image(32, 32, 200 + s);
    EXPECT_NEAR(crt::ssim(a, b), brute_force_ssim(a, b), 1e-6);
  }
}

TEST(Ssim, SymmetricBoundedAndOneOnlyForEqual) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image a = random_image(24, 24, 300 + s);
    Image b = a;
    for (std::size_t y = 8; y < 12; ++y)
      for (std::size_t x = s; x < s + 4; ++x) b.at(y, x, s % 3) = 1.0f - b.at(y, x, s % 3);
    const double ab = crt::ssim(a, b), ba = crt::ssim(b, a);
    EXPECT_LT(std::abs(ab - ba), 1e-9);
    EXPECT_LE(ab, 1.0);
    EXPECT_LT(ab, 1.0 - 1e-6);
  }
}

TEST(Ssim, WindowWeightsNormalized) {
  const auto w = crt::SsimParams{}.window_2d();
  double total = 0;
  for (double v : w) {
    EXPECT_GT(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Ssim, Errors) {
  EXPECT_THROW(crt::ssim(Image(16, 16), Image(17, 16)), crt::DataError);
  crt::SsimParams big;
  big.window = 17;
  EXPECT_THROW(crt::ssim(Image(16, 16), Image(16, 16), big), crt::DataError);
  crt::SsimParams even;
  even.window = 10;
  EXPECT_THROW(crt::ssim(Image(16, 16), Image(16, 16), even), std::invalid_argument);
}

TEST(DifferentiableSsim, AgreesWithReference) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image a = random_image(32, 32, 400 + s), b = random_image(32, 32, 500 + s);
    const double twin = crt::ssim_index(crt::to_tensor<double>(a), crt::to_tensor<double>(b)).item();
    EXPECT_NEAR(twin, crt::ssim(a, b), 1e-6);
  }
}

TEST(DifferentiableSsim, GradientPassesFiniteDifferences) {
  const auto target = crt::to_tensor<double>(random_image(16, 16, 600));
  const auto point = crt::to_tensor<double>(random_image(16, 16, 601));
  const auto r = crt::ad::grad_check([&](const crt::ad::Tensor<double>& x) { return crt::ssim_loss(target, x); }, point, 1e-4);
  EXPECT_TRUE(r.passed(1e-3)) << r.max_rel_error << " " << r.message;
}

TEST(Blur, ConstantImageUnchanged) {
  const Image flat(32, 32, 0.37f);
  const Image out = crt::gaussian_blur(flat, 2.0);
  for (float v : out.pixels) EXPECT_NEAR(v, 0.37f, 1e-6);
}

TEST(Blur, ImpulseResponseIsKernelCenter) {
  Image img(32, 32, 0.0f);
  img.at(16, 16, 0) = 1.0f;
  const Image out = crt::gaussian_blur(img, 1.0);
  // Independent normalization of the 7-tap kernel exp(-d^2/2) for d in [-3, 3].
  double z = 0.0;
  for (int d = -3; d <= 3; ++d) z += std::exp(-0.5 * d * d);
  EXPECT_NEAR(out.at(16, 16, 0), (1.0 / z) * (1.0 / z), 1e-6);
  EXPECT_EQ(out.at(16, 16, 1), 0.0f);
}

TEST(Blur, PreservesMeanForInteriorContent) {
  Image img(48, 48, 0.0f);
  crt::CounterRng rng(8);
  for (std::size_t y = 12; y < 36; ++y)
    for (std::size_t x = 12; x < 36; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(rng.uniform());
  auto mean = [](const Image& im) {
    double s = 0;
    for (float v : im.pixels) s += v;
    return s / static_cast<double>(im.pixels.size());
  };
  EXPECT_NEAR(mean(crt::gaussian_blur(img, 2.0)), mean(img), 1e-3);
}

TEST(Blur, RejectsNonPositiveSigma) {
  EXPECT_THROW(crt::gaussian_blur(Image(16, 16), 0.0), std::invalid_argument);
  EXPECT_THROW(crt::gaussian_blur(Image(16, 16), -1.0), std::invalid_argument);
}
