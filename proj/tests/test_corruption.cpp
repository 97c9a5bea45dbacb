#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "crt/corruption.hpp"
#include "crt/metrics.hpp"

using crt::CorruptionKind;
using crt::Image;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  crt::CounterRng rng(seed);
  Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(0.05, 0.95));
  return img;
}

std::size_t black_rows(const Image& img) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    bool all = true;
    for (std::size_t i = 0; i < img.width * 3 && all; ++i) all = img.pixels[y * img.width * 3 + i] == 0.0f;
    n += all;
  }
  return n;
}

crt::CorruptionParams lines(double f) {
  crt::CorruptionParams p;
  p.line_fraction = f;
  return p;
}

}  // namespace

TEST(Corruption, ZeroSigmaNoiseIsIdentity) {
  const Image x = random_image(32, 40, 1);
  crt::CorruptionParams p;
  p.noise_sigma = 0.0;
  EXPECT_EQ(crt::corrupt(x, crt::sample_spec(CorruptionKind::gaussian_noise, 7, 32, 40, p)), x);
}

TEST(Corruption, IdentityReturnsInput) {
  const Image x = random_image(20, 20, 2);
  EXPECT_EQ(crt::corrupt(x, crt::sample_spec(CorruptionKind::identity, 3, 20, 20)), x);
}

TEST(Corruption, HalfLinesAt360) {
  const Image x = random_image(360, 64, 3);
  const auto spec = crt::sample_spec(CorruptionKind::horizontal_lines, 11, 360, 64, lines(0.5));
  EXPECT_EQ(black_rows(crt::corrupt(x, spec)), 180u);
}

TEST(Corruption, LineCoverageExactForAllHeights) {
  for (double f : {0.2, 0.5}) {
    for (std::size_t h = 16; h <= 512; ++h) {
      const auto spec = crt::sample_spec(CorruptionKind::horizontal_lines, h * 31 + 5, h, 16, lines(f));
      Image x(h, 16, 0.5f);
      const Image out = crt::corrupt(x, spec);
      ASSERT_EQ(black_rows(out), static_cast<std::size_t>(std::lround(f * static_cast<double>(h)))) << "H=" << h << " f=" << f;
      // Bands are disjoint, in bounds, and at most t thick.
      std::size_t end = 0;
      for (const auto& b : spec.bands) {
        EXPECT_GE(b.start, end);
        EXPECT_GE(b.thickness, 1u);
        EXPECT_LE(b.thickness, 4u);
        end = b.start + b.thickness;
      }
      EXPECT_LE(end, h);
    }
  }
}

TEST(Corruption, LinePositionsVaryWithSeed) {
  std::set<std::size_t> first_starts;
  for (std::uint64_t s = 0; s < 50; ++s)
    first_starts.insert(crt::sample_spec(CorruptionKind::horizontal_lines, s, 128, 32, lines(0.2)).bands.front().start);
  EXPECT_GT(first_starts.size(), 10u);
}

TEST(Corruption, NoiseStandardDeviation) {
  const Image x(360, 360, 0.5f);
  const Image out = crt::corrupt(x, crt::sample_spec(CorruptionKind::gaussian_noise, 2024, 360, 360));
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = static_cast<double>(out.pixels[i]) - x.pixels[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(x.pixels.size());
  const double sd = std::sqrt((sq - sum * sum / n) / (n - 1));
  EXPECT_NEAR(sd, 0.20, 0.01);
  EXPECT_NEAR(sum / n, 0.0, 0.002);
}

TEST(Corruption, BitReproducibleForEveryKind) {
  const Image x = random_image(48, 56, 4);
  for (CorruptionKind k : crt::kAllKinds) {
    const auto a = crt::sample_spec(k, 99, 48, 56);
    const auto b = crt::sample_spec(k, 99, 48, 56);
    EXPECT_EQ(a, b);
    EXPECT_EQ(crt::corrupt(x, a), crt::corrupt(x, b)) << crt::kind_name(k);
  }
}

TEST(Corruption, OutputInUnitRange) {
  const Image x = random_image(40, 40, 5);
  for (CorruptionKind k : crt::kAllKinds)
    for (float v : crt::corrupt(x, crt::sample_spec(k, 6, 40, 40)).pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
}

TEST(Corruption, MaskedKindsLeaveOtherPixelsUntouched) {
  const Image x = random_image(50, 70, 6);
  const auto sq = crt::sample_spec(CorruptionKind::centered_square, 1, 50, 70);
  const Image out = crt::corrupt(x, sq);
  const std::size_t side = sq.square_side, top = (50 - side) / 2, left = (70 - side) / 2;
  EXPECT_EQ(side, 20u);
  for (std::size_t y = 0; y < 50; ++y)
    for (std::size_t xx = 0; xx < 70; ++xx) {
      const bool inside = y >= top && y < top + side && xx >= left && xx < left + side;
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(out.at(y, xx, c), inside ? 0.0f : x.at(y, xx, c));
      }
    }

  const auto ln = crt::sample_spec(CorruptionKind::horizontal_lines, 2, 50, 70, lines(0.2));
  const Image out2 = crt::corrupt(x, ln);
  std::vector<bool> masked(50, false);
  for (const auto& b : ln.bands)
    for (std::size_t y = b.start; y < b.start + b.thickness; ++y) masked[y] = true;
  for (std::size_t y = 0; y < 50; ++y)
    for (std::size_t xx = 0; xx < 70; ++xx)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out2.at(y, xx, c), masked[y] ? 0.0f : x.at(y, xx, c));
}

TEST(Corruption, SquareSideAt480) {
  EXPECT_EQ(crt::sample_spec(CorruptionKind::centered_square, 0, 480, 480).square_side, 192u);
  EXPECT_EQ(crt::sample_spec(CorruptionKind::centered_square, 0, 480, 640).square_side, 192u);
}

TEST(Corruption, DropCountWithinRangeOverManySeeds) {
  std::set<std::size_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto spec = crt::sample_spec(CorruptionKind::water_drops, s, 64, 64);
    ASSERT_GE(spec.drops.size(), 5u);
    ASSERT_LE(spec.drops.size(), 12u);
    seen.insert(spec.drops.size());
    for (const auto& d : spec.drops) {
      EXPECT_GE(d.radius, 0.03 * 64);
      EXPECT_LE(d.radius, 0.10 * 64);
    }
  }
  EXPECT_EQ(seen.size(), 8u);  // every count 5..12 reached
}

TEST(Corruption, DropsModifyOnlyInsideCircles) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image x = random_image(64, 80, 100 + s);
    const auto spec = crt::sample_spec(CorruptionKind::water_drops, s, 64, 80);
    const Image out = crt::corrupt(x, spec);
    std::size_t changed = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t xx = 0; xx < 80; ++xx) {
        bool inside = false;
        for (const auto& d : spec.drops) {
          const double dy = y + 0.5 - d.cy, dx = xx + 0.5 - d.cx;
          inside = inside || dy * dy + dx * dx <= d.radius * d.radius;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          if (!inside) {
            ASSERT_EQ(out.at(y, xx, c), x.at(y, xx, c));
          }
          changed += out.at(y, xx, c) != x.at(y, xx, c);
        }
      }
    EXPECT_GT(changed, 0u);
  }
}

TEST(Corruption, SingleDropMatchesFullImageBlend) {
  // Independent composition: blend against a whole-image blur.
  const Image x = random_image(40, 40, 7);
  crt::CorruptionSpec spec = crt::sample_spec(CorruptionKind::water_drops, 1, 40, 40);
  spec.drops = {{20.0, 3.0, 4.0}};
  const Image out = crt::corrupt(x, spec);
  const Image blurred = crt::gaussian_blur(x, 4.0 / 3.0);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t xx = 0; xx < 40; ++xx) {
      const double dy = y + 0.5 - 20.0, dx = xx + 0.5 - 3.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const float expected = dy * dy + dx * dx <= 16.0 ? 0.7f * blurred.at(y, xx, c) + 0.3f * x.at(y, xx, c) : x.at(y, xx, c);
        ASSERT_NEAR(out.at(y, xx, c), expected, 1e-6);
      }
    }
}

TEST(Corruption, FractionExamples) {
  EXPECT_EQ(*crt::corrupted_fraction(crt::sample_spec(CorruptionKind::identity, 0, 360, 360)), 0.0);
  EXPECT_EQ(*crt::corrupted_fraction(crt::sample_spec(CorruptionKind::horizontal_lines, 0, 360, 360, lines(0.2))), 72.0 / 360.0);
  EXPECT_NEAR(*crt::corrupted_fraction(crt::sample_spec(CorruptionKind::centered_square, 0, 360, 360)), 0.16, 1e-12);
  EXPECT_FALSE(crt::corrupted_fraction(crt::sample_spec(CorruptionKind::gaussian_noise, 0, 360, 360)).has_value());

  const Image x = random_image(32, 32, 8);
  const auto sq = crt::sample_spec(CorruptionKind::centered_square, 0, 32, 32);
  EXPECT_DOUBLE_EQ(crt::corrupted_fraction(x, crt::corrupt(x, sq)), *crt::corrupted_fraction(sq));
}

TEST(Corruption, SerializationRoundTrip) {
  for (CorruptionKind k : crt::kAllKinds) {
    const auto spec = crt::sample_spec(k, 0xDEADBEEFCAFEull, 61, 77);
    const auto text = spec.serialize();
    EXPECT_EQ(text.find('\n'), std::string::npos);
    EXPECT_EQ(crt::CorruptionSpec::parse(text), spec) << text;
  }
  EXPECT_THROW(crt::CorruptionSpec::parse("kind=gaussian-noise bogus=1"), crt::DataError);
  EXPECT_THROW(crt::CorruptionSpec::parse("kind=smudge"), crt::UsageError);
}

TEST(Corruption, Labels) {
  EXPECT_EQ(crt::corruption_label(CorruptionKind::horizontal_lines, lines(0.2)), "horizontal-lines-0.2");
  EXPECT_EQ(crt::corruption_label(CorruptionKind::water_drops, {}), "water-drops");
  const auto [kind, params] = crt::parse_label("horizontal-lines-0.2");
  EXPECT_EQ(kind, CorruptionKind::horizontal_lines);
  EXPECT_EQ(params.line_fraction, 0.2);
  EXPECT_EQ(crt::parse_label("horizontal-lines").second.line_fraction, 0.5);
  EXPECT_THROW(crt::parse_label("cracks"), crt::UsageError);
}

TEST(Corruption, InvalidParametersRejected) {
  crt::CorruptionParams p;
  p.line_fraction = 1.0;
  EXPECT_THROW(crt::sample_spec(CorruptionKind::horizontal_lines, 0, 32, 32, p), crt::UsageError);
  p = {};
  p.noise_sigma = -0.1;
  EXPECT_THROW(crt::sample_spec(CorruptionKind::gaussian_noise, 0, 32, 32, p), crt::UsageError);
  p = {};
  p.line_thickness = 0;
  EXPECT_THROW(crt::sample_spec(CorruptionKind::horizontal_lines, 0, 32, 32, p), crt::UsageError);
  p = {};
  p.drops_min = 0;
  EXPECT_THROW(crt::sample_spec(CorruptionKind::water_drops, 0, 32, 32, p), crt::UsageError);
}

TEST(Corruption, DimensionMismatchRejected) {
  const auto spec = crt::sample_spec(CorruptionKind::centered_square, 0, 32, 32);
  EXPECT_THROW(crt::corrupt(Image(32, 48), spec), crt::DataError);
}
