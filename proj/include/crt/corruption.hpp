#pragma once

// Seeded synthesis of the five evaluated sensor corruptions. A CorruptionSpec
// carries every randomized quantity already resolved (line bands, drop
// geometry), so (image, spec) fully determines the output; only per-pixel
// Gaussian noise is regenerated from the spec's seed.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crt/error.hpp"
#include "crt/image.hpp"
#include "crt/metrics.hpp"
#include "crt/rng.hpp"

namespace crt {

enum class CorruptionKind { centered_square, gaussian_noise, horizontal_lines, water_drops, identity };

inline constexpr CorruptionKind kAllKinds[] = {CorruptionKind::centered_square, CorruptionKind::gaussian_noise,
                                               CorruptionKind::horizontal_lines, CorruptionKind::water_drops,
                                               CorruptionKind::identity};

inline std::string_view kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::centered_square: return "centered-square";
    case CorruptionKind::gaussian_noise: return "gaussian-noise";
    case CorruptionKind::horizontal_lines: return "horizontal-lines";
    case CorruptionKind::water_drops: return "water-drops";
    case CorruptionKind::identity: return "identity";
  }
  return "unknown";
}

inline CorruptionKind parse_kind(std::string_view name) {
  for (CorruptionKind k : kAllKinds)
    if (kind_name(k) == name) return k;
  throw UsageError("unknown corruption kind '" + std::string(name) + "'");
}

struct CorruptionParams {
  double side_fraction = 0.4;
  double noise_sigma = 0.20;
  double line_fraction = 0.5;
  std::size_t line_thickness = 4;
  std::size_t drops_min = 5;
  std::size_t drops_max = 12;
  double drop_radius_min = 0.03;
  double drop_radius_max = 0.10;
  double drop_alpha = 0.7;

  friend bool operator==(const CorruptionParams&, const CorruptionParams&) = default;
};

struct LineBand {
  std::size_t start = 0;
  std::size_t thickness = 0;
  friend bool operator==(const LineBand&, const LineBand&) = default;
};

struct Drop {
  double cy = 0, cx = 0, radius = 0;
  friend bool operator==(const Drop&, const Drop&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError("corruption spec: bad number '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError("corruption spec: bad integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

// Stream identifiers for the independent random quantities of one spec.
inline constexpr std::uint64_t kNoiseStream = 1;
inline constexpr std::uint64_t kLayoutStream = 2;

}  // namespace detail

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::identity;
  std::uint64_t seed = 0;
  CorruptionParams params;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t square_side = 0;
  std::vector<LineBand> bands;
  std::vector<Drop> drops;

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;

  void validate() const {
    const auto& p = params;
    auto in_open_unit = [](double f) { return f > 0.0 && f < 1.0; };
    if (!in_open_unit(p.side_fraction)) throw UsageError("side fraction must lie in (0,1)");
    if (!in_open_unit(p.line_fraction)) throw UsageError("line fraction must lie in (0,1)");
    if (!in_open_unit(p.drop_radius_min) || !in_open_unit(p.drop_radius_max) || p.drop_radius_min > p.drop_radius_max) {
      throw UsageError("drop radius fractions must lie in (0,1) with min <= max");
    }
    if (!(p.noise_sigma >= 0.0)) throw UsageError("noise sigma must be >= 0");
    if (p.line_thickness < 1) throw UsageError("line thickness must be >= 1");
    if (p.drops_min < 1 || p.drops_min > p.drops_max) throw UsageError("drop count range must satisfy 1 <= min <= max");
    if (!(p.drop_alpha > 0.0 && p.drop_alpha <= 1.0)) throw UsageError("drop alpha must lie in (0,1]");
  }

  /// Flat space-separated key=value record; doubles in shortest round-trip form.
  std::string serialize() const {
    using detail::format_double;
    std::ostringstream os;
    os << "kind=" << kind_name(kind) << " seed=" << seed << " height=" << height << " width=" << width
       << " side_fraction=" << format_double(params.side_fraction) << " sigma=" << format_double(params.noise_sigma)
       << " line_fraction=" << format_double(params.line_fraction) << " thickness=" << params.line_thickness
       << " drops_min=" << params.drops_min << " drops_max=" << params.drops_max
       << " radius_min=" << format_double(params.drop_radius_min)
       << " radius_max=" << format_double(params.drop_radius_max) << " alpha=" << format_double(params.drop_alpha)
       << " square_side=" << square_side << " bands=";
    for (std::size_t i = 0; i < bands.size(); ++i) os << (i ? "," : "") << bands[i].start << ':' << bands[i].thickness;
    os << " drops=";
    for (std::size_t i = 0; i < drops.size(); ++i) {
      os << (i ? "," : "") << format_double(drops[i].cy) << ':' << format_double(drops[i].cx) << ':'
         << format_double(drops[i].radius);
    }
    return os.str();
  }

  static CorruptionSpec parse(std::string_view text) {
    using namespace detail;
    CorruptionSpec s;
    for (auto token : split(text, ' ')) {
      if (token.empty()) continue;
      const auto eq = token.find('=');
      if (eq == std::string_view::npos) throw DataError("corruption spec: token without '=': " + std::string(token));
      const auto key = token.substr(0, eq), value = token.substr(eq + 1);
      if (key == "kind") s.kind = parse_kind(value);
      else if (key == "seed") s.seed = parse_u64(value);
      else if (key == "height") s.height = parse_u64(value);
      else if (key == "width") s.width = parse_u64(value);
      else if (key == "side_fraction") s.params.side_fraction = parse_double(value);
      else if (key == "sigma") s.params.noise_sigma = parse_double(value);
      else if (key == "line_fraction") s.params.line_fraction = parse_double(value);
      else if (key == "thickness") s.params.line_thickness = parse_u64(value);
      else if (key == "drops_min") s.params.drops_min = parse_u64(value);
      else if (key == "drops_max") s.params.drops_max = parse_u64(value);
      else if (key == "radius_min") s.params.drop_radius_min = parse_double(value);
      else if (key == "radius_max") s.params.drop_radius_max = parse_double(value);
      else if (key == "alpha") s.params.drop_alpha = parse_double(value);
      else if (key == "square_side") s.square_side = parse_u64(value);
      else if (key == "bands") {
        for (auto b : split(value, ',')) {
          const auto f = split(b, ':');
          if (f.size() != 2) throw DataError("corruption spec: bad band '" + std::string(b) + "'");
          s.bands.push_back({parse_u64(f[0]), parse_u64(f[1])});
        }
      } else if (key == "drops") {
        for (auto d : split(value, ',')) {
          const auto f = split(d, ':');
          if (f.size() != 3) throw DataError("corruption spec: bad drop '" + std::string(d) + "'");
          s.drops.push_back({parse_double(f[0]), parse_double(f[1]), parse_double(f[2])});
        }
      } else {
        throw DataError("corruption spec: unknown key '" + std::string(key) + "'");
      }
    }
    return s;
  }
};

/// Evaluation label: the kind name, with the coverage fraction appended for
/// horizontal lines ("horizontal-lines-0.2").
inline std::string corruption_label(CorruptionKind kind, const CorruptionParams& p) {
  std::string label(kind_name(kind));
  if (kind == CorruptionKind::horizontal_lines) label += "-" + detail::format_double(p.line_fraction);
  return label;
}

inline std::string corruption_label(const CorruptionSpec& spec) { return corruption_label(spec.kind, spec.params); }

/// Parses a label (or bare kind name) into a kind plus parameter overrides on `base`.
inline std::pair<CorruptionKind, CorruptionParams> parse_label(std::string_view label, CorruptionParams base = {}) {
  constexpr std::string_view lines = "horizontal-lines-";
  if (label.starts_with(lines)) {
    base.line_fraction = detail::parse_double(label.substr(lines.size()));
    return {CorruptionKind::horizontal_lines, base};
  }
  return {parse_kind(label), base};
}

/// Resolves every randomized parameter from (kind, seed, dims).
inline CorruptionSpec sample_spec(CorruptionKind kind, std::uint64_t seed, std::size_t height, std::size_t width,
                                  const CorruptionParams& params = {}) {
  CorruptionSpec s;
  s.kind = kind;
  s.seed = seed;
  s.params = params;
  s.height = height;
  s.width = width;
  s.validate();
  const std::size_t short_side = std::min(height, width);
  CounterRng rng(seed, detail::kLayoutStream);

  switch (kind) {
    case CorruptionKind::centered_square:
      s.square_side = static_cast<std::size_t>(std::lround(params.side_fraction * static_cast<double>(short_side)));
      break;
    case CorruptionKind::horizontal_lines: {
      const auto target = std::min<std::size_t>(
          height, static_cast<std::size_t>(std::lround(params.line_fraction * static_cast<double>(height))));
      if (target == 0) break;
      const std::size_t t = params.line_thickness;
      const std::size_t count = (target + t - 1) / t;
      const std::size_t free_rows = height - target;
      // Choose `count` of the (free_rows + count) slots as band positions; the
      // remaining slots are the uncovered rows, so bands never overlap.
      std::vector<std::size_t> slots(free_rows + count);
      std::iota(slots.begin(), slots.end(), std::size_t{0});
      for (std::size_t i = 0; i < count; ++i) std::swap(slots[i], slots[i + rng.below(slots.size() - i)]);
      std::vector<std::size_t> chosen(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(count));
      std::sort(chosen.begin(), chosen.end());
      std::size_t covered = 0;
      for (std::size_t i = 0; i < count; ++i) {
        // The final band is shortened so exactly `target` rows are covered.
        const std::size_t thickness = i + 1 < count ? t : target - (count - 1) * t;
        s.bands.push_back({chosen[i] - i + covered, thickness});
        covered += thickness;
      }
      break;
    }
    case CorruptionKind::water_drops: {
      const auto n = static_cast<std::size_t>(
          rng.between(static_cast<std::int64_t>(params.drops_min), static_cast<std::int64_t>(params.drops_max)));
      for (std::size_t i = 0; i < n; ++i) {
        Drop d;
        d.radius = rng.uniform(params.drop_radius_min, params.drop_radius_max) * static_cast<double>(short_side);
        d.cy = rng.uniform(0.0, static_cast<double>(height));
        d.cx = rng.uniform(0.0, static_cast<double>(width));
        s.drops.push_back(d);
      }
      break;
    }
    case CorruptionKind::gaussian_noise:
    case CorruptionKind::identity:
      break;
  }
  return s;
}

namespace detail {

inline bool inside_drop(const Drop& d, std::size_t y, std::size_t x) {
  const double dy = static_cast<double>(y) + 0.5 - d.cy;
  const double dx = static_cast<double>(x) + 0.5 - d.cx;
  return dy * dy + dx * dx <= d.radius * d.radius;
}

}  // namespace detail

inline Image corrupt(const Image& x, const CorruptionSpec& spec) {
  if (spec.height != x.height || spec.width != x.width) {
    throw DataError("corrupt: spec resolved for " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                    " but image is " + std::to_string(x.height) + "x" + std::to_string(x.width));
  }
  spec.validate();
  Image out = x;
  switch (spec.kind) {
    case CorruptionKind::identity: break;
    case CorruptionKind::centered_square: {
      const std::size_t side = spec.square_side;
      const std::size_t top = (x.height - side) / 2, left = (x.width - side) / 2;
      for (std::size_t y = top; y < top + side; ++y)
        for (std::size_t xx = left; xx < left + side; ++xx)
          for (std::size_t c = 0; c < 3; ++c) out.at(y, xx, c) = 0.0f;
      break;
    }
    case CorruptionKind::horizontal_lines:
      for (const auto& band : spec.bands)
        for (std::size_t y = band.start; y < band.start + band.thickness; ++y)
          std::fill_n(out.pixels.begin() + static_cast<std::ptrdiff_t>(y * x.width * 3), x.width * 3, 0.0f);
      break;
    case CorruptionKind::gaussian_noise: {
      const double sigma = spec.params.noise_sigma;
      if (sigma == 0.0) break;
      CounterRng rng(spec.seed, detail::kNoiseStream);
      for (auto& v : out.pixels) v = static_cast<float>(std::clamp(static_cast<double>(v) + sigma * rng.normal(), 0.0, 1.0));
      break;
    }
    case CorruptionKind::water_drops: {
      const float alpha = static_cast<float>(spec.params.drop_alpha);
      for (const auto& d : spec.drops) {
        const double sigma = d.radius / 3.0;
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(d.cy - d.radius)));
        const auto y1 = std::min(x.height, static_cast<std::size_t>(std::max(0.0, std::ceil(d.cy + d.radius))) + 1);
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(d.cx - d.radius)));
        const auto x1 = std::min(x.width, static_cast<std::size_t>(std::max(0.0, std::ceil(d.cx + d.radius))) + 1);
        if (y0 >= y1 || x0 >= x1) continue;
        const auto blurred = gaussian_blur_region(out, sigma, y0, y1, x0, x1);
        const std::size_t rw = x1 - x0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) {
            if (!detail::inside_drop(d, y, xx)) continue;
            for (std::size_t c = 0; c < 3; ++c) {
              const float b = blurred[((y - y0) * rw + (xx - x0)) * 3 + c];
              out.at(y, xx, c) = std::clamp(alpha * b + (1.0f - alpha) * out.at(y, xx, c), 0.0f, 1.0f);
            }
          }
      }
      break;
    }
  }
  return out;
}

/// Exact masked fraction for the masking kinds (square, lines) and identity;
/// empty for kinds whose footprint must be measured by comparison.
inline std::optional<double> corrupted_fraction(const CorruptionSpec& spec) {
  const double total = static_cast<double>(spec.height * spec.width);
  switch (spec.kind) {
    case CorruptionKind::identity: return 0.0;
    case CorruptionKind::centered_square:
      return static_cast<double>(spec.square_side * spec.square_side) / total;
    case CorruptionKind::horizontal_lines: {
      std::size_t rows = 0;
      for (const auto& b : spec.bands) rows += b.thickness;
      return static_cast<double>(rows) / static_cast<double>(spec.height);
    }
    default: return std::nullopt;
  }
}

/// Fraction of pixel positions where any channel differs.
inline double corrupted_fraction(const Image& clean, const Image& corrupted) {
  require_same_size(clean, corrupted, "corrupted_fraction");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < clean.height * clean.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (clean.pixels[i * 3 + c] != corrupted.pixels[i * 3 + c]) {
        ++changed;
        break;
      }
    }
  }
  return static_cast<double>(changed) / static_cast<double>(clean.height * clean.width);
}

}  // namespace crt
