#pragma once

// Procedural tabletop frames for tests: a wall, a shaded table, and a few
// objects that glide across the table over a trajectory, plus a gripper that
// descends toward one of them.

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "crt/image.hpp"
#include "crt/png_io.hpp"
#include "crt/rng.hpp"

namespace scene {

struct Object {
  bool round = false;
  double r = 0, g = 0, b = 0;
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // start and end centers, in [0, 1]
  double size = 0;                        // half extent, fraction of side
};

struct Trajectory {
  double wall[3];
  double table[3];
  double horizon;
  Object objects[4];
  int count;
};

inline Trajectory make_trajectory(std::uint64_t seed) {
  crt::CounterRng rng(seed, 77);
  Trajectory t{};
  for (double& c : t.wall) c = rng.uniform(0.55, 0.85);
  for (double& c : t.table) c = rng.uniform(0.25, 0.55);
  t.horizon = rng.uniform(0.3, 0.42);
  t.count = static_cast<int>(rng.between(2, 4));
  for (int i = 0; i < t.count; ++i) {
    Object& o = t.objects[i];
    o.round = rng.uniform() < 0.5;
    o.r = rng.uniform(0.05, 0.95);
    o.g = rng.uniform(0.05, 0.95);
    o.b = rng.uniform(0.05, 0.95);
    o.size = rng.uniform(0.06, 0.13);
    o.y0 = rng.uniform(t.horizon + 0.1, 0.88);
    o.x0 = rng.uniform(0.12, 0.88);
    o.y1 = std::clamp(o.y0 + rng.uniform(-0.15, 0.15), t.horizon + 0.1, 0.88);
    o.x1 = std::clamp(o.x0 + rng.uniform(-0.3, 0.3), 0.12, 0.88);
  }
  return t;
}

inline crt::Image render(std::size_t side, std::uint64_t trajectory_seed, std::size_t frame, std::size_t frames) {
  const Trajectory t = make_trajectory(trajectory_seed);
  const double s = frames > 1 ? static_cast<double>(frame) / static_cast<double>(frames - 1) : 0.0;
  const double S = static_cast<double>(side);
  crt::Image img(side, side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double v = (static_cast<double>(y) + 0.5) / S, u = (static_cast<double>(x) + 0.5) / S;
      double px[3];
      if (v < t.horizon) {
        for (int c = 0; c < 3; ++c) px[c] = t.wall[c] * (0.9 + 0.1 * u);
      } else {
        const double shade = 0.75 + 0.35 * (v - t.horizon);
        for (int c = 0; c < 3; ++c) px[c] = t.table[c] * shade;
        // Faint wood grain.
        const double grain = 0.03 * std::sin(40.0 * v + 6.0 * std::sin(9.0 * u));
        for (double& c : px) c += grain;
      }
      for (int i = 0; i < t.count; ++i) {
        const Object& o = t.objects[i];
        const double cy = o.y0 + (o.y1 - o.y0) * s, cx = o.x0 + (o.x1 - o.x0) * s;
        const double dy = (v - cy) / o.size, dx = (u - cx) / o.size;
        // Soft contact shadow below each object.
        const double sh = ((v - cy - 0.6 * o.size) / (0.5 * o.size));
        if (std::abs(dx) < 1.2 && std::abs(sh) < 1.0)
          for (double& c : px) c *= 0.85;
        const bool inside = o.round ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        const double light = 1.05 - 0.25 * (dy + dx) * 0.5;
        px[0] = o.r * light;
        px[1] = o.g * light;
        px[2] = o.b * light;
      }
      // Gripper: a grey bar descending from the top toward the first object.
      const Object& target = t.objects[0];
      const double gx = target.x0 + (target.x1 - target.x0) * s;
      const double gy = 0.05 + (target.y0 - target.size - 0.1) * s;
      if (std::abs(u - gx) < 0.04 && v < gy) {
        for (double& c : px) c = 0.35;
      }
      if (std::abs(v - gy) < 0.03 && std::abs(u - gx) < 0.09) {
        for (double& c : px) c = 0.2;
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, static_cast<std::size_t>(c)) = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
    }
  return img;
}

/// Writes <root>/trajNN/FFFF.png for every trajectory and frame.
inline void write_trajectories(const std::filesystem::path& root, std::size_t trajectories, std::size_t frames,
                               std::size_t side, std::uint64_t seed) {
  for (std::size_t t = 0; t < trajectories; ++t) {
    char dir[32];
    std::snprintf(dir, sizeof dir, "traj%02zu", t);
    for (std::size_t f = 0; f < frames; ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "%04zu.png", f);
      crt::save_image(render(side, crt::hash_combine(seed, t), f, frames), root / dir / name);
    }
  }
}

}  // namespace scene
