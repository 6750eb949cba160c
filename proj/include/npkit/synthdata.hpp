#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "npkit/dataio.hpp"
#include "npkit/random.hpp"

namespace npkit {

// Procedurally drawn digit images in the IDX layout. Digits are polyline
// strokes in the unit square, randomly rotated/scaled/sheared per image and
// rasterized with a soft pen profile. This gives a fully offline, labeled,
// deterministic dataset with distinct per-class mean images for tests and
// demos that would otherwise need the real handwriting files.
namespace synth {

using Point = std::array<double, 2>;  // (x right, y down) in [0,1]
using Stroke = std::vector<Point>;

inline Stroke arc(double cx, double cy, double rx, double ry, double a0,
                  double a1, int n = 24) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double t = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

inline Stroke line(Point a, Point b) { return Stroke{a, b}; }

inline std::vector<Stroke> digit_strokes(int digit) {
  constexpr double pi = 3.14159265358979323846;
  switch (digit) {
    case 0:
      return {arc(0.5, 0.5, 0.26, 0.36, 0, 2 * pi, 40)};
    case 1:
      return {line({0.38, 0.26}, {0.54, 0.12}), line({0.54, 0.12}, {0.54, 0.88})};
    case 2:
      return {arc(0.5, 0.32, 0.22, 0.20, pi, 2 * pi + 0.5, 24),
              line({0.70, 0.42}, {0.28, 0.86}), line({0.28, 0.86}, {0.76, 0.86})};
    case 3:
      return {arc(0.46, 0.32, 0.20, 0.18, -0.75 * pi, 0.5 * pi, 24),
              arc(0.46, 0.68, 0.22, 0.20, -0.5 * pi, 0.75 * pi, 24)};
    case 4:
      return {line({0.62, 0.12}, {0.24, 0.60}), line({0.24, 0.60}, {0.80, 0.60}),
              line({0.62, 0.12}, {0.62, 0.88})};
    case 5:
      return {line({0.72, 0.14}, {0.32, 0.14}), line({0.32, 0.14}, {0.30, 0.46}),
              arc(0.48, 0.64, 0.24, 0.21, -0.55 * pi, 0.8 * pi, 24)};
    case 6:
      return {arc(0.58, 0.40, 0.30, 0.30, -0.85 * pi, -0.45 * pi, 16),
              line({0.36, 0.24}, {0.31, 0.62}),
              arc(0.50, 0.67, 0.19, 0.19, 0, 2 * pi, 32)};
    case 7:
      return {line({0.26, 0.14}, {0.76, 0.14}), line({0.76, 0.14}, {0.42, 0.88})};
    case 8:
      return {arc(0.5, 0.30, 0.17, 0.17, 0, 2 * pi, 32),
              arc(0.5, 0.66, 0.22, 0.21, 0, 2 * pi, 32)};
    case 9:
      return {arc(0.5, 0.33, 0.19, 0.20, 0, 2 * pi, 32),
              line({0.69, 0.36}, {0.60, 0.88})};
  }
  throw error("digit_strokes: digit must be 0..9");
}

struct Jitter {
  double rot, sx, sy, shear, tx, ty, thickness, ink;
};

inline Jitter draw_jitter(Philox& rng) {
  Jitter j;
  j.rot = (rng.uniform() * 2 - 1) * 0.22;
  j.sx = 0.78 + rng.uniform() * 0.26;
  j.sy = 0.78 + rng.uniform() * 0.26;
  j.shear = (rng.uniform() * 2 - 1) * 0.15;
  j.tx = (rng.uniform() * 2 - 1) * 0.06;
  j.ty = (rng.uniform() * 2 - 1) * 0.06;
  j.thickness = 0.045 + rng.uniform() * 0.03;
  j.ink = 0.85 + rng.uniform() * 0.15;
  return j;
}

inline Point apply_jitter(const Jitter& j, Point p) {
  double x = p[0] - 0.5, y = p[1] - 0.5;
  x += j.shear * y;
  x *= j.sx;
  y *= j.sy;
  const double c = std::cos(j.rot), s = std::sin(j.rot);
  return {0.5 + c * x - s * y + j.tx, 0.5 + s * x + c * y + j.ty};
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = p[0] - a[0], wy = p[1] - a[1];
  const double vv = vx * vx + vy * vy;
  double t = vv > 0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = t < 0 ? 0 : (t > 1 ? 1 : t);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

inline void render_digit(int digit, const Jitter& j, std::uint8_t* out,
                         std::size_t side) {
  std::vector<Stroke> strokes = digit_strokes(digit);
  for (Stroke& s : strokes) {
    for (Point& p : s) p = apply_jitter(j, p);
  }
  const double soft = 0.030;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const Point px = {(c + 0.5) / side, (r + 0.5) / side};
      double best = 1e9;
      for (const Stroke& s : strokes) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
          best = std::min(best, segment_distance(px, s[i], s[i + 1]));
        }
      }
      double v = (j.thickness - best) / soft + 1.0;
      v = v < 0 ? 0 : (v > 1 ? 1 : v);
      out[r * side + c] = static_cast<std::uint8_t>(
          std::lround(v * j.ink * 255.0));
    }
  }
}

}  // namespace synth

// `count` images of side x side drawn digits with labels i mod 10.
inline std::pair<IdxImages, IdxLabels> make_digit_idx(std::uint32_t count,
                                                      std::uint64_t seed,
                                                      std::uint32_t side = 28) {
  IdxImages im;
  im.count = count;
  im.rows = side;
  im.cols = side;
  im.pixels.resize(std::size_t(count) * side * side);
  IdxLabels lb;
  lb.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(i % 10);
    Philox rng(seed, 0x5D000000ull + i);
    const synth::Jitter j = synth::draw_jitter(rng);
    synth::render_digit(digit, j, im.pixels.data() + std::size_t(i) * side * side,
                        side);
    lb.labels[i] = static_cast<std::uint8_t>(digit);
  }
  return {std::move(im), std::move(lb)};
}

inline ImageDataset make_digit_dataset(std::uint32_t count, std::uint64_t seed,
                                       std::uint32_t side = 28) {
  auto [im, lb] = make_digit_idx(count, seed, side);
  return make_dataset(im, &lb);
}

}  // namespace npkit
