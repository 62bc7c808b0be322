#include "nmsparse/digits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "nmsparse/rng.hpp"

namespace nmsparse {

namespace {

struct Point {
  double x;
  double y;
};

using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

Stroke ellipse(double cx, double cy, double rx, double ry, int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double t = 2.0 * std::numbers::pi * i / steps;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Unit-square glyphs, x to the right and y downwards.
const std::array<Glyph, 10>& glyphs() {
  static const std::array<Glyph, 10> g = {
      Glyph{ellipse(0.5, 0.5, 0.2, 0.33)},
      Glyph{{{0.5, 0.15}, {0.5, 0.85}}, {{0.36, 0.3}, {0.5, 0.15}}},
      Glyph{{{0.3, 0.3}, {0.4, 0.18}, {0.6, 0.17}, {0.7, 0.3}, {0.67, 0.44}, {0.3, 0.84},
             {0.74, 0.84}}},
      Glyph{{{0.3, 0.2}, {0.68, 0.19}, {0.48, 0.47}, {0.68, 0.6}, {0.67, 0.77}, {0.5, 0.86},
             {0.3, 0.8}}},
      Glyph{{{0.62, 0.86}, {0.62, 0.15}, {0.27, 0.63}, {0.76, 0.63}}},
      Glyph{{{0.7, 0.17}, {0.34, 0.17}, {0.31, 0.47}, {0.55, 0.42}, {0.7, 0.55}, {0.7, 0.73},
             {0.55, 0.85}, {0.3, 0.8}}},
      Glyph{{{0.66, 0.18}, {0.46, 0.28}, {0.33, 0.55}, {0.35, 0.78}, {0.5, 0.86}, {0.66, 0.77},
             {0.66, 0.59}, {0.5, 0.5}, {0.34, 0.58}}},
      Glyph{{{0.27, 0.17}, {0.73, 0.17}, {0.44, 0.86}}, {{0.4, 0.5}, {0.64, 0.5}}},
      Glyph{ellipse(0.5, 0.32, 0.15, 0.15), ellipse(0.5, 0.66, 0.19, 0.19)},
      Glyph{ellipse(0.5, 0.35, 0.17, 0.17), {{0.67, 0.35}, {0.6, 0.86}}},
  };
  return g;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

double glyph_distance(const Glyph& g, Point p) {
  double d = 1e9;
  for (const Stroke& s : g)
    for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
  return d;
}

// Draw slots of the counter RNG.
constexpr std::uint64_t kLabel = 0, kRotation = 1, kScale = 2, kShear = 3, kShiftX = 4,
                        kShiftY = 5, kThickness = 6, kAspect = 7, kClutter = 8, kClutterA = 9,
                        kClutterB = 10, kClutterC = 11, kClutterD = 12, kNoise = 13;

}  // namespace

IdxDataset make_digits(std::size_t count, std::uint64_t seed, const DigitStyle& style) {
  if (style.size < 4) throw std::invalid_argument("make_digits: image side must be >= 4");
  const CounterRng rng(seed);
  const std::size_t n = style.size;
  IdxDataset out;
  out.count = count;
  out.rows = n;
  out.cols = n;
  out.images.resize(count * n * n);
  out.labels.resize(count);

  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<std::uint8_t>(rng.below(10, i, kLabel));
    out.labels[i] = label;
    Glyph glyph = glyphs()[label];

    if (rng.uniform_open(i, kClutter) < style.clutter) {
      glyph.push_back(Stroke{{rng.uniform(0.05, 0.95, i, kClutterA), rng.uniform(0.05, 0.95, i, kClutterB)},
                       {rng.uniform(0.05, 0.95, i, kClutterC), rng.uniform(0.05, 0.95, i, kClutterD)}});
      // Short stray mark: shrink toward its first point.
      Stroke& s = glyph.back();
      s[1] = {s[0].x + 0.3 * (s[1].x - s[0].x), s[0].y + 0.3 * (s[1].y - s[0].y)};
    }

    const double angle = rng.uniform(-style.max_rotation, style.max_rotation, i, kRotation);
    const double scale = rng.uniform(style.min_scale, style.max_scale, i, kScale);
    const double aspect = rng.uniform(0.85, 1.15, i, kAspect);
    const double shear = rng.uniform(-style.max_shear, style.max_shear, i, kShear);
    const double sx = rng.uniform(-style.max_shift, style.max_shift, i, kShiftX);
    const double sy = rng.uniform(-style.max_shift, style.max_shift, i, kShiftY);
    const double thick = rng.uniform(style.min_thickness, style.max_thickness, i, kThickness);

    // Forward map glyph -> image: centre, shear, scale, rotate, shift.
    // Pixels are rendered by mapping their centres back into glyph space.
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double ax = scale * aspect;
    const double ay = scale / aspect;
    // A = R * S * H with H = [[1, shear], [0, 1]], S = diag(ax, ay).
    const double a00 = c * ax, a01 = c * ax * shear - s * ay;
    const double a10 = s * ax, a11 = s * ax * shear + c * ay;
    const double det = a00 * a11 - a01 * a10;
    const double i00 = a11 / det, i01 = -a01 / det;
    const double i10 = -a10 / det, i11 = a00 / det;
    // Stroke width is defined in image space; glyph-space distances are
    // rescaled by the mean scale so width stays roughly uniform.
    const double unit = std::sqrt(std::abs(det));

    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t col = 0; col < n; ++col) {
        const double px = (static_cast<double>(col) + 0.5) / static_cast<double>(n) - 0.5 - sx;
        const double py = (static_cast<double>(r) + 0.5) / static_cast<double>(n) - 0.5 - sy;
        const Point q{i00 * px + i01 * py + 0.5, i10 * px + i11 * py + 0.5};
        const double d = glyph_distance(glyph, q) * unit;
        const double soft = 0.6 / static_cast<double>(n);
        double v = std::clamp((thick + soft - d) / soft, 0.0, 1.0);
        v += style.noise * rng.normal(i, kNoise, r * n + col);
        out.images[(i * n + r) * n + col] =
            static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
      }
    }
  }
  return out;
}

}  // namespace nmsparse
