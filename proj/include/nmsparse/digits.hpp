#pragma once

#include <cstddef>
#include <cstdint>

#include "nmsparse/io.hpp"

namespace nmsparse {

struct DigitStyle {
  std::size_t size = 16;          // square image side in pixels
  double max_rotation = 0.22;     // radians
  double min_scale = 0.78;
  double max_scale = 1.05;
  double max_shear = 0.18;
  double max_shift = 0.09;        // fraction of the side
  double min_thickness = 0.045;   // stroke half-width, fraction of the side
  double max_thickness = 0.085;
  double noise = 0.10;            // additive Gaussian, in [0, 1] intensity
  double clutter = 0.35;          // probability of one stray stroke
};

/// Procedural handwritten-digit stand-in: stroke glyphs for 0-9 under a
/// random affine warp, stroke width, stray marks and pixel noise. Labels
/// are uniform over 0-9. Deterministic in `seed`; sample i only depends on
/// (seed, i).
IdxDataset make_digits(std::size_t count, std::uint64_t seed, const DigitStyle& style = {});

}  // namespace nmsparse
