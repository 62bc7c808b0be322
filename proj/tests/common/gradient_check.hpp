#pragma once

// Central-difference oracle for the mask-logit gradients.

#include <algorithm>
#include <cmath>
#include <vector>

#include "nmsparse/model.hpp"

namespace nmsparse::testing {

inline double soft_batch_loss(const CompositionalClassifier& m, const Dataset& d,
                              std::span<const std::size_t> batch, const MaskNoise& noise) {
  double s = 0.0;
  for (std::size_t i : batch)
    s += cross_entropy(forward(m, d.sample(i), ForwardMode::Soft, &noise), d.labels[i]);
  return s / static_cast<double>(batch.size());
}

struct GradientCheck {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  double loss_mismatch = 0.0;  // |reported loss - recomputed loss|
};

/// Compares grads_wrt_logits with (L(l + h) - L(l - h)) / 2h for every logit
/// of every maskable layer. Relative error uses max(|fd|, 1e-6) as scale.
inline GradientCheck check_logit_gradients(const CompositionalClassifier& m, const Dataset& d,
                                           std::span<const std::size_t> batch,
                                           const MaskNoise& noise, double h = 1e-5) {
  GradientCheck out;
  const LogitGradients g = grads_wrt_logits(m, d, batch, noise);
  out.loss_mismatch = std::abs(g.loss - soft_batch_loss(m, d, batch, noise));
  CompositionalClassifier probe = m;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (!m.layers[li].logits) continue;
    std::vector<double>& logits = probe.layers[li].logits->logits;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double orig = logits[i];
      logits[i] = orig + h;
      const double up = soft_batch_loss(probe, d, batch, noise);
      logits[i] = orig - h;
      const double dn = soft_batch_loss(probe, d, batch, noise);
      logits[i] = orig;
      const double fd = (up - dn) / (2 * h);
      out.max_relative_error = std::max(
          out.max_relative_error, std::abs(fd - g.logits[li][i]) / std::max(std::abs(fd), 1e-6));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace nmsparse::testing
