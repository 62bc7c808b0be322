#pragma once

// Brute-force soundness oracles for the stability certificates and the
// hand-computed bound fixtures. Shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <vector>

#include "nmsparse/sparse_kernel.hpp"
#include "nmsparse/stability.hpp"
#include "toy_models.hpp"

namespace nmsparse::testing {

struct SoundnessTally {
  std::size_t trials = 0;        // concrete perturbations applied to certified samples
  std::size_t certified = 0;     // certificates with stable_guaranteed
  std::size_t violations = 0;    // certified samples whose argmax moved
  std::size_t uncertified_flips = 0;  // argmax moves among uncertified samples
};

inline std::size_t predict(const CompositionalClassifier& m, std::span<const double> x) {
  return argmax(forward(m, x, ForwardMode::Dense));
}

/// Random dense perturbations of layer j, sized so the bound lands on
/// both sides of each sample's confidence.
inline SoundnessTally perturbation_soundness(const CompositionalClassifier& model,
                                             const std::vector<std::vector<double>>& xs,
                                             std::uint64_t seed) {
  SoundnessTally t;
  const CounterRng rng(seed);
  const NormProfile prof = norm_profile(model);
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const std::size_t base = predict(model, xs[s]);
    for (std::size_t j = 1; j <= model.depth(); ++j) {
      const Matrix& w = model.layers[j - 1].weights.values;
      Matrix delta = random_matrix(w.rows(), w.cols(), seed + s, j);
      double rest = norm_inf(xs[s]);
      for (std::size_t i = 0; i < prof.depth(); ++i)
        if (i != j - 1) rest *= prof.norms[i];
      const double gamma = confidence(forward(model, xs[s], ForwardMode::Dense));
      if (rest == 0.0) continue;
      scale_rows_to(delta, gamma * std::exp(rng.uniform(std::log(0.5), std::log(50.0), s, j)) / rest);
      const StabilityCertificate c = stability_margin(model, xs[s], j, delta, s);
      CompositionalClassifier moved = model;
      Matrix& mw = moved.layers[j - 1].weights.values;
      for (std::size_t i = 0; i < mw.size(); ++i) mw.data()[i] += delta.data()[i];
      const bool flipped = predict(moved, xs[s]) != base;
      if (c.stable_guaranteed) {
        ++t.certified;
        ++t.trials;
        t.violations += flipped;
      } else {
        t.uncertified_flips += flipped;
      }
    }
  }
  return t;
}

/// Every 2:4 mask of layer j (exhaustive, 6^blocks) against the any-mask bound.
inline SoundnessTally any_mask_soundness(const CompositionalClassifier& model,
                                         const std::vector<std::vector<double>>& xs,
                                         std::size_t j) {
  SoundnessTally t;
  const NormProfile prof = norm_profile(model);
  const PatternMatrix pm(model.config);
  const Matrix& w = model.layers[j - 1].weights.values;
  const std::size_t blocks = w.rows() * w.cols() / pm.block_len();
  std::size_t total = 1;
  for (std::size_t b = 0; b < blocks; ++b) total *= pm.count();

  std::vector<bool> certified;
  std::vector<std::size_t> base;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    certified.push_back(masking_stability(model, prof, xs[s], j, s).stable_guaranteed);
    base.push_back(predict(model, xs[s]));
    t.certified += certified.back();
  }

  std::vector<bool> flipped(xs.size(), false);
  std::vector<std::optional<Matrix>> masks(model.depth());
  HardChoice hc{pm.count(), std::vector<std::uint32_t>(blocks)};
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rem = code;
    for (std::size_t b = 0; b < blocks; ++b) {
      hc.index[b] = static_cast<std::uint32_t>(rem % pm.count());
      rem /= pm.count();
    }
    masks[j - 1] = assemble_hard_mask(hc, pm, w.rows(), w.cols()).to_matrix();
    const EffectiveWeights eff = masked_weights(model, masks);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const bool moved = argmax(forward(model, eff, xs[s])) != base[s];
      if (certified[s]) {
        ++t.trials;
        t.violations += moved;
      } else if (moved && !flipped[s]) {
        flipped[s] = true;
        ++t.uncertified_flips;
      }
    }
  }
  return t;
}

/// Random (mask, small update) pairs: the layer becomes B ⊙ (W_j + U_j).
inline SoundnessTally update_soundness(const CompositionalClassifier& model,
                                       const std::vector<std::vector<double>>& xs, std::size_t j,
                                       std::size_t pairs, double max_update_norm,
                                       std::uint64_t seed) {
  SoundnessTally t;
  const CounterRng rng(seed);
  const NormProfile prof = norm_profile(model);
  const Matrix& w = model.layers[j - 1].weights.values;
  std::vector<std::size_t> base;
  for (const auto& x : xs) base.push_back(predict(model, x));
  for (std::size_t p = 0; p < pairs; ++p) {
    Matrix u = random_matrix(w.rows(), w.cols(), seed, 100 + p);
    const double unorm = max_update_norm * rng.uniform_open(p);
    scale_rows_to(u, unorm);
    const BitMask b = random_mask(w.rows(), w.cols(), model.config, seed, 10000 + p);
    CompositionalClassifier moved = model;
    Matrix& mw = moved.layers[j - 1].weights.values;
    for (std::size_t i = 0; i < mw.size(); ++i)
      mw.data()[i] = b.bits[i] ? w.data()[i] + u.data()[i] : 0.0;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const StabilityCertificate c = update_masking_stability(model, prof, xs[s], j, norm_inf(u), s);
      const bool flipped = predict(moved, xs[s]) != base[s];
      if (c.stable_guaranteed) {
        ++t.certified;
        ++t.trials;
        t.violations += flipped;
      } else {
        t.uncertified_flips += flipped;
      }
    }
  }
  return t;
}

/// Largest ||f(x1) - f(x2)|| / ||x1 - x2|| over random pairs in [-1, 1]^n,
/// measured on pre-softmax scores (softmax only shrinks the quotient).
inline double max_lipschitz_quotient(const CompositionalClassifier& model, std::size_t pairs,
                                     std::uint64_t seed) {
  const CounterRng rng(seed);
  const std::size_t n = model.input_size();
  const EffectiveWeights eff = effective_weights(model, ForwardMode::Dense);
  double worst = 0.0;
  std::vector<double> a(n), b(n);
  for (std::size_t p = 0; p < pairs; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-1, 1, p, i, 0);
      // Half the pairs are close together to probe the local slope.
      const double spread = p % 2 == 0 ? 1.0 : 1e-3;
      b[i] = a[i] + spread * rng.uniform(-1, 1, p, i, 1);
    }
    const auto fa = forward_logits(model, eff, a);
    const auto fb = forward_logits(model, eff, b);
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < fa.size(); ++c) num = std::max(num, std::abs(fa[c] - fb[c]));
    for (std::size_t i = 0; i < n; ++i) den = std::max(den, std::abs(a[i] - b[i]));
    if (den > 0.0) worst = std::max(worst, num / den);
  }
  return worst;
}

/// A tiny model with bounds worked out by hand.
struct BoundFixture {
  const char* name;
  CompositionalClassifier model;
  std::vector<double> x;
  std::size_t j;            // perturbed layer, 1-based
  double delta_norm;
  double update_norm;
  double lipschitz;         // L^d prod ||W_i||
  double perturbed;         // lipschitz + delta_norm * prod_{i != j}
  double perturbation;      // delta_norm * ||x|| * prod_{i != j}
  double any_mask;          // ||x|| * prod_i
  double after_update;      // (||W_j|| + update_norm) * ||x|| * prod_{i != j}
};

inline std::vector<BoundFixture> bound_fixtures() {
  std::vector<BoundFixture> out;
  {
    // One relu layer, W = 2I.
    CompositionalClassifier m;
    m.layers.push_back(make_linear_layer("w", 2, 2, Activation::Relu));
    m.layers[0].weights.values = Matrix(2, 2, {2, 0, 0, 2});
    out.push_back({"diagonal", m, {0.5, -0.25}, 1, 1.0, 0.5, 2.0, 3.0, 0.5, 1.0, 1.25});
  }
  {
    // Norms 3 and 2.
    CompositionalClassifier m;
    m.layers.push_back(make_linear_layer("a", 2, 2, Activation::Relu));
    m.layers.push_back(make_linear_layer("b", 2, 2, Activation::Identity));
    m.layers[0].weights.values = Matrix(2, 2, {1, -2, 0.5, 0.5});
    m.layers[1].weights.values = Matrix(2, 2, {1, 1, -1, 0.25});
    out.push_back({"two-layer", m, {0.5, -1.0}, 2, 0.25, 0.5, 6.0, 6.0 + 0.25 * 3.0, 0.75, 6.0,
                   (2.0 + 0.5) * 3.0});
  }
  {
    // 3x3 conv on a 1x3x3 input (norm 2.75), then a 9 -> 2 head (norm 0.9).
    CompositionalClassifier m;
    m.layers.push_back(make_conv_layer("conv", 1, 3, 3, 1, 3, Activation::Relu, true));
    m.layers.push_back(make_linear_layer("fc", 9, 2, Activation::Identity));
    const std::vector<double> k = {1, -1, 0.5, 0, 0, 0, 0.25, 0, 0};
    for (std::size_t c = 0; c < 9; ++c) m.layers[0].weights.values(0, c) = k[c];
    for (double& v : m.layers[1].weights.values.data()) v = 0.1;
    out.push_back({"conv", m, std::vector<double>(9, -0.5), 1, 0.125, 1.0, 2.75 * 0.9,
                   2.75 * 0.9 + 0.125 * 0.9, 0.125 * 0.5 * 0.9, 0.5 * 2.75 * 0.9,
                   (2.75 + 1.0) * 0.5 * 0.9});
  }
  return out;
}

struct BoundCheck {
  double lipschitz, perturbed, perturbation, any_mask, after_update;
};

inline BoundCheck compute_bounds(const BoundFixture& f) {
  const NormProfile p = norm_profile(f.model);
  return {lipschitz_bound(p), perturbed_lipschitz_bound(p, f.j, f.delta_norm),
          stability_margin(f.model, p, f.x, f.j, f.delta_norm).bound,
          masking_stability(f.model, p, f.x, f.j).bound,
          update_masking_stability(f.model, p, f.x, f.j, f.update_norm).bound};
}

}  // namespace nmsparse::testing
