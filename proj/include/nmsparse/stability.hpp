#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "nmsparse/matrix.hpp"
#include "nmsparse/model.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

// Prediction-stability certificates for compositional classifiers
// softmax(f_d(...f_1(x))) with f_i(x) = act(W_i x + b_i).
//
// Every norm here is the operator infinity-norm (max absolute row sum) and
// vectors use the max-norm. For a conv layer the norm of its unfolded
// weight matrix bounds the norm of the convolution operator, so the
// certificates remain valid for conv stacks.
//
// The per-sample bounds propagate ||x_{j-1}|| <= L^{j-1} prod ||W_i|| ||x||,
// which needs act(0) = 0 and zero biases in the layers before j. Biases in
// layer j and later cancel. The `bias_free` flag on a certificate reports
// whether the model satisfies this.
//
// The confidence gamma of a probability vector is the smallest max-norm
// shift that changes its argmax. It lies in [0, 1/2].

struct NormProfile {
  std::vector<double> norms;   // ||W_i||_inf per layer, in order
  std::vector<bool> zero_bias;  // per layer
  double activation_lipschitz = 1.0;

  std::size_t depth() const { return norms.size(); }
  /// True when layers 1..j-1 carry no bias.
  bool bias_free_before(std::size_t j) const;
};

/// Norms of the dense (unmasked) weights; L = 1 for relu and identity.
NormProfile norm_profile(const CompositionalClassifier& model);

/// L^d * prod_i ||W_i||.
double lipschitz_bound(const NormProfile& profile);
double lipschitz_bound(const CompositionalClassifier& model);

/// Bound after adding a perturbation of norm `delta_norm` to layer j
/// (1-based): L_f + L * delta_norm * prod_{i != j} ||W_i||.
double perturbed_lipschitz_bound(const NormProfile& profile, std::size_t j, double delta_norm);

struct Perturbation {
  Matrix delta;
  double norm = 0.0;
};

/// Delta with W + Delta == B ⊙ W, i.e. Delta_ij = (B_ij - 1) W_ij.
Perturbation mask_to_perturbation(const BitMask& mask, const Matrix& w);
Perturbation mask_to_perturbation(const Matrix& mask, const Matrix& w);

/// (p_(1) - p_(2)) / 2 over the two largest entries. Requires >= 2 classes.
double confidence(std::span<const double> probs);

/// Which bound produced a certificate (numbered as in the CLI --lemma flag).
enum class BoundKind : int {
  Lipschitz = 1,
  PerturbedLipschitz = 2,
  MaskNorm = 3,
  Perturbation = 4,
  AnyMask = 5,
  MaskAfterUpdate = 6,
};

struct StabilityCertificate {
  std::size_t sample_id = 0;
  double gamma = 0.0;
  double bound = 0.0;
  bool stable_guaranteed = false;  // gamma > bound
  bool vacuous = false;            // bound >= 1/2
  bool bias_free = true;           // no bias before the perturbed layer
  BoundKind kind = BoundKind::Perturbation;
};

/// bound = L^d * delta_norm * ||x|| * prod_{i != j} ||W_i||, j 1-based.
StabilityCertificate stability_margin(const CompositionalClassifier& model,
                                      const NormProfile& profile, std::span<const double> x,
                                      std::size_t j, double delta_norm, std::size_t sample_id = 0);
StabilityCertificate stability_margin(const CompositionalClassifier& model,
                                      std::span<const double> x, std::size_t j,
                                      const Matrix& delta, std::size_t sample_id = 0);

/// Worst case over every mask of layer j: bound = L^d ||x|| prod_i ||W_i||.
StabilityCertificate masking_stability(const CompositionalClassifier& model,
                                       const NormProfile& profile, std::span<const double> x,
                                       std::size_t j, std::size_t sample_id = 0);

/// Mask reused after updating W_j by U_j:
/// bound = L^d (||W_j|| + ||U_j||) ||x|| prod_{i != j} ||W_i||.
StabilityCertificate update_masking_stability(const CompositionalClassifier& model,
                                              const NormProfile& profile,
                                              std::span<const double> x, std::size_t j,
                                              double update_norm, std::size_t sample_id = 0);
StabilityCertificate update_masking_stability(const CompositionalClassifier& model,
                                              std::span<const double> x, std::size_t j,
                                              const Matrix& update, std::size_t sample_id = 0);

/// Header "sample\tgamma\tbound\tlemma\tguaranteed\tvacuous", one line per certificate.
void write_certificates(std::ostream& os, const std::vector<StabilityCertificate>& certs);

}  // namespace nmsparse
