#include "nmsparse/stability.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace nmsparse {

namespace {

double product_except(const NormProfile& profile, std::size_t skip) {
  double p = 1.0;
  for (std::size_t i = 0; i < profile.norms.size(); ++i)
    if (i != skip) p *= profile.norms[i];
  return p;
}

void check_layer(const NormProfile& profile, std::size_t j) {
  if (j == 0 || j > profile.depth()) {
    throw std::invalid_argument("layer index " + std::to_string(j) + " outside 1.." +
                                std::to_string(profile.depth()));
  }
}

StabilityCertificate certify(const CompositionalClassifier& model, const NormProfile& profile,
                             std::span<const double> x, std::size_t j, double bound,
                             BoundKind kind, std::size_t sample_id) {
  StabilityCertificate c;
  c.sample_id = sample_id;
  c.gamma = confidence(forward(model, x, ForwardMode::Dense));
  c.bound = bound;
  c.stable_guaranteed = c.gamma > bound;
  c.vacuous = bound >= 0.5;
  c.bias_free = profile.bias_free_before(j);
  c.kind = kind;
  return c;
}

}  // namespace

NormProfile norm_profile(const CompositionalClassifier& model) {
  NormProfile p;
  for (const Layer& l : model.layers) {
    p.norms.push_back(norm_inf(l.weights.values));
    p.zero_bias.push_back(
        std::all_of(l.bias.begin(), l.bias.end(), [](double b) { return b == 0.0; }));
  }
  p.activation_lipschitz = 1.0;  // relu and identity
  return p;
}

bool NormProfile::bias_free_before(std::size_t j) const {
  for (std::size_t i = 0; i + 1 < j && i < zero_bias.size(); ++i)
    if (!zero_bias[i]) return false;
  return true;
}

double lipschitz_bound(const NormProfile& profile) {
  return std::pow(profile.activation_lipschitz, static_cast<double>(profile.depth())) *
         product_except(profile, profile.depth());
}

double lipschitz_bound(const CompositionalClassifier& model) {
  return lipschitz_bound(norm_profile(model));
}

double perturbed_lipschitz_bound(const NormProfile& profile, std::size_t j, double delta_norm) {
  check_layer(profile, j);
  return lipschitz_bound(profile) +
         profile.activation_lipschitz * delta_norm * product_except(profile, j - 1);
}

Perturbation mask_to_perturbation(const Matrix& mask, const Matrix& w) {
  if (mask.rows() != w.rows() || mask.cols() != w.cols()) {
    throw std::invalid_argument("mask_to_perturbation: shape mismatch");
  }
  Perturbation p{Matrix(w.rows(), w.cols()), 0.0};
  for (std::size_t i = 0; i < w.size(); ++i) {
    // (B - 1) W: exactly -W where B = 0 and exactly 0 where B = 1.
    p.delta.data()[i] = mask.data()[i] == 0.0 ? -w.data()[i] : (mask.data()[i] - 1.0) * w.data()[i];
  }
  p.norm = norm_inf(p.delta);
  return p;
}

Perturbation mask_to_perturbation(const BitMask& mask, const Matrix& w) {
  return mask_to_perturbation(mask.to_matrix(), w);
}

double confidence(std::span<const double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("confidence: need at least two classes");
  double first = -1.0;
  double second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return (first - second) / 2.0;
}

StabilityCertificate stability_margin(const CompositionalClassifier& model,
                                      const NormProfile& profile, std::span<const double> x,
                                      std::size_t j, double delta_norm, std::size_t sample_id) {
  check_layer(profile, j);
  const double bound = std::pow(profile.activation_lipschitz, static_cast<double>(profile.depth())) *
                       delta_norm * norm_inf(x) * product_except(profile, j - 1);
  return certify(model, profile, x, j, bound, BoundKind::Perturbation, sample_id);
}

StabilityCertificate stability_margin(const CompositionalClassifier& model,
                                      std::span<const double> x, std::size_t j,
                                      const Matrix& delta, std::size_t sample_id) {
  const NormProfile profile = norm_profile(model);
  check_layer(profile, j);
  const Matrix& w = model.layers[j - 1].weights.values;
  if (delta.rows() != w.rows() || delta.cols() != w.cols()) {
    throw std::invalid_argument("stability_margin: perturbation shape mismatch");
  }
  return stability_margin(model, profile, x, j, norm_inf(delta), sample_id);
}

StabilityCertificate masking_stability(const CompositionalClassifier& model,
                                       const NormProfile& profile, std::span<const double> x,
                                       std::size_t j, std::size_t sample_id) {
  check_layer(profile, j);
  const double bound = std::pow(profile.activation_lipschitz, static_cast<double>(profile.depth())) *
                       norm_inf(x) * product_except(profile, profile.depth());
  return certify(model, profile, x, j, bound, BoundKind::AnyMask, sample_id);
}

StabilityCertificate update_masking_stability(const CompositionalClassifier& model,
                                              const NormProfile& profile,
                                              std::span<const double> x, std::size_t j,
                                              double update_norm, std::size_t sample_id) {
  check_layer(profile, j);
  const double bound = std::pow(profile.activation_lipschitz, static_cast<double>(profile.depth())) *
                       (profile.norms[j - 1] + update_norm) * norm_inf(x) *
                       product_except(profile, j - 1);
  return certify(model, profile, x, j, bound, BoundKind::MaskAfterUpdate, sample_id);
}

StabilityCertificate update_masking_stability(const CompositionalClassifier& model,
                                              std::span<const double> x, std::size_t j,
                                              const Matrix& update, std::size_t sample_id) {
  const NormProfile profile = norm_profile(model);
  check_layer(profile, j);
  const Matrix& w = model.layers[j - 1].weights.values;
  if (update.rows() != w.rows() || update.cols() != w.cols()) {
    throw std::invalid_argument("update_masking_stability: update shape mismatch");
  }
  return update_masking_stability(model, profile, x, j, norm_inf(update), sample_id);
}

void write_certificates(std::ostream& os, const std::vector<StabilityCertificate>& certs) {
  os << "sample\tgamma\tbound\tlemma\tguaranteed\tvacuous\n";
  const auto old = os.precision(17);
  for (const auto& c : certs) {
    os << c.sample_id << '\t' << c.gamma << '\t' << c.bound << '\t' << static_cast<int>(c.kind)
       << '\t' << (c.stable_guaranteed ? 1 : 0) << '\t' << (c.vacuous ? 1 : 0) << '\n';
  }
  os.precision(old);
}

}  // namespace nmsparse
