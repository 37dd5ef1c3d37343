// Device-selection distributions over N devices.
#ifndef FEDSIM_SELECTION_HPP
#define FEDSIM_SELECTION_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedsim/log.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class SelectionKind { kUniform, kLbNearOptimal, kNormProportional, kLbh };

inline std::string to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::kUniform: return "uniform";
    case SelectionKind::kLbNearOptimal: return "lb_near_optimal";
    case SelectionKind::kNormProportional: return "norm_proportional";
    case SelectionKind::kLbh: return "lbh";
  }
  return "unknown";
}

struct SelectionDistribution {
  SelectionKind kind = SelectionKind::kUniform;
  std::vector<double> probs;
  /// True when every score was zero and uniform probabilities were used.
  bool fell_back = false;
};

inline SelectionDistribution uniform_distribution(std::size_t n) {
  if (n == 0) throw DistributionError("uniform_distribution: N must be >= 1");
  return {SelectionKind::kUniform, std::vector<double>(n, 1.0 / static_cast<double>(n)), false};
}

namespace detail {

/// Normalizes |score_k| into probabilities; uniform when all vanish.
inline SelectionDistribution normalize_abs(SelectionKind kind, std::span<const double> scores) {
  if (scores.empty()) throw DistributionError("selection over zero devices");
  double total = 0.0;
  for (double s : scores) total += std::abs(s);
  if (!(total > 0.0)) {
    log::info(to_string(kind) + ": all scores zero, falling back to uniform");
    auto d = uniform_distribution(scores.size());
    d.kind = kind;
    d.fell_back = true;
    return d;
  }
  SelectionDistribution d{kind, std::vector<double>(scores.size()), false};
  for (std::size_t k = 0; k < scores.size(); ++k) d.probs[k] = std::abs(scores[k]) / total;
  return d;
}

inline std::vector<double> inner_products(std::span<const ParamVector> local_grads,
                                          const ParamVector& global_grad) {
  std::vector<double> ip(local_grads.size());
  for (std::size_t k = 0; k < local_grads.size(); ++k) ip[k] = dot(global_grad, local_grads[k]);
  return ip;
}

}  // namespace detail

/// P_k proportional to |<grad f, grad F_k>|.
inline SelectionDistribution lb_near_optimal_distribution(std::span<const ParamVector> local_grads,
                                                          const ParamVector& global_grad) {
  const auto ip = detail::inner_products(local_grads, global_grad);
  return detail::normalize_abs(SelectionKind::kLbNearOptimal, ip);
}

/// Same rule from precomputed inner products.
inline SelectionDistribution lb_near_optimal_from_inner(std::span<const double> inner) {
  return detail::normalize_abs(SelectionKind::kLbNearOptimal, inner);
}

/// Cauchy-Schwarz surrogate: P_k proportional to ||grad F_k||.
inline SelectionDistribution norm_proportional_distribution(
    std::span<const ParamVector> local_grads) {
  std::vector<double> norms(local_grads.size());
  for (std::size_t k = 0; k < local_grads.size(); ++k) norms[k] = l2_norm(local_grads[k]);
  return detail::normalize_abs(SelectionKind::kNormProportional, norms);
}

/// Heterogeneity-aware scores I_k = <grad f, grad F_k> - psi * gamma_k * ||grad f||^2.
inline std::vector<double> heterogeneity_scores(std::span<const double> inner,
                                                std::span<const double> gammas, double psi,
                                                double global_norm_sq) {
  detail::require_same_size(inner.size(), gammas.size(), "heterogeneity_scores");
  std::vector<double> scores(inner.size());
  for (std::size_t k = 0; k < inner.size(); ++k) {
    scores[k] = inner[k] - psi * gammas[k] * global_norm_sq;
  }
  return scores;
}

/// P_k proportional to |I_k|.
inline SelectionDistribution lbh_distribution(std::span<const ParamVector> local_grads,
                                              const ParamVector& global_grad,
                                              std::span<const double> gammas, double psi) {
  const auto ip = detail::inner_products(local_grads, global_grad);
  const auto scores = heterogeneity_scores(ip, gammas, psi, l2_norm_sq(global_grad));
  return detail::normalize_abs(SelectionKind::kLbh, scores);
}

}  // namespace fedsim

#endif  // FEDSIM_SELECTION_HPP
