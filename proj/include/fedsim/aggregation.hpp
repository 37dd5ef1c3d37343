// Server-side aggregation rules. Every rule sees the round only through the
// collected LocalUpdates (delta, gradient at the center, gamma) and sums in
// list order.
#ifndef FEDSIM_AGGREGATION_HPP
#define FEDSIM_AGGREGATION_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/local_solver.hpp"
#include "fedsim/log.hpp"
#include "fedsim/numerics.hpp"
#include "fedsim/selection.hpp"

namespace fedsim {

class AggregationError : public Error {
 public:
  using Error::Error;
};

/// Normalizers below this magnitude are treated as degenerate.
inline constexpr double kDegenerateNormalizer = 1e-12;

struct AggregationReport {
  ParamVector params;
  std::vector<double> weights;  // aligned 1:1 with the updates
  std::optional<ParamVector> grad_estimate_1;
  std::optional<ParamVector> grad_estimate_2;
  /// Normalizer the weights were divided by (signed for the two-set rule).
  std::optional<double> normalizer;
  /// True when a degenerate normalizer forced plain averaging.
  bool fell_back = false;
};

namespace detail {

inline void require_updates(std::span<const LocalUpdate> updates, const char* rule) {
  if (updates.empty()) throw AggregationError(std::string(rule) + ": no updates to aggregate");
}

/// center + sum_k weight_k * delta_k
inline ParamVector apply_weighted_deltas(const ParamVector& center,
                                         std::span<const LocalUpdate> updates,
                                         std::span<const double> weights) {
  ParamVector acc(center.size());
  for (std::size_t k = 0; k < updates.size(); ++k) axpy(weights[k], updates[k].delta, acc);
  ParamVector out(center.size());
  for (std::size_t i = 0; i < center.size(); ++i) out[i] = center[i] + acc[i];
  return out;
}

inline std::vector<ParamVector> gradients_of(std::span<const LocalUpdate> updates) {
  std::vector<ParamVector> gs;
  gs.reserve(updates.size());
  for (const auto& u : updates) gs.push_back(u.grad_at_center);
  return gs;
}

}  // namespace detail

/// Mean of the updates' center gradients over the multiset (repeats count).
inline ParamVector estimate_global_gradient(std::span<const LocalUpdate> updates) {
  detail::require_updates(updates, "estimate_global_gradient");
  ParamVector acc(updates.front().grad_at_center.size());
  for (const auto& u : updates) axpy(1.0, u.grad_at_center, acc);
  const double inv = 1.0 / static_cast<double>(updates.size());
  for (double& v : acc) v *= inv;
  return acc;
}

/// w^{t+1} = (1/K) sum_k w_k^{t+1}
inline AggregationReport aggregate_average(const ParamVector& center,
                                           std::span<const LocalUpdate> updates) {
  detail::require_updates(updates, "aggregate_average");
  const double inv = 1.0 / static_cast<double>(updates.size());
  AggregationReport r;
  r.params = ParamVector(center.size());
  for (const auto& u : updates) axpy(1.0, u.w_next, r.params);
  for (double& v : r.params) v *= inv;
  r.weights.assign(updates.size(), inv);
  return r;
}

/// w^{t+1} = w^t + (1/K) sum_k sign(<grad f, grad F_k>) delta_k, sign(0) = +1.
inline AggregationReport aggregate_signed(const ParamVector& center,
                                          std::span<const LocalUpdate> updates,
                                          const ParamVector& global_grad) {
  detail::require_updates(updates, "aggregate_signed");
  const double inv = 1.0 / static_cast<double>(updates.size());
  AggregationReport r;
  r.weights.resize(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    r.weights[k] = dot(global_grad, updates[k].grad_at_center) < 0.0 ? -inv : inv;
  }
  r.params = detail::apply_weighted_deltas(center, updates, r.weights);
  return r;
}

/// Two-set rule: weight_k = <g_k, grad_1 f> / sum_{k' in S2} <g_k', grad_2 f>,
/// grad_i f the mean gradient over S_i. The normalizer is used signed.
inline AggregationReport aggregate_folb_two_set(const ParamVector& center,
                                                std::span<const LocalUpdate> updates_s1,
                                                std::span<const ParamVector> gradients_s2) {
  detail::require_updates(updates_s1, "aggregate_folb_two_set");
  if (gradients_s2.empty()) throw AggregationError("aggregate_folb_two_set: S2 is empty");
  ParamVector g1 = estimate_global_gradient(updates_s1);
  ParamVector g2 = mean_of(gradients_s2);
  double denom = 0.0;
  for (const auto& g : gradients_s2) denom += dot(g, g2);
  if (std::abs(denom) < kDegenerateNormalizer) {
    log::info("folb two-set: degenerate normalizer, averaging instead");
    auto r = aggregate_average(center, updates_s1);
    r.fell_back = true;
    r.normalizer = denom;
    r.grad_estimate_1 = std::move(g1);
    r.grad_estimate_2 = std::move(g2);
    return r;
  }
  AggregationReport r;
  r.weights.resize(updates_s1.size());
  for (std::size_t k = 0; k < updates_s1.size(); ++k) {
    r.weights[k] = dot(updates_s1[k].grad_at_center, g1) / denom;
  }
  r.params = detail::apply_weighted_deltas(center, updates_s1, r.weights);
  r.normalizer = denom;
  r.grad_estimate_1 = std::move(g1);
  r.grad_estimate_2 = std::move(g2);
  return r;
}

namespace detail {

/// weights = scores / sum|scores|; plain averaging when the sum vanishes.
inline AggregationReport aggregate_by_scores(const ParamVector& center,
                                             std::span<const LocalUpdate> updates,
                                             std::span<const double> scores, ParamVector g1,
                                             const char* rule) {
  double total = 0.0;
  for (double s : scores) total += std::abs(s);
  if (total < kDegenerateNormalizer) {
    log::info(std::string(rule) + ": degenerate normalizer, averaging instead");
    auto r = aggregate_average(center, updates);
    r.fell_back = true;
    r.normalizer = total;
    r.grad_estimate_1 = std::move(g1);
    return r;
  }
  AggregationReport r;
  r.weights.resize(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) r.weights[k] = scores[k] / total;
  r.params = apply_weighted_deltas(center, updates, r.weights);
  r.normalizer = total;
  r.grad_estimate_1 = std::move(g1);
  return r;
}

}  // namespace detail

/// Single-set rule: weight_k = <g_k, grad_1 f> / sum_k' |<g_k', grad_1 f>|.
inline AggregationReport aggregate_folb_single(const ParamVector& center,
                                               std::span<const LocalUpdate> updates) {
  detail::require_updates(updates, "aggregate_folb_single");
  ParamVector g1 = estimate_global_gradient(updates);
  std::vector<double> scores(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    scores[k] = dot(updates[k].grad_at_center, g1);
  }
  return detail::aggregate_by_scores(center, updates, scores, std::move(g1), "folb single");
}

/// Heterogeneity-aware rule: I_k = <grad_1 f, g_k> - psi * gamma_k * ||grad_1 f||^2,
/// weight_k = I_k / sum_k' |I_k'|.
inline AggregationReport aggregate_folb_het(const ParamVector& center,
                                            std::span<const LocalUpdate> updates, double psi) {
  detail::require_updates(updates, "aggregate_folb_het");
  ParamVector g1 = estimate_global_gradient(updates);
  std::vector<double> inner(updates.size()), gammas(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    inner[k] = dot(updates[k].grad_at_center, g1);
    gammas[k] = updates[k].gamma;
  }
  const auto scores = heterogeneity_scores(inner, gammas, psi, l2_norm_sq(g1));
  return detail::aggregate_by_scores(center, updates, scores, std::move(g1), "folb het");
}

}  // namespace fedsim

#endif  // FEDSIM_AGGREGATION_HPP
