// Numeric companions to the per-round loss-decrease bounds: empirical
// smoothness / dissimilarity / curvature constants, right-hand-side
// evaluators for every bound, and the exhaustive oracle for the sampling
// identities behind the two-set estimator.
#ifndef FEDSIM_BOUNDS_LAB_HPP
#define FEDSIM_BOUNDS_LAB_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/models.hpp"
#include "fedsim/numerics.hpp"
#include "fedsim/selection.hpp"

namespace fedsim {

/// Anything exposing per-device gradients of its local losses.
template <typename T>
concept FederatedObjective = requires(const T& o, std::size_t k, const ParamVector& w) {
  { o.num_devices() } -> std::convertible_to<std::size_t>;
  { o.local_gradient(k, w) } -> std::convertible_to<ParamVector>;
};

/// Local losses F_k given by a model over device shards.
struct ShardedObjective {
  LossModel model;
  const std::vector<DataShard>* shards = nullptr;

  std::size_t num_devices() const { return shards->size(); }
  ParamVector local_gradient(std::size_t k, const ParamVector& w) const {
    return gradient(model, w, (*shards)[k]);
  }
};

struct ModelConstants {
  double l_hat = 0.0;      // Lipschitz-gradient estimate
  double b_hat = 1.0;      // gradient dissimilarity estimate
  double sigma_hat = 0.0;  // curvature deficit, floored at 0
  double mu = 0.0;
  double mu_prime = 0.0;   // mu - sigma_hat
  double gamma_bar = 0.0;  // largest observed solver inexactness

  ModelConstants with_mu(double m) const {
    ModelConstants c = *this;
    c.mu = m;
    c.mu_prime = m - sigma_hat;
    return c;
  }
  ModelConstants with_gamma(double g) const {
    ModelConstants c = *this;
    c.gamma_bar = g;
    return c;
  }
};

struct ProbePair {
  std::size_t device = 0;
  ParamVector w;
  ParamVector w_probe;
};

struct ConstantsOptions {
  double probe_radius = 1e-2;
  double hvp_step = 1e-4;
  double min_grad_norm = 1e-12;
};

/// Empirical constants along a trajectory.
///
/// l_hat is the largest ||grad F_k(w) - grad F_k(w')|| / ||w - w'|| over
/// random probes w' = w + r v (||v|| = 1) at each trajectory point and device.
/// b_hat is the largest ||grad F_k|| / ||grad f|| over trajectory points
/// (points with ||grad f|| below min_grad_norm are skipped). sigma_hat is
/// max(0, -min v^T H_k v) with H_k v from central differences of the
/// gradient. Pass `record` to keep the probe pairs.
template <FederatedObjective Objective>
ModelConstants estimate_constants(const Objective& obj, std::span<const ParamVector> trajectory,
                                  std::size_t probes, RngStream& rng, double mu = 0.0,
                                  const ConstantsOptions& opt = {},
                                  std::vector<ProbePair>* record = nullptr) {
  if (trajectory.empty()) throw ConfigError("estimate_constants: empty trajectory");
  if (probes < 1) throw ConfigError("estimate_constants: probes must be >= 1");
  const std::size_t n = obj.num_devices();
  ModelConstants c;
  double b_max = 0.0;
  bool any_b = false;
  double min_rayleigh = std::numeric_limits<double>::infinity();

  for (const auto& w : trajectory) {
    std::vector<ParamVector> grads(n);
    for (std::size_t k = 0; k < n; ++k) grads[k] = obj.local_gradient(k, w);
    const ParamVector g = mean_of(grads);
    const double g_norm = l2_norm(g);
    if (g_norm >= opt.min_grad_norm) {
      any_b = true;
      for (const auto& gk : grads) b_max = std::max(b_max, l2_norm(gk) / g_norm);
    }
    for (std::size_t p = 0; p < probes; ++p) {
      ParamVector v(w.size());
      for (double& x : v) x = rng.normal();
      const double vn = l2_norm(v);
      for (double& x : v) x /= vn;
      ParamVector w_probe = w;
      axpy(opt.probe_radius, v, w_probe);
      ParamVector w_plus = w, w_minus = w;
      axpy(opt.hvp_step, v, w_plus);
      axpy(-opt.hvp_step, v, w_minus);
      const double dist = l2_norm(w_probe - w);
      for (std::size_t k = 0; k < n; ++k) {
        const ParamVector gp = obj.local_gradient(k, w_probe);
        c.l_hat = std::max(c.l_hat, l2_norm(gp - grads[k]) / dist);
        const ParamVector hv =
            (1.0 / (2.0 * opt.hvp_step)) * (obj.local_gradient(k, w_plus) - obj.local_gradient(k, w_minus));
        min_rayleigh = std::min(min_rayleigh, dot(v, hv));
        if (record) record->push_back({k, w, w_probe});
      }
    }
  }
  c.b_hat = any_b ? b_max : 1.0;
  c.sigma_hat = std::max(0.0, -min_rayleigh);
  return c.with_mu(mu);
}

// ---------------------------------------------------------------------------
// Bound right-hand sides. Each takes f(w^t), the needed inner products and
// ||grad f(w^t)||^2 and evaluates the printed inequality's right side.
// ---------------------------------------------------------------------------

namespace detail {

inline void require_strongly_convex(const ModelConstants& c) {
  if (!(c.mu > 0.0) || !(c.mu_prime > 0.0)) {
    throw ConfigError("bound evaluation needs mu > 0 and mu' = mu - sigma > 0 (mu = " +
                      std::to_string(c.mu) + ", mu' = " + std::to_string(c.mu_prime) + ")");
  }
}

}  // namespace detail

/// B (L(gamma+1)/(mu mu') + gamma/mu + B L (1+gamma)^2 / (2 mu'^2))
inline double penalty_coefficient(const ModelConstants& c) {
  detail::require_strongly_convex(c);
  const double b = c.b_hat, l = c.l_hat, g = c.gamma_bar, mu = c.mu, mp = c.mu_prime;
  return b * (l * (g + 1.0) / (mu * mp) + g / mu + b * l * (1.0 + g) * (1.0 + g) / (2.0 * mp * mp));
}

/// E[sum_{k in S} v_k] for K independent draws from `probs`.
inline double expected_multiset_sum(std::span<const double> probs, std::span<const double> values,
                                    std::size_t k) {
  detail::require_same_size(probs.size(), values.size(), "expected_multiset_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) s += probs[i] * values[i];
  return static_cast<double>(k) * s;
}

inline double theorem1_rhs(const ModelConstants& c, double f_wt, double expected_inner_sum,
                           std::size_t k, double grad_norm_sq) {
  const double pen = penalty_coefficient(c);
  return f_wt - expected_inner_sum / (static_cast<double>(k) * c.mu) + pen * grad_norm_sq;
}

/// Sign-corrected aggregation: the expectation runs over |inner products|.
inline double prop1_rhs(const ModelConstants& c, double f_wt, double expected_abs_inner_sum,
                        std::size_t k, double grad_norm_sq) {
  return theorem1_rhs(c, f_wt, expected_abs_inner_sum, k, grad_norm_sq);
}

/// Sampling from P_lb: f - (1/mu) sum_k |a_k| P_lb,k + penalty.
inline double def1_rhs(const ModelConstants& c, double f_wt, std::span<const double> inner,
                       double grad_norm_sq) {
  const double pen = penalty_coefficient(c);
  const auto plb = lb_near_optimal_from_inner(inner);
  double s = 0.0;
  for (std::size_t k = 0; k < inner.size(); ++k) s += std::abs(inner[k]) * plb.probs[k];
  return f_wt - s / c.mu + pen * grad_norm_sq;
}

/// Single-set rule: f - (K/(mu N)) sum_k |a_k| + penalty.
inline double prop2_rhs(const ModelConstants& c, double f_wt, std::span<const double> inner,
                        std::size_t k, double grad_norm_sq) {
  const double pen = penalty_coefficient(c);
  double s = 0.0;
  for (double a : inner) s += std::abs(a);
  const double n = static_cast<double>(inner.size());
  return f_wt - static_cast<double>(k) / (c.mu * n) * s + pen * grad_norm_sq;
}

/// B (L/(mu mu') + 1/mu + 3 L B / (2 K mu'^2)); the constant that psi stands in for.
inline double heterogeneity_bundle(const ModelConstants& c, std::size_t k) {
  detail::require_strongly_convex(c);
  const double b = c.b_hat, l = c.l_hat, mu = c.mu, mp = c.mu_prime;
  return b * (l / (mu * mp) + 1.0 / mu + 3.0 * l * b / (2.0 * static_cast<double>(k) * mp * mp));
}

/// (1/(K mu)) E[sum_{k in S} (a_k - bundle * gamma_k * ||grad f||^2)]
inline double theorem3_decrease(const ModelConstants& c, std::span<const double> inner,
                                std::span<const double> probs, std::span<const double> gammas,
                                std::size_t k, double grad_norm_sq) {
  detail::require_same_size(inner.size(), gammas.size(), "theorem3");
  const double bundle = heterogeneity_bundle(c, k);
  const auto scores = heterogeneity_scores(inner, gammas, bundle, grad_norm_sq);
  return expected_multiset_sum(probs, scores, k) / (static_cast<double>(k) * c.mu);
}

inline double theorem3_rhs(const ModelConstants& c, double f_wt, std::span<const double> inner,
                           std::span<const double> probs, std::span<const double> gammas,
                           std::size_t k, double grad_norm_sq) {
  const double b = c.b_hat, l = c.l_hat, mu = c.mu, mp = c.mu_prime;
  const double trailing = l * b * b / (2.0 * mp * mp) + l * b / (mu * mp);
  return f_wt - theorem3_decrease(c, inner, probs, gammas, k, grad_norm_sq) +
         trailing * grad_norm_sq;
}

// ---------------------------------------------------------------------------
// Sampling-identity oracle
// ---------------------------------------------------------------------------

inline constexpr std::size_t kExhaustiveStateCap = 4096;

struct Lemma1Report {
  std::size_t n = 0;
  std::size_t k = 0;
  bool exhaustive = false;
  std::size_t samples = 0;  // multisets enumerated or drawn
  /// E[sum_{k in S} <g_k, mean_S g>^2] over ordered K-samples with replacement.
  double lhs14_exact = 0.0;
  double lhs14_exact_se = 0.0;
  /// Same expectation with (k, k', k'') treated as independent uniform indices.
  double lhs14_indep = 0.0;
  double rhs14 = 0.0;  // (K/N) sum_k <grad f, g_k>^2
  double lhs15_exact = 0.0;
  double lhs15_exact_se = 0.0;
  double lhs15_indep = 0.0;
  double rhs15 = 0.0;  // (K/N) sum_k |<grad f, g_k>|
};

/// Evaluates both sides of the squared- and plain-inner-product identities
/// for uniform K-samples with replacement. Exact expectations enumerate all
/// N^K ordered samples when N^K <= 4096 and fall back to `mc_samples`
/// Monte-Carlo draws otherwise (with standard errors).
inline Lemma1Report lemma1_oracle(std::span<const ParamVector> grads, std::size_t k,
                                  std::size_t mc_samples = 20000, std::uint64_t seed = 1) {
  const std::size_t n = grads.size();
  if (n == 0 || k == 0) throw ConfigError("lemma1_oracle needs N >= 1 and K >= 1");
  Lemma1Report r;
  r.n = n;
  r.k = k;
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);

  std::vector<std::vector<double>> gram(n, std::vector<double>(n));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) gram[a][b] = dot(grads[a], grads[b]);
  }

  // Independent-index expansions, summed term by term.
  double triple = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < n; ++c) triple += gram[a][b] * gram[a][c];
    }
  }
  r.lhs14_indep = kd * kd * kd / (kd * kd * nd * nd * nd) * triple;
  double pair = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) pair += gram[a][b];
  }
  r.lhs15_indep = kd * kd / (kd * nd * nd) * pair;

  const ParamVector gf = mean_of(grads);
  for (const auto& g : grads) {
    const double a = dot(gf, g);
    r.rhs14 += a * a;
    r.rhs15 += std::abs(a);
  }
  r.rhs14 *= kd / nd;
  r.rhs15 *= kd / nd;

  auto evaluate = [&](std::span<const std::size_t> s, double& v14, double& v15) {
    v14 = 0.0;
    v15 = 0.0;
    for (std::size_t i : s) {
      double ip = 0.0;  // <g_i, mean_S g>
      for (std::size_t j : s) ip += gram[i][j];
      ip /= kd;
      v14 += ip * ip;
      v15 += ip;
    }
  };

  double states = 1.0;
  for (std::size_t i = 0; i < k; ++i) states *= nd;
  std::vector<std::size_t> s(k, 0);
  if (states <= static_cast<double>(kExhaustiveStateCap)) {
    r.exhaustive = true;
    const auto total = static_cast<std::size_t>(states);
    double sum14 = 0.0, sum15 = 0.0;
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      for (std::size_t i = 0; i < k; ++i) {
        s[i] = rem % n;
        rem /= n;
      }
      double v14, v15;
      evaluate(s, v14, v15);
      sum14 += v14;
      sum15 += v15;
    }
    r.samples = total;
    r.lhs14_exact = sum14 / states;
    r.lhs15_exact = sum15 / states;
    return r;
  }

  if (mc_samples < 2) throw ConfigError("lemma1_oracle: Monte Carlo needs >= 2 samples");
  RngStream rng(seed, RngStream::stream_id(0x1E, n, k));
  double m14 = 0.0, m15 = 0.0, q14 = 0.0, q15 = 0.0;
  for (std::size_t t = 0; t < mc_samples; ++t) {
    for (auto& i : s) i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    double v14, v15;
    evaluate(s, v14, v15);
    // Welford updates
    const double c = static_cast<double>(t + 1);
    const double d14 = v14 - m14, d15 = v15 - m15;
    m14 += d14 / c;
    m15 += d15 / c;
    q14 += d14 * (v14 - m14);
    q15 += d15 * (v15 - m15);
  }
  const double m = static_cast<double>(mc_samples);
  r.samples = mc_samples;
  r.lhs14_exact = m14;
  r.lhs15_exact = m15;
  r.lhs14_exact_se = std::sqrt(q14 / (m - 1.0) / m);
  r.lhs15_exact_se = std::sqrt(q15 / (m - 1.0) / m);
  return r;
}

}  // namespace fedsim

#endif  // FEDSIM_BOUNDS_LAB_HPP
