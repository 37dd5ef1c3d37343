// Monte-Carlo check of the per-round bounds along a logged trajectory.
#ifndef FEDSIM_BOUNDS_CHECK_HPP
#define FEDSIM_BOUNDS_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedsim/aggregation.hpp"
#include "fedsim/bounds_lab.hpp"
#include "fedsim/orchestrator.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/selection.hpp"

namespace fedsim {

enum class BoundKind { kThm1, kProp1, kDef1, kProp2, kThm3 };

inline std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::kThm1: return "thm1";
    case BoundKind::kProp1: return "prop1";
    case BoundKind::kDef1: return "def1";
    case BoundKind::kProp2: return "prop2";
    case BoundKind::kThm3: return "thm3";
  }
  return "unknown";
}

inline BoundKind parse_bound_kind(std::string_view s) {
  for (auto k : {BoundKind::kThm1, BoundKind::kProp1, BoundKind::kDef1, BoundKind::kProp2,
                 BoundKind::kThm3}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown bound kind '" + std::string(s) + "'");
}

inline constexpr std::uint64_t kStreamReplay = 0xB0;

struct BoundCheckOptions {
  std::size_t mc_rounds = 200;
  double stationary_tol = 1e-10;
  /// Run every local solve with zero steps (gamma = 1 for all devices).
  bool zero_steps = false;
  std::uint64_t seed = 7;
};

struct BoundRound {
  std::size_t t = 0;
  bool skipped = false;  // numerically stationary start point
  double f_before = 0.0;
  double measured = 0.0;   // Monte-Carlo mean of f(w^{t+1})
  double std_error = 0.0;
  double rhs = 0.0;
  double margin = 0.0;     // rhs - measured
  double gamma = 0.0;      // largest gamma_k among the round's solves
  double grad_norm_sq = 0.0;
  bool holds = true;
};

struct BoundReport {
  BoundKind kind = BoundKind::kThm1;
  ModelConstants constants;
  std::vector<BoundRound> rounds;
  bool holds = true;
};

inline nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j;
  j["kind"] = to_string(r.kind);
  j["holds"] = r.holds;
  j["constants"] = {{"L_hat", r.constants.l_hat},         {"B_hat", r.constants.b_hat},
                    {"sigma_hat", r.constants.sigma_hat}, {"mu", r.constants.mu},
                    {"mu_prime", r.constants.mu_prime},   {"gamma_bar", r.constants.gamma_bar}};
  j["rounds"] = nlohmann::json::array();
  for (const auto& b : r.rounds) {
    nlohmann::json row = {{"t", b.t}, {"skipped", b.skipped}};
    if (!b.skipped) {
      row["measured"] = b.measured;
      row["rhs"] = b.rhs;
      row["margin"] = b.margin;
      row["std_error"] = b.std_error;
      row["holds"] = b.holds;
    }
    j["rounds"].push_back(std::move(row));
  }
  return j;
}

/// For each logged start point w^t, solves every device once (mu from the
/// constants, no time budget), then replays `mc_rounds` device multisets
/// drawn from the bound's sampling distribution through its aggregation rule
/// and compares the mean of f(w^{t+1}) with the bound's right side plus
/// three standard errors. The objective must use uniform device weights.
inline BoundReport check_bound_along_run(const Simulation& sim, std::span<const RoundState> states,
                                         const ModelConstants& constants, BoundKind kind,
                                         const BoundCheckOptions& opt = {}) {
  if (!(constants.mu_prime > 0.0)) {
    throw ConfigError("bound check needs mu' = mu - sigma_hat > 0 (got " +
                      std::to_string(constants.mu_prime) + ")");
  }
  if (sim.config().weight_by_size) {
    throw ConfigError("bound check needs uniform device weights (weighting = uniform)");
  }
  if (opt.mc_rounds < 2) throw ConfigError("bound check needs mc_rounds >= 2");
  const std::size_t n = sim.config().num_devices;
  const std::size_t k = sim.config().clients_per_round;
  const double inf = std::numeric_limits<double>::infinity();

  BoundReport report;
  report.kind = kind;
  report.constants = constants;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;

  for (const auto& st : states) {
    BoundRound br;
    br.t = st.round;
    const ParamVector& w = st.params;
    const auto grads = sim.local_gradients(w);
    const ParamVector gf = sim.global_gradient(grads);
    br.grad_norm_sq = l2_norm_sq(gf);
    br.f_before = sim.global_loss(w);
    if (std::sqrt(br.grad_norm_sq) < opt.stationary_tol) {
      br.skipped = true;
      report.rounds.push_back(br);
      continue;
    }
    const auto inner = detail::inner_products(grads, gf);

    const auto solved = sim.solve_devices(st.round, w, all, constants.mu, inf,
                                          opt.zero_steps ? std::optional<std::size_t>(0)
                                                         : std::nullopt);
    std::vector<LocalUpdate> updates(n);
    std::vector<double> gammas(n);
    for (std::size_t i = 0; i < n; ++i) {
      updates[i] = *solved.at(i);
      gammas[i] = updates[i].gamma;
      br.gamma = std::max(br.gamma, gammas[i]);
    }
    const ModelConstants c = constants.with_gamma(br.gamma);

    const auto probs = kind == BoundKind::kDef1 ? lb_near_optimal_from_inner(inner).probs
                                                : uniform_distribution(n).probs;

    std::vector<double> outcomes(opt.mc_rounds);
    parallel_for(opt.mc_rounds, [&](std::size_t r) {
      RngStream rng(opt.seed, RngStream::stream_id(kStreamReplay, st.round, r));
      const auto s = sample_categorical(probs, k, rng);
      std::vector<LocalUpdate> chosen;
      chosen.reserve(k);
      for (std::size_t d : s) chosen.push_back(updates[d]);
      AggregationReport agg;
      switch (kind) {
        case BoundKind::kThm1:
        case BoundKind::kThm3:
          agg = aggregate_average(w, chosen);
          break;
        case BoundKind::kProp1:
        case BoundKind::kDef1:
          agg = aggregate_signed(w, chosen, gf);
          break;
        case BoundKind::kProp2:
          agg = aggregate_folb_single(w, chosen);
          break;
      }
      outcomes[r] = sim.global_loss(agg.params);
    });
    double mean = 0.0;
    for (double v : outcomes) mean += v;
    mean /= static_cast<double>(outcomes.size());
    double var = 0.0;
    for (double v : outcomes) var += (v - mean) * (v - mean);
    var /= static_cast<double>(outcomes.size() - 1);
    br.measured = mean;
    br.std_error = std::sqrt(var / static_cast<double>(outcomes.size()));

    switch (kind) {
      case BoundKind::kThm1:
        br.rhs = theorem1_rhs(c, br.f_before, expected_multiset_sum(probs, inner, k), k,
                              br.grad_norm_sq);
        break;
      case BoundKind::kProp1: {
        std::vector<double> abs_inner(inner.size());
        for (std::size_t i = 0; i < inner.size(); ++i) abs_inner[i] = std::abs(inner[i]);
        br.rhs = prop1_rhs(c, br.f_before, expected_multiset_sum(probs, abs_inner, k), k,
                           br.grad_norm_sq);
        break;
      }
      case BoundKind::kDef1:
        br.rhs = def1_rhs(c, br.f_before, inner, br.grad_norm_sq);
        break;
      case BoundKind::kProp2:
        br.rhs = prop2_rhs(c, br.f_before, inner, k, br.grad_norm_sq);
        break;
      case BoundKind::kThm3:
        br.rhs = theorem3_rhs(c, br.f_before, inner, probs, gammas, k, br.grad_norm_sq);
        break;
    }
    br.margin = br.rhs - br.measured;
    br.holds = br.measured <= br.rhs + 3.0 * br.std_error;
    report.holds = report.holds && br.holds;
    report.rounds.push_back(br);
  }
  return report;
}

}  // namespace fedsim

#endif  // FEDSIM_BOUNDS_CHECK_HPP
