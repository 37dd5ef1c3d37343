// One device's round: inexact minimization of the proximal objective by
// (minibatch) gradient descent under a step budget and a time budget.
#ifndef FEDSIM_LOCAL_SOLVER_HPP
#define FEDSIM_LOCAL_SOLVER_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/log.hpp"
#include "fedsim/models.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

inline constexpr std::uint64_t kStreamStepBudget = 0x51;
inline constexpr std::uint64_t kStreamMinibatch = 0x52;
inline constexpr std::uint64_t kStreamCommDelay = 0x53;

struct DeviceProfile {
  std::size_t device_id = 0;
  const DataShard* shard = nullptr;
  double comm_delay = 0.0;   // upper bound T^c on one communication round
  std::size_t step_min = 1;
  std::size_t step_max = 20;
  double learning_rate = 0.01;
  std::size_t batch_size = 0;  // 0 = full batch
  double step_cost = 1.0;      // simulated time per local step
};

struct LocalUpdate {
  std::size_t device_id = 0;
  ParamVector w_next;
  ParamVector delta;           // w_next - center
  ParamVector grad_at_center;  // full-batch gradient of F_k at the center
  double gamma = 1.0;          // ||grad h(w_next)|| / ||grad F_k(center)||
  std::size_t steps = 0;
  double elapsed = 0.0;        // comm_delay + steps * step_cost
};

/// Uniform integer in [step_min, step_max] for (device, round). The draw is
/// keyed only by (seed, round, device), so strategies sharing a seed see the
/// same budgets.
inline std::size_t draw_step_budget(const DeviceProfile& p, std::uint64_t round,
                                    std::uint64_t seed) {
  if (p.step_min < 1 || p.step_min > p.step_max) {
    throw Error("step budget range must satisfy 1 <= step_min <= step_max");
  }
  RngStream rng(seed, RngStream::stream_id(kStreamStepBudget, round, p.device_id));
  return static_cast<std::size_t>(rng.uniform_int(p.step_min, p.step_max));
}

/// 99th percentile of an exponential delay with the given mean.
inline double delay_upper_bound(double mean_delay) { return mean_delay * std::log(100.0); }

/// Local steps that fit in the round's time budget; nullopt when the
/// device cannot take part (tau <= comm_delay, or not even one step fits).
inline std::optional<std::size_t> steps_within_time(const DeviceProfile& p, double tau,
                                                    std::size_t step_budget) {
  if (!(tau > p.comm_delay)) return std::nullopt;
  if (std::isinf(tau) || p.step_cost <= 0.0) return step_budget;
  const double fit = std::floor((tau - p.comm_delay) / p.step_cost);
  if (fit < 1.0) return std::nullopt;
  return std::min<std::size_t>(step_budget, static_cast<std::size_t>(std::min(fit, 1e18)));
}

/// Runs up to `step_budget` descent steps on h_k(., center) from the center.
///
/// Returns nullopt when the device is excluded by the time budget. The
/// update's gamma is the full-batch gradient-norm ratio of h at w_next over
/// h at the center (where h's gradient equals grad F_k); it is 1 when no
/// step runs and 0 when grad F_k(center) vanishes.
inline std::optional<LocalUpdate> local_solve(const LossModel& model, const DeviceProfile& p,
                                              const ParamVector& center, double mu, double tau,
                                              std::size_t step_budget, RngStream& rng) {
  if (p.shard == nullptr) throw Error("device profile has no shard");
  if (mu < 0.0) throw Error("mu must be >= 0");
  const auto steps = steps_within_time(p, tau, step_budget);
  if (!steps) return std::nullopt;

  LocalUpdate u;
  u.device_id = p.device_id;
  u.steps = *steps;
  u.elapsed = p.comm_delay + static_cast<double>(u.steps) * p.step_cost;
  u.grad_at_center = gradient(model, center, *p.shard);

  const DataShard& shard = *p.shard;
  const bool full_batch = p.batch_size == 0 || p.batch_size >= shard.size();
  ParamVector w = center;
  std::vector<std::size_t> batch;
  for (std::size_t s = 0; s < u.steps; ++s) {
    ParamVector g;
    if (full_batch) {
      g = (s == 0) ? u.grad_at_center : gradient(model, w, shard);
    } else {
      batch = detail::choose_subset(shard.size(), p.batch_size, rng);
      g = minibatch_loss_and_gradient(model, w, shard, batch).second;
    }
    if (mu != 0.0) {
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += mu * (w[i] - center[i]);
    }
    axpy(-p.learning_rate, g, w);
  }
  if (!w.all_finite()) {
    throw Error("local solve diverged on device " + std::to_string(p.device_id) +
                " (non-finite parameters); lower the learning rate");
  }

  const double denom = l2_norm(u.grad_at_center);
  if (denom == 0.0) {
    u.gamma = 0.0;
  } else if (u.steps == 0) {
    u.gamma = 1.0;
  } else {
    ParamVector gh = gradient(model, w, shard);
    for (std::size_t i = 0; i < w.size(); ++i) gh[i] += mu * (w[i] - center[i]);
    u.gamma = l2_norm(gh) / denom;
    if (u.gamma > 1.0 + 1e-9) {
      // Warn on the first occurrence only; repeats go to the info level.
      static std::atomic<bool> warned{false};
      const std::string msg = "device " + std::to_string(p.device_id) + " reported gamma " +
                              std::to_string(u.gamma) + " > 1";
      if (!warned.exchange(true)) {
        log::warn(msg + " (further occurrences logged at info level)");
      } else {
        log::info(msg);
      }
    }
  }
  u.delta = w - center;
  u.w_next = std::move(w);
  return u;
}

}  // namespace fedsim

#endif  // FEDSIM_LOCAL_SOLVER_HPP
