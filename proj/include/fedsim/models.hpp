// Loss models over flat parameter vectors: multinomial logistic regression
// and a one-hidden-layer tanh MLP, both with mean cross-entropy loss and
// analytic gradients, plus the proximal local objective and a central
// finite-difference oracle.
#ifndef FEDSIM_MODELS_HPP
#define FEDSIM_MODELS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/binary_io.hpp"
#include "fedsim/data.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class ModelKind : std::uint32_t { kMlr = 0, kMlp1 = 1 };

inline std::string to_string(ModelKind k) { return k == ModelKind::kMlr ? "mlr" : "mlp1"; }

/// Parameter layout, row-major blocks per layer, weights before biases:
///   mlr : W (C x d_in) | b (C)
///   mlp1: W1 (H x d_in) | b1 (H) | W2 (C x H) | b2 (C)
struct LossModel {
  ModelKind kind = ModelKind::kMlr;
  std::size_t d_in = 0;
  std::size_t classes = 0;
  std::size_t hidden = 0;

  static LossModel mlr(std::size_t d_in, std::size_t classes) {
    return {ModelKind::kMlr, d_in, classes, 0};
  }
  static LossModel mlp1(std::size_t d_in, std::size_t classes, std::size_t hidden) {
    return {ModelKind::kMlp1, d_in, classes, hidden};
  }

  std::size_t param_count() const noexcept {
    if (kind == ModelKind::kMlr) return classes * d_in + classes;
    return hidden * d_in + hidden + classes * hidden + classes;
  }

  friend bool operator==(const LossModel&, const LossModel&) = default;
};

namespace detail {

inline void check_inputs(const LossModel& m, const ParamVector& w, const DataShard& shard) {
  if (shard.empty()) throw DataError("loss evaluated on an empty shard");
  if (w.size() != m.param_count()) {
    throw DimensionError("parameter vector has " + std::to_string(w.size()) +
                         " entries, model expects " + std::to_string(m.param_count()));
  }
  if (shard.d_in != m.d_in) throw DimensionError("shard feature width does not match model");
}

inline void check_label(const LossModel& m, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= m.classes) {
    throw DataError("label " + std::to_string(y) + " outside [0, " +
                    std::to_string(m.classes) + ")");
  }
}

/// Forward pass for one row. Writes logits (and hidden activations for mlp1).
inline void forward(const LossModel& m, const ParamVector& w, std::span<const double> x,
                    std::vector<double>& hidden, std::vector<double>& logits) {
  const std::size_t d = m.d_in;
  const std::size_t c = m.classes;
  logits.assign(c, 0.0);
  if (m.kind == ModelKind::kMlr) {
    const double* bias = w.data() + c * d;
    for (std::size_t k = 0; k < c; ++k) {
      const double* row = w.data() + k * d;
      double z = bias[k];
      for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
      logits[k] = z;
    }
    return;
  }
  const std::size_t h = m.hidden;
  const double* w1 = w.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  const double* b2 = w2 + c * h;
  hidden.assign(h, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    double a = b1[u];
    for (std::size_t j = 0; j < d; ++j) a += w1[u * d + j] * x[j];
    hidden[u] = std::tanh(a);
  }
  for (std::size_t k = 0; k < c; ++k) {
    double z = b2[k];
    for (std::size_t u = 0; u < h; ++u) z += w2[k * h + u] * hidden[u];
    logits[k] = z;
  }
}

/// Mean cross-entropy over the selected rows; adds the mean gradient into
/// `grad` when non-null. `rows` empty means every row.
inline double accumulate(const LossModel& m, const ParamVector& w, const DataShard& shard,
                         std::span<const std::size_t> rows, ParamVector* grad) {
  const std::size_t n = rows.empty() ? shard.size() : rows.size();
  const std::size_t d = m.d_in;
  const std::size_t c = m.classes;
  const std::size_t h = m.hidden;
  std::vector<double> hidden, logits, dz(c), dh(h);
  if (grad) *grad = ParamVector(w.size());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = rows.empty() ? r : rows[r];
    const auto x = shard.row(i);
    const int y = shard.labels[i];
    check_label(m, y);
    forward(m, w, x, hidden, logits);
    const double lse = log_sum_exp(logits);
    total += lse - logits[static_cast<std::size_t>(y)];
    if (!grad) continue;
    for (std::size_t k = 0; k < c; ++k) dz[k] = std::exp(logits[k] - lse);
    dz[static_cast<std::size_t>(y)] -= 1.0;
    double* g = grad->data();
    if (m.kind == ModelKind::kMlr) {
      for (std::size_t k = 0; k < c; ++k) {
        double* row = g + k * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += dz[k] * x[j];
        g[c * d + k] += dz[k];
      }
      continue;
    }
    const double* w2 = w.data() + h * d + h;
    double* g_w1 = g;
    double* g_b1 = g + h * d;
    double* g_w2 = g_b1 + h;
    double* g_b2 = g_w2 + c * h;
    for (std::size_t u = 0; u < h; ++u) dh[u] = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t u = 0; u < h; ++u) {
        g_w2[k * h + u] += dz[k] * hidden[u];
        dh[u] += w2[k * h + u] * dz[k];
      }
      g_b2[k] += dz[k];
    }
    for (std::size_t u = 0; u < h; ++u) {
      const double da = dh[u] * (1.0 - hidden[u] * hidden[u]);
      for (std::size_t j = 0; j < d; ++j) g_w1[u * d + j] += da * x[j];
      g_b1[u] += da;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (grad) {
    for (double& v : *grad) v *= inv;
  }
  return total * inv;
}

}  // namespace detail

/// Mean cross-entropy F_k(w) over the shard.
inline double loss(const LossModel& m, const ParamVector& w, const DataShard& shard) {
  detail::check_inputs(m, w, shard);
  return detail::accumulate(m, w, shard, {}, nullptr);
}

inline ParamVector gradient(const LossModel& m, const ParamVector& w, const DataShard& shard) {
  detail::check_inputs(m, w, shard);
  ParamVector g;
  detail::accumulate(m, w, shard, {}, &g);
  return g;
}

inline std::pair<double, ParamVector> loss_and_gradient(const LossModel& m,
                                                        const ParamVector& w,
                                                        const DataShard& shard) {
  detail::check_inputs(m, w, shard);
  ParamVector g;
  const double f = detail::accumulate(m, w, shard, {}, &g);
  return {f, std::move(g)};
}

/// Loss and gradient over a minibatch of row indices (non-empty).
inline std::pair<double, ParamVector> minibatch_loss_and_gradient(
    const LossModel& m, const ParamVector& w, const DataShard& shard,
    std::span<const std::size_t> rows) {
  detail::check_inputs(m, w, shard);
  if (rows.empty()) throw DataError("empty minibatch");
  ParamVector g;
  const double f = detail::accumulate(m, w, shard, rows, &g);
  return {f, std::move(g)};
}

/// Fraction of rows whose argmax prediction equals the label.
inline double accuracy(const LossModel& m, const ParamVector& w, const DataShard& shard) {
  detail::check_inputs(m, w, shard);
  std::vector<double> hidden, logits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < shard.size(); ++i) {
    detail::check_label(m, shard.labels[i]);
    detail::forward(m, w, shard.row(i), hidden, logits);
    if (argmax(logits) == static_cast<std::size_t>(shard.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(shard.size());
}

/// Initial parameters: zeros for mlr; for mlp1, weights ~ N(0, 1/fan_in) and
/// zero biases.
inline ParamVector initial_params(const LossModel& m, RngStream& rng) {
  ParamVector w(m.param_count());
  if (m.kind == ModelKind::kMlr) return w;
  const std::size_t d = m.d_in, h = m.hidden, c = m.classes;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t i = 0; i < h * d; ++i) w[i] = rng.normal(0.0, s1);
  double* w2 = w.data() + h * d + h;
  for (std::size_t i = 0; i < c * h; ++i) w2[i] = rng.normal(0.0, s2);
  return w;
}

/// h_k(w, center) = F_k(w) + (mu / 2) * ||w - center||^2
struct ProximalObjective {
  LossModel base;
  ParamVector center;
  double mu = 0.0;
};

inline std::pair<double, ParamVector> prox_loss_gradient(const ProximalObjective& p,
                                                         const ParamVector& w,
                                                         const DataShard& shard) {
  auto [value, grad] = loss_and_gradient(p.base, w, shard);
  if (p.mu != 0.0) {
    const ParamVector diff = w - p.center;
    value += 0.5 * p.mu * l2_norm_sq(diff);
    axpy(p.mu, diff, grad);
  }
  return {value, std::move(grad)};
}

/// Central differences (f(w + h e_i) - f(w - h e_i)) / 2h per coordinate.
template <typename Fn>
ParamVector central_difference(Fn&& f, const ParamVector& w, double h) {
  if (!(h > 0.0)) throw Error("finite-difference step must be positive");
  ParamVector probe = w;
  ParamVector g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline ParamVector finite_diff_gradient(const LossModel& m, const ParamVector& w,
                                        const DataShard& shard, double h) {
  detail::check_inputs(m, w, shard);
  return central_difference([&](const ParamVector& p) { return loss(m, p, shard); }, w, h);
}

// ---------------------------------------------------------------------------
// Checkpoints: u32 kind | u32 d_in | u32 C | u32 H | f64 params[param_count]
// (little-endian).
// ---------------------------------------------------------------------------

inline void write_checkpoint(std::ostream& out, const LossModel& m, const ParamVector& w) {
  if (w.size() != m.param_count()) throw DimensionError("checkpoint: parameter count mismatch");
  binary::put_u32(out, static_cast<std::uint32_t>(m.kind));
  binary::put_u32(out, static_cast<std::uint32_t>(m.d_in));
  binary::put_u32(out, static_cast<std::uint32_t>(m.classes));
  binary::put_u32(out, static_cast<std::uint32_t>(m.hidden));
  for (double v : w) binary::put_f64(out, v);
  if (!out) throw IoError("failed writing checkpoint");
}

inline std::pair<LossModel, ParamVector> read_checkpoint(std::istream& in) {
  LossModel m;
  const auto kind = binary::get_u32(in);
  if (kind > 1) throw IoError("checkpoint: unknown model kind " + std::to_string(kind));
  m.kind = static_cast<ModelKind>(kind);
  m.d_in = binary::get_u32(in);
  m.classes = binary::get_u32(in);
  m.hidden = binary::get_u32(in);
  ParamVector w(m.param_count());
  for (double& v : w) v = binary::get_f64(in);
  return {m, std::move(w)};
}

inline void save_checkpoint(const std::string& path, const LossModel& m, const ParamVector& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_checkpoint(out, m, w);
}

inline std::pair<LossModel, ParamVector> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace fedsim

#endif  // FEDSIM_MODELS_HPP
