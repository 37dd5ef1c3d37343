// Dense vector arithmetic, softmax, and seeded sampling shared by every
// other fedsim module. All reductions run in ascending index order so
// results are bitwise reproducible.
#ifndef FEDSIM_NUMERICS_HPP
#define FEDSIM_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedsim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DistributionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Flat model parameter (or gradient) vector.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  return dot(a.span(), b.span());
}

inline double l2_norm_sq(std::span<const double> a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return acc;
}

inline double l2_norm_sq(const ParamVector& a) { return l2_norm_sq(a.span()); }
inline double l2_norm(const ParamVector& a) { return std::sqrt(l2_norm_sq(a)); }

/// y += alpha * x
inline void axpy(double alpha, const ParamVector& x, ParamVector& y) {
  detail::require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  detail::require_same_size(a.size(), b.size(), "add");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  detail::require_same_size(a.size(), b.size(), "subtract");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector operator*(double s, const ParamVector& a) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

/// Arithmetic mean of equally sized vectors, accumulated in list order.
inline ParamVector mean_of(std::span<const ParamVector> vs) {
  if (vs.empty()) throw DimensionError("mean_of: empty input");
  ParamVector acc(vs.front().size());
  for (const auto& v : vs) {
    detail::require_same_size(v.size(), acc.size(), "mean_of");
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(vs.size());
  for (double& x : acc) x *= inv;
  return acc;
}

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(std::span<const double> z) {
  if (z.empty()) throw DimensionError("softmax: empty input");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// log(sum(exp(z))) computed with max subtraction.
inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - m);
  return m + std::log(total);
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// Philox2x64-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3", SC'11). Counter-based: output depends only on
/// (counter, key), never on call history.
inline std::pair<std::uint64_t, std::uint64_t> philox2x64(std::uint64_t ctr0,
                                                          std::uint64_t ctr1,
                                                          std::uint64_t key) {
  constexpr std::uint64_t kMultiplier = 0xD2B74407B1CE6E93ULL;
  constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;
  for (int round = 0; round < 10; ++round) {
    const unsigned __int128 prod =
        static_cast<unsigned __int128>(kMultiplier) * ctr0;
    const auto hi = static_cast<std::uint64_t>(prod >> 64);
    const auto lo = static_cast<std::uint64_t>(prod);
    ctr0 = hi ^ key ^ ctr1;
    ctr1 = lo;
    key += kWeyl;
  }
  return {ctr0, ctr1};
}

/// Deterministic random stream identified by (seed, stream id).
///
/// Draw i of stream s under seed k is word (i mod 2) of
/// philox2x64(counter = {i / 2, s}, key = k). Two streams with different ids
/// never share a counter, so their sequences are independent, and the
/// mapping is fixed across versions.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) noexcept
      : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Packs a role tag and up to three indices into one stream id.
  static std::uint64_t stream_id(std::uint64_t role, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
    // Indices are hashed through Philox with a fixed key so arbitrary
    // values stay collision-resistant.
    auto h = philox2x64(role, a, 0x5EED5EED5EED5EEDULL).first;
    h = philox2x64(h, b, 0x0123456789ABCDEFULL).first;
    return philox2x64(h, c, 0xFEDCBA9876543210ULL).first;
  }

  std::uint64_t next_u64() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const auto [a, b] = philox2x64(block_++, stream_, seed_);
    spare_ = b;
    has_spare_ = true;
    return a;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept {
    const std::uint64_t span = hi - lo;
    if (span == ~std::uint64_t{0}) return next_u64();
    const std::uint64_t range = span + 1;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + x % range;
  }

  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  double exponential(double mean) noexcept { return -mean * std::log(1.0 - uniform()); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::uint64_t spare_ = 0;
  bool has_spare_ = false;
};

inline void validate_probabilities(std::span<const double> p, double tol = 1e-9) {
  if (p.empty()) throw DistributionError("probability vector is empty");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DistributionError("probability entries must be finite and >= 0");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > tol) {
    throw DistributionError("probabilities sum to " + std::to_string(total) +
                            ", expected 1");
  }
}

/// Draws `count` indices independently from `p` by CDF inversion.
inline std::vector<std::size_t> sample_categorical(std::span<const double> p,
                                                   std::size_t count,
                                                   RngStream& rng) {
  validate_probabilities(p);
  std::vector<double> cdf(p.size());
  double running = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    running += p[i];
    cdf[i] = running;
    if (p[i] > 0.0) last_positive = i;
  }
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double u = rng.uniform() * running;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
    // Rounding can leave u at the very top of the cdf.
    if (idx > last_positive) idx = last_positive;
    out.push_back(idx);
  }
  return out;
}

}  // namespace fedsim

#endif  // FEDSIM_NUMERICS_HPP
