// Device datasets: synthetic non-IID generation, label-skewed partitioning,
// CSV ingestion, holdout splits and the binary shard container.
#ifndef FEDSIM_DATA_HPP
#define FEDSIM_DATA_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/binary_io.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

class DataError : public Error {
 public:
  using Error::Error;
};

/// One device's local dataset. Features are row-major, n x d_in.
struct DataShard {
  std::size_t device_id = 0;
  std::size_t d_in = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * d_in, d_in};
  }

  void append(std::span<const double> x, int y) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
  }

  friend bool operator==(const DataShard&, const DataShard&) = default;
};

/// A pooled dataset before partitioning (same layout as a shard).
struct Dataset {
  std::size_t d_in = 0;
  std::size_t classes = 0;
  DataShard samples;

  std::size_t size() const noexcept { return samples.size(); }
};

struct FederatedData {
  std::size_t d_in = 0;
  std::size_t classes = 0;
  std::vector<DataShard> shards;
  DataShard test;

  friend bool operator==(const FederatedData&, const FederatedData&) = default;
};

struct SyntheticSpec {
  double alpha = 1.0;  // spread of per-device labeling models
  double beta = 1.0;   // spread of per-device feature means
  bool iid = false;
  std::size_t num_devices = 30;
  std::size_t d_in = 60;
  std::size_t classes = 10;
  std::size_t total_samples = 10000;
  double size_exponent = 1.2;  // Pareto tail index for device sizes
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  FederatedData data;
  /// Per-device labeling model in MLR layout: W (C x d_in, row-major) then b.
  std::vector<ParamVector> labelers;
};

// RNG role tags for data generation streams.
inline constexpr std::uint64_t kStreamDataSizes = 0xD0;
inline constexpr std::uint64_t kStreamDataModel = 0xD1;
inline constexpr std::uint64_t kStreamDataFeatures = 0xD2;
inline constexpr std::uint64_t kStreamDataHoldout = 0xD3;
inline constexpr std::uint64_t kStreamPartition = 0xD4;

/// Splits `total` into `parts` Pareto-distributed sizes, each >= min_each,
/// summing exactly to total (largest remainder rounding).
inline std::vector<std::size_t> power_law_sizes(std::size_t total, std::size_t parts,
                                                std::size_t min_each, double exponent,
                                                RngStream& rng) {
  if (parts == 0) throw DataError("power_law_sizes: zero parts");
  if (total < parts * min_each) {
    throw DataError("total of " + std::to_string(total) + " samples is too small for " +
                    std::to_string(parts) + " devices");
  }
  if (!(exponent > 0.0)) throw DataError("power-law exponent must be > 0");
  std::vector<double> weights(parts);
  double weight_sum = 0.0;
  for (auto& w : weights) {
    w = std::pow(1.0 - rng.uniform(), -1.0 / exponent);
    weight_sum += w;
  }
  const std::size_t spare = total - parts * min_each;
  std::vector<std::size_t> sizes(parts, min_each);
  std::vector<std::pair<double, std::size_t>> remainders(parts);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    const double share = static_cast<double>(spare) * weights[k] / weight_sum;
    const auto whole = static_cast<std::size_t>(std::floor(share));
    sizes[k] += whole;
    assigned += whole;
    remainders[k] = {share - static_cast<double>(whole), k};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spare; ++i, ++assigned) {
    ++sizes[remainders[i % parts].second];
  }
  return sizes;
}

namespace detail {

inline void check_spec(const SyntheticSpec& s) {
  if (s.num_devices == 0 || s.d_in == 0 || s.classes < 2) {
    throw DataError("synthetic spec needs num_devices >= 1, d_in >= 1, classes >= 2");
  }
  if (s.alpha < 0.0 || s.beta < 0.0) throw DataError("alpha and beta must be >= 0");
  if (!(s.test_fraction >= 0.0 && s.test_fraction < 1.0)) {
    throw DataError("test_fraction must lie in [0, 1)");
  }
  if (s.total_samples < 2 * s.num_devices) {
    throw DataError("total_samples must give every device at least 2 samples");
  }
}

inline ParamVector draw_labeler(std::size_t classes, std::size_t d_in, double mean,
                                RngStream& rng) {
  ParamVector p(classes * d_in + classes);
  for (double& v : p) v = rng.normal(mean, 1.0);
  return p;
}

inline int label_of(const ParamVector& labeler, std::size_t classes, std::size_t d_in,
                    std::span<const double> x) {
  std::vector<double> logits(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    double z = labeler[classes * d_in + c];
    for (std::size_t j = 0; j < d_in; ++j) z += labeler[c * d_in + j] * x[j];
    logits[c] = z;
  }
  return static_cast<int>(argmax(logits));
}

/// Returns `count` distinct indices of [0, n) chosen uniformly, ascending.
inline std::vector<std::size_t> choose_subset(std::size_t n, std::size_t count,
                                              RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, n - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Labels a feature vector with a labeler produced by generate_synthetic.
inline int synthetic_label(const ParamVector& labeler, std::size_t classes,
                           std::size_t d_in, std::span<const double> x) {
  return detail::label_of(labeler, classes, d_in, x);
}

/// Synthetic(alpha, beta) federated data in the FedProx-benchmark family.
///
/// Device k draws u_k ~ N(0, alpha^2) and B_k ~ N(0, beta^2); its labeler
/// (W_k, b_k) has entries N(u_k, 1), its feature mean v_k has entries
/// N(B_k, 1), and features are x ~ N(v_k, diag(j^-1.2)). Labels are
/// argmax(W_k x + b_k). With `iid` every device shares one labeler drawn
/// from N(0, 1) and one zero feature mean. A test_fraction share of each
/// device's samples is held out; the held-out rows form the global test set.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  detail::check_spec(spec);
  const std::size_t n_dev = spec.num_devices;
  const std::size_t d = spec.d_in;
  const std::size_t c = spec.classes;

  RngStream size_rng(spec.seed, RngStream::stream_id(kStreamDataSizes));
  const auto sizes =
      power_law_sizes(spec.total_samples, n_dev, 2, spec.size_exponent, size_rng);

  std::vector<double> feature_sd(d);
  for (std::size_t j = 0; j < d; ++j) {
    feature_sd[j] = std::sqrt(std::pow(static_cast<double>(j + 1), -1.2));
  }

  SyntheticData out;
  out.data.d_in = d;
  out.data.classes = c;
  out.data.test.d_in = d;
  out.data.test.device_id = n_dev;

  RngStream shared_rng(spec.seed, RngStream::stream_id(kStreamDataModel, n_dev));
  const ParamVector shared_labeler =
      spec.iid ? detail::draw_labeler(c, d, 0.0, shared_rng) : ParamVector{};

  for (std::size_t k = 0; k < n_dev; ++k) {
    RngStream model_rng(spec.seed, RngStream::stream_id(kStreamDataModel, k));
    ParamVector labeler;
    std::vector<double> mean(d, 0.0);
    if (spec.iid) {
      labeler = shared_labeler;
    } else {
      const double u_k = model_rng.normal(0.0, spec.alpha);
      const double b_k = model_rng.normal(0.0, spec.beta);
      labeler = detail::draw_labeler(c, d, u_k, model_rng);
      for (double& m : mean) m = model_rng.normal(b_k, 1.0);
    }

    RngStream feat_rng(spec.seed, RngStream::stream_id(kStreamDataFeatures, k));
    DataShard all;
    all.device_id = k;
    all.d_in = d;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < sizes[k]; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[j] = feat_rng.normal(mean[j], feature_sd[j]);
      all.append(x, detail::label_of(labeler, c, d, x));
    }

    RngStream hold_rng(spec.seed, RngStream::stream_id(kStreamDataHoldout, k));
    const auto n_test = static_cast<std::size_t>(
        std::floor(spec.test_fraction * static_cast<double>(sizes[k])));
    const auto test_rows = detail::choose_subset(sizes[k], n_test, hold_rng);
    DataShard train;
    train.device_id = k;
    train.d_in = d;
    std::size_t next_test = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (next_test < test_rows.size() && test_rows[next_test] == i) {
        out.data.test.append(all.row(i), all.labels[i]);
        ++next_test;
      } else {
        train.append(all.row(i), all.labels[i]);
      }
    }
    out.data.shards.push_back(std::move(train));
    out.labelers.push_back(std::move(labeler));
  }
  return out;
}

/// Randomly splits a pooled dataset into (train, holdout) before partitioning.
inline std::pair<Dataset, DataShard> split_holdout(const Dataset& ds, double fraction,
                                                   std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw DataError("holdout fraction must lie in [0, 1)");
  RngStream rng(seed, RngStream::stream_id(kStreamDataHoldout, ~std::uint64_t{0}));
  const auto n_test =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ds.size())));
  const auto test_rows = detail::choose_subset(ds.size(), n_test, rng);
  Dataset train{ds.d_in, ds.classes, DataShard{0, ds.d_in, {}, {}}};
  DataShard test{0, ds.d_in, {}, {}};
  std::size_t next = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (next < test_rows.size() && test_rows[next] == i) {
      test.append(ds.samples.row(i), ds.samples.labels[i]);
      ++next;
    } else {
      train.samples.append(ds.samples.row(i), ds.samples.labels[i]);
    }
  }
  return {std::move(train), std::move(test)};
}

/// Partitions a dataset so each device sees at most `classes_per_device`
/// distinct labels, with device sizes following a power law.
///
/// Device k is assigned classes perm[(k * m + j) mod C] for j < m, where perm
/// is a random class permutation. Each class's samples are then split among
/// the devices holding it in proportion to the devices' power-law weights,
/// one sample minimum per slot while supply lasts. Every sample lands in
/// exactly one shard.
inline std::vector<DataShard> partition_by_label(const Dataset& ds, std::size_t num_devices,
                                                 std::size_t classes_per_device,
                                                 double size_exponent, std::uint64_t seed) {
  const std::size_t n_cls = ds.classes;
  if (classes_per_device < 1 || classes_per_device > n_cls) {
    throw DataError("classes_per_device must lie in [1, " + std::to_string(n_cls) + "]");
  }
  if (num_devices == 0) throw DataError("partition needs at least one device");
  RngStream rng(seed, RngStream::stream_id(kStreamPartition));

  std::vector<std::vector<std::size_t>> by_class(n_cls);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = ds.samples.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_cls) {
      throw DataError("label " + std::to_string(y) + " outside [0, classes)");
    }
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  for (auto& rows : by_class) {
    for (std::size_t i = rows.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
      std::swap(rows[i - 1], rows[j]);
    }
  }

  std::vector<std::size_t> perm(n_cls);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n_cls; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
    std::swap(perm[i - 1], perm[j]);
  }

  std::vector<double> weight(num_devices);
  for (auto& w : weight) w = std::pow(1.0 - rng.uniform(), -1.0 / size_exponent);

  // holders[c] lists the devices that may receive class c, ascending.
  std::vector<std::vector<std::size_t>> holders(n_cls);
  for (std::size_t k = 0; k < num_devices; ++k) {
    for (std::size_t j = 0; j < classes_per_device; ++j) {
      holders[perm[(k * classes_per_device + j) % n_cls]].push_back(k);
    }
  }

  std::vector<DataShard> shards(num_devices);
  for (std::size_t k = 0; k < num_devices; ++k) {
    shards[k].device_id = k;
    shards[k].d_in = ds.d_in;
  }
  for (std::size_t cls = 0; cls < n_cls; ++cls) {
    const auto& rows = by_class[cls];
    const auto& hs = holders[cls];
    if (rows.empty()) continue;
    if (hs.empty()) {
      throw DataError("partition infeasible: class " + std::to_string(cls) +
                      " has samples but no device holds it (need num_devices * "
                      "classes_per_device >= classes)");
    }
    std::vector<std::size_t> quota(hs.size(), 0);
    std::size_t remaining = rows.size();
    for (std::size_t s = 0; s < hs.size() && remaining > 0; ++s, --remaining) quota[s] = 1;
    double wsum = 0.0;
    for (auto k : hs) wsum += weight[k];
    std::size_t given = 0;
    std::vector<std::pair<double, std::size_t>> rem(hs.size());
    for (std::size_t s = 0; s < hs.size(); ++s) {
      const double share = static_cast<double>(remaining) * weight[hs[s]] / wsum;
      const auto whole = static_cast<std::size_t>(std::floor(share));
      quota[s] += whole;
      given += whole;
      rem[s] = {share - static_cast<double>(whole), s};
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; given < remaining; ++i, ++given) ++quota[rem[i % rem.size()].second];

    std::size_t cursor = 0;
    for (std::size_t s = 0; s < hs.size(); ++s) {
      for (std::size_t q = 0; q < quota[s]; ++q, ++cursor) {
        const std::size_t i = rows[cursor];
        shards[hs[s]].append(ds.samples.row(i), ds.samples.labels[i]);
      }
    }
  }
  for (const auto& s : shards) {
    if (s.empty()) {
      throw DataError("partition infeasible: device " + std::to_string(s.device_id) +
                      " received no samples");
    }
  }
  return shards;
}

struct CsvLoadResult {
  Dataset data;
  std::size_t rejected = 0;  // rows dropped for NaN / Inf values
};

/// Loads a numeric CSV. `label_column` indexes the integer label column
/// (negative counts from the end). A first line that does not parse as
/// numbers is treated as a header. Rows holding NaN or Inf are rejected and
/// counted; any other malformed field raises DataError with its line number.
inline CsvLoadResult load_csv(std::istream& in, int label_column) {
  CsvLoadResult result;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  std::size_t label_idx = 0;
  int max_label = -1;
  bool first_content = true;

  auto parse_double = [](std::string_view tok, double& v) {
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) {
      tok.remove_suffix(1);
    }
    if (tok.empty()) return false;
    const std::string s(tok);
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], values[i])) {
        numeric = false;
        break;
      }
    }
    if (first_content) {
      first_content = false;
      columns = fields.size();
      const long idx = label_column < 0 ? static_cast<long>(columns) + label_column
                                        : static_cast<long>(label_column);
      if (idx < 0 || idx >= static_cast<long>(columns)) {
        throw DataError("label column " + std::to_string(label_column) +
                        " out of range for " + std::to_string(columns) + " columns");
      }
      if (columns < 2) throw DataError("CSV needs at least one feature column and a label");
      label_idx = static_cast<std::size_t>(idx);
      result.data.d_in = columns - 1;
      result.data.samples.d_in = columns - 1;
      if (!numeric) continue;  // header
    }
    if (fields.size() != columns) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(columns) + " fields, found " +
                      std::to_string(fields.size()));
    }
    if (!numeric) throw DataError("line " + std::to_string(line_no) + ": non-numeric field");
    if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
      ++result.rejected;
      continue;
    }
    const double yv = values[label_idx];
    if (yv < 0.0 || yv != std::floor(yv) || yv > 1e9) {
      throw DataError("line " + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    const int y = static_cast<int>(yv);
    std::vector<double> x;
    x.reserve(columns - 1);
    for (std::size_t i = 0; i < columns; ++i) {
      if (i != label_idx) x.push_back(values[i]);
    }
    result.data.samples.append(x, y);
    max_label = std::max(max_label, y);
  }
  result.data.classes = static_cast<std::size_t>(max_label + 1);
  return result;
}

inline CsvLoadResult load_csv(const std::string& path, int label_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path);
  return load_csv(in, label_column);
}

// ---------------------------------------------------------------------------
// Shard container
//
//   u64 N | u64 d_in | u64 C | u64 size[0..N-1] | u64 test_size
//   then per shard (N train shards, then the test shard):
//     f64 features[size * d_in] | i32 labels[size]
//
// All integers and floats are little-endian.
// ---------------------------------------------------------------------------

inline void write_shards(std::ostream& out, const FederatedData& fd) {
  binary::put_u64(out, fd.shards.size());
  binary::put_u64(out, fd.d_in);
  binary::put_u64(out, fd.classes);
  for (const auto& s : fd.shards) binary::put_u64(out, s.size());
  binary::put_u64(out, fd.test.size());
  auto body = [&](const DataShard& s) {
    for (double v : s.features) binary::put_f64(out, v);
    for (int y : s.labels) binary::put_i32(out, y);
  };
  for (const auto& s : fd.shards) body(s);
  body(fd.test);
  if (!out) throw IoError("failed writing shard container");
}

inline FederatedData read_shards(std::istream& in) {
  FederatedData fd;
  const auto n = binary::get_u64(in);
  fd.d_in = binary::get_u64(in);
  fd.classes = binary::get_u64(in);
  if (n > (1u << 24) || fd.d_in > (1u << 24)) throw IoError("implausible shard header");
  std::vector<std::uint64_t> sizes(n + 1);
  for (auto& s : sizes) s = binary::get_u64(in);
  auto body = [&](std::size_t id, std::uint64_t size) {
    DataShard s;
    s.device_id = id;
    s.d_in = fd.d_in;
    s.features.resize(size * fd.d_in);
    s.labels.resize(size);
    for (double& v : s.features) v = binary::get_f64(in);
    for (int& y : s.labels) y = binary::get_i32(in);
    return s;
  };
  for (std::size_t k = 0; k < n; ++k) fd.shards.push_back(body(k, sizes[k]));
  fd.test = body(n, sizes[n]);
  return fd;
}

inline void save_shards(const std::string& path, const FederatedData& fd) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_shards(out, fd);
}

inline FederatedData load_shards(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open shard file: " + path);
  return read_shards(in);
}

}  // namespace fedsim

#endif  // FEDSIM_DATA_HPP
