// Round loop for every strategy, experiment output, and grid search.
#ifndef FEDSIM_ORCHESTRATOR_HPP
#define FEDSIM_ORCHESTRATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedsim/aggregation.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/local_solver.hpp"
#include "fedsim/models.hpp"
#include "fedsim/numerics.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/selection.hpp"

namespace fedsim {

inline constexpr std::uint64_t kStreamSelect = 0x61;
inline constexpr std::uint64_t kStreamInit = 0x71;

struct RoundRecord {
  std::size_t round = 0;  // 1-indexed
  std::vector<std::size_t> selected;    // multiset S (or S1), in draw order
  std::vector<std::size_t> selected_2;  // S2 for the two-set rule
  std::vector<std::size_t> participants;  // devices whose updates were aggregated
  std::vector<std::size_t> timed_out;     // selected but excluded by the time budget
  std::vector<double> weights;            // aligned with participants
  std::vector<double> gammas;             // aligned with participants
  std::vector<std::size_t> steps;         // aligned with participants
  bool noop = false;       // every selected device timed out
  bool fell_back = false;  // degenerate normalizer or all-zero distribution
  double train_loss = 0.0;     // f after this round's update
  double test_accuracy = 0.0;  // on the global holdout, after the update
  std::optional<double> grad_norm;  // ||grad f|| at the round's starting point
  double round_time = 0.0;  // max over participants of comm delay + steps * cost
  double sim_time = 0.0;    // cumulative round_time
  std::size_t upload_floats = 0;
  std::optional<std::vector<double>> params_before;
};

inline nlohmann::json to_json(const RoundRecord& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["selected"] = r.selected;
  if (!r.selected_2.empty()) j["selected_2"] = r.selected_2;
  j["participants"] = r.participants;
  j["timed_out"] = r.timed_out;
  j["weights"] = r.weights;
  j["gammas"] = r.gammas;
  j["steps"] = r.steps;
  j["noop"] = r.noop;
  j["fell_back"] = r.fell_back;
  j["train_loss"] = r.train_loss;
  j["test_accuracy"] = r.test_accuracy;
  j["grad_norm"] = r.grad_norm ? nlohmann::json(*r.grad_norm) : nlohmann::json(nullptr);
  j["round_time"] = r.round_time;
  j["sim_time"] = r.sim_time;
  j["upload_floats"] = r.upload_floats;
  if (r.params_before) j["params_before"] = *r.params_before;
  return j;
}

/// Model state at the start of a logged round.
struct RoundState {
  std::size_t round = 0;
  ParamVector params;
};

/// Reads (round, params_before) pairs from a run's JSONL log.
inline std::vector<RoundState> load_round_states(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run log '" + path + "'");
  std::vector<RoundState> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("params_before")) {
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": no params_before; rerun with log_params = true");
    }
    out.push_back({j.at("round").get<std::size_t>(),
                   ParamVector(j.at("params_before").get<std::vector<double>>())});
  }
  return out;
}

/// Loads or generates the federated data a config describes.
inline FederatedData build_data(const ExperimentConfig& c) {
  switch (c.data_source) {
    case DataSource::kSynthetic:
      return generate_synthetic(c.synthetic_spec()).data;
    case DataSource::kCsv: {
      auto loaded = load_csv(c.csv_path, c.label_column);
      if (loaded.rejected > 0) {
        log::warn(c.csv_path + ": skipped " + std::to_string(loaded.rejected) +
                  " rows with non-finite values");
      }
      auto [train, test] = split_holdout(loaded.data, c.test_fraction, c.data_seed);
      FederatedData fd;
      fd.d_in = train.d_in;
      fd.classes = train.classes;
      fd.shards = partition_by_label(train, c.num_devices, c.classes_per_device,
                                     c.size_exponent, c.data_seed);
      fd.test = std::move(test);
      fd.test.device_id = c.num_devices;
      return fd;
    }
    case DataSource::kShards: {
      auto fd = load_shards(c.shards_path);
      if (fd.shards.size() != c.num_devices) {
        throw ConfigError(c.shards_path + " holds " + std::to_string(fd.shards.size()) +
                          " shards but num_devices = " + std::to_string(c.num_devices));
      }
      return fd;
    }
  }
  throw ConfigError("unknown data source");
}

class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg) : Simulation(cfg, build_data(cfg)) {}

  Simulation(ExperimentConfig cfg, FederatedData data)
      : cfg_(std::move(cfg)), data_(std::move(data)) {
    validate(cfg_);
    if (data_.shards.size() != cfg_.num_devices) {
      throw ConfigError("data has " + std::to_string(data_.shards.size()) +
                        " shards but num_devices = " + std::to_string(cfg_.num_devices));
    }
    for (const auto& s : data_.shards) {
      if (s.empty()) throw DataError("device " + std::to_string(s.device_id) + " has no data");
    }
    model_ = cfg_.model == ModelKind::kMlr ? LossModel::mlr(data_.d_in, data_.classes)
                                           : LossModel::mlp1(data_.d_in, data_.classes, cfg_.hidden);
    std::size_t total = 0;
    for (const auto& s : data_.shards) total += s.size();
    for (std::size_t k = 0; k < cfg_.num_devices; ++k) {
      DeviceProfile p;
      p.device_id = k;
      p.shard = &data_.shards[k];
      p.step_min = cfg_.step_min;
      p.step_max = cfg_.step_max;
      p.learning_rate = cfg_.learning_rate;
      p.batch_size = cfg_.batch_size;
      p.step_cost = cfg_.step_cost;
      if (cfg_.comm_delay_mean > 0.0) {
        // Device mean delay ~ Exp(comm_delay_mean); T^c_k is its 99th percentile.
        RngStream rng(cfg_.seed, RngStream::stream_id(kStreamCommDelay, k));
        p.comm_delay = delay_upper_bound(rng.exponential(cfg_.comm_delay_mean));
      }
      profiles_.push_back(p);
      objective_weights_.push_back(cfg_.weight_by_size
                                       ? static_cast<double>(data_.shards[k].size()) /
                                             static_cast<double>(total)
                                       : 1.0 / static_cast<double>(cfg_.num_devices));
    }
  }

  // The profiles point into data_, so copies would dangle.
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const FederatedData& data() const noexcept { return data_; }
  const LossModel& model() const noexcept { return model_; }
  const std::vector<DeviceProfile>& profiles() const noexcept { return profiles_; }
  std::span<const double> objective_weights() const noexcept { return objective_weights_; }

  ParamVector initial_params() const {
    RngStream rng(cfg_.seed, RngStream::stream_id(kStreamInit));
    return fedsim::initial_params(model_, rng);
  }

  /// f(w) = sum_k p_k F_k(w)
  double global_loss(const ParamVector& w) const {
    std::vector<double> per(cfg_.num_devices);
    parallel_for(per.size(), [&](std::size_t k) { per[k] = loss(model_, w, data_.shards[k]); });
    double f = 0.0;
    for (std::size_t k = 0; k < per.size(); ++k) f += objective_weights_[k] * per[k];
    return f;
  }

  std::vector<ParamVector> local_gradients(const ParamVector& w) const {
    std::vector<ParamVector> g(cfg_.num_devices);
    parallel_for(g.size(), [&](std::size_t k) { g[k] = gradient(model_, w, data_.shards[k]); });
    return g;
  }

  ParamVector global_gradient(std::span<const ParamVector> local) const {
    ParamVector g(model_.param_count());
    for (std::size_t k = 0; k < local.size(); ++k) axpy(objective_weights_[k], local[k], g);
    return g;
  }

  double test_accuracy(const ParamVector& w) const {
    return data_.test.empty() ? 0.0 : accuracy(model_, w, data_.test);
  }

  /// Solves each distinct device once; the result is indexed by device id.
  /// A zero `force_steps` budget runs no local steps.
  std::map<std::size_t, std::optional<LocalUpdate>> solve_devices(
      std::size_t round, const ParamVector& w, std::span<const std::size_t> devices, double mu,
      double tau, std::optional<std::size_t> force_steps = std::nullopt) const {
    std::vector<std::size_t> unique(devices.begin(), devices.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    std::vector<std::optional<LocalUpdate>> results(unique.size());
    parallel_for(unique.size(), [&](std::size_t i) {
      const auto& p = profiles_[unique[i]];
      const std::size_t budget = force_steps ? *force_steps : draw_step_budget(p, round, cfg_.seed);
      RngStream rng(cfg_.seed, RngStream::stream_id(kStreamMinibatch, round, p.device_id));
      results[i] = local_solve(model_, p, w, mu, tau, budget, rng);
    });
    std::map<std::size_t, std::optional<LocalUpdate>> out;
    for (std::size_t i = 0; i < unique.size(); ++i) out.emplace(unique[i], std::move(results[i]));
    return out;
  }

  /// Uniform K-multiset for (round, set index).
  std::vector<std::size_t> sample_uniform(std::size_t round, std::uint64_t set) const {
    const auto u = uniform_distribution(cfg_.num_devices);
    return sample_from(u.probs, round, set);
  }

  std::vector<std::size_t> sample_from(std::span<const double> probs, std::size_t round,
                                       std::uint64_t set) const {
    RngStream rng(cfg_.seed, RngStream::stream_id(kStreamSelect, round, set));
    return sample_categorical(probs, cfg_.clients_per_round, rng);
  }

  /// Executes round `t` (1-indexed) from w, replacing w with w^{t+1}.
  RoundRecord run_round(std::size_t t, ParamVector& w) const {
    RoundRecord rec;
    rec.round = t;
    if (cfg_.log_params) rec.params_before = w.values();
    const std::size_t p = model_.param_count();
    const double mu = cfg_.strategy == Strategy::kFedAvg ? 0.0 : cfg_.mu;

    std::vector<ParamVector> all_grads;
    ParamVector global_grad;
    if (cfg_.full_information) {
      all_grads = local_gradients(w);
      global_grad = global_gradient(all_grads);
      rec.grad_norm = l2_norm(global_grad);
    }

    switch (cfg_.strategy) {
      case Strategy::kFedNuExact: {
        const auto d = lb_near_optimal_distribution(all_grads, global_grad);
        rec.fell_back = d.fell_back;
        rec.selected = sample_from(d.probs, t, 0);
        break;
      }
      case Strategy::kFedNuNorm: {
        const auto d = norm_proportional_distribution(all_grads);
        rec.fell_back = d.fell_back;
        rec.selected = sample_from(d.probs, t, 0);
        break;
      }
      default:
        rec.selected = sample_uniform(t, 0);
    }
    if (cfg_.strategy == Strategy::kFolbTwoSet) rec.selected_2 = sample_uniform(t, 1);

    const auto solved = solve_devices(t, w, rec.selected, mu, cfg_.tau);
    std::vector<LocalUpdate> updates;
    for (std::size_t k : rec.selected) {
      const auto& u = solved.at(k);
      if (!u) {
        rec.timed_out.push_back(k);
        continue;
      }
      updates.push_back(*u);
      rec.participants.push_back(k);
      rec.gammas.push_back(u->gamma);
      rec.steps.push_back(u->steps);
      rec.round_time = std::max(rec.round_time, u->elapsed);
    }

    std::vector<ParamVector> grads_s2;
    for (std::size_t k : rec.selected_2) {
      if (!(cfg_.tau > profiles_[k].comm_delay)) continue;
      grads_s2.push_back(gradient(model_, w, data_.shards[k]));
      rec.round_time = std::max(rec.round_time, profiles_[k].comm_delay);
    }

    if (updates.empty() || (cfg_.strategy == Strategy::kFolbTwoSet && grads_s2.empty())) {
      rec.noop = true;
      log::info("round " + std::to_string(t) + ": no participating devices, model unchanged");
    } else {
      AggregationReport agg;
      switch (cfg_.strategy) {
        case Strategy::kFedAvg:
        case Strategy::kFedProx:
        case Strategy::kFedNuExact:
        case Strategy::kFedNuNorm:
          agg = aggregate_average(w, updates);
          rec.upload_floats = updates.size() * p;
          break;
        case Strategy::kFolbTwoSet:
          agg = aggregate_folb_two_set(w, updates, grads_s2);
          rec.upload_floats = updates.size() * 2 * p + grads_s2.size() * p;
          break;
        case Strategy::kFolbSingle:
          agg = aggregate_folb_single(w, updates);
          rec.upload_floats = updates.size() * 2 * p;
          break;
        case Strategy::kFolbHet:
          agg = aggregate_folb_het(w, updates, cfg_.psi);
          rec.upload_floats = updates.size() * (2 * p + 1);
          break;
      }
      rec.fell_back = rec.fell_back || agg.fell_back;
      rec.weights = std::move(agg.weights);
      if (!agg.params.all_finite()) {
        throw Error("round " + std::to_string(t) + " produced non-finite parameters");
      }
      w = std::move(agg.params);
    }

    rec.train_loss = global_loss(w);
    if (!std::isfinite(rec.train_loss)) {
      throw Error("round " + std::to_string(t) + " produced a non-finite training loss");
    }
    rec.test_accuracy = test_accuracy(w);
    return rec;
  }

 private:
  ExperimentConfig cfg_;
  FederatedData data_;
  LossModel model_;
  std::vector<DeviceProfile> profiles_;
  std::vector<double> objective_weights_;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ParamVector final_params;
};

inline std::string metrics_csv_header() {
  return "round,train_loss,test_accuracy,grad_norm,sim_time,strategy,seed\n";
}

inline std::string metrics_csv_row(const RoundRecord& r, const ExperimentConfig& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,", r.round, r.train_loss, r.test_accuracy);
  std::string row = buf;
  if (r.grad_norm) {
    std::snprintf(buf, sizeof buf, "%.17g", *r.grad_norm);
    row += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.17g,", r.sim_time);
  row += buf;
  row += to_string(c.strategy) + "," + std::to_string(c.seed) + "\n";
  return row;
}

/// Runs all rounds in memory.
inline ExperimentResult run_rounds(const Simulation& sim) {
  ExperimentResult res;
  res.final_params = sim.initial_params();
  double clock = 0.0;
  for (std::size_t t = 1; t <= sim.config().rounds; ++t) {
    auto rec = sim.run_round(t, res.final_params);
    clock += rec.round_time;
    rec.sim_time = clock;
    res.records.push_back(std::move(rec));
  }
  return res;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  return out;
}

}  // namespace detail

/// Runs the experiment and writes metrics.csv, rounds.jsonl and config.txt
/// into `out_dir` (skipped when empty).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  Simulation sim(cfg);
  auto res = run_rounds(sim);
  if (out_dir.empty()) return res;

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const fs::path dir(out_dir);
  {
    auto out = detail::open_output(dir / "metrics.csv");
    out << metrics_csv_header();
    for (const auto& r : res.records) out << metrics_csv_row(r, cfg);
    if (!out) throw IoError("write failed for '" + (dir / "metrics.csv").string() + "'");
  }
  {
    auto out = detail::open_output(dir / "rounds.jsonl");
    for (const auto& r : res.records) out << to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed for '" + (dir / "rounds.jsonl").string() + "'");
  }
  {
    auto out = detail::open_output(dir / "config.txt");
    out << to_text(cfg);
    if (!out) throw IoError("write failed for '" + (dir / "config.txt").string() + "'");
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, cfg.out_dir);
}

/// First 1-indexed round whose accuracy reaches `threshold`.
inline std::optional<std::size_t> rounds_to_accuracy(std::span<const double> accuracy,
                                                     double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    if (accuracy[i] >= threshold) return i + 1;
  }
  return std::nullopt;
}

inline std::vector<double> accuracy_series(std::span<const RoundRecord> records) {
  std::vector<double> a;
  a.reserve(records.size());
  for (const auto& r : records) a.push_back(r.test_accuracy);
  return a;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridEntry {
  double mu = 0.0;
  double psi = 0.0;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
};

struct GridResult {
  std::vector<GridEntry> entries;  // schedule order
  std::vector<std::size_t> ranking;  // indices into entries, best first
  ExperimentConfig best;
};

/// One config per (mu, psi) pair, mu-major. Data seed is shared; run i uses
/// solver seed template.seed + i.
inline std::vector<ExperimentConfig> grid_schedule(const ExperimentConfig& tmpl,
                                                   std::span<const double> mu_grid,
                                                   std::span<const double> psi_grid) {
  if (mu_grid.empty() || psi_grid.empty()) throw ConfigError("grid_search needs nonempty grids");
  std::vector<ExperimentConfig> runs;
  for (double mu : mu_grid) {
    for (double psi : psi_grid) {
      ExperimentConfig c = tmpl;
      c.mu = mu;
      c.psi = psi;
      c.seed = tmpl.seed + runs.size();
      validate(c);
      runs.push_back(std::move(c));
    }
  }
  return runs;
}

/// Ranks by final test accuracy; ties go to the smaller psi, then smaller mu.
inline GridResult grid_search(const ExperimentConfig& tmpl, std::span<const double> mu_grid,
                              std::span<const double> psi_grid) {
  const auto runs = grid_schedule(tmpl, mu_grid, psi_grid);
  GridResult g;
  for (const auto& c : runs) {
    Simulation sim(c);
    const auto res = run_rounds(sim);
    g.entries.push_back({c.mu, c.psi, c.seed, res.records.back().test_accuracy,
                         res.records.back().train_loss});
  }
  g.ranking.resize(g.entries.size());
  std::iota(g.ranking.begin(), g.ranking.end(), std::size_t{0});
  std::stable_sort(g.ranking.begin(), g.ranking.end(), [&](std::size_t a, std::size_t b) {
    const auto &x = g.entries[a], &y = g.entries[b];
    if (x.final_accuracy != y.final_accuracy) return x.final_accuracy > y.final_accuracy;
    if (x.psi != y.psi) return x.psi < y.psi;
    return x.mu < y.mu;
  });
  g.best = runs[g.ranking.front()];
  return g;
}

}  // namespace fedsim

#endif  // FEDSIM_ORCHESTRATOR_HPP
