// Experiment configuration and its flat `key = value` file format.
#ifndef FEDSIM_CONFIG_HPP
#define FEDSIM_CONFIG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/models.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class Strategy {
  kFedAvg,
  kFedProx,
  kFedNuExact,
  kFedNuNorm,
  kFolbTwoSet,
  kFolbSingle,
  kFolbHet,
};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kFedProx: return "fedprox";
    case Strategy::kFedNuExact: return "fednu_exact";
    case Strategy::kFedNuNorm: return "fednu_norm";
    case Strategy::kFolbTwoSet: return "folb_two_set";
    case Strategy::kFolbSingle: return "folb_single";
    case Strategy::kFolbHet: return "folb_het";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto k : {Strategy::kFedAvg, Strategy::kFedProx, Strategy::kFedNuExact,
                 Strategy::kFedNuNorm, Strategy::kFolbTwoSet, Strategy::kFolbSingle,
                 Strategy::kFolbHet}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

enum class DataSource { kSynthetic, kCsv, kShards };

struct ExperimentConfig {
  Strategy strategy = Strategy::kFolbSingle;
  std::size_t num_devices = 30;        // N
  std::size_t clients_per_round = 10;  // K
  std::size_t rounds = 200;            // T
  double mu = 0.0;
  double psi = 0.0;
  double tau = std::numeric_limits<double>::infinity();
  bool full_information = false;
  bool weight_by_size = false;  // |D_k|/|D| instead of 1/N in the global objective
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 1;

  DataSource data_source = DataSource::kSynthetic;
  double synthetic_alpha = 1.0;
  double synthetic_beta = 1.0;
  bool synthetic_iid = false;
  std::size_t d_in = 60;
  std::size_t classes = 10;
  std::size_t total_samples = 10000;
  double size_exponent = 1.2;
  double test_fraction = 0.2;
  std::string csv_path;
  int label_column = -1;
  std::size_t classes_per_device = 2;
  std::string shards_path;

  ModelKind model = ModelKind::kMlr;
  std::size_t hidden = 32;

  double learning_rate = 0.01;
  std::size_t batch_size = 0;
  std::size_t step_min = 1;
  std::size_t step_max = 20;
  double step_cost = 1.0;
  double comm_delay_mean = 0.0;

  bool log_params = false;
  std::string out_dir = "out";

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.alpha = synthetic_alpha;
    s.beta = synthetic_beta;
    s.iid = synthetic_iid;
    s.num_devices = num_devices;
    s.d_in = d_in;
    s.classes = classes;
    s.total_samples = total_samples;
    s.size_exponent = size_exponent;
    s.test_fraction = test_fraction;
    s.seed = data_seed;
    return s;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is out of range");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

struct ConfigField {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  using C = ExperimentConfig;
  using S = std::string;
  static const std::vector<std::pair<std::string, ConfigField>> fields = [] {
    std::vector<std::pair<std::string, ConfigField>> f;
    auto add_size = [&f](const char* name, std::size_t C::*m) {
      f.push_back({name,
                   {[m, name](C& c, const S& v) { c.*m = parse_uint(name, v); },
                    [m](const C& c) { return std::to_string(c.*m); }}});
    };
    auto add_double = [&f](const char* name, double C::*m) {
      f.push_back({name,
                   {[m, name](C& c, const S& v) { c.*m = parse_double(name, v); },
                    [m](const C& c) { return format_double(c.*m); }}});
    };
    auto add_bool = [&f](const char* name, bool C::*m) {
      f.push_back({name,
                   {[m, name](C& c, const S& v) { c.*m = parse_bool(name, v); },
                    [m](const C& c) { return S(c.*m ? "true" : "false"); }}});
    };
    auto add_u64 = [&f](const char* name, std::uint64_t C::*m) {
      f.push_back({name,
                   {[m, name](C& c, const S& v) { c.*m = parse_uint(name, v); },
                    [m](const C& c) { return std::to_string(c.*m); }}});
    };
    auto add_string = [&f](const char* name, std::string C::*m) {
      f.push_back({name,
                   {[m](C& c, const S& v) { c.*m = v; }, [m](const C& c) { return c.*m; }}});
    };

    f.push_back({"strategy",
                 {[](C& c, const S& v) { c.strategy = parse_strategy(v); },
                  [](const C& c) { return to_string(c.strategy); }}});
    add_size("num_devices", &C::num_devices);
    add_size("clients_per_round", &C::clients_per_round);
    add_size("rounds", &C::rounds);
    add_double("mu", &C::mu);
    add_double("psi", &C::psi);
    add_double("tau", &C::tau);
    add_bool("full_information", &C::full_information);
    f.push_back({"weighting",
                 {[](C& c, const S& v) {
                    if (v == "uniform") c.weight_by_size = false;
                    else if (v == "size") c.weight_by_size = true;
                    else throw ConfigError("weighting must be uniform or size, got '" + v + "'");
                  },
                  [](const C& c) { return S(c.weight_by_size ? "size" : "uniform"); }}});
    add_u64("seed", &C::seed);
    add_u64("data_seed", &C::data_seed);
    f.push_back({"data_source",
                 {[](C& c, const S& v) {
                    if (v == "synthetic") c.data_source = DataSource::kSynthetic;
                    else if (v == "csv") c.data_source = DataSource::kCsv;
                    else if (v == "shards") c.data_source = DataSource::kShards;
                    else throw ConfigError("data_source must be synthetic, csv or shards");
                  },
                  [](const C& c) {
                    switch (c.data_source) {
                      case DataSource::kCsv: return S("csv");
                      case DataSource::kShards: return S("shards");
                      default: return S("synthetic");
                    }
                  }}});
    add_double("synthetic_alpha", &C::synthetic_alpha);
    add_double("synthetic_beta", &C::synthetic_beta);
    add_bool("synthetic_iid", &C::synthetic_iid);
    add_size("d_in", &C::d_in);
    add_size("classes", &C::classes);
    add_size("total_samples", &C::total_samples);
    add_double("size_exponent", &C::size_exponent);
    add_double("test_fraction", &C::test_fraction);
    add_string("csv_path", &C::csv_path);
    f.push_back({"label_column",
                 {[](C& c, const S& v) {
                    try {
                      std::size_t used = 0;
                      c.label_column = std::stoi(v, &used);
                      if (used != v.size()) throw std::invalid_argument(v);
                    } catch (const std::exception&) {
                      throw ConfigError("config key 'label_column': '" + v + "' is not an integer");
                    }
                  },
                  [](const C& c) { return std::to_string(c.label_column); }}});
    add_size("classes_per_device", &C::classes_per_device);
    add_string("shards_path", &C::shards_path);
    f.push_back({"model",
                 {[](C& c, const S& v) {
                    if (v == "mlr") c.model = ModelKind::kMlr;
                    else if (v == "mlp1") c.model = ModelKind::kMlp1;
                    else throw ConfigError("model must be mlr or mlp1, got '" + v + "'");
                  },
                  [](const C& c) { return to_string(c.model); }}});
    add_size("hidden", &C::hidden);
    add_double("learning_rate", &C::learning_rate);
    add_size("batch_size", &C::batch_size);
    add_size("step_min", &C::step_min);
    add_size("step_max", &C::step_max);
    add_double("step_cost", &C::step_cost);
    add_double("comm_delay_mean", &C::comm_delay_mean);
    add_bool("log_params", &C::log_params);
    add_string("out_dir", &C::out_dir);
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Sets one key; unknown keys are rejected.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : detail::config_fields()) {
    if (name == key) {
      field.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline void validate(const ExperimentConfig& c) {
  if (c.num_devices < 1) throw ConfigError("num_devices must be >= 1");
  if (c.clients_per_round < 1 || c.clients_per_round > c.num_devices) {
    throw ConfigError("clients_per_round must satisfy 1 <= K <= N (K = " +
                      std::to_string(c.clients_per_round) + ", N = " +
                      std::to_string(c.num_devices) + ")");
  }
  if (c.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (!(c.mu >= 0.0) || std::isinf(c.mu)) throw ConfigError("mu must be finite and >= 0");
  if (c.psi != 0.0 && c.strategy != Strategy::kFolbHet) {
    throw ConfigError("psi applies only to folb_het");
  }
  if (!(c.psi >= 0.0) || std::isinf(c.psi)) throw ConfigError("psi must be finite and >= 0");
  if (!(c.tau > 0.0)) throw ConfigError("tau must be > 0");
  if ((c.strategy == Strategy::kFedNuExact || c.strategy == Strategy::kFedNuNorm) &&
      !c.full_information) {
    throw ConfigError(to_string(c.strategy) + " needs full_information = true");
  }
  if (c.step_min < 1 || c.step_min > c.step_max) {
    throw ConfigError("step range must satisfy 1 <= step_min <= step_max");
  }
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(c.step_cost >= 0.0)) throw ConfigError("step_cost must be >= 0");
  if (!(c.comm_delay_mean >= 0.0)) throw ConfigError("comm_delay_mean must be >= 0");
  if (c.model == ModelKind::kMlp1 && c.hidden < 1) throw ConfigError("mlp1 needs hidden >= 1");
  if (c.data_source == DataSource::kCsv && c.csv_path.empty()) {
    throw ConfigError("data_source = csv needs csv_path");
  }
  if (c.data_source == DataSource::kShards && c.shards_path.empty()) {
    throw ConfigError("data_source = shards needs shards_path");
  }
}

/// Parses `key = value` lines; '#' starts a comment.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(base);
  return base;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Every key in a fixed order; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [name, field] : detail::config_fields()) {
    out += name + " = " + field.get(c) + "\n";
  }
  return out;
}

}  // namespace fedsim

#endif  // FEDSIM_CONFIG_HPP
