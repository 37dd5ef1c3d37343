// Command-line front end: run, gen-data, bounds, oracle lemma1, grid.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/bounds_check.hpp"
#include "fedsim/bounds_lab.hpp"
#include "fedsim/config.hpp"
#include "fedsim/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

std::vector<ParamVector> read_gradients(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gradient file '" + path + "'");
  std::vector<ParamVector> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ss(line);
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        v.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw IoError(path + ": line " + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
    }
    if (v.empty()) continue;
    if (!out.empty() && v.size() != out.front().size()) {
      throw IoError(path + ": line " + std::to_string(line_no) + ": dimension mismatch");
    }
    out.emplace_back(std::move(v));
  }
  if (out.empty()) throw IoError("no gradients in '" + path + "'");
  return out;
}

nlohmann::json to_json(const Lemma1Report& r) {
  return {{"n", r.n},
          {"k", r.k},
          {"exhaustive", r.exhaustive},
          {"samples", r.samples},
          {"lhs14_exact", r.lhs14_exact},
          {"lhs14_exact_se", r.lhs14_exact_se},
          {"lhs14_indep", r.lhs14_indep},
          {"rhs14", r.rhs14},
          {"lhs15_exact", r.lhs15_exact},
          {"lhs15_exact_se", r.lhs15_exact_se},
          {"lhs15_indep", r.lhs15_indep},
          {"rhs15", r.rhs15}};
}

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::string& out) {
  auto cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  const auto res = run_experiment(cfg, cfg.out_dir);
  const auto& last = res.records.back();
  std::printf("%s seed=%llu rounds=%zu train_loss=%.6g test_accuracy=%.4f -> %s\n",
              to_string(cfg.strategy).c_str(), static_cast<unsigned long long>(cfg.seed),
              res.records.size(), last.train_loss, last.test_accuracy, cfg.out_dir.c_str());
  return 0;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  const auto cfg = load_config(spec_path);
  const auto fd = build_data(cfg);
  save_shards(out, fd);
  std::size_t total = 0;
  for (const auto& s : fd.shards) total += s.size();
  std::printf("wrote %zu shards (%zu training rows, %zu test rows) to %s\n", fd.shards.size(),
              total, fd.test.size(), out.c_str());
  return 0;
}

int cmd_bounds(const std::string& run_path, std::string config_path, const std::string& kind_name,
               std::size_t mc, std::size_t probes, std::optional<double> mu, std::uint64_t seed) {
  if (config_path.empty()) config_path = (fs::path(run_path).parent_path() / "config.txt").string();
  auto cfg = load_config(config_path);
  const auto kind = parse_bound_kind(kind_name);
  const auto states = load_round_states(run_path);
  if (states.empty()) throw ConfigError("no rounds in '" + run_path + "'");
  Simulation sim(cfg);
  std::vector<ParamVector> traj;
  for (const auto& s : states) traj.push_back(s.params);
  ShardedObjective obj{sim.model(), &sim.data().shards};
  RngStream rng(seed, RngStream::stream_id(0xC0));
  const auto constants = estimate_constants(obj, traj, probes, rng, mu.value_or(cfg.mu));
  BoundCheckOptions opt;
  opt.mc_rounds = mc;
  opt.seed = seed;
  const auto report = check_bound_along_run(sim, states, constants, kind, opt);
  std::cout << fedsim::to_json(report).dump(2) << '\n';
  return report.holds ? 0 : 2;
}

int cmd_lemma1(std::size_t n, std::size_t k, const std::string& grads_path, std::size_t dim,
               std::size_t mc, std::uint64_t seed) {
  std::vector<ParamVector> grads;
  if (!grads_path.empty()) {
    grads = read_gradients(grads_path);
    if (n != 0 && n != grads.size()) {
      throw ConfigError("--n " + std::to_string(n) + " but file has " +
                        std::to_string(grads.size()) + " gradients");
    }
  } else {
    if (n == 0) throw ConfigError("--n is required without --grads");
    RngStream rng(seed, RngStream::stream_id(0x1E, 0xFF));
    for (std::size_t i = 0; i < n; ++i) {
      ParamVector g(dim);
      for (double& v : g) v = rng.normal();
      grads.push_back(std::move(g));
    }
  }
  std::cout << to_json(lemma1_oracle(grads, k, mc, seed)).dump(2) << '\n';
  return 0;
}

int cmd_grid(const std::string& config_path, const std::vector<double>& mu,
             const std::vector<double>& psi) {
  const auto cfg = load_config(config_path);
  const auto g = grid_search(cfg, mu, psi);
  nlohmann::json j;
  for (std::size_t rank = 0; rank < g.ranking.size(); ++rank) {
    const auto& e = g.entries[g.ranking[rank]];
    j["ranking"].push_back({{"rank", rank + 1},
                            {"mu", e.mu},
                            {"psi", e.psi},
                            {"seed", e.seed},
                            {"final_accuracy", e.final_accuracy},
                            {"final_loss", e.final_loss}});
  }
  j["best"] = {{"mu", g.best.mu}, {"psi", g.best.psi}, {"seed", g.best.seed}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with alignment-weighted aggregation"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one experiment from a config file");
  std::string run_config, run_out;
  std::optional<std::uint64_t> run_seed;
  run->add_option("--config", run_config, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", run_seed, "override the solver seed");
  run->add_option("--out", run_out, "output directory (overrides out_dir)");

  auto* gen = app.add_subcommand("gen-data", "generate or load data and write a shard container");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "config file with the data keys")->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output shard file")->required();

  auto* bounds = app.add_subcommand("bounds", "check a loss bound along a recorded run");
  std::string b_run, b_config, b_kind = "thm1";
  std::size_t b_mc = 200, b_probes = 3;
  std::optional<double> b_mu;
  std::uint64_t b_seed = 7;
  bounds->add_option("--run", b_run, "rounds.jsonl recorded with log_params = true")->required()
      ->check(CLI::ExistingFile);
  bounds->add_option("--kind", b_kind, "thm1 | prop1 | def1 | prop2 | thm3");
  bounds->add_option("--mc", b_mc, "Monte-Carlo replays per round");
  bounds->add_option("--config", b_config, "config of the run (default: config.txt next to --run)");
  bounds->add_option("--probes", b_probes, "probe directions per trajectory point");
  bounds->add_option("--mu", b_mu, "proximal mu for the bound (default: config mu)");
  bounds->add_option("--seed", b_seed, "seed for probes and replays");

  auto* oracle = app.add_subcommand("oracle", "sampling-identity oracles");
  oracle->require_subcommand(1);
  auto* lemma1 = oracle->add_subcommand("lemma1", "both sides of the multiset sampling identities");
  std::size_t l_n = 0, l_k = 1, l_dim = 3, l_mc = 20000;
  std::uint64_t l_seed = 1;
  std::string l_grads;
  lemma1->add_option("--n", l_n, "number of devices");
  lemma1->add_option("--k", l_k, "sample size")->required();
  lemma1->add_option("--grads", l_grads, "one gradient per line")->check(CLI::ExistingFile);
  lemma1->add_option("--dim", l_dim, "dimension of random gradients");
  lemma1->add_option("--mc", l_mc, "Monte-Carlo draws when enumeration is too large");
  lemma1->add_option("--seed", l_seed, "seed");

  auto* grid = app.add_subcommand("grid", "line search over mu and psi");
  std::string g_config;
  std::vector<double> g_mu, g_psi = {0.0};
  grid->add_option("--config", g_config, "config template")->required()->check(CLI::ExistingFile);
  grid->add_option("--mu", g_mu, "mu values")->required();
  grid->add_option("--psi", g_psi, "psi values");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_config, run_seed, run_out);
    if (*gen) return cmd_gen_data(gen_spec, gen_out);
    if (*bounds) return cmd_bounds(b_run, b_config, b_kind, b_mc, b_probes, b_mu, b_seed);
    if (*lemma1) return cmd_lemma1(l_n, l_k, l_grads, l_dim, l_mc, l_seed);
    if (*grid) return cmd_grid(g_config, g_mu, g_psi);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fedsim: %s\n", e.what());
    return 1;
  }
  return 0;
}
