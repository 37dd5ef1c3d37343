#include <gtest/gtest.h>

#include <cmath>

#include "fedsim/bounds_check.hpp"
#include "fedsim/bounds_lab.hpp"
#include "test_util.hpp"

using namespace fedsim;
using fedsim::testing::random_params;
using fedsim::testing::random_shard;

namespace {

// F_k(w) = ||w||^2 / 2 on every device.
struct QuadraticObjective {
  std::size_t n = 3;
  std::size_t num_devices() const { return n; }
  ParamVector local_gradient(std::size_t, const ParamVector& w) const { return w; }
};

ModelConstants constants(double l, double b, double mu, double sigma = 0.0, double gamma = 0.0) {
  ModelConstants c;
  c.l_hat = l;
  c.b_hat = b;
  c.sigma_hat = sigma;
  return c.with_mu(mu).with_gamma(gamma);
}

std::vector<ParamVector> random_grads(std::size_t n, std::size_t d, RngStream& rng) {
  std::vector<ParamVector> g;
  for (std::size_t i = 0; i < n; ++i) g.push_back(random_params(d, rng));
  return g;
}

ExperimentConfig small_bound_config() {
  ExperimentConfig c;
  c.strategy = Strategy::kFedProx;
  c.num_devices = 10;
  c.clients_per_round = 5;
  c.rounds = 4;
  c.mu = 10.0;
  c.full_information = true;
  c.log_params = true;
  c.d_in = 8;
  c.classes = 3;
  c.total_samples = 600;
  c.learning_rate = 0.05;
  return c;
}

}  // namespace

TEST(Constants, QuadraticIsExact) {
  QuadraticObjective q;
  RngStream rng(1, 1);
  const std::vector<ParamVector> traj = {ParamVector({1.0, -2.0}), ParamVector({0.5, 0.5})};
  const auto c = estimate_constants(q, traj, 5, rng, 1.0);
  EXPECT_NEAR(c.l_hat, 1.0, 1e-6);
  EXPECT_GE(c.sigma_hat, -1e-6);
  EXPECT_NEAR(c.b_hat, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(c.mu, 1.0);
  EXPECT_DOUBLE_EQ(c.mu_prime, 1.0 - c.sigma_hat);
}

TEST(Constants, IdenticalShardsGiveUnitDissimilarity) {
  RngStream rng(2, 2);
  const auto shard = random_shard(40, 4, 3, rng);
  const std::vector<DataShard> shards(5, shard);
  ShardedObjective obj{LossModel::mlr(4, 3), &shards};
  const std::vector<ParamVector> traj = {random_params(obj.model.param_count(), rng, 0.3)};
  EXPECT_NEAR(estimate_constants(obj, traj, 2, rng).b_hat, 1.0, 1e-6);
}

TEST(Constants, NonIidSyntheticHasDissimilarityAboveOne) {
  SyntheticSpec spec;
  spec.num_devices = 10;
  spec.total_samples = 1500;
  spec.d_in = 10;
  spec.classes = 4;
  const auto fd = generate_synthetic(spec).data;
  ShardedObjective obj{LossModel::mlr(10, 4), &fd.shards};
  RngStream rng(3, 3);
  const std::vector<ParamVector> traj = {ParamVector(obj.model.param_count())};
  EXPECT_GT(estimate_constants(obj, traj, 1, rng).b_hat, 1.0);
}

TEST(Constants, ProbeRatiosNeverExceedEstimate) {
  RngStream rng(4, 4);
  std::vector<DataShard> shards;
  for (int k = 0; k < 4; ++k) shards.push_back(random_shard(20, 3, 3, rng, 1.0, k));
  ShardedObjective obj{LossModel::mlr(3, 3), &shards};
  std::vector<ParamVector> traj;
  for (int i = 0; i < 3; ++i) traj.push_back(random_params(obj.model.param_count(), rng));
  std::vector<ProbePair> pairs;
  const auto c = estimate_constants(obj, traj, 4, rng, 0.0, {}, &pairs);
  ASSERT_EQ(pairs.size(), 3u * 4u * 4u);
  for (const auto& p : pairs) {
    const double ratio = l2_norm(obj.local_gradient(p.device, p.w_probe) -
                                 obj.local_gradient(p.device, p.w)) /
                         l2_norm(p.w_probe - p.w);
    EXPECT_LE(ratio, c.l_hat);
  }
}

TEST(Constants, InvalidInputsThrow) {
  QuadraticObjective q;
  RngStream rng(5, 5);
  EXPECT_THROW(estimate_constants(q, std::span<const ParamVector>{}, 1, rng), ConfigError);
  const std::vector<ParamVector> traj = {ParamVector({1.0})};
  EXPECT_THROW(estimate_constants(q, traj, 0, rng), ConfigError);
}

TEST(Theorem1, DirectSubstitution) {
  // 1 - 0.5 / (5 * 10) + (1/100 + 1/200) = 1.005
  const auto c = constants(1.0, 1.0, 10.0);
  EXPECT_NEAR(theorem1_rhs(c, 1.0, 0.5, 5, 1.0), 1.005, 1e-15);
}

TEST(Theorem1, PenaltyOnlyAndStationary) {
  const auto c = constants(2.0, 1.5, 4.0, 0.5, 0.3);
  EXPECT_GE(theorem1_rhs(c, 0.7, 0.0, 5, 0.4), 0.7);
  EXPECT_EQ(theorem1_rhs(c, 0.7, 0.0, 5, 0.0), 0.7);
}

TEST(Theorem1, RequiresPositiveMuPrime) {
  EXPECT_THROW(theorem1_rhs(constants(1.0, 1.0, 1.0, 1.0), 1.0, 0.0, 1, 1.0), ConfigError);
  EXPECT_THROW(theorem1_rhs(constants(1.0, 1.0, 1.0, 2.0), 1.0, 0.0, 1, 1.0), ConfigError);
  EXPECT_THROW(theorem1_rhs(constants(1.0, 1.0, 0.0), 1.0, 0.0, 1, 1.0), ConfigError);
}

TEST(Prop1, EqualsTheorem1ForNonNegativeInnerProducts) {
  const auto c = constants(1.3, 1.2, 5.0, 0.1, 0.2);
  const std::vector<double> inner = {0.5, 1.0, 2.0, 0.0};
  const auto probs = uniform_distribution(4).probs;
  const double e = expected_multiset_sum(probs, inner, 3);
  EXPECT_EQ(prop1_rhs(c, 2.0, e, 3, 0.8), theorem1_rhs(c, 2.0, e, 3, 0.8));
}

TEST(Prop2, DecreaseIsKTimesDef1OnEqualInnerProducts) {
  const auto c = constants(1.0, 1.0, 10.0);
  const std::size_t k = 5;
  const std::vector<double> inner(8, 0.7);
  const double dec_def1 = 1.0 - def1_rhs(c, 1.0, inner, 0.0);
  const double dec_prop2 = 1.0 - prop2_rhs(c, 1.0, inner, k, 0.0);
  EXPECT_NEAR(dec_prop2, static_cast<double>(k) * dec_def1, 1e-14);
}

TEST(Theorem3, ZeroGammasReduceToInnerProductSum) {
  const auto c = constants(1.1, 1.4, 6.0, 0.2);
  RngStream rng(6, 6);
  const std::vector<double> inner = {0.4, -0.2, 1.3, 0.9};
  const std::vector<double> gammas(4, 0.0);
  const std::vector<double> probs = {0.1, 0.2, 0.3, 0.4};
  const std::size_t k = 3;
  const double want = expected_multiset_sum(probs, inner, k) / (static_cast<double>(k) * c.mu);
  EXPECT_NEAR(theorem3_decrease(c, inner, probs, gammas, k, 0.9), want, 1e-15);
}

TEST(Bounds, MonotoneInDissimilarityAndGamma) {
  RngStream rng(7, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const double l = rng.uniform(0.1, 5.0), mu = rng.uniform(1.0, 10.0);
    const double sigma = rng.uniform(0.0, 0.9) * mu;
    const double b = rng.uniform(1.0, 3.0), g = rng.uniform(0.0, 1.0);
    const double db = rng.uniform(0.0, 1.0), dg = rng.uniform(0.0, 1.0);
    const double f = rng.normal(), gn = rng.uniform(0.0, 2.0);
    const std::size_t k = 1 + rng.uniform_int(0, 9);
    std::vector<double> inner(5), gammas(5), gammas_up(5);
    for (std::size_t i = 0; i < 5; ++i) {
      inner[i] = rng.normal();
      gammas[i] = rng.uniform();
      gammas_up[i] = gammas[i] + rng.uniform();
    }
    const auto probs = uniform_distribution(5).probs;
    const double e = expected_multiset_sum(probs, inner, k);
    const auto base = constants(l, b, mu, sigma, g);
    const auto more_b = constants(l, b + db, mu, sigma, g);
    const auto more_g = constants(l, b, mu, sigma, g + dg);
    EXPECT_LE(theorem1_rhs(base, f, e, k, gn), theorem1_rhs(more_b, f, e, k, gn));
    EXPECT_LE(theorem1_rhs(base, f, e, k, gn), theorem1_rhs(more_g, f, e, k, gn));
    EXPECT_LE(def1_rhs(base, f, inner, gn), def1_rhs(more_b, f, inner, gn));
    EXPECT_LE(def1_rhs(base, f, inner, gn), def1_rhs(more_g, f, inner, gn));
    EXPECT_LE(prop2_rhs(base, f, inner, k, gn), prop2_rhs(more_b, f, inner, k, gn));
    EXPECT_LE(prop2_rhs(base, f, inner, k, gn), prop2_rhs(more_g, f, inner, k, gn));
    EXPECT_LE(theorem3_rhs(base, f, inner, probs, gammas, k, gn),
              theorem3_rhs(more_b, f, inner, probs, gammas, k, gn) + 1e-12);
    EXPECT_LE(theorem3_rhs(base, f, inner, probs, gammas, k, gn),
              theorem3_rhs(base, f, inner, probs, gammas_up, k, gn) + 1e-12);
  }
}

TEST(Lemma1, TwoOrthogonalGradientsSingleDraw) {
  const std::vector<ParamVector> g = {{1, 0}, {0, 1}};
  const auto r = lemma1_oracle(g, 1);
  EXPECT_TRUE(r.exhaustive);
  EXPECT_DOUBLE_EQ(r.rhs14, 0.25);
  EXPECT_DOUBLE_EQ(r.lhs14_indep, 0.25);
  EXPECT_DOUBLE_EQ(r.lhs14_exact, 1.0);
}

TEST(Lemma1, IdenticalGradientsAgreeEverywhere) {
  const ParamVector g0({1.5, -0.5, 2.0});
  const double n4 = std::pow(l2_norm_sq(g0), 2);
  for (std::size_t k = 1; k <= 3; ++k) {
    const std::vector<ParamVector> g(4, g0);
    const auto r = lemma1_oracle(g, k);
    const double want = static_cast<double>(k) * n4;
    EXPECT_NEAR(r.lhs14_exact, want, 1e-12 * want);
    EXPECT_NEAR(r.lhs14_indep, want, 1e-12 * want);
    EXPECT_NEAR(r.rhs14, want, 1e-12 * want);
  }
}

TEST(Lemma1, IndependentIndexIdentitiesOnEnumerableInstances) {
  RngStream rng(8, 8);
  for (int trial = 0; trial < 100; ++trial) {
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto g = random_grads(n, 3, rng);
      for (std::size_t k = 1; k <= 3; ++k) {
        const auto r = lemma1_oracle(g, k);
        ASSERT_TRUE(r.exhaustive);
        EXPECT_NEAR(r.lhs14_indep, r.rhs14, 1e-10 * std::max(1.0, r.rhs14));
        EXPECT_LE(r.lhs15_indep, r.rhs15 + 1e-10);
      }
    }
  }
}

TEST(Lemma1, MonteCarloBeyondEnumerationCap) {
  RngStream rng(9, 9);
  const auto g = random_grads(10, 4, rng);
  const auto r = lemma1_oracle(g, 4, 20000, 3);  // 10^4 > 4096 states
  EXPECT_FALSE(r.exhaustive);
  EXPECT_EQ(r.samples, 20000u);
  EXPECT_GT(r.lhs14_exact_se, 0.0);
  EXPECT_NEAR(r.lhs14_indep, r.rhs14, 1e-10 * r.rhs14);
  // Exact and MC estimate of the same expectation on a smaller, enumerable case.
  const auto small = random_grads(4, 3, rng);
  const auto exact = lemma1_oracle(small, 3);
  const auto full = lemma1_oracle(small, 3, 0);
  EXPECT_EQ(exact.lhs14_exact, full.lhs14_exact);
}

TEST(BoundCheck, RejectsNonPositiveMuPrime) {
  auto cfg = small_bound_config();
  cfg.rounds = 1;
  Simulation sim(cfg);
  const std::vector<RoundState> states = {{1, sim.initial_params()}};
  EXPECT_THROW(check_bound_along_run(sim, states, constants(1.0, 1.0, 1.0, 1.0), BoundKind::kThm1),
               ConfigError);
}

TEST(BoundCheck, HoldsOnShortConvexRun) {
  const auto cfg = small_bound_config();
  Simulation sim(cfg);
  const auto res = run_rounds(sim);
  std::vector<RoundState> states;
  std::vector<ParamVector> traj;
  for (const auto& r : res.records) {
    states.push_back({r.round, ParamVector(*r.params_before)});
    traj.push_back(states.back().params);
  }
  ShardedObjective obj{sim.model(), &sim.data().shards};
  RngStream rng(10, 10);
  const auto c = estimate_constants(obj, traj, 2, rng, cfg.mu);
  BoundCheckOptions opt;
  opt.mc_rounds = 40;
  for (auto kind : {BoundKind::kThm1, BoundKind::kProp1, BoundKind::kProp2, BoundKind::kDef1,
                    BoundKind::kThm3}) {
    const auto rep = check_bound_along_run(sim, states, c, kind, opt);
    EXPECT_TRUE(rep.holds) << to_string(kind);
    ASSERT_EQ(rep.rounds.size(), states.size());
    for (const auto& b : rep.rounds) {
      EXPECT_FALSE(b.skipped);
      EXPECT_GT(b.std_error, 0.0);
    }
  }
}

TEST(BoundCheck, ZeroLocalStepsStillHolds) {
  const auto cfg = small_bound_config();
  Simulation sim(cfg);
  const std::vector<RoundState> states = {{1, sim.initial_params()}};
  ShardedObjective obj{sim.model(), &sim.data().shards};
  RngStream rng(11, 11);
  const std::vector<ParamVector> traj = {states[0].params};
  const auto c = estimate_constants(obj, traj, 2, rng, cfg.mu);
  BoundCheckOptions opt;
  opt.mc_rounds = 20;
  opt.zero_steps = true;
  const auto rep = check_bound_along_run(sim, states, c, BoundKind::kThm1, opt);
  ASSERT_EQ(rep.rounds.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.rounds[0].gamma, 1.0);
  EXPECT_DOUBLE_EQ(rep.rounds[0].measured, rep.rounds[0].f_before);
  EXPECT_TRUE(rep.holds);
}

TEST(BoundCheck, StationaryRoundsAreSkipped) {
  // Zero features with balanced labels: the gradient vanishes at w = 0.
  FederatedData fd;
  fd.d_in = 2;
  fd.classes = 2;
  for (std::size_t k = 0; k < 3; ++k) {
    DataShard s{k, 2, {}, {}};
    s.append(std::vector<double>{0.0, 0.0}, 0);
    s.append(std::vector<double>{0.0, 0.0}, 1);
    fd.shards.push_back(s);
  }
  fd.test = fd.shards[0];
  ExperimentConfig cfg;
  cfg.strategy = Strategy::kFedProx;
  cfg.num_devices = 3;
  cfg.clients_per_round = 2;
  cfg.mu = 1.0;
  Simulation sim(cfg, fd);
  const std::vector<RoundState> states = {{1, ParamVector(sim.model().param_count())}};
  const auto rep =
      check_bound_along_run(sim, states, constants(1.0, 1.0, 1.0), BoundKind::kThm1, {});
  ASSERT_EQ(rep.rounds.size(), 1u);
  EXPECT_TRUE(rep.rounds[0].skipped);
  EXPECT_TRUE(rep.holds);
}

TEST(BoundCheck, ParseKinds) {
  for (auto k : {BoundKind::kThm1, BoundKind::kProp1, BoundKind::kDef1, BoundKind::kProp2,
                 BoundKind::kThm3}) {
    EXPECT_EQ(parse_bound_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_bound_kind("thm9"), ConfigError);
}
