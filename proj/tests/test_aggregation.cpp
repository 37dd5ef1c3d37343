#include <gtest/gtest.h>

#include <cmath>

#include "fedsim/aggregation.hpp"
#include "test_util.hpp"

using namespace fedsim;
using fedsim::testing::random_params;

namespace {

LocalUpdate make_update(std::size_t id, const ParamVector& center, const ParamVector& delta,
                        const ParamVector& grad, double gamma = 0.5) {
  LocalUpdate u;
  u.device_id = id;
  u.delta = delta;
  u.w_next = center + delta;
  u.grad_at_center = grad;
  u.gamma = gamma;
  return u;
}

std::vector<LocalUpdate> random_updates(std::size_t k, std::size_t dim, const ParamVector& center,
                                        RngStream& rng) {
  std::vector<LocalUpdate> ups;
  for (std::size_t i = 0; i < k; ++i) {
    ups.push_back(make_update(i, center, random_params(dim, rng), random_params(dim, rng),
                              rng.uniform()));
  }
  return ups;
}

double abs_sum(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += std::abs(v);
  return s;
}

}  // namespace

TEST(GlobalGradient, Examples) {
  const ParamVector c(2);
  const ParamVector g({1.5, -2.0});
  const std::vector<LocalUpdate> one = {make_update(0, c, c, g)};
  EXPECT_EQ(estimate_global_gradient(one), g);
  const std::vector<LocalUpdate> opposite = {make_update(0, c, c, g),
                                             make_update(1, c, c, -1.0 * g)};
  EXPECT_EQ(estimate_global_gradient(opposite), ParamVector(2));
  const std::vector<LocalUpdate> twice = {make_update(3, c, c, g), make_update(3, c, c, g)};
  EXPECT_EQ(estimate_global_gradient(twice), g);
  EXPECT_THROW(estimate_global_gradient(std::vector<LocalUpdate>{}), AggregationError);
}

TEST(Average, Examples) {
  const ParamVector c({1.0, 2.0});
  const ParamVector d({0.5, -0.25});
  const ParamVector g({1.0, 0.0});
  const std::vector<LocalUpdate> same = {make_update(0, c, d, g), make_update(1, c, d, g)};
  EXPECT_EQ(aggregate_average(c, same).params, c + d);
  const std::vector<LocalUpdate> cancel = {make_update(0, c, d, g),
                                           make_update(1, c, -1.0 * d, g)};
  EXPECT_EQ(aggregate_average(c, cancel).params, c);

  const ParamVector e({3.0, 0.0});
  const std::vector<LocalUpdate> repeat = {make_update(0, c, d, g), make_update(0, c, d, g),
                                           make_update(1, c, e, g)};
  const auto r = aggregate_average(c, repeat);
  const auto want = c + (2.0 / 3.0) * d + (1.0 / 3.0) * e;
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(r.params[i], want[i], 1e-15);
  EXPECT_THROW(aggregate_average(c, std::vector<LocalUpdate>{}), AggregationError);
}

TEST(Signed, AllPositiveEqualsAverage) {
  RngStream rng(1, 1);
  const ParamVector c = random_params(3, rng);
  std::vector<LocalUpdate> ups;
  const ParamVector gf({1.0, 0.0, 0.0});
  for (int k = 0; k < 4; ++k) {
    ups.push_back(make_update(k, c, random_params(3, rng), ParamVector({1.0 + k, 0.3, -0.2})));
  }
  const auto s = aggregate_signed(c, ups, gf);
  const auto a = aggregate_average(c, ups);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.params[i], a.params[i], 1e-14);
}

TEST(Signed, NegativeAlignmentFlipsAndZeroCountsPositive) {
  const ParamVector c(2);
  const ParamVector gf({1.0, 0.0});
  const std::vector<LocalUpdate> ups = {
      make_update(0, c, ParamVector({1.0, 0.0}), ParamVector({2.0, 0.0})),
      make_update(1, c, ParamVector({0.0, 1.0}), ParamVector({-1.0, 0.0})),
      make_update(2, c, ParamVector({1.0, 1.0}), ParamVector({0.0, 5.0}))};
  const auto r = aggregate_signed(c, ups, gf);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.weights[1], -1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.weights[2], 1.0 / 3.0);
  EXPECT_NEAR(r.params[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.params[1], 0.0, 1e-15);
}

TEST(Signed, WeightNegativeIffInnerProductNegative) {
  RngStream rng(2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector c = random_params(4, rng);
    const auto ups = random_updates(6, 4, c, rng);
    const ParamVector gf = random_params(4, rng);
    const auto r = aggregate_signed(c, ups, gf);
    for (std::size_t k = 0; k < ups.size(); ++k) {
      EXPECT_EQ(r.weights[k] < 0.0, dot(gf, ups[k].grad_at_center) < 0.0);
    }
  }
}

TEST(TwoSet, WeightsFromSeparateNormalizer) {
  const ParamVector c(2);
  const ParamVector g({1.0, 1.0});
  const std::vector<LocalUpdate> s1 = {make_update(0, c, ParamVector({1, 0}), g),
                                       make_update(1, c, ParamVector({0, 1}), g)};
  // Inner products with grad_1 f = (1, 1) are 2 and 2.
  const std::vector<ParamVector> s2 = {{2, 0}, {2, 0}};  // sum <g', grad_2 f> = 8
  const auto r = aggregate_folb_two_set(c, s1, s2);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.25);
  EXPECT_DOUBLE_EQ(r.weights[1], 0.25);
  EXPECT_DOUBLE_EQ(*r.normalizer, 8.0);
  EXPECT_FALSE(r.fell_back);
}

TEST(TwoSet, SameSingleDeviceGetsWeightOne) {
  const ParamVector c(3);
  const ParamVector g({0.3, -1.0, 2.0});
  const std::vector<LocalUpdate> s1 = {make_update(4, c, ParamVector({1, 2, 3}), g)};
  const std::vector<ParamVector> s2 = {g};
  EXPECT_DOUBLE_EQ(aggregate_folb_two_set(c, s1, s2).weights[0], 1.0);
}

// sum_{S2} <g, mean_{S2} g> = K ||mean_{S2} g||^2, so the signed normalizer is
// never negative; it can only vanish, which triggers the fallback.
TEST(TwoSet, NormalizerNonNegativeAndFallback) {
  RngStream rng(3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamVector c = random_params(3, rng);
    const auto s1 = random_updates(4, 3, c, rng);
    std::vector<ParamVector> s2;
    for (int k = 0; k < 4; ++k) s2.push_back(random_params(3, rng));
    EXPECT_GE(*aggregate_folb_two_set(c, s1, s2).normalizer, 0.0);
  }
  const ParamVector c(2);
  const std::vector<LocalUpdate> s1 = {make_update(0, c, ParamVector({1, 0}), ParamVector({1, 1}))};
  const std::vector<ParamVector> opposite = {{1, 0}, {-1, 0}};
  const auto r = aggregate_folb_two_set(c, s1, opposite);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.params, aggregate_average(c, s1).params);
  EXPECT_THROW(aggregate_folb_two_set(c, s1, std::vector<ParamVector>{}), AggregationError);
}

TEST(Single, WeightsFromSignedAlignment) {
  const ParamVector c(2);
  // grad_1 f = (1, 0); inner products 3 and -1.
  const std::vector<LocalUpdate> ups = {make_update(0, c, ParamVector({1, 0}), ParamVector({3, 1})),
                                        make_update(1, c, ParamVector({0, 1}), ParamVector({-1, -1}))};
  const auto r = aggregate_folb_single(c, ups);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.75);
  EXPECT_DOUBLE_EQ(r.weights[1], -0.25);
}

TEST(Single, IdenticalDevicesSplitEqually) {
  const ParamVector c({1.0, 1.0});
  const ParamVector d({0.5, -0.5});
  const ParamVector g({2.0, 1.0});
  const std::vector<LocalUpdate> ups(4, make_update(0, c, d, g));
  const auto r = aggregate_folb_single(c, ups);
  for (double w : r.weights) EXPECT_DOUBLE_EQ(w, 0.25);
  EXPECT_EQ(r.params, c + d);
}

TEST(Single, SingleDeviceWeightOne) {
  const ParamVector c(2);
  const std::vector<LocalUpdate> ups = {make_update(0, c, ParamVector({1, 2}), ParamVector({-3, 4}))};
  EXPECT_EQ(aggregate_folb_single(c, ups).weights[0], 1.0);
}

TEST(Single, AllZeroGradientsFallBack) {
  const ParamVector c(2);
  const std::vector<LocalUpdate> ups = {make_update(0, c, ParamVector({1, 0}), ParamVector(2)),
                                        make_update(1, c, ParamVector({0, 1}), ParamVector(2))};
  const auto r = aggregate_folb_single(c, ups);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.params, aggregate_average(c, ups).params);
}

TEST(Single, AbsoluteWeightsSumToOne) {
  RngStream rng(4, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng.uniform_int(0, 11);
    const ParamVector c = random_params(5, rng);
    const auto ups = random_updates(k, 5, c, rng);
    EXPECT_NEAR(abs_sum(aggregate_folb_single(c, ups).weights), 1.0, 1e-12);
  }
}

TEST(Single, ScaleInvariantWeights) {
  RngStream rng(5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector c = random_params(3, rng);
    auto ups = random_updates(5, 3, c, rng);
    const auto w = aggregate_folb_single(c, ups).weights;
    const double s = rng.uniform(0.01, 100.0);
    for (auto& u : ups) u.grad_at_center = s * u.grad_at_center;
    const auto ws = aggregate_folb_single(c, ups).weights;
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], ws[i], 1e-12);
  }
}

TEST(Single, LargerAlignmentLargerNumerator) {
  RngStream rng(6, 6);
  const ParamVector c(3);
  auto ups = random_updates(4, 3, c, rng);
  const ParamVector g1 = estimate_global_gradient(ups);
  const double before = dot(ups[0].grad_at_center, g1);
  // Add a component along grad_1 f to device 0 and rebuild grad_1 f.
  ups[0].grad_at_center = ups[0].grad_at_center + (0.5 / l2_norm(g1)) * g1;
  const double after = dot(ups[0].grad_at_center, estimate_global_gradient(ups));
  EXPECT_GT(after, before);
}

TEST(Het, PsiZeroIsBitwiseSingle) {
  RngStream rng(7, 7);
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector c = random_params(4, rng);
    const auto ups = random_updates(6, 4, c, rng);
    const auto a = aggregate_folb_single(c, ups);
    const auto b = aggregate_folb_het(c, ups, 0.0);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.weights, b.weights);
  }
}

TEST(Het, ZeroGammasIsSingleForAnyPsi) {
  RngStream rng(8, 8);
  const ParamVector c = random_params(4, rng);
  auto ups = random_updates(5, 4, c, rng);
  for (auto& u : ups) u.gamma = 0.0;
  EXPECT_EQ(aggregate_folb_het(c, ups, 37.0).params, aggregate_folb_single(c, ups).params);
}

TEST(Het, GammaPenaltyExample) {
  const ParamVector c(2);
  const ParamVector g({1.0, 0.0});  // inner products 1, 1 and ||grad_1 f||^2 = 1
  const std::vector<LocalUpdate> ups = {make_update(0, c, ParamVector({1, 0}), g, 0.0),
                                        make_update(1, c, ParamVector({0, 1}), g, 1.0)};
  const auto r = aggregate_folb_het(c, ups, 1.0);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(r.weights[1], 0.0);
}

TEST(Het, DegenerateScoresFallBack) {
  const ParamVector c(2);
  const ParamVector g({1.0, 0.0});
  const std::vector<LocalUpdate> ups = {make_update(0, c, ParamVector({1, 0}), g, 1.0),
                                        make_update(1, c, ParamVector({0, 1}), g, 1.0)};
  EXPECT_TRUE(aggregate_folb_het(c, ups, 1.0).fell_back);
}

TEST(Rules, DependOnlyOnReportedQuantities) {
  // Same (delta, gradient, gamma) with different w_next bookkeeping gives the same output.
  RngStream rng(9, 9);
  const ParamVector c = random_params(3, rng);
  auto ups = random_updates(4, 3, c, rng);
  auto other = ups;
  for (auto& u : other) u.device_id += 100;
  EXPECT_EQ(aggregate_folb_single(c, ups).params, aggregate_folb_single(c, other).params);
  EXPECT_EQ(aggregate_folb_het(c, ups, 2.0).params, aggregate_folb_het(c, other, 2.0).params);
}
