#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "aldi/estimators.hpp"
#include "aldi/problems.hpp"
#include "aldi/sampler.hpp"

using namespace aldi;

namespace {
RareEventProblem constant_problem(double g) {
  RareEventProblem p;
  p.name = "constant";
  p.dimension = 2;
  p.limit_state = [g](VectorRef, RandomStream&) { return g; };
  p.prior = GaussianPrior::standard(2);
  return p;
}
}  // namespace

TEST(SelfNormalizedIs, Examples) {
  const std::vector<std::uint8_t> ind{1, 0, 1, 0};
  const std::vector<double> flat(4, -3.0);
  const auto u = self_normalized_is(ind, flat);
  EXPECT_DOUBLE_EQ(u.p_hat, 0.5);
  EXPECT_DOUBLE_EQ(u.ess, 4.0);
  EXPECT_NEAR(u.weight_variance, 0.0, 1e-15);

  const double inf = std::numeric_limits<double>::infinity();
  const auto single = self_normalized_is(std::vector<std::uint8_t>{1, 0}, std::vector<double>{0.0, -inf});
  EXPECT_EQ(single.p_hat, 1.0);
  EXPECT_EQ(single.ess, 1.0);

  const auto hand = self_normalized_is(std::vector<std::uint8_t>{1, 0}, std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(hand.p_hat, 0.25, 1e-15);
  EXPECT_NEAR(hand.ess, 1.6, 1e-14);
}

TEST(SelfNormalizedIs, Errors) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(self_normalized_is(std::vector<std::uint8_t>{1, 0}, std::vector<double>{-inf, -inf}),
               std::domain_error);
  EXPECT_THROW(self_normalized_is(std::vector<std::uint8_t>{1}, std::vector<double>{0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(self_normalized_is({}, {}), std::invalid_argument);
}

TEST(SelfNormalizedIs, ShiftInvariantInLogWeights) {
  const std::vector<std::uint8_t> ind{1, 0, 0, 1, 0};
  const std::vector<double> lw{-1000.2, -1001.0, -999.5, -1003.0, -1000.0};
  std::vector<double> shifted(lw);
  for (double& v : shifted) v += 1000.0;
  const auto a = self_normalized_is(ind, lw);
  const auto b = self_normalized_is(ind, shifted);
  EXPECT_NEAR(a.p_hat, b.p_hat, 1e-14);
  EXPECT_NEAR(a.ess, b.ess, 1e-12);
}

TEST(UnnormalizedIs, AveragesWeightedIndicators) {
  const auto r = unnormalized_is(std::vector<std::uint8_t>{1, 0, 1}, std::vector<double>{std::log(0.5), 0.0, std::log(0.1)});
  EXPECT_NEAR(r.p_hat, 0.2, 1e-15);
  EXPECT_NEAR(r.estimator_variance, ((0.25 + 0.01) / 3 - 0.04) / 3, 1e-15);
}

TEST(ProductEstimator, Examples) {
  const RareEventProblem tail = make_gaussian_tail_problem(0.0);  // G = -x
  const SmoothingConfig cfg{1e-3, 1.0};
  Matrix inside(1, 3);
  inside << 0.5, 1.0, 2.0;
  EXPECT_DOUBLE_EQ(product_estimator(inside, tail, cfg).p_hat, 1.0);
  Matrix outside(1, 2);
  outside << -0.5, -1.0;
  EXPECT_EQ(product_estimator(outside, tail, cfg).p_hat, 0.0);
  const double g = std::sqrt(2.0 * std::log(3.0));
  Matrix hand(1, 2);
  hand << 0.5, -g;
  EXPECT_NEAR(product_estimator(hand, tail, cfg).p_hat, 0.25, 1e-14);
}

TEST(ProductEstimator, ClampFlagsInstability) {
  const RareEventProblem tail = make_gaussian_tail_problem(0.0);
  Matrix far(1, 2);
  far << 1.0, -100.0;
  const EstimateReport r = product_estimator(far, tail, {1e-3, 1e-3});
  EXPECT_TRUE(r.unstable);
  EXPECT_FALSE(r.flags.empty());
}

TEST(CrudeMonteCarlo, ConstantMaps) {
  EXPECT_EQ(crude_monte_carlo(constant_problem(-1.0), 1000, RandomStream(1)).p_hat, 1.0);
  EXPECT_EQ(crude_monte_carlo(constant_problem(1.0), 1000, RandomStream(1)).p_hat, 0.0);
  EXPECT_THROW(crude_monte_carlo(constant_problem(1.0), 0, RandomStream(1)), std::invalid_argument);
}

TEST(CrudeMonteCarlo, StandardErrorIsBinomial) {
  const EstimateReport r = crude_monte_carlo(make_gaussian_tail_problem(1.0), 40000, RandomStream(2));
  EXPECT_NEAR(r.standard_error, std::sqrt(r.p_hat * (1 - r.p_hat) / 40000), 1e-15);
  EXPECT_NEAR(r.p_hat, gaussian_tail_probability(1.0), 3 * r.standard_error);
}

TEST(MixtureIs, PriorProposalEqualsCrudeMonteCarlo) {
  for (const RareEventProblem& p : {make_convex_problem(), make_gaussian_tail_problem(2.0)}) {
    const GaussianMixture q = GaussianMixture::from_prior(p.prior);
    const RandomStream s = derive_stream(5, {"estimator"});
    const EstimateReport mc = crude_monte_carlo(p, 20000, s);
    for (IsNormalization n : {IsNormalization::unnormalized, IsNormalization::self_normalized}) {
      const EstimateReport is = mixture_is_estimator(q, p, 20000, s, n);
      EXPECT_EQ(is.p_hat, mc.p_hat) << p.name;
      EXPECT_EQ(is.failure_count, mc.failure_count);
      EXPECT_EQ(is.ess, 20000.0);
    }
  }
}

TEST(MixtureIs, Errors) {
  const RareEventProblem p = make_convex_problem();
  const GaussianMixture q = GaussianMixture::from_prior(p.prior);
  EXPECT_THROW(mixture_is_estimator(q, p, 0, RandomStream(0)), std::invalid_argument);
  const GaussianMixture wrong = GaussianMixture::from_prior(GaussianPrior::standard(3));
  EXPECT_THROW(mixture_is_estimator(wrong, p, 10, RandomStream(0)), std::invalid_argument);
}

TEST(MixtureIs, UnbiasedOnGaussianTail) {
  // Fit once to an ALDI ensemble, then average 200 independent IS estimates.
  const RareEventProblem p = make_gaussian_tail_problem(3.0);
  AldiConfig cfg;
  cfg.ensemble_size = 200;
  cfg.horizon = 5.0;
  cfg.seed = 1;
  const AldiRun chain = run(p, {1e-3, 1e-2}, cfg);
  const EmFit fit = fit_em(chain.final_ensemble.matrix(), EmConfig{});
  const int reps = 200;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double est = mixture_is_estimator(fit.mixture, p, 1000, derive_stream(100 + r, {"estimator"})).p_hat;
    sum += est;
    sum2 += est * est;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
  EXPECT_NEAR(mean, gaussian_tail_probability(3.0), 3 * se);
}

TEST(MixtureIs, StochasticForwardSpreadShrinksWithM) {
  RareEventProblem p = constant_problem(0.0);
  p.stochastic_forward = true;
  p.limit_state = [](VectorRef x, RandomStream& s) { return x[0] + s.normal(); };
  const GaussianMixture q = GaussianMixture::from_prior(p.prior);
  std::vector<double> spreads, means;
  for (int m : {100, 1600}) {
    double sum = 0.0, sum2 = 0.0;
    const int reps = 60;
    for (int r = 0; r < reps; ++r) {
      const double est = mixture_is_estimator(q, p, m, derive_stream(r, {"noisy"})).p_hat;
      sum += est;
      sum2 += est * est;
    }
    means.push_back(sum / reps);
    spreads.push_back(std::sqrt(sum2 / reps - (sum / reps) * (sum / reps)));
  }
  EXPECT_NEAR(means[1], 0.5, 0.01);
  // 16x more samples: the spread should drop by about 4x.
  EXPECT_GT(spreads[0] / spreads[1], 2.5);
  EXPECT_LT(spreads[0] / spreads[1], 6.5);
}

TEST(MixtureIs, StochasticForwardIsReproducible) {
  RareEventProblem p = constant_problem(0.0);
  p.stochastic_forward = true;
  p.limit_state = [](VectorRef x, RandomStream& s) { return x[0] + s.normal(); };
  const GaussianMixture q = GaussianMixture::from_prior(p.prior);
  const auto a = mixture_is_estimator(q, p, 500, derive_stream(9, {"noisy"}));
  const auto b = mixture_is_estimator(q, p, 500, derive_stream(9, {"noisy"}));
  EXPECT_EQ(a.p_hat, b.p_hat);
  EXPECT_EQ(a.failure_count, b.failure_count);
}

TEST(TvDistance, FrozenConvexSweep) {
  const RareEventProblem p = make_convex_problem();
  const double expected[] = {0.6999491886489492, 0.30962528220992563, 0.10803195038768364, 0.03420111303723273};
  const double rs[] = {1e-1, 1e-2, 1e-3, 1e-4};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(posterior_tv_distance(p, {1e-3, rs[i]}).tv, expected[i], 1e-10) << rs[i];
}

TEST(TvDistance, LargeNoiseVarianceApproachesOneMinusPf) {
  const TvResult r = posterior_tv_distance(make_convex_problem(), {1e-3, 1e6});
  EXPECT_NEAR(r.tv, 1.0 - r.failure_probability, 1e-5);
  EXPECT_NEAR(r.tv, 0.99578558, 1e-6);
  EXPECT_NEAR(r.failure_probability, 0.0042144, 1e-6);
  EXPECT_NEAR(r.prior_grid_mass, 0.999999996, 1e-8);
}

TEST(TvDistance, EverythingFails) {
  for (double r : {1e-4, 1.0, 1e3}) EXPECT_NEAR(posterior_tv_distance(constant_problem(-1.0), {1e-3, r}).tv, 0.0, 1e-15);
  EXPECT_THROW(posterior_tv_distance(constant_problem(1.0), {}), std::domain_error);
  EXPECT_THROW(posterior_tv_distance(make_gaussian_tail_problem(1.0), {}), std::invalid_argument);
}

TEST(PairwiseSum, ExactOnIntegers) {
  std::vector<double> v(1001);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  EXPECT_EQ(pairwise_sum(v), 500500.0);
}
