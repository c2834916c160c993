#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "aldi/gmm.hpp"
#include "aldi/io.hpp"

using namespace aldi;

namespace {
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Matrix two_clusters(std::uint64_t seed, int per_cluster = 500) {
  RandomStream s(seed);
  Matrix x(2, 2 * per_cluster);
  for (int j = 0; j < 2 * per_cluster; ++j) {
    x(0, j) = (j < per_cluster ? -5.0 : 5.0) + s.normal();
    x(1, j) = s.normal();
  }
  return x;
}

GaussianMixture symmetric_pair() {
  return GaussianMixture({0.5, 0.5}, {v2(-2, 0), v2(2, 0)}, {Matrix::Identity(2, 2), Matrix::Identity(2, 2)});
}
}  // namespace

TEST(LogSumExp, StableForLargeArguments) {
  std::vector<double> v{1000.0, 1000.0};
  EXPECT_DOUBLE_EQ(log_sum_exp(v), 1000.0 + std::log(2.0));
  std::vector<double> w{-1e308, 0.0};
  EXPECT_DOUBLE_EQ(log_sum_exp(w), 0.0);
}

TEST(Mixture, Validation) {
  EXPECT_THROW(GaussianMixture({}, {}, {}), std::invalid_argument);
  EXPECT_THROW(GaussianMixture({0.5, 0.4}, {v2(0, 0), v2(1, 1)}, {Matrix::Identity(2, 2), Matrix::Identity(2, 2)}),
               std::invalid_argument);
  EXPECT_THROW(GaussianMixture({-0.5, 1.5}, {v2(0, 0), v2(1, 1)}, {Matrix::Identity(2, 2), Matrix::Identity(2, 2)}),
               std::invalid_argument);
  EXPECT_THROW(GaussianMixture({1.0}, {v2(0, 0)}, {Matrix::Zero(2, 2)}), std::invalid_argument);
}

TEST(Mixture, LogDensityExamples) {
  const GaussianMixture q = GaussianMixture::from_prior(GaussianPrior::standard(2));
  EXPECT_NEAR(q.log_density(v2(0, 0)), -std::log(2 * std::numbers::pi), 1e-15);
  const GaussianMixture p = symmetric_pair();
  RandomStream s(4);
  for (int i = 0; i < 20; ++i) {
    const double a = 3 * s.normal(), b = 3 * s.normal();
    EXPECT_NEAR(p.log_density(v2(a, b)), p.log_density(v2(-a, b)), 1e-12);
  }
  EXPECT_TRUE(std::isfinite(p.log_density(v2(1e3, -1e3))));
}

TEST(Mixture, IntegratesToOne) {
  Matrix c(2, 2);
  c << 0.5, 0.2, 0.2, 0.3;
  const GaussianMixture q({0.3, 0.7}, {v2(-1, 0), v2(1.5, 1)}, {c, Matrix::Identity(2, 2)});
  const int n = 500;
  const double lo = -9, hi = 9, h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) total += std::exp(q.log_density(v2(lo + (i + 0.5) * h, lo + (k + 0.5) * h))) * h * h;
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Mixture, SingleComponentSampleMoments) {
  Matrix c(2, 2);
  c << 2.0, 0.3, 0.3, 0.5;
  const GaussianMixture q({1.0}, {v2(1, 2)}, {c});
  RandomStream s(10);
  const Matrix x = q.sample(100000, s);
  EXPECT_LT((x.rowwise().mean() - v2(1, 2)).norm(), 0.02 * std::sqrt(c.trace()));
}

TEST(Mixture, SingleComponentReproducesPriorDraws) {
  const GaussianPrior prior = GaussianPrior::isotropic(v2(-2, -2), 0.8);
  const GaussianMixture q = GaussianMixture::from_prior(prior);
  RandomStream a(3), b(3);
  for (int i = 0; i < 50; ++i) {
    const Vector x = q.draw(a);
    ASSERT_EQ(x, prior.sample(b));
    ASSERT_EQ(q.log_density(x), prior.log_density(x));
  }
}

TEST(Mixture, DeterministicAndComponentFrequencies) {
  const GaussianMixture q({0.2, 0.8}, {v2(-10, 0), v2(10, 0)}, {Matrix::Identity(2, 2), Matrix::Identity(2, 2)});
  RandomStream a(5), b(5);
  const Matrix x = q.sample(20000, a);
  EXPECT_EQ(x, q.sample(20000, b));
  const double left = static_cast<double>((x.row(0).array() < 0).count());
  const double sd = std::sqrt(20000 * 0.2 * 0.8);
  EXPECT_NEAR(left, 20000 * 0.2, 3 * sd);
}

TEST(Em, SingleComponentIsClosedForm) {
  const Matrix x = two_clusters(1, 100);
  EmConfig cfg;
  const EmFit fit = fit_em(x, cfg);
  const Vector mean = x.rowwise().mean();
  const Matrix dev = x.colwise() - mean;
  Matrix cov = dev * dev.transpose() / static_cast<double>(x.cols());
  EXPECT_LT((fit.mixture.component(0).mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fit.mixture.component(0).covariance() - cov).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.covariance_floor, 1e-6 * median_pairwise_squared_distance(x), 1e-18);
}

TEST(Em, RecoversTwoClusters) {
  EmConfig cfg;
  cfg.components = 2;
  cfg.init_seed = 4;
  const EmFit fit = fit_em(two_clusters(2), cfg);
  ASSERT_EQ(fit.mixture.components(), 2);
  const int left = fit.mixture.component(0).mean()[0] < 0 ? 0 : 1;
  EXPECT_LT((fit.mixture.component(left).mean() - v2(-5, 0)).norm(), 0.2);
  EXPECT_LT((fit.mixture.component(1 - left).mean() - v2(5, 0)).norm(), 0.2);
  EXPECT_NEAR(fit.mixture.weights()[0], 0.5, 0.05);
}

TEST(Em, LogLikelihoodNondecreasing) {
  for (int k : {1, 2, 3, 5, 8}) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      EmConfig cfg;
      cfg.components = k;
      cfg.init_seed = seed;
      // Without the covariance ridge every M-step is an exact maximizer.
      cfg.covariance_floor = 0.0;
      const EmFit exact = fit_em(two_clusters(seed + 10), cfg);
      for (std::size_t i = 1; i < exact.log_likelihood_trace.size(); ++i)
        ASSERT_GE(exact.log_likelihood_trace[i], exact.log_likelihood_trace[i - 1] - 1e-12) << k << " " << i;
      // The default floor is inactive on well-conditioned clusters.
      cfg.covariance_floor.reset();
      const EmFit fit = fit_em(two_clusters(seed + 10), cfg);
      for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i)
        ASSERT_GE(fit.log_likelihood_trace[i], fit.log_likelihood_trace[i - 1] - 1e-9) << k << " " << i;
    }
  }
}

TEST(Em, DeterministicAndRestarts) {
  EmConfig cfg;
  cfg.components = 3;
  cfg.init_seed = 9;
  const Matrix x = two_clusters(3);
  const EmFit a = fit_em(x, cfg);
  const EmFit b = fit_em(x, cfg);
  EXPECT_EQ(a.log_likelihood_trace, b.log_likelihood_trace);
  cfg.restarts = 4;
  EXPECT_GE(fit_em(x, cfg).log_likelihood_trace.back(), a.log_likelihood_trace.back() - 1e-12);
}

TEST(Em, RejectsTooFewSamples) {
  EmConfig cfg;
  cfg.components = 4;
  EXPECT_THROW(fit_em(Matrix::Zero(2, 11), cfg), std::invalid_argument);
  cfg.components = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Em, DegenerateCloudStaysPositiveDefinite) {
  Matrix x(2, 200);
  for (int j = 0; j < 200; ++j) x.col(j) = v2(j * 0.01, j * 0.01);  // all on a line
  EmConfig cfg;
  cfg.components = 2;
  const EmFit fit = fit_em(x, cfg);
  EXPECT_TRUE(std::isfinite(fit.mixture.log_density(v2(0.5, -0.5))));
}

TEST(MixtureFile, RoundTrip) {
  Matrix c(2, 2);
  c << 0.5, 0.2, 0.2, 0.3;
  const GaussianMixture q({0.3, 0.7}, {v2(-1.0 / 3.0, 0), v2(1.5, 1e-17)}, {c, Matrix::Identity(2, 2) * 0.1});
  std::stringstream ss;
  io::write_mixture(ss, q);
  const GaussianMixture r = io::read_mixture(ss);
  ASSERT_EQ(r.components(), 2);
  for (int k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(r.weights()[static_cast<std::size_t>(k)], q.weights()[static_cast<std::size_t>(k)]);
    EXPECT_EQ(r.component(k).mean(), q.component(k).mean());
    EXPECT_EQ(r.component(k).covariance(), q.component(k).covariance());
  }
  std::stringstream bad("components 2\ndimension 2\nweight 1\n");
  EXPECT_THROW(io::read_mixture(bad), std::runtime_error);
}
