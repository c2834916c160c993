#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "aldi/problems.hpp"
#include "aldi/sampler.hpp"
#include "aldi/validation.hpp"

using namespace aldi;

namespace {

RareEventProblem always_failing(int d) {
  RareEventProblem p;
  p.name = "always_failing";
  p.dimension = d;
  p.limit_state = [](VectorRef, RandomStream&) { return -1.0; };
  p.limit_state_gradient = [d](VectorRef) { return Vector::Zero(d).eval(); };
  p.prior = GaussianPrior::standard(d);
  return p;
}

RareEventProblem linear_problem(const Vector& a, double offset) {
  RareEventProblem p;
  p.name = "linear";
  p.dimension = static_cast<int>(a.size());
  p.limit_state = [a, offset](VectorRef x, RandomStream&) { return a.dot(x) + offset; };
  p.limit_state_gradient = [a](VectorRef) { return a; };
  p.prior = GaussianPrior::standard(p.dimension);
  return p;
}

Ensemble random_ensemble(int d, int J, std::uint64_t seed) {
  RandomStream s(seed);
  Matrix x(d, J);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = s.normal();
  return Ensemble(x);
}

}  // namespace

TEST(Drift, ConstantEnsembleIsFixed) {
  const RareEventProblem p = always_failing(2);
  const Ensemble e(Matrix::Zero(2, 5));
  EXPECT_EQ(drift_gradient(e, p, {}).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(drift_gradient_free(e, p, {}).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Drift, TwoParticleHandComputation) {
  const RareEventProblem p = always_failing(1);
  const Ensemble e(Matrix((Matrix(1, 2) << -1, 1).finished()));
  const Matrix drift = drift_gradient(e, p, {});
  EXPECT_DOUBLE_EQ(drift(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(drift(0, 0), 0.0);
}

TEST(Drift, AllParticlesInFailureSet) {
  // D = 0, so the gradient-free drift is the prior pull plus correction.
  const RareEventProblem p = always_failing(2);
  const Ensemble e = random_ensemble(2, 10, 4);
  const Matrix dev = ensemble_deviations(e);
  const Matrix expected = -ensemble_covariance(e) * e.matrix() + (3.0 / 10.0) * dev;
  EXPECT_LT((drift_gradient_free(e, p, {}) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Drift, GradientFreeMatchesGradientForLinearMaps) {
  const Vector a = (Vector(3) << 0.5, -1.0, 2.0).finished();
  const RareEventProblem p = linear_problem(a, 100.0);
  const Ensemble e = random_ensemble(3, 30, 9);
  const Matrix g = drift_gradient(e, p, {1e-3, 0.7});
  const Matrix f = drift_gradient_free(e, p, {1e-3, 0.7});
  EXPECT_LT((g - f).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Drift, AffineEquivariance) {
  const RareEventProblem p = make_convex_problem();
  Matrix a(2, 2);
  a << 1.5, 0.3, -0.4, 0.8;
  const Vector b = (Vector(2) << 1.0, -2.0).finished();
  const RareEventProblem q = transform_problem(p, a, b);
  const Ensemble x = random_ensemble(2, 40, 2);
  const Ensemble y(Matrix((a * x.matrix()).colwise() + b));
  const SmoothingConfig cfg{1e-3, 1e-2};
  for (bool gradient : {true, false}) {
    const Matrix dx = gradient ? drift_gradient(x, p, cfg) : drift_gradient_free(x, p, cfg);
    const Matrix dy = gradient ? drift_gradient(y, q, cfg) : drift_gradient_free(y, q, cfg);
    EXPECT_LT((a * dx - dy).cwiseAbs().maxCoeff() / dy.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Diffusion, ConstantEnsembleHasNoNoise) {
  const Ensemble e(Matrix::Constant(2, 4, 1.0));
  EXPECT_EQ(diffusion(e, Matrix::Identity(4, 4), 0.1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Diffusion, IncrementsStayInDeviationSpan) {
  const Ensemble e = random_ensemble(6, 4, 12);  // rank 3 deviations in R^6
  Matrix noise(4, 4);
  RandomStream s(1);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = s.normal();
  const Matrix inc = diffusion(e, noise, 0.01);
  const Matrix dev = ensemble_deviations(e);
  const Eigen::ColPivHouseholderQR<Matrix> qr(dev);
  const Matrix q = Matrix(qr.householderQ()).leftCols(qr.rank());
  EXPECT_LE((inc - q * (q.transpose() * inc)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Diffusion, IncrementCovariance) {
  const Ensemble e = random_ensemble(2, 5, 3);
  const double dt = 0.01;
  RandomStream s(8);
  Matrix acc = Matrix::Zero(2, 2);
  const int draws = 20000;  // x 5 particles = 1e5 increments
  Matrix noise(5, 5);
  for (int k = 0; k < draws; ++k) {
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = s.normal();
    const Matrix inc = diffusion(e, noise, dt);
    acc += inc * inc.transpose();
  }
  acc /= draws * 5.0;
  const Matrix expected = 2 * dt * ensemble_covariance(e);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      EXPECT_NEAR(acc(i, j), expected(i, j), 0.05 * std::sqrt(expected(i, i) * expected(j, j)));
}

TEST(ProjectedRoot, FactorsCovarianceAndIsEquivariant) {
  const Ensemble e = random_ensemble(3, 50, 5);
  const Matrix s = ensemble_sqrt(e);
  const auto t = projected_sqrt(s);
  ASSERT_TRUE(t.has_value());
  EXPECT_LE((*t * t->transpose() - ensemble_covariance(e)).cwiseAbs().maxCoeff(), 1e-12);
  Matrix a(3, 3);
  a << 2, 1, 0, 0, 1, -1, 0.5, 0, 3;
  const auto ta = projected_sqrt(a * s);
  ASSERT_TRUE(ta.has_value());
  EXPECT_LE((*ta - a * *t).cwiseAbs().maxCoeff() / ta->cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProjectedRoot, RankDeficientFallsBack) {
  EXPECT_FALSE(projected_sqrt(ensemble_sqrt(Ensemble(Matrix::Zero(2, 5)))).has_value());
  EXPECT_FALSE(projected_sqrt(ensemble_sqrt(random_ensemble(3, 3, 1))).has_value());
}

TEST(Step, ZeroStepIsIdentity) {
  const RareEventProblem p = make_convex_problem();
  const Ensemble e = random_ensemble(2, 20, 6);
  AldiConfig cfg;
  cfg.step_size = 0.0;
  EXPECT_EQ(step(e, p, {}, cfg, 0).matrix(), e.matrix());
}

TEST(Step, DegenerateFixedPoint) {
  const RareEventProblem p = always_failing(2);
  const Ensemble e(Matrix::Zero(2, 10));
  StepCounters counters;
  EXPECT_EQ(step(e, p, {}, AldiConfig{}, 0, &counters).matrix(), e.matrix());
  EXPECT_EQ(counters.projected_fallbacks, 1u);
}

TEST(Step, DeterministicForSeed) {
  const RareEventProblem p = make_convex_problem();
  const Ensemble e = random_ensemble(2, 30, 6);
  for (NoiseMode mode : {NoiseMode::projected, NoiseMode::ensemble}) {
    AldiConfig cfg;
    cfg.noise = mode;
    cfg.seed = 77;
    EXPECT_EQ(step(e, p, {}, cfg, 5).matrix(), step(e, p, {}, cfg, 5).matrix());
    AldiConfig other = cfg;
    other.seed = 78;
    EXPECT_NE(step(e, p, {}, cfg, 5).matrix(), step(e, p, {}, other, 5).matrix());
  }
}

TEST(Step, NonFiniteStateIsReported) {
  const RareEventProblem p = make_convex_problem();
  const Ensemble e = random_ensemble(2, 10, 1);
  const DriftOverride bad = [](const Ensemble& en, const ForwardValues&, const GaussianPrior&, const SmoothingConfig&) {
    Matrix m = Matrix::Zero(en.dimension(), en.size());
    m(1, 4) = std::numeric_limits<double>::infinity();
    return m;
  };
  try {
    step(e, p, {}, AldiConfig{}, 3, nullptr, bad);
    FAIL() << "expected NonFiniteStateError";
  } catch (const NonFiniteStateError& err) {
    EXPECT_EQ(err.particle(), 4);
    EXPECT_EQ(err.step(), 3);
  }
}

TEST(Run, PathwiseAffineInvariance) {
  const RareEventProblem p = make_convex_problem();
  for (AldiVariant v : {AldiVariant::gradient, AldiVariant::gradient_free}) {
    for (NoiseMode mode : {NoiseMode::projected, NoiseMode::ensemble}) {
      AldiConfig cfg;
      cfg.variant = v;
      cfg.noise = mode;
      cfg.ensemble_size = 20;
      cfg.seed = 3;
      EXPECT_LE(affine_equivariance_error(p, {1e-3, 1e-2}, cfg, 1000, 11), 1e-8) << to_string(v) << to_string(mode);
    }
  }
}

TEST(Run, NegativeControlBreaksInvariance) {
  AldiConfig cfg;
  cfg.ensemble_size = 20;
  EXPECT_GT(affine_equivariance_error(make_convex_problem(), {}, cfg, 200, 11, broken_correction_drift), 1e-4);
}

TEST(Run, PriorIsInvariant) {
  const RareEventProblem p = always_failing(2);
  AldiConfig cfg;
  cfg.ensemble_size = 1000;
  cfg.step_size = 0.01;
  cfg.horizon = 50.0;
  cfg.seed = 1;
  const AldiRun r = run(p, {}, cfg);
  EXPECT_LT(ensemble_mean(r.final_ensemble).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_LT((ensemble_covariance(r.final_ensemble) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.1);
}

TEST(Run, ConvexEnsembleReachesFailureSet) {
  const RareEventProblem p = make_convex_problem();
  AldiConfig cfg;
  cfg.seed = 2;
  const AldiRun r = run(p, {1e-3, 1e-2}, cfg);
  int inside = 0;
  for (int j = 0; j < r.final_ensemble.size(); ++j) inside += p.evaluate(r.final_ensemble.particle(j)) <= 0.0;
  EXPECT_GE(inside, 1);
  EXPECT_EQ(r.steps, 10000);
  EXPECT_EQ(r.forward_evaluations, 10000u * 1000u);
  EXPECT_EQ(r.projected_fallbacks, 0u);
}

TEST(Run, SnapshotThinning) {
  const RareEventProblem p = make_convex_problem();
  AldiConfig cfg;
  cfg.ensemble_size = 10;
  cfg.step_size = 0.01;
  cfg.horizon = 1.0;
  cfg.record_every = static_cast<int>(std::ceil(cfg.horizon / cfg.step_size));
  EXPECT_EQ(run(p, {}, cfg).snapshots.size(), 1u);
  cfg.record_every = 25;
  const AldiRun r = run(p, {}, cfg);
  ASSERT_EQ(r.snapshots.size(), 4u);
  EXPECT_NEAR(r.snapshots.front().time, 0.25, 1e-12);
  EXPECT_EQ(r.snapshots.back().ensemble.matrix(), r.final_ensemble.matrix());
}

TEST(Run, ConfigurationChecks) {
  AldiConfig cfg;
  cfg.ensemble_size = 3;
  EXPECT_FALSE(cfg.validate(2).empty());
  cfg.ensemble_size = 4;
  EXPECT_TRUE(cfg.validate(2).empty());
  cfg.ensemble_size = 1;
  EXPECT_THROW(cfg.validate(2), std::invalid_argument);
  cfg = {};
  cfg.step_size = -1.0;
  EXPECT_THROW(cfg.validate(2), std::invalid_argument);

  RareEventProblem no_grad = make_convex_problem();
  no_grad.limit_state_gradient = nullptr;
  AldiConfig g;
  g.ensemble_size = 10;
  g.horizon = 0.01;
  EXPECT_THROW(run(no_grad, {}, g), std::invalid_argument);
  g.variant = AldiVariant::gradient_free;
  EXPECT_NO_THROW(run(no_grad, {}, g));
}

TEST(Run, NoiseVarianceSchedule) {
  AldiConfig cfg;
  cfg.noise_variance_schedule = {{1.0, 0.1}, {2.0, 0.01}};
  EXPECT_EQ(cfg.noise_variance_at(0.5, 1.0), 1.0);
  EXPECT_EQ(cfg.noise_variance_at(1.0, 1.0), 0.1);
  EXPECT_EQ(cfg.noise_variance_at(7.0, 1.0), 0.01);
  cfg.noise_variance_schedule = {{2.0, 0.1}, {1.0, 0.01}};
  EXPECT_THROW(cfg.validate(2), std::invalid_argument);
}
