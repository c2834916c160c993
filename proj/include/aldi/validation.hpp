#pragma once

// Property batteries run by `aldi validate` and reused by the test suites.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "aldi/core.hpp"
#include "aldi/estimators.hpp"
#include "aldi/gmm.hpp"
#include "aldi/problems.hpp"
#include "aldi/sampler.hpp"
#include "aldi/smoothing.hpp"

namespace aldi {

struct PropertyResult {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

/// Pushes y = A x + b through a problem: G_y(y) = G(A^{-1}(y - b)),
/// prior N(A m0 + b, A P0 A^T).
inline RareEventProblem transform_problem(const RareEventProblem& base, const Matrix& a, const Vector& b) {
  const Matrix a_inv = a.inverse();
  RareEventProblem p;
  p.name = base.name + "_affine";
  p.dimension = base.dimension;
  p.stochastic_forward = base.stochastic_forward;
  auto ls = base.limit_state;
  p.limit_state = [ls, a_inv, b](VectorRef y, RandomStream& s) { return ls(a_inv * (y - b), s); };
  if (base.limit_state_gradient) {
    auto grad = base.limit_state_gradient;
    p.limit_state_gradient = [grad, a_inv, b](VectorRef y) -> Vector { return a_inv.transpose() * grad(a_inv * (y - b)); };
  }
  const Matrix cov = a * base.prior.covariance() * a.transpose();
  p.prior = GaussianPrior(a * base.prior.mean() + b, 0.5 * (cov + cov.transpose()));
  return p;
}

/// Gradient drift with the ensemble-mean correction sign flipped to (x + m);
/// the resulting dynamics are not affine-equivariant.
inline Matrix broken_correction_drift(const Ensemble& e, const ForwardValues& fwd, const GaussianPrior& prior,
                                      const SmoothingConfig& cfg) {
  const Matrix correct = fwd.gradients.size() > 0 ? drift_gradient(e, fwd, prior, cfg)
                                                  : drift_gradient_free(e, fwd, prior, cfg);
  const Vector m = ensemble_mean(e);
  return correct + (2.0 * (e.dimension() + 1) / static_cast<double>(e.size())) * m.replicate(1, e.size());
}

/// Random matrix with condition number <= max_condition (from a rotation-diag-rotation product).
inline Matrix random_well_conditioned(int d, double max_condition, RandomStream& s) {
  auto rotation = [&] {
    Matrix g(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) g(i, j) = s.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    return Matrix(qr.householderQ());
  };
  Vector sv(d);
  for (int i = 0; i < d; ++i) sv[i] = std::exp(std::log(max_condition) * s.uniform());
  sv[0] = 1.0;
  return rotation() * sv.asDiagonal() * rotation();
}

/// Max over steps of |A x_k + b - y_k|_inf / max(1, |y_k|_inf) for paths started
/// from X0 and A X0 + b with identical noise seeds.
inline double affine_equivariance_error(const RareEventProblem& problem, const SmoothingConfig& smoothing,
                                        AldiConfig cfg, int steps, std::uint64_t transform_seed,
                                        const DriftOverride& drift_override = {}) {
  RandomStream s = derive_stream(transform_seed, {"affine"});
  const int d = problem.dimension;
  const Matrix a = random_well_conditioned(d, 10.0, s);
  Vector b(d);
  for (int i = 0; i < d; ++i) b[i] = 2.0 * s.normal();
  const RareEventProblem mapped = transform_problem(problem, a, b);
  Ensemble x = initial_ensemble(problem.prior, cfg.ensemble_size, cfg.seed);
  Ensemble y(Matrix((a * x.matrix()).colwise() + b));
  double worst = 0.0;
  for (int k = 0; k < steps; ++k) {
    x = step(x, problem, smoothing, cfg, k, nullptr, drift_override);
    y = step(y, mapped, smoothing, cfg, k, nullptr, drift_override);
    const Matrix pushed = (a * x.matrix()).colwise() + b;
    const double scale = std::max(1.0, y.matrix().cwiseAbs().maxCoeff());
    worst = std::max(worst, (pushed - y.matrix()).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

struct ValidationOptions {
  std::uint64_t seed = 0;
  int affine_steps = 200;
  bool inject_drift_error = false;
};

inline std::vector<PropertyResult> validate_all(const ValidationOptions& opt = {}) {
  std::vector<PropertyResult> out;
  auto record = [&](std::string name, double measured, double threshold, bool passed, std::string detail = {}) {
    out.push_back({std::move(name), measured, threshold, passed, std::move(detail)});
  };
  RandomStream rng = derive_stream(opt.seed, {"validate"});

  {  // S S^T = C
    Matrix x(3, 40);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * (1.0 + static_cast<double>(i % 3));
    const Ensemble e(x);
    const Matrix c = ensemble_covariance(e);
    const Matrix s = ensemble_sqrt(e);
    const double err = (s * s.transpose() - c).cwiseAbs().maxCoeff() / c.cwiseAbs().maxCoeff();
    record("factorization S S^T = C", err, 1e-12, err <= 1e-12);
    const auto t = projected_sqrt(s);
    const double terr = t ? (*t * t->transpose() - c).cwiseAbs().maxCoeff() / c.cwiseAbs().maxCoeff() : 1.0;
    record("projected root T T^T = C", terr, 1e-12, terr <= 1e-12);
  }

  {  // analytic gradients vs central differences
    const SmoothingConfig sc{1e-3, 1e-2};
    double worst = 0.0;
    const std::vector<RareEventProblem> problems{make_convex_problem(), make_saddle_problem()};
    for (const auto& p : problems) {
      for (int i = 0; i < 100; ++i) {
        Vector x(2);
        x << 3.0 * rng.normal(), 3.0 * rng.normal();
        const Vector fd = finite_difference_gradient([&](const Vector& z) { return p.evaluate(z); }, x);
        worst = std::max(worst, relative_error(p.gradient(x), fd, 1e-8));
        const double g = p.evaluate(x);
        if (std::abs(g) < 1e-2 || std::abs(g - sc.delta) < 1e-2) continue;
        const Vector fdp = finite_difference_gradient([&](const Vector& z) { return potential(z, p, sc); }, x);
        worst = std::max(worst, relative_error(grad_potential(x, p, sc), fdp, 1e-8));
      }
    }
    record("analytic gradients match finite differences", worst, 1e-5, worst <= 1e-5);
  }

  {  // affine equivariance (and optional negative control)
    const RareEventProblem p = make_convex_problem();
    const SmoothingConfig sc{1e-3, 1e-2};
    for (AldiVariant v : {AldiVariant::gradient, AldiVariant::gradient_free}) {
      AldiConfig cfg;
      cfg.variant = v;
      cfg.ensemble_size = 20;
      cfg.seed = opt.seed;
      const DriftOverride override_drift =
          opt.inject_drift_error ? DriftOverride(broken_correction_drift) : DriftOverride{};
      const double err = affine_equivariance_error(p, sc, cfg, opt.affine_steps, opt.seed, override_drift);
      record(std::string("affine equivariance (") + to_string(v) + (opt.inject_drift_error ? ", injected error)" : ")"),
             err, 1e-8, err <= 1e-8);
    }
  }

  {  // TV consistency sweep
    const RareEventProblem p = make_convex_problem();
    double prev = 2.0;
    bool decreasing = true;
    double last = 0.0;
    std::string detail;
    for (double r : {1e-1, 1e-2, 1e-3, 1e-4}) {
      last = posterior_tv_distance(p, {1e-3, r}).tv;
      decreasing = decreasing && last < prev;
      prev = last;
      detail += (detail.empty() ? "" : " ") + std::to_string(last);
    }
    record("TV strictly decreasing in R", decreasing ? 0.0 : 1.0, 0.0, decreasing, detail);
    record("TV at R = 1e-4", last, 0.05, last < 0.05);
  }

  {  // vortex relative equilibrium
    VortexParams vp;
    vp.sigma = 0.0;
    vp.forward_step = 1e-4;
    const Vector x0 = equilateral_configuration(vp.energy, vp.circulations);
    RandomStream s(0);
    const VortexTrajectory path = simulate_vortex_sde(x0, vp, s);
    const auto d0 = vortex_distances(x0);
    const double h0 = vortex_hamiltonian(x0, vp.circulations);
    double worst_d = 0.0, worst_h = 0.0;
    for (const Vector& x : path.states) {
      const auto d = vortex_distances(x);
      for (int i = 0; i < 3; ++i) worst_d = std::max(worst_d, std::abs(d[i] - d0[i]) / d0[i]);
      worst_h = std::max(worst_h, std::abs(vortex_hamiltonian(x, vp.circulations) - h0) / std::abs(h0));
    }
    record("vortex distances conserved (sigma = 0)", worst_d, 1e-3, worst_d <= 1e-3 && !path.collided);
    record("vortex energy conserved (sigma = 0)", worst_h, 1e-3, worst_h <= 1e-3 && !path.collided);
    const double a0 = vortex_observable(x0, vp.energy, vp.circulations);
    record("observable vanishes on the equilateral configuration", a0, 1e-12, a0 <= 1e-12);
  }

  {  // EM monotonicity
    Matrix x(2, 600);
    for (int j = 0; j < 600; ++j) {
      const double shift = j % 2 ? 3.0 : -3.0;
      x(0, j) = shift + rng.normal();
      x(1, j) = 0.5 * rng.normal();
    }
    EmConfig em;
    em.components = 3;
    em.init_seed = opt.seed;
    const EmFit fit = fit_em(x, em);
    double worst_drop = 0.0;
    for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i)
      worst_drop = std::max(worst_drop, fit.log_likelihood_trace[i - 1] - fit.log_likelihood_trace[i]);
    record("EM log-likelihood nondecreasing", worst_drop, 1e-9, worst_drop <= 1e-9);
  }

  {  // determinism
    const RareEventProblem p = make_convex_problem();
    AldiConfig cfg;
    cfg.ensemble_size = 50;
    cfg.horizon = 0.2;
    cfg.seed = opt.seed;
    const AldiRun a = run(p, {}, cfg);
    const AldiRun b = run(p, {}, cfg);
    const bool same = a.final_ensemble.matrix() == b.final_ensemble.matrix();
    record("identical seeds give bitwise-identical runs", same ? 0.0 : 1.0, 0.0, same);
  }
  return out;
}

}  // namespace aldi
