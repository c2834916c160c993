#pragma once

// Smoothed limit state G~_delta and the tempered potential
//   Phi(x) = G~_delta(G(x))^2 / (2R) - ln rho_0(x).

#include <cmath>

#include "aldi/core.hpp"

namespace aldi {

namespace detail {
// exp(+-700) is the last safely representable range for double.
inline constexpr double kExpSaturation = 700.0;

/// 1/x^2 - 1/(delta - x)^2 on (0, delta).
inline double ramp_exponent(double x, double delta) {
  const double y = delta - x;
  return 1.0 / (x * x) - 1.0 / (y * y);
}
}  // namespace detail

/// psi_delta(x) = exp(1/delta^2) exp(-1/x^2) for x > 0, else 0. Evaluated as
/// exp(1/delta^2 - 1/x^2); overflows to +inf for large x when delta is small.
inline double psi(double x, double delta) {
  if (!(x > 0.0)) return 0.0;
  return std::exp(1.0 / (delta * delta) - 1.0 / (x * x));
}

/// Smooth step phi_delta: 0 for x <= 0, 1 for x >= delta, monotone between.
inline double ramp(double x, double delta) {
  if (x <= 0.0) return 0.0;
  if (x >= delta) return 1.0;
  const double e = detail::ramp_exponent(x, delta);
  if (e > detail::kExpSaturation) return 0.0;
  if (e < -detail::kExpSaturation) return 1.0;
  return 1.0 / (1.0 + std::exp(e));
}

/// d phi_delta / dx = phi (1 - phi) (2/x^3 + 2/(delta - x)^3) on (0, delta).
/// 1 - phi is taken as phi(delta - x) so it keeps its precision near x = delta.
inline double ramp_derivative(double x, double delta) {
  if (x <= 0.0 || x >= delta) return 0.0;
  const double y = delta - x;
  return ramp(x, delta) * ramp(y, delta) * (2.0 / (x * x * x) + 2.0 / (y * y * y));
}

/// G~_delta as a function of the raw limit-state value g.
inline double smooth_g(double g, double delta) {
  if (g < 0.0) return 0.0;
  if (g > delta) return g;
  return g * ramp(g, delta);
}

/// d G~_delta / dg; one-sided limits 0 at g = 0 and 1 at g = delta.
inline double smooth_g_derivative(double g, double delta) {
  if (g <= 0.0) return 0.0;
  if (g >= delta) return 1.0;
  return ramp(g, delta) + g * ramp_derivative(g, delta);
}

/// Likelihood part G~_delta(g)^2/(2R) of the potential.
inline double misfit(double g, const SmoothingConfig& cfg) {
  const double s = smooth_g(g, cfg.delta);
  return s * s / (2.0 * cfg.noise_variance);
}

inline double potential(VectorRef x, const RareEventProblem& problem, const SmoothingConfig& cfg,
                        RandomStream& stream) {
  return misfit(problem.evaluate(x, stream), cfg) - problem.prior.log_density(x);
}

inline double potential(VectorRef x, const RareEventProblem& problem, const SmoothingConfig& cfg) {
  return misfit(problem.evaluate(x), cfg) - problem.prior.log_density(x);
}

/// grad Phi from a known limit-state value and gradient.
inline Vector grad_potential_from(VectorRef x, double g, VectorRef grad_g, const GaussianPrior& prior,
                                  const SmoothingConfig& cfg) {
  const double scale = smooth_g(g, cfg.delta) * smooth_g_derivative(g, cfg.delta) / cfg.noise_variance;
  Vector out = -prior.grad_log_density(x);
  if (scale != 0.0) out += scale * grad_g;
  return out;
}

/// grad Phi = P0^{-1}(x - m0) + (G~ G~' / R) grad G. Requires an analytic gradient.
inline Vector grad_potential(VectorRef x, const RareEventProblem& problem, const SmoothingConfig& cfg) {
  const Vector grad_g = problem.gradient(x);
  return grad_potential_from(x, problem.evaluate(x), grad_g, problem.prior, cfg);
}

}  // namespace aldi
