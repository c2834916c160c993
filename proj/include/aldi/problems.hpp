#pragma once

// Benchmark problems: a convex limit state (two prior regimes), the hyperbolic
// saddle with its elliptical failure set, the stochastic three-vortex system,
// and a one-dimensional Gaussian tail with a closed-form answer.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "aldi/core.hpp"

namespace aldi {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Standard normal cdf via erfc, accurate in both tails.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// P(lo < Z < hi) for Z ~ N(0,1) without cancellation in the tails.
inline double normal_interval(double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  if (lo >= 0.0) return 0.5 * (std::erfc(lo / std::numbers::sqrt2) - std::erfc(hi / std::numbers::sqrt2));
  if (hi <= 0.0) return 0.5 * (std::erfc(-hi / std::numbers::sqrt2) - std::erfc(-lo / std::numbers::sqrt2));
  return 1.0 - 0.5 * std::erfc(-lo / std::numbers::sqrt2) - 0.5 * std::erfc(hi / std::numbers::sqrt2);
}

namespace detail {
template <class F>
double integrate_checked(F&& f, double a, double b, double abs_tol, const char* what) {
  double err = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 25, 1e-14, &err);
  if (!std::isfinite(value) || err > abs_tol)
    throw QuadratureError(std::string(what) + ": quadrature did not reach tolerance (error estimate " +
                          std::to_string(err) + ")");
  return value;
}

inline void require_dimension(VectorRef x, Eigen::Index d, const char* what) {
  if (x.size() != d) throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(d));
}
}  // namespace detail

// ---------------------------------------------------------------- convex

inline double convex_g(VectorRef x) {
  detail::require_dimension(x, 2, "convex_g");
  const double diff = x[0] - x[1];
  return 0.1 * diff * diff - (x[0] + x[1]) / std::numbers::sqrt2 + 2.5;
}

inline Vector convex_g_gradient(VectorRef x) {
  detail::require_dimension(x, 2, "convex_g_gradient");
  const double diff = x[0] - x[1];
  Vector g(2);
  g << 0.2 * diff - 1.0 / std::numbers::sqrt2, -0.2 * diff - 1.0 / std::numbers::sqrt2;
  return g;
}

enum class ConvexRegime { standard, rare };

inline GaussianPrior convex_prior(ConvexRegime regime) {
  if (regime == ConvexRegime::standard) return GaussianPrior::standard(2);
  Vector m(2);
  m << -2.0, -2.0;
  return GaussianPrior::isotropic(m, 0.8);
}

inline RareEventProblem make_convex_problem(ConvexRegime regime = ConvexRegime::standard) {
  RareEventProblem p;
  p.name = regime == ConvexRegime::standard ? "convex" : "convex_rare";
  p.dimension = 2;
  p.limit_state = [](VectorRef x, RandomStream&) { return convex_g(x); };
  p.limit_state_gradient = [](VectorRef x) { return convex_g_gradient(x); };
  p.prior = convex_prior(regime);
  return p;
}

/// P(convex_g <= 0) under a Gaussian prior. In u = (x1+x2)/sqrt2, v = (x1-x2)/sqrt2
/// the failure set is u >= 2.5 + 0.2 v^2; integrate the conditional tail of u over v.
inline double convex_reference_probability(const GaussianPrior& prior) {
  if (prior.dimension() != 2) throw std::invalid_argument("convex reference: prior must be 2-dimensional");
  Matrix rot(2, 2);
  rot << 1.0, -1.0, 1.0, 1.0;
  rot /= std::numbers::sqrt2;  // rows: v, u
  const Vector m = rot * prior.mean();
  const Matrix c = rot * prior.covariance() * rot.transpose();
  const double mv = m[0], mu = m[1];
  const double sv = std::sqrt(c(0, 0));
  const double slope = c(0, 1) / c(0, 0);
  const double su = std::sqrt(std::max(c(1, 1) - c(0, 1) * slope, 0.0));
  if (!(su > 0.0)) throw std::invalid_argument("convex reference: degenerate prior");
  auto integrand = [&](double z) {
    const double v = mv + sv * z;
    const double cond_mean = mu + slope * (v - mv);
    const double bound = 2.5 + 0.2 * v * v;
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) *
           0.5 * std::erfc((bound - cond_mean) / (su * std::numbers::sqrt2));
  };
  return detail::integrate_checked(integrand, -40.0, 40.0, 1e-12, "convex reference");
}

// ---------------------------------------------------------------- saddle

struct SaddleParams {
  double lambda = 1.0;
  double mu = 1.0;
  double horizon = 1.0;
  double threshold = 0.5;

  void validate() const {
    for (double v : {lambda, mu, horizon, threshold})
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("saddle: parameters must be positive");
  }
  /// A = cx * x0^2 + cy * y0^2.
  double cx() const { return -std::expm1(-2.0 * lambda * horizon) / (2.0 * lambda * horizon); }
  double cy() const { return std::expm1(2.0 * mu * horizon) / (2.0 * mu * horizon); }
  double semi_axis_x() const { return std::sqrt(threshold / cx()); }
  double semi_axis_y() const { return std::sqrt(threshold / cy()); }
};

inline double saddle_observable(double x0, double y0, const SaddleParams& p) {
  return p.cx() * x0 * x0 + p.cy() * y0 * y0;
}

inline double saddle_g(double x0, double y0, const SaddleParams& p) { return saddle_observable(x0, y0, p) - p.threshold; }

inline Vector saddle_g_gradient(double x0, double y0, const SaddleParams& p) {
  Vector g(2);
  g << 2.0 * p.cx() * x0, 2.0 * p.cy() * y0;
  return g;
}

/// Whether (x0, y0) lies in the closed ellipse x^2/a^2 + y^2/b^2 <= 1.
inline bool in_saddle_ellipse(double x0, double y0, const SaddleParams& p) {
  const double a = p.semi_axis_x(), b = p.semi_axis_y();
  return (x0 / a) * (x0 / a) + (y0 / b) * (y0 / b) <= 1.0;
}

inline GaussianPrior saddle_default_prior() {
  Vector m(2);
  m << -2.0, -2.0;
  return GaussianPrior::isotropic(m, 0.5);
}

/// Prior mass of the failure ellipse. The outer integral runs over x = a sin(theta)
/// (removing the square-root endpoint behaviour); the inner one is the conditional
/// normal probability of y in [-b cos(theta), b cos(theta)] given x.
inline double saddle_reference_probability(const SaddleParams& p, const GaussianPrior& prior) {
  p.validate();
  if (prior.dimension() != 2) throw std::invalid_argument("saddle reference: prior must be 2-dimensional");
  const double a = p.semi_axis_x(), b = p.semi_axis_y();
  const Vector& m = prior.mean();
  const Matrix& c = prior.covariance();
  const double sx = std::sqrt(c(0, 0));
  const double slope = c(0, 1) / c(0, 0);
  const double sy = std::sqrt(std::max(c(1, 1) - c(0, 1) * slope, 0.0));
  if (!(sy > 0.0)) throw std::invalid_argument("saddle reference: degenerate prior");
  auto integrand = [&](double theta) {
    const double x = a * std::sin(theta);
    const double half = b * std::cos(theta);
    const double zx = (x - m[0]) / sx;
    const double cond_mean = m[1] + slope * (x - m[0]);
    const double px = std::exp(-0.5 * zx * zx) / (sx * std::sqrt(2.0 * std::numbers::pi));
    return px * normal_interval((-half - cond_mean) / sy, (half - cond_mean) / sy) * a * std::cos(theta);
  };
  return detail::integrate_checked(integrand, -std::numbers::pi / 2, std::numbers::pi / 2, 1e-12,
                                   "saddle reference");
}

inline RareEventProblem make_saddle_problem(const SaddleParams& params = {},
                                            const GaussianPrior& prior = saddle_default_prior()) {
  params.validate();
  RareEventProblem p;
  p.name = "saddle";
  p.dimension = 2;
  p.limit_state = [params](VectorRef x, RandomStream&) {
    detail::require_dimension(x, 2, "saddle_g");
    return saddle_g(x[0], x[1], params);
  };
  p.limit_state_gradient = [params](VectorRef x) {
    detail::require_dimension(x, 2, "saddle_g_gradient");
    return saddle_g_gradient(x[0], x[1], params);
  };
  p.prior = prior;
  p.validate();
  return p;
}

// ---------------------------------------------------------------- vortex

struct VortexParams {
  std::array<double, 3> circulations{1.0, 1.0, -2.0};
  double energy = 1.0;
  double threshold = 0.25;
  double sigma = 0.1;
  double forward_step = 0.02;
  double forward_horizon = 0.5;

  double gamma() const {
    const auto& g = circulations;
    return g[0] * g[1] + g[1] * g[2] + g[2] * g[0];
  }
  /// Number of Euler-Maruyama steps, round(T / dT).
  int step_count() const { return static_cast<int>(std::llround(forward_horizon / forward_step)); }

  void validate() const {
    for (double g : circulations)
      if (!std::isfinite(g)) throw std::invalid_argument("vortex: circulations must be finite");
    if (!std::isfinite(energy)) throw std::invalid_argument("vortex: energy must be finite");
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw std::invalid_argument("vortex: threshold must be >= 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("vortex: sigma must be >= 0");
    if (!(forward_step > 0.0) || !(forward_horizon > 0.0))
      throw std::invalid_argument("vortex: forward step and horizon must be positive");
    if (step_count() < 1) throw std::invalid_argument("vortex: horizon shorter than one step");
  }
};

class VortexCollisionError : public std::domain_error {
 public:
  VortexCollisionError(int i, int j)
      : std::domain_error("vortices " + std::to_string(i + 1) + " and " + std::to_string(j + 1) + " coincide"),
        first(i),
        second(j) {}
  int first;
  int second;
};

inline constexpr double kVortexCollisionDistance = 1e-8;
inline constexpr double kVortexCollisionSentinel = 1e6;

/// Point-vortex velocities for N = circulations.size() vortices; state (x1,y1,x2,y2,...).
inline Vector vortex_drift(VectorRef state, std::span<const double> circulations) {
  const auto n = static_cast<Eigen::Index>(circulations.size());
  if (state.size() != 2 * n) throw std::invalid_argument("vortex_drift: state length must be 2N");
  Vector v = Vector::Zero(2 * n);
  const double k = 1.0 / (2.0 * std::numbers::pi);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const double dx = state[2 * j] - state[2 * i];
      const double dy = state[2 * j + 1] - state[2 * i + 1];
      const double l2 = dx * dx + dy * dy;
      if (!(l2 > 0.0)) throw VortexCollisionError(static_cast<int>(std::min(i, j)), static_cast<int>(std::max(i, j)));
      v[2 * j] -= k * circulations[static_cast<std::size_t>(i)] * dy / l2;
      v[2 * j + 1] += k * circulations[static_cast<std::size_t>(i)] * dx / l2;
    }
  }
  return v;
}

inline Vector vortex_drift(VectorRef state, const std::array<double, 3>& circulations) {
  return vortex_drift(state, std::span<const double>(circulations));
}

inline double vortex_hamiltonian(VectorRef state, std::span<const double> circulations) {
  const auto n = static_cast<Eigen::Index>(circulations.size());
  if (state.size() != 2 * n) throw std::invalid_argument("vortex_hamiltonian: state length must be 2N");
  double h = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double l = std::hypot(state[2 * i] - state[2 * j], state[2 * i + 1] - state[2 * j + 1]);
      if (!(l > 0.0)) throw VortexCollisionError(static_cast<int>(i), static_cast<int>(j));
      h += circulations[static_cast<std::size_t>(i)] * circulations[static_cast<std::size_t>(j)] * std::log(l);
    }
  }
  return -h / (4.0 * std::numbers::pi);
}

inline double vortex_hamiltonian(VectorRef state, const std::array<double, 3>& circulations) {
  return vortex_hamiltonian(state, std::span<const double>(circulations));
}

/// Side length of the equilateral configuration with energy H: exp(-4 pi H / gamma).
inline double equilateral_side(double energy, const std::array<double, 3>& circulations) {
  const auto& g = circulations;
  const double gamma = g[0] * g[1] + g[1] * g[2] + g[2] * g[0];
  if (gamma == 0.0) throw std::invalid_argument("equilateral configuration: gamma = 0");
  return std::exp(-4.0 * std::numbers::pi * energy / gamma);
}

/// Equilateral triangle of side l(H), centroid at the origin, first vertex on +x, counterclockwise.
inline Vector equilateral_configuration(double energy, const std::array<double, 3>& circulations = {1.0, 1.0, -2.0}) {
  const double radius = equilateral_side(energy, circulations) / std::sqrt(3.0);
  Vector x(6);
  for (int k = 0; k < 3; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 3.0;
    x[2 * k] = radius * std::cos(angle);
    x[2 * k + 1] = radius * std::sin(angle);
  }
  return x;
}

inline std::array<double, 3> vortex_distances(VectorRef x) {
  detail::require_dimension(x, 6, "vortex_distances");
  return {std::hypot(x[0] - x[2], x[1] - x[3]), std::hypot(x[2] - x[4], x[3] - x[5]),
          std::hypot(x[4] - x[0], x[5] - x[1])};
}

/// |cos t1 - 1/2| + |cos t2 - 1/2| + |mean side - l(H)|, angles at X1 and X2.
inline double vortex_observable(VectorRef x, double energy, const std::array<double, 3>& circulations = {1.0, 1.0, -2.0}) {
  const auto [l12, l23, l31] = vortex_distances(x);
  if (!(l12 > 0.0) || !(l23 > 0.0) || !(l31 > 0.0)) throw std::domain_error("vortex_observable: degenerate edge");
  auto cosine = [&](int at, int p, int q, double lp, double lq) {
    const double ux = x[2 * p] - x[2 * at], uy = x[2 * p + 1] - x[2 * at + 1];
    const double vx = x[2 * q] - x[2 * at], vy = x[2 * q + 1] - x[2 * at + 1];
    return std::clamp((ux * vx + uy * vy) / (lp * lq), -1.0, 1.0);
  };
  const double c1 = cosine(0, 1, 2, l12, l31);
  const double c2 = cosine(1, 0, 2, l12, l23);
  return std::abs(c1 - 0.5) + std::abs(c2 - 0.5) +
         std::abs((l12 + l23 + l31) / 3.0 - equilateral_side(energy, circulations));
}

struct VortexTrajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  bool collided = false;
  int collision_step = -1;  // index of the first state that failed the distance check
};

inline bool vortex_too_close(VectorRef x) {
  const auto d = vortex_distances(x);
  return !(d[0] >= kVortexCollisionDistance && d[1] >= kVortexCollisionDistance && d[2] >= kVortexCollisionDistance);
}

/// Euler-Maruyama path X_{k+1} = X_k + dT f(X_k) + sigma sqrt(dT) xi_k. A collision
/// (or non-finite state) stops the path; states holds the valid prefix.
inline VortexTrajectory simulate_vortex_sde(VectorRef x0, const VortexParams& p, RandomStream& stream) {
  p.validate();
  detail::require_dimension(x0, 6, "simulate_vortex_sde");
  const int n = p.step_count();
  VortexTrajectory path;
  path.times.reserve(static_cast<std::size_t>(n) + 1);
  path.states.reserve(static_cast<std::size_t>(n) + 1);
  if (vortex_too_close(x0)) {
    path.collided = true;
    path.collision_step = 0;
    return path;
  }
  const double noise = p.sigma * std::sqrt(p.forward_step);
  Vector x = x0;
  std::array<double, 6> xi{};
  path.times.push_back(0.0);
  path.states.push_back(x);
  for (int k = 0; k < n; ++k) {
    x += p.forward_step * vortex_drift(x, p.circulations);
    if (p.sigma > 0.0) {
      stream.fill_normal(xi);
      for (int i = 0; i < 6; ++i) x[i] += noise * xi[static_cast<std::size_t>(i)];
    }
    if (!x.allFinite() || vortex_too_close(x)) {
      path.collided = true;
      path.collision_step = k + 1;
      return path;
    }
    path.times.push_back((k + 1) * p.forward_step);
    path.states.push_back(x);
  }
  return path;
}

struct VortexEvaluation {
  double g = 0.0;
  double mean_observable = 0.0;
  bool collided = false;
};

/// G_r = (1/N) sum_{k<N} A(X_k) - r; a collision yields the sentinel +1e6 with the flag set.
inline VortexEvaluation evaluate_vortex(VectorRef x0, const VortexParams& p, RandomStream& stream) {
  const VortexTrajectory path = simulate_vortex_sde(x0, p, stream);
  VortexEvaluation out;
  if (path.collided) {
    out.collided = true;
    out.g = kVortexCollisionSentinel;
    out.mean_observable = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const int n = p.step_count();
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += vortex_observable(path.states[static_cast<std::size_t>(k)], p.energy, p.circulations);
  out.mean_observable = sum / n;
  out.g = out.mean_observable - p.threshold;
  return out;
}

inline double vortex_limit_state(VectorRef x0, const VortexParams& p, RandomStream& stream) {
  return evaluate_vortex(x0, p, stream).g;
}

inline GaussianPrior vortex_default_prior(const VortexParams& p = {}) {
  return GaussianPrior::isotropic(equilateral_configuration(p.energy, p.circulations), 0.25);
}

inline RareEventProblem make_vortex_problem(const VortexParams& params = {}) {
  params.validate();
  RareEventProblem p;
  p.name = "vortex";
  p.dimension = 6;
  p.limit_state = [params](VectorRef x, RandomStream& stream) { return vortex_limit_state(x, params, stream); };
  p.prior = vortex_default_prior(params);
  p.stochastic_forward = true;
  return p;
}

inline RareEventProblem make_vortex_problem(const VortexParams& params, const GaussianPrior& prior) {
  RareEventProblem p = make_vortex_problem(params);
  p.prior = prior;
  p.validate();
  return p;
}

// ---------------------------------------------------------------- gaussian tail

/// d = 1, G(x) = c - x, prior N(0,1); P_f = Phi(-c).
inline RareEventProblem make_gaussian_tail_problem(double c = 3.0) {
  if (!std::isfinite(c)) throw std::invalid_argument("gaussian tail: c must be finite");
  RareEventProblem p;
  p.name = "gaussian_tail";
  p.dimension = 1;
  p.limit_state = [c](VectorRef x, RandomStream&) { return c - x[0]; };
  p.limit_state_gradient = [](VectorRef) { return Vector::Constant(1, -1.0).eval(); };
  p.prior = GaussianPrior::standard(1);
  return p;
}

inline double gaussian_tail_probability(double c) { return normal_cdf(-c); }

}  // namespace aldi
