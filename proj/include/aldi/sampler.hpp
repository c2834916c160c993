#pragma once

// Affine-invariant interacting Langevin dynamics (ALDI), integrated with
// Euler-Maruyama:
//
//   x_j' = x_j + dt * drift_j + sqrt(2 dt) * S(X) xi_j
//
// with drift_j = -C(X) grad Phi(x_j) + ((d+1)/J)(x_j - m(X)) for the gradient
// variant, and the cross-correlation surrogate D(X) G~_j / R in place of
// C(X) grad(G~^2/2R) for the gradient-free variant.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "aldi/core.hpp"
#include "aldi/smoothing.hpp"

namespace aldi {

enum class AldiVariant { gradient, gradient_free };

/// How the per-particle Brownian increment is generated.
///  - ensemble: J standard normals per particle mapped through the d x J root S.
///  - projected: d standard normals mapped through S W, where the columns of W
///    are a canonical orthonormal basis of the row space of S. Same law as
///    `ensemble` and equally affine-equivariant, at O(d) draws per particle.
enum class NoiseMode { ensemble, projected };

inline const char* to_string(AldiVariant v) { return v == AldiVariant::gradient ? "gradient" : "gradient_free"; }
inline const char* to_string(NoiseMode m) { return m == NoiseMode::projected ? "projected" : "ensemble"; }

struct AldiConfig {
  AldiVariant variant = AldiVariant::gradient;
  double step_size = 1e-3;
  double horizon = 10.0;
  int ensemble_size = 1000;
  std::uint64_t seed = 0;
  int record_every = std::numeric_limits<int>::max();
  NoiseMode noise = NoiseMode::projected;
  /// Optional (time, R) pairs; R switches to the value of the last pair whose
  /// time is <= the current time. Empty means a fixed R.
  std::vector<std::pair<double, double>> noise_variance_schedule;
  int collapse_window = 100;
  double collapse_threshold = 1e-12;

  std::int64_t step_count() const {
    return static_cast<std::int64_t>(std::ceil(horizon / step_size - 1e-9));
  }

  /// Throws on invalid settings; returns non-fatal warnings.
  std::vector<std::string> validate(int dimension) const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("aldi: step_size must be > 0");
    if (!(horizon >= step_size) || !std::isfinite(horizon))
      throw std::invalid_argument("aldi: horizon must be >= step_size");
    if (ensemble_size < 2) throw std::invalid_argument("aldi: ensemble_size must be >= 2");
    if (record_every < 1) throw std::invalid_argument("aldi: record_every must be >= 1");
    for (std::size_t i = 0; i < noise_variance_schedule.size(); ++i) {
      if (!(noise_variance_schedule[i].second > 0.0))
        throw std::invalid_argument("aldi: scheduled noise variance must be > 0");
      if (i > 0 && !(noise_variance_schedule[i].first > noise_variance_schedule[i - 1].first))
        throw std::invalid_argument("aldi: schedule times must be strictly increasing");
    }
    std::vector<std::string> warnings;
    if (ensemble_size <= dimension + 1)
      warnings.push_back("ensemble_size " + std::to_string(ensemble_size) + " <= d+1 = " +
                         std::to_string(dimension + 1) + ": ergodicity is not guaranteed");
    return warnings;
  }

  double noise_variance_at(double time, double base) const {
    double r = base;
    for (const auto& [t, value] : noise_variance_schedule) {
      if (t <= time) r = value;
      else break;
    }
    return r;
  }
};

class NonFiniteStateError : public std::runtime_error {
 public:
  NonFiniteStateError(int particle, std::int64_t step)
      : std::runtime_error("non-finite state in particle " + std::to_string(particle) + " at step " +
                           std::to_string(step)),
        particle_(particle),
        step_(step) {}
  int particle() const noexcept { return particle_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  int particle_;
  std::int64_t step_;
};

/// Limit-state values (and gradients, d x J, when requested) for one ensemble.
struct ForwardValues {
  std::vector<double> g;
  Matrix gradients;
};

/// Evaluates G at every particle. Stochastic forward maps draw from
/// derive_stream(seed, {"forward", step, j}).
inline ForwardValues evaluate_forward(const Ensemble& e, const RareEventProblem& problem, bool with_gradient,
                                      std::uint64_t seed, std::int64_t step) {
  ForwardValues out;
  out.g.resize(static_cast<std::size_t>(e.size()));
  if (with_gradient) out.gradients.resize(e.dimension(), e.size());
  RandomStream fixed(0);
  for (int j = 0; j < e.size(); ++j) {
    if (problem.stochastic_forward) {
      RandomStream stream = derive_stream(seed, {"forward", step, j});
      out.g[static_cast<std::size_t>(j)] = problem.evaluate(e.particle(j), stream);
    } else {
      out.g[static_cast<std::size_t>(j)] = problem.evaluate(e.particle(j), fixed);
    }
    if (with_gradient) out.gradients.col(j) = problem.gradient(e.particle(j));
  }
  return out;
}

/// -C(X) grad Phi(x_j) + ((d+1)/J)(x_j - m), columns per particle.
inline Matrix drift_gradient(const Ensemble& e, const ForwardValues& fwd, const GaussianPrior& prior,
                             const SmoothingConfig& cfg) {
  const int d = e.dimension();
  const int J = e.size();
  const Matrix dev = ensemble_deviations(e);
  const Matrix cov = dev * dev.transpose() / static_cast<double>(J);
  Matrix grad_phi(d, J);
  for (int j = 0; j < J; ++j)
    grad_phi.col(j) = grad_potential_from(e.particle(j), fwd.g[static_cast<std::size_t>(j)], fwd.gradients.col(j),
                                          prior, cfg);
  return -cov * grad_phi + (static_cast<double>(d + 1) / J) * dev;
}

inline Matrix drift_gradient(const Ensemble& e, const RareEventProblem& problem, const SmoothingConfig& cfg) {
  return drift_gradient(e, evaluate_forward(e, problem, true, 0, 0), problem.prior, cfg);
}

/// -[D(X) G~_j / R + C(X) P0^{-1}(x_j - m0)] + ((d+1)/J)(x_j - m).
inline Matrix drift_gradient_free(const Ensemble& e, const ForwardValues& fwd, const GaussianPrior& prior,
                                  const SmoothingConfig& cfg) {
  const int d = e.dimension();
  const int J = e.size();
  const Matrix dev = ensemble_deviations(e);
  const Matrix cov = dev * dev.transpose() / static_cast<double>(J);
  Vector smoothed(J);
  for (int j = 0; j < J; ++j) smoothed[j] = smooth_g(fwd.g[static_cast<std::size_t>(j)], cfg.delta);
  const Vector centered = smoothed.array() - smoothed.mean();
  const Vector cross = dev * centered / static_cast<double>(J);
  const Matrix prior_pull = prior.precision() * (e.matrix().colwise() - prior.mean());
  return -(cross * smoothed.transpose() / cfg.noise_variance + cov * prior_pull) +
         (static_cast<double>(d + 1) / J) * dev;
}

inline Matrix drift_gradient_free(const Ensemble& e, const RareEventProblem& problem, const SmoothingConfig& cfg) {
  return drift_gradient_free(e, evaluate_forward(e, problem, false, 0, 0), problem.prior, cfg);
}

/// sqrt(2 dt) S xi_j, where column j of `noise` (J x J) is particle j's draw.
inline Matrix diffusion(const Ensemble& e, const MatrixRef& noise, double dt) {
  if (noise.rows() != e.size() || noise.cols() != e.size())
    throw std::invalid_argument("diffusion: noise must be J x J");
  return std::sqrt(2.0 * dt) * (ensemble_sqrt(e) * noise);
}

/// d x d root T = S W with W a canonical orthonormal basis of the row space of
/// S: Gram-Schmidt applied to P e_1, P e_2, ... with P the orthogonal
/// projector onto that row space. P depends only on the row space, so
/// T(AX + b) = A T(X). Returns nullopt when S is (numerically) rank deficient.
inline std::optional<Matrix> projected_sqrt(const Matrix& s) {
  const auto d = s.rows();
  const auto J = s.cols();
  if (J <= d) return std::nullopt;
  Eigen::HouseholderQR<Matrix> qr(s.transpose());
  const Matrix r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  const double rmax = r.diagonal().cwiseAbs().maxCoeff();
  if (!(rmax > 0.0) || r.diagonal().cwiseAbs().minCoeff() < 1e-10 * rmax) return std::nullopt;
  const Matrix q = qr.householderQ() * Matrix::Identity(J, d);

  // Coefficients of P e_i in the basis q are the rows of q.
  Matrix basis(d, d);
  Eigen::Index found = 0;
  for (Eigen::Index i = 0; i < J && found < d; ++i) {
    Vector v = q.row(i).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (Eigen::Index k = 0; k < found; ++k) v -= basis.col(k).dot(v) * basis.col(k);
    for (Eigen::Index k = 0; k < found; ++k) v -= basis.col(k).dot(v) * basis.col(k);
    const double norm = v.norm();
    if (norm < 1e-6 * norm0) continue;
    basis.col(found++) = v / norm;
  }
  if (found < d) return std::nullopt;
  return Matrix(s * (q * basis));
}

struct StepCounters {
  std::uint64_t forward_evaluations = 0;
  std::uint64_t gradient_evaluations = 0;
  std::uint64_t projected_fallbacks = 0;
};

/// Replacement drift, used to inject deliberately broken dynamics in tests.
using DriftOverride =
    std::function<Matrix(const Ensemble&, const ForwardValues&, const GaussianPrior&, const SmoothingConfig&)>;

/// One Euler-Maruyama step from `e` at integer step index `step_index`.
/// Particle j's noise comes from derive_stream(seed, {"aldi", step_index, j}).
inline Ensemble step(const Ensemble& e, const RareEventProblem& problem, const SmoothingConfig& smoothing,
                     const AldiConfig& cfg, std::int64_t step_index, StepCounters* counters = nullptr,
                     const DriftOverride& drift_override = {}) {
  const int d = e.dimension();
  const int J = e.size();
  const bool use_gradient = cfg.variant == AldiVariant::gradient;
  const ForwardValues fwd = evaluate_forward(e, problem, use_gradient, cfg.seed, step_index);
  if (counters) {
    counters->forward_evaluations += static_cast<std::uint64_t>(J);
    if (use_gradient) counters->gradient_evaluations += static_cast<std::uint64_t>(J);
  }

  Matrix drift;
  if (drift_override) drift = drift_override(e, fwd, problem.prior, smoothing);
  else if (use_gradient) drift = drift_gradient(e, fwd, problem.prior, smoothing);
  else drift = drift_gradient_free(e, fwd, problem.prior, smoothing);

  const double dt = cfg.step_size;
  Matrix next = e.matrix() + dt * drift;
  const Matrix root = ensemble_sqrt(e);
  std::optional<Matrix> reduced;
  if (cfg.noise == NoiseMode::projected) {
    reduced = projected_sqrt(root);
    if (!reduced && counters) ++counters->projected_fallbacks;
  }
  const double scale = std::sqrt(2.0 * dt);
  if (reduced) {
    Matrix eta(d, J);
    for (int j = 0; j < J; ++j) {
      RandomStream stream = derive_stream(cfg.seed, {"aldi", step_index, j});
      stream.fill_normal({eta.col(j).data(), static_cast<std::size_t>(d)});
    }
    next.noalias() += scale * (*reduced * eta);
  } else {
    Matrix xi(J, J);
    for (int j = 0; j < J; ++j) {
      RandomStream stream = derive_stream(cfg.seed, {"aldi", step_index, j});
      stream.fill_normal({xi.col(j).data(), static_cast<std::size_t>(J)});
    }
    next.noalias() += scale * (root * xi);
  }
  for (int j = 0; j < J; ++j)
    if (!next.col(j).allFinite()) throw NonFiniteStateError(j, step_index);
  return Ensemble(std::move(next));
}

struct Snapshot {
  double time;
  Ensemble ensemble;
};

struct AldiRun {
  Ensemble final_ensemble;
  std::vector<Snapshot> snapshots;
  std::uint64_t forward_evaluations = 0;
  std::uint64_t gradient_evaluations = 0;
  std::uint64_t projected_fallbacks = 0;
  std::int64_t steps = 0;
  /// Extreme eigenvalues of C(X) at the start of every step.
  std::vector<double> min_covariance_eigenvalue;
  std::vector<double> max_covariance_eigenvalue;
  std::vector<std::string> warnings;
};

/// J independent prior draws, particle j from derive_stream(seed, {"init", j}).
inline Ensemble initial_ensemble(const GaussianPrior& prior, int ensemble_size, std::uint64_t seed) {
  Matrix x(prior.dimension(), ensemble_size);
  for (int j = 0; j < ensemble_size; ++j) {
    RandomStream stream = derive_stream(seed, {"init", j});
    x.col(j) = prior.sample(stream);
  }
  return Ensemble(std::move(x));
}

inline AldiRun run(const RareEventProblem& problem, const SmoothingConfig& smoothing, const AldiConfig& cfg,
                   Ensemble initial, const DriftOverride& drift_override = {}) {
  problem.validate();
  smoothing.validate();
  if (initial.dimension() != problem.dimension) throw std::invalid_argument("aldi: initial ensemble dimension");
  if (cfg.variant == AldiVariant::gradient && !problem.has_gradient())
    throw std::invalid_argument("aldi: problem '" + problem.name +
                                "' has no gradient; use the gradient-free variant");
  AldiRun result{initial, {}, 0, 0, 0, 0, {}, {}, cfg.validate(problem.dimension)};

  const std::int64_t n = cfg.step_count();
  result.min_covariance_eigenvalue.reserve(static_cast<std::size_t>(n));
  result.max_covariance_eigenvalue.reserve(static_cast<std::size_t>(n));
  StepCounters counters;
  Ensemble current = std::move(initial);
  SmoothingConfig local = smoothing;
  int collapsed_for = 0;
  bool collapse_reported = false;
  for (std::int64_t k = 0; k < n; ++k) {
    local.noise_variance = cfg.noise_variance_at(static_cast<double>(k) * cfg.step_size, smoothing.noise_variance);
    const auto [lo, hi] = eigen_range(ensemble_covariance(current));
    result.min_covariance_eigenvalue.push_back(lo);
    result.max_covariance_eigenvalue.push_back(hi);
    collapsed_for = lo < cfg.collapse_threshold ? collapsed_for + 1 : 0;
    if (collapsed_for >= cfg.collapse_window && !collapse_reported) {
      result.warnings.push_back("ensemble collapse: min covariance eigenvalue below " +
                                std::to_string(cfg.collapse_threshold) + " for " +
                                std::to_string(cfg.collapse_window) + " consecutive steps (step " +
                                std::to_string(k) + ")");
      collapse_reported = true;
    }
    current = step(current, problem, local, cfg, k, &counters, drift_override);
    const std::int64_t done = k + 1;
    if (done % cfg.record_every == 0 || done == n)
      result.snapshots.push_back({static_cast<double>(done) * cfg.step_size, current});
  }
  result.final_ensemble = std::move(current);
  result.forward_evaluations = counters.forward_evaluations;
  result.gradient_evaluations = counters.gradient_evaluations;
  result.projected_fallbacks = counters.projected_fallbacks;
  result.steps = n;
  if (counters.projected_fallbacks > 0)
    result.warnings.push_back("projected noise fell back to ensemble noise on " +
                              std::to_string(counters.projected_fallbacks) + " rank-deficient steps");
  return result;
}

/// Run from J prior draws.
inline AldiRun run(const RareEventProblem& problem, const SmoothingConfig& smoothing, const AldiConfig& cfg) {
  return run(problem, smoothing, cfg, initial_ensemble(problem.prior, cfg.ensemble_size, cfg.seed));
}

}  // namespace aldi
