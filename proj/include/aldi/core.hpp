#pragma once

// Domain types shared by every module: ensembles and their statistics,
// the Gaussian prior, and the rare-event problem bundle.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "aldi/random.hpp"

namespace aldi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Ordered collection of J particles in R^d, stored column-wise (d x J).
class Ensemble {
 public:
  explicit Ensemble(Matrix particles) : particles_(std::move(particles)) {
    if (particles_.rows() < 1) throw std::invalid_argument("ensemble: dimension must be >= 1");
    if (particles_.cols() < 2) throw std::invalid_argument("ensemble: at least two particles required");
    if (!particles_.allFinite()) throw std::invalid_argument("ensemble: particles must be finite");
  }

  static Ensemble from_particles(const std::vector<Vector>& particles) {
    if (particles.empty()) throw std::invalid_argument("ensemble: no particles");
    Matrix m(particles.front().size(), static_cast<Eigen::Index>(particles.size()));
    for (std::size_t j = 0; j < particles.size(); ++j) {
      if (particles[j].size() != m.rows()) throw std::invalid_argument("ensemble: mixed particle dimensions");
      m.col(static_cast<Eigen::Index>(j)) = particles[j];
    }
    return Ensemble(std::move(m));
  }

  int dimension() const noexcept { return static_cast<int>(particles_.rows()); }
  int size() const noexcept { return static_cast<int>(particles_.cols()); }
  auto particle(int j) const { return particles_.col(j); }
  const Matrix& matrix() const noexcept { return particles_; }

 private:
  Matrix particles_;
};

/// m(X) = (1/J) sum_j x_j
inline Vector ensemble_mean(const Ensemble& e) { return e.matrix().rowwise().mean(); }

/// Deviations X - m 1^T.
inline Matrix ensemble_deviations(const Ensemble& e) {
  return e.matrix().colwise() - ensemble_mean(e);
}

/// C(X) with 1/J normalization.
inline Matrix ensemble_covariance(const Ensemble& e) {
  const Matrix dev = ensemble_deviations(e);
  return dev * dev.transpose() / static_cast<double>(e.size());
}

/// Generalized square root S = (X - m 1^T)/sqrt(J), d x J, with S S^T = C(X).
inline Matrix ensemble_sqrt(const Ensemble& e) {
  return ensemble_deviations(e) / std::sqrt(static_cast<double>(e.size()));
}

/// D(X) = (1/J) sum_j (x_j - m)(g_j - mean g) for a scalar forward map.
inline Vector cross_correlation(const Ensemble& e, std::span<const double> g) {
  if (static_cast<int>(g.size()) != e.size())
    throw std::invalid_argument("cross_correlation: need one forward value per particle");
  const Eigen::Map<const Vector> gv(g.data(), static_cast<Eigen::Index>(g.size()));
  const Vector centered = gv.array() - gv.mean();
  return ensemble_deviations(e) * centered / static_cast<double>(e.size());
}

/// Multivariate normal with a cached Cholesky factor. Shared by the prior
/// and the mixture components so that identical parameters give bitwise
/// identical densities and draws.
class GaussianFactor {
 public:
  GaussianFactor(Vector mean, Matrix covariance) : mean_(std::move(mean)), covariance_(std::move(covariance)) {
    const auto d = mean_.size();
    if (d < 1) throw std::invalid_argument("gaussian: empty mean");
    if (covariance_.rows() != d || covariance_.cols() != d)
      throw std::invalid_argument("gaussian: covariance shape does not match mean");
    if (!mean_.allFinite() || !covariance_.allFinite()) throw std::invalid_argument("gaussian: non-finite parameters");
    const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument("gaussian: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(covariance_);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian: covariance is not positive definite");
    lower_ = llt.matrixL();
    if ((lower_.diagonal().array() <= 0.0).any())
      throw std::invalid_argument("gaussian: covariance is not positive definite");
    log_normalizer_ = -0.5 * static_cast<double>(d) * kLog2Pi - lower_.diagonal().array().log().sum();
  }

  int dimension() const noexcept { return static_cast<int>(mean_.size()); }
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& covariance() const noexcept { return covariance_; }
  const Matrix& cholesky() const noexcept { return lower_; }
  double log_normalizer() const noexcept { return log_normalizer_; }

  /// Whitened residual L^{-1}(x - m).
  Vector whiten(VectorRef x) const {
    return lower_.triangularView<Eigen::Lower>().solve(x - mean_);
  }

  double log_density(VectorRef x) const { return log_normalizer_ - 0.5 * whiten(x).squaredNorm(); }

  /// P^{-1}(x - m)
  Vector precision_times(VectorRef x) const {
    return lower_.transpose().triangularView<Eigen::Upper>().solve(whiten(x));
  }

  Vector sample(RandomStream& stream) const {
    Vector z(mean_.size());
    stream.fill_normal({z.data(), static_cast<std::size_t>(z.size())});
    return mean_ + lower_.triangularView<Eigen::Lower>() * z;
  }

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix lower_;
  double log_normalizer_ = 0.0;
};

/// Gaussian prior rho_0 = N(m0, P0).
class GaussianPrior {
 public:
  GaussianPrior(Vector mean, Matrix covariance)
      : factor_(std::move(mean), std::move(covariance)),
        precision_(factor_.covariance().llt().solve(Matrix::Identity(factor_.dimension(), factor_.dimension()))) {}

  static GaussianPrior isotropic(Vector mean, double variance) {
    if (!(variance > 0.0)) throw std::invalid_argument("gaussian prior: variance must be positive");
    const auto d = mean.size();
    return GaussianPrior(std::move(mean), variance * Matrix::Identity(d, d));
  }
  static GaussianPrior standard(int dimension) { return isotropic(Vector::Zero(dimension), 1.0); }

  int dimension() const noexcept { return factor_.dimension(); }
  const Vector& mean() const noexcept { return factor_.mean(); }
  const Matrix& covariance() const noexcept { return factor_.covariance(); }
  const Matrix& precision() const noexcept { return precision_; }
  const GaussianFactor& factor() const noexcept { return factor_; }

  double log_density(VectorRef x) const { return factor_.log_density(x); }
  /// grad ln rho_0(x) = -P0^{-1}(x - m0)
  Vector grad_log_density(VectorRef x) const { return -factor_.precision_times(x); }
  Vector sample(RandomStream& stream) const { return factor_.sample(stream); }

 private:
  GaussianFactor factor_;
  Matrix precision_;
};

inline double log_prior_density(const GaussianPrior& prior, VectorRef x) { return prior.log_density(x); }
inline Vector grad_log_prior(const GaussianPrior& prior, VectorRef x) { return prior.grad_log_density(x); }

/// G: R^d -> R. The stream is consulted only by stochastic forward maps.
using LimitStateFn = std::function<double(VectorRef, RandomStream&)>;
using LimitStateGradientFn = std::function<Vector(VectorRef)>;

/// Limit state, optional gradient and Gaussian prior; F = {G <= 0}.
struct RareEventProblem {
  std::string name;
  int dimension = 0;
  LimitStateFn limit_state;
  LimitStateGradientFn limit_state_gradient;  // empty when unavailable
  GaussianPrior prior = GaussianPrior::standard(1);
  bool stochastic_forward = false;

  bool has_gradient() const noexcept { return static_cast<bool>(limit_state_gradient); }

  double evaluate(VectorRef x, RandomStream& stream) const { return limit_state(x, stream); }

  /// Evaluation for deterministic maps, or with a fixed stream for stochastic ones.
  double evaluate(VectorRef x) const {
    RandomStream stream(0);
    return limit_state(x, stream);
  }

  Vector gradient(VectorRef x) const {
    if (!limit_state_gradient) throw std::logic_error("problem '" + name + "' has no limit-state gradient");
    return limit_state_gradient(x);
  }

  void validate() const {
    if (dimension < 1) throw std::invalid_argument("problem: dimension must be >= 1");
    if (prior.dimension() != dimension) throw std::invalid_argument("problem: prior dimension mismatch");
    if (!limit_state) throw std::invalid_argument("problem: missing limit-state function");
  }
};

/// Smoothing width delta and tempering variance R.
struct SmoothingConfig {
  double delta = 1e-3;
  double noise_variance = 1e-2;

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("smoothing: delta must be > 0");
    if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
      throw std::invalid_argument("smoothing: noise_variance must be > 0");
  }
};

/// Central finite difference of a scalar function.
template <class F>
Vector finite_difference_gradient(F&& f, VectorRef x, double h = 1e-6) {
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// ||a - b|| / max(||b||, floor)
inline double relative_error(VectorRef a, VectorRef b, double floor = 1e-12) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

/// Largest relative mismatch between the analytic limit-state gradient and
/// central differences over `points`, skipping points with |G| < kink_width.
inline double max_gradient_mismatch(const RareEventProblem& problem, const std::vector<Vector>& points,
                                    double kink_width) {
  double worst = 0.0;
  for (const Vector& x : points) {
    if (std::abs(problem.evaluate(x)) < kink_width) continue;
    const Vector fd = finite_difference_gradient([&](const Vector& y) { return problem.evaluate(y); }, x);
    worst = std::max(worst, relative_error(problem.gradient(x), fd, 1e-8));
  }
  return worst;
}

/// Smallest and largest eigenvalue of a symmetric matrix.
inline std::pair<double, double> eigen_range(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return {solver.eigenvalues().minCoeff(), solver.eigenvalues().maxCoeff()};
}

}  // namespace aldi
