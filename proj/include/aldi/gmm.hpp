#pragma once

// Gaussian-mixture proposals: density, sampling and EM fitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aldi/core.hpp"
#include "aldi/random.hpp"

namespace aldi {

/// log(sum_i exp(v_i)) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, const std::vector<Vector>& means,
                  const std::vector<Matrix>& covariances) {
    const std::size_t k = weights.size();
    if (k == 0) throw std::invalid_argument("mixture: at least one component required");
    if (means.size() != k || covariances.size() != k)
      throw std::invalid_argument("mixture: weights, means and covariances differ in length");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture: weights must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
    components_.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      components_.emplace_back(means[i], covariances[i]);
      if (components_.back().dimension() != components_.front().dimension())
        throw std::invalid_argument("mixture: component dimensions differ");
    }
    weights_ = std::move(weights);
    for (double& w : weights_) w /= total;
    log_weights_.resize(k);
    for (std::size_t i = 0; i < k; ++i) log_weights_[i] = std::log(weights_[i]);
  }

  /// Single-component mixture equal to the prior.
  static GaussianMixture from_prior(const GaussianPrior& prior) {
    return GaussianMixture({1.0}, {prior.mean()}, {prior.covariance()});
  }

  int components() const noexcept { return static_cast<int>(components_.size()); }
  int dimension() const noexcept { return components_.front().dimension(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const GaussianFactor& component(int k) const { return components_.at(static_cast<std::size_t>(k)); }

  /// log sum_k w_k N(x; mu_k, Sigma_k)
  double log_density(VectorRef x) const {
    if (components_.size() == 1) return log_weights_[0] + components_[0].log_density(x);
    std::vector<double> terms(components_.size());
    for (std::size_t k = 0; k < components_.size(); ++k)
      terms[k] = log_weights_[k] + components_[k].log_density(x);
    return log_sum_exp(terms);
  }

  /// Component index by weight, then a Gaussian draw. A single-component
  /// mixture consumes no uniform, so it reproduces prior draws exactly.
  Vector draw(RandomStream& stream) const {
    std::size_t k = 0;
    if (components_.size() > 1) {
      const double u = stream.uniform();
      double cumulative = 0.0;
      k = components_.size() - 1;
      for (std::size_t i = 0; i < components_.size(); ++i) {
        cumulative += weights_[i];
        if (u < cumulative) {
          k = i;
          break;
        }
      }
      while (weights_[k] == 0.0 && k > 0) --k;
    }
    return components_[k].sample(stream);
  }

  /// n draws as columns of a d x n matrix.
  Matrix sample(std::int64_t n, RandomStream& stream) const {
    if (n < 0) throw std::invalid_argument("mixture: negative sample count");
    Matrix out(dimension(), n);
    for (std::int64_t i = 0; i < n; ++i) out.col(i) = draw(stream);
    return out;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<GaussianFactor> components_;
};

struct EmConfig {
  int components = 1;
  int max_iterations = 500;
  double log_likelihood_tolerance = 1e-10;
  /// Lower bound on covariance eigenvalues in each M-step. Unset means
  /// 1e-6 * (median pairwise sample distance)^2.
  std::optional<double> covariance_floor;
  std::uint64_t init_seed = 0;
  int restarts = 1;

  void validate() const {
    if (components < 1) throw std::invalid_argument("em: components must be >= 1");
    if (max_iterations < 1) throw std::invalid_argument("em: max_iterations must be >= 1");
    if (!(log_likelihood_tolerance > 0.0)) throw std::invalid_argument("em: tolerance must be > 0");
    if (covariance_floor && !(*covariance_floor >= 0.0)) throw std::invalid_argument("em: covariance_floor must be >= 0");
    if (restarts < 1) throw std::invalid_argument("em: restarts must be >= 1");
  }
};

struct EmFit {
  GaussianMixture mixture;
  /// Average log-likelihood of the parameters entering each iteration, plus
  /// that of the returned mixture as the last entry.
  std::vector<double> log_likelihood_trace;
  int iterations = 0;
  bool converged = false;
  double covariance_floor = 0.0;
  std::vector<std::string> warnings;
};

/// Squared median pairwise distance, over a strided subsample of at most
/// `max_points` columns.
inline double median_pairwise_squared_distance(const Matrix& samples, Eigen::Index max_points = 1500) {
  const Eigen::Index n = samples.cols();
  const Eigen::Index stride = std::max<Eigen::Index>(1, (n + max_points - 1) / max_points);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; i += stride) idx.push_back(i);
  std::vector<double> d2;
  d2.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) d2.push_back((samples.col(idx[a]) - samples.col(idx[b])).squaredNorm());
  if (d2.empty()) return 0.0;
  auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  return *mid;
}

namespace detail {

struct EmState {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
};

/// Per-sample log-densities of every component, K x N, plus log weights.
inline Matrix component_log_terms(const Matrix& x, const EmState& s) {
  const auto n = x.cols();
  const auto k = static_cast<Eigen::Index>(s.weights.size());
  Matrix terms(k, n);
  for (Eigen::Index c = 0; c < k; ++c) {
    const GaussianFactor f(s.means[static_cast<std::size_t>(c)], s.covariances[static_cast<std::size_t>(c)]);
    const Matrix z = f.cholesky().triangularView<Eigen::Lower>().solve(x.colwise() - f.mean());
    const double lw = std::log(s.weights[static_cast<std::size_t>(c)]);
    terms.row(c) = (lw + f.log_normalizer() - 0.5 * z.colwise().squaredNorm().array()).matrix();
  }
  return terms;
}

inline EmState kmeanspp_init(const Matrix& x, int k, double floor, RandomStream& stream) {
  const auto n = x.cols();
  const auto d = x.rows();
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(stream.uniform() * static_cast<double>(n)) % n);
  Vector nearest = (x.colwise() - x.col(centers[0])).colwise().squaredNorm().transpose();
  while (static_cast<int>(centers.size()) < k) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double u = stream.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(stream.uniform() * static_cast<double>(n)) % n;
    }
    centers.push_back(pick);
    nearest = nearest.cwiseMin((x.colwise() - x.col(pick)).colwise().squaredNorm().transpose());
  }
  const Vector mean = x.rowwise().mean();
  const Matrix dev = x.colwise() - mean;
  Matrix global = dev * dev.transpose() / static_cast<double>(n);
  global.diagonal().array() += floor;
  EmState s;
  for (Eigen::Index c : centers) {
    s.weights.push_back(1.0 / k);
    s.means.push_back(x.col(c));
    s.covariances.push_back(global);
  }
  (void)d;
  return s;
}

}  // namespace detail

/// EM for a K-component full-covariance mixture on the columns of `samples`.
inline EmFit fit_em(const Matrix& samples, const EmConfig& cfg) {
  cfg.validate();
  const auto n = samples.cols();
  const auto d = samples.rows();
  if (n < static_cast<Eigen::Index>(cfg.components) * (d + 1))
    throw std::invalid_argument("em: need at least K*(d+1) = " + std::to_string(cfg.components * (d + 1)) +
                                " samples, got " + std::to_string(n));
  if (!samples.allFinite()) throw std::invalid_argument("em: samples must be finite");

  double floor = cfg.covariance_floor ? *cfg.covariance_floor : 1e-6 * median_pairwise_squared_distance(samples);
  if (!(floor > 0.0)) {
    const double scale = std::max(1.0, samples.cwiseAbs().maxCoeff());
    floor = 1e-12 * scale * scale;
  }

  std::optional<EmFit> best;
  for (int restart = 0; restart < cfg.restarts; ++restart) {
    RandomStream stream = derive_stream(cfg.init_seed, {"em-init", restart});
    detail::EmState s = detail::kmeanspp_init(samples, cfg.components, floor, stream);
    std::vector<double> trace;
    std::vector<std::string> warnings;
    bool converged = false;
    int it = 0;
    for (; it < cfg.max_iterations; ++it) {
      // E-step
      Matrix terms = detail::component_log_terms(samples, s);
      const auto k = terms.rows();
      Vector norm(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double top = terms.col(i).maxCoeff();
        norm[i] = top + std::log((terms.col(i).array() - top).exp().sum());
      }
      const double ll = norm.mean();
      if (!trace.empty() && std::abs(ll - trace.back()) < cfg.log_likelihood_tolerance) {
        trace.push_back(ll);
        converged = true;
        break;
      }
      trace.push_back(ll);
      const Matrix resp = (terms.rowwise() - norm.transpose()).array().exp().matrix();

      // M-step
      detail::EmState next;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double nk = resp.row(c).sum();
        const double w = nk / static_cast<double>(n);
        if (w < 1e-8) {
          warnings.push_back("iteration " + std::to_string(it) + ": dropped collapsed component (weight " +
                             std::to_string(w) + ")");
          continue;
        }
        const Vector mu = samples * resp.row(c).transpose() / nk;
        const Matrix dev = samples.colwise() - mu;
        Matrix cov = dev * resp.row(c).asDiagonal() * dev.transpose() / nk;
        cov = 0.5 * (cov + cov.transpose());
        // Clip eigenvalues from below; a well-conditioned M-step stays the exact maximizer.
        Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
        if (eig.eigenvalues().minCoeff() < floor)
          cov = eig.eigenvectors() * eig.eigenvalues().cwiseMax(floor).asDiagonal() * eig.eigenvectors().transpose();
        next.weights.push_back(w);
        next.means.push_back(mu);
        next.covariances.push_back(std::move(cov));
      }
      if (next.weights.empty()) throw std::runtime_error("em: all components collapsed");
      double total = 0.0;
      for (double w : next.weights) total += w;
      for (double& w : next.weights) w /= total;
      s = std::move(next);
    }
    if (!converged) {
      const Matrix terms = detail::component_log_terms(samples, s);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double top = terms.col(i).maxCoeff();
        acc += top + std::log((terms.col(i).array() - top).exp().sum());
      }
      trace.push_back(acc / static_cast<double>(n));
    }
    EmFit fit{GaussianMixture(s.weights, s.means, s.covariances), std::move(trace), it, converged, floor,
              std::move(warnings)};
    if (!best || fit.log_likelihood_trace.back() > best->log_likelihood_trace.back()) best = std::move(fit);
  }
  return std::move(*best);
}

inline EmFit fit_em(const std::vector<Vector>& samples, const EmConfig& cfg) {
  return fit_em(Ensemble::from_particles(samples).matrix(), cfg);
}

}  // namespace aldi
