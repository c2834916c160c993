#pragma once

// Failure-probability estimators: the ALDI product estimator, self-normalized
// importance sampling with a fitted mixture, crude Monte Carlo, and a grid
// quadrature of the total-variation distance between the tempered posterior
// and the prior conditioned on F.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aldi/core.hpp"
#include "aldi/gmm.hpp"
#include "aldi/smoothing.hpp"

namespace aldi {

/// Pairwise (cascade) summation; result does not depend on thread layout.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 16) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct EstimateReport {
  std::string method;
  double p_hat = 0.0;
  double ess = std::numeric_limits<double>::quiet_NaN();
  /// Variance of the normalized weights M * w_m / sum(w) (zero for equal weights).
  double weight_variance = std::numeric_limits<double>::quiet_NaN();
  /// Delta-method plug-in variance of p_hat (approximate for self-normalized IS).
  double estimator_variance = std::numeric_limits<double>::quiet_NaN();
  double standard_error = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t failure_count = 0;
  std::uint64_t sample_count = 0;
  std::uint64_t seed = 0;
  bool unstable = false;
  std::vector<std::string> flags;
  std::vector<std::pair<std::string, std::string>> config;
};

/// Product estimate Z^ * p^* from approximately stationary ALDI samples
/// (columns of `samples`). Diagnostic only: the normalization estimate is
/// dominated by rare excursions far from F.
inline EstimateReport product_estimator(const Matrix& samples, const RareEventProblem& problem,
                                        const SmoothingConfig& cfg, std::uint64_t seed = 0) {
  cfg.validate();
  const auto m = samples.cols();
  if (m < 1) throw std::invalid_argument("product estimator: no samples");
  EstimateReport report;
  report.method = "product";
  report.seed = seed;
  report.sample_count = static_cast<std::uint64_t>(m);
  std::vector<double> exponents(static_cast<std::size_t>(m));
  RandomStream parent(derive_key(seed, {"product"}));
  RandomStream fixed(0);
  bool clamped = false;
  for (Eigen::Index i = 0; i < m; ++i) {
    RandomStream stream = problem.stochastic_forward ? parent.derive({"forward", i}) : fixed;
    const double g = problem.evaluate(samples.col(i), stream);
    if (g <= 0.0) ++report.failure_count;
    double e = misfit(g, cfg);
    if (e > 700.0) {
      e = 700.0;
      clamped = true;
    }
    exponents[static_cast<std::size_t>(i)] = e;
  }
  const double p_star = static_cast<double>(report.failure_count) / static_cast<double>(m);
  const double log_mean = log_sum_exp(exponents) - std::log(static_cast<double>(m));
  report.p_hat = std::exp(-log_mean) * p_star;
  if (clamped) {
    report.unstable = true;
    report.flags.push_back("exponent clamped at 700");
  }
  if (report.p_hat > 1.0) {
    report.unstable = true;
    report.flags.push_back("estimate exceeds 1");
  }
  return report;
}

struct SelfNormalizedEstimate {
  double p_hat = 0.0;
  double ess = 0.0;
  double weight_variance = 0.0;
  double estimator_variance = 0.0;
};

/// p^ = sum 1_m w_m / sum w_m with weights exponentiated after subtracting
/// the largest log-weight; ess = (sum w)^2 / sum w^2.
inline SelfNormalizedEstimate self_normalized_is(std::span<const std::uint8_t> indicators,
                                                 std::span<const double> log_weights) {
  if (indicators.size() != log_weights.size())
    throw std::invalid_argument("self-normalized IS: indicator and weight counts differ");
  if (log_weights.empty()) throw std::invalid_argument("self-normalized IS: no samples");
  double top = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("self-normalized IS: log-weights must be finite or -inf");
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) throw std::domain_error("proposal disjoint from prior support");

  const std::size_t m = log_weights.size();
  std::vector<double> w(m), w2(m), hit(m);
  for (std::size_t i = 0; i < m; ++i) {
    w[i] = std::exp(log_weights[i] - top);
    w2[i] = w[i] * w[i];
    hit[i] = indicators[i] ? w[i] : 0.0;
  }
  const double sw = pairwise_sum(w);
  const double sw2 = pairwise_sum(w2);
  SelfNormalizedEstimate out;
  out.p_hat = pairwise_sum(hit) / sw;
  out.ess = sw * sw / sw2;
  out.weight_variance = static_cast<double>(m) * sw2 / (sw * sw) - 1.0;
  std::vector<double> var_terms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double r = (indicators[i] ? 1.0 : 0.0) - out.p_hat;
    var_terms[i] = w2[i] * r * r;
  }
  out.estimator_variance = pairwise_sum(var_terms) / (sw * sw);
  return out;
}

/// p^ = (1/M) sum 1_m w_m with w_m = exp(log_weights[m]); valid when both
/// densities in the weight ratio are normalized. ess and weight_variance use the
/// same formulas as the self-normalized estimator.
inline SelfNormalizedEstimate unnormalized_is(std::span<const std::uint8_t> indicators,
                                              std::span<const double> log_weights) {
  if (indicators.size() != log_weights.size())
    throw std::invalid_argument("importance sampling: indicator and weight counts differ");
  if (log_weights.empty()) throw std::invalid_argument("importance sampling: no samples");
  SelfNormalizedEstimate out = self_normalized_is(indicators, log_weights);
  const std::size_t m = log_weights.size();
  std::vector<double> hit(m), hit2(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = indicators[i] ? std::exp(log_weights[i]) : 0.0;
    hit[i] = w;
    hit2[i] = w * w;
  }
  const double md = static_cast<double>(m);
  out.p_hat = pairwise_sum(hit) / md;
  out.estimator_variance = std::max(pairwise_sum(hit2) / md - out.p_hat * out.p_hat, 0.0) / md;
  return out;
}

namespace detail {
/// 1{G <= 0} for each column; stochastic maps use parent.derive({"forward", i}).
inline std::vector<std::uint8_t> failure_indicators(const Matrix& x, const RareEventProblem& problem,
                                                    const RandomStream& parent) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(x.cols()));
  RandomStream fixed(0);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    if (problem.stochastic_forward) {
      RandomStream stream = parent.derive({"forward", i});
      out[static_cast<std::size_t>(i)] = problem.evaluate(x.col(i), stream) <= 0.0;
    } else {
      out[static_cast<std::size_t>(i)] = problem.evaluate(x.col(i), fixed) <= 0.0;
    }
  }
  return out;
}
}  // namespace detail

enum class IsNormalization { unnormalized, self_normalized };

inline const char* to_string(IsNormalization n) {
  return n == IsNormalization::unnormalized ? "unnormalized" : "self_normalized";
}

/// Mixture IS: draw M samples from q, weight by rho_0/q, then either average
/// 1{G <= 0} w directly or divide by the weight sum. Draws come from
/// stream.derive({"proposal"}).
inline EstimateReport mixture_is_estimator(const GaussianMixture& q, const RareEventProblem& problem,
                                           std::int64_t m, const RandomStream& stream,
                                           IsNormalization normalization = IsNormalization::unnormalized) {
  if (m <= 0) throw std::invalid_argument("mixture IS: sample count must be positive");
  if (q.dimension() != problem.dimension) throw std::invalid_argument("mixture IS: proposal dimension mismatch");
  RandomStream draws = stream.derive({"proposal"});
  const Matrix x = q.sample(m, draws);
  const auto indicators = detail::failure_indicators(x, problem, stream);
  std::vector<double> log_w(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i)
    log_w[static_cast<std::size_t>(i)] = problem.prior.log_density(x.col(i)) - q.log_density(x.col(i));
  const SelfNormalizedEstimate est = normalization == IsNormalization::unnormalized
                                         ? unnormalized_is(indicators, log_w)
                                         : self_normalized_is(indicators, log_w);

  EstimateReport report;
  report.method = normalization == IsNormalization::unnormalized ? "mixture_is" : "mixture_is_self_normalized";
  report.seed = stream.key();
  report.p_hat = est.p_hat;
  report.ess = est.ess;
  report.weight_variance = est.weight_variance;
  report.estimator_variance = est.estimator_variance;
  report.standard_error = std::sqrt(est.estimator_variance);
  report.sample_count = static_cast<std::uint64_t>(m);
  for (auto hit : indicators) report.failure_count += hit;
  if (est.ess < 0.01 * static_cast<double>(m)) report.flags.push_back("weight degeneracy: ESS below 1% of M");
  if (report.p_hat > 1.0) {
    report.unstable = true;
    report.flags.push_back("estimate exceeds 1");
  }
  return report;
}

/// Fraction of prior draws with G <= 0; draws come from stream.derive({"proposal"}),
/// exactly as in mixture_is_estimator with q equal to the prior.
inline EstimateReport crude_monte_carlo(const RareEventProblem& problem, std::int64_t n,
                                        const RandomStream& stream) {
  if (n < 1) throw std::invalid_argument("crude Monte Carlo: N must be >= 1");
  RandomStream draws = stream.derive({"proposal"});
  RandomStream fixed(0);
  std::uint64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Vector x = problem.prior.sample(draws);
    double g;
    if (problem.stochastic_forward) {
      RandomStream fwd = stream.derive({"forward", i});
      g = problem.evaluate(x, fwd);
    } else {
      g = problem.evaluate(x, fixed);
    }
    if (g <= 0.0) ++hits;
  }
  EstimateReport report;
  report.method = "crude_mc";
  report.seed = stream.key();
  report.sample_count = static_cast<std::uint64_t>(n);
  report.failure_count = hits;
  report.p_hat = static_cast<double>(hits) / static_cast<double>(n);
  report.ess = static_cast<double>(n);
  report.weight_variance = 0.0;
  report.estimator_variance = report.p_hat * (1.0 - report.p_hat) / static_cast<double>(n);
  report.standard_error = std::sqrt(report.estimator_variance);
  if (hits == 0) report.flags.push_back("no failures observed");
  return report;
}

struct TvGrid {
  int points_per_axis = 400;
  double half_width_sd = 6.0;
};

struct TvResult {
  double tv = 0.0;
  double prior_grid_mass = 0.0;
  double failure_probability = 0.0;  // grid P_f
  double normalization = 0.0;        // grid Z_{delta,R}
  std::vector<std::string> warnings;
};

/// TV(mu_{delta,R}, mu_F) = 1/2 int |f_{delta,R} - f_F| d mu_0 by the midpoint
/// rule on a uniform tensor grid over +-half_width_sd marginal prior standard
/// deviations; both densities are normalized on the grid. Two-dimensional only.
inline TvResult posterior_tv_distance(const RareEventProblem& problem, const SmoothingConfig& cfg,
                                      const TvGrid& grid = {}) {
  if (problem.dimension != 2) throw std::invalid_argument("tv distance: only d = 2 is supported");
  if (grid.points_per_axis < 2 || !(grid.half_width_sd > 0.0)) throw std::invalid_argument("tv distance: bad grid");
  cfg.validate();
  const int n = grid.points_per_axis;
  const Vector& m0 = problem.prior.mean();
  const double sx = std::sqrt(problem.prior.covariance()(0, 0));
  const double sy = std::sqrt(problem.prior.covariance()(1, 1));
  const double hx = 2.0 * grid.half_width_sd * sx / n;
  const double hy = 2.0 * grid.half_width_sd * sy / n;
  const std::size_t cells = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  std::vector<double> w(cells), lik(cells);
  std::vector<std::uint8_t> in_f(cells);
  Vector x(2);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      x[0] = m0[0] - grid.half_width_sd * sx + hx * (i + 0.5);
      x[1] = m0[1] - grid.half_width_sd * sy + hy * (k + 0.5);
      const std::size_t c = static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(k);
      const double g = problem.evaluate(x);
      w[c] = std::exp(problem.prior.log_density(x)) * hx * hy;
      lik[c] = std::exp(-misfit(g, cfg));
      in_f[c] = g <= 0.0;
    }
  }
  TvResult out;
  out.prior_grid_mass = pairwise_sum(w);
  std::vector<double> tmp(cells);
  for (std::size_t c = 0; c < cells; ++c) tmp[c] = in_f[c] ? w[c] : 0.0;
  out.failure_probability = pairwise_sum(tmp) / out.prior_grid_mass;
  for (std::size_t c = 0; c < cells; ++c) tmp[c] = lik[c] * w[c];
  out.normalization = pairwise_sum(tmp) / out.prior_grid_mass;
  if (out.failure_probability <= 0.0) throw std::domain_error("tv distance: failure set has zero grid mass");
  for (std::size_t c = 0; c < cells; ++c) {
    const double f_post = lik[c] / out.normalization;
    const double f_fail = in_f[c] ? 1.0 / out.failure_probability : 0.0;
    tmp[c] = std::abs(f_post - f_fail) * w[c];
  }
  out.tv = 0.5 * pairwise_sum(tmp) / out.prior_grid_mass;
  if (out.prior_grid_mass < 0.999)
    out.warnings.push_back("grid captures only " + std::to_string(out.prior_grid_mass) + " of the prior mass");
  return out;
}

}  // namespace aldi
