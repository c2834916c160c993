#pragma once

// Plain-text artifacts: ensemble snapshots, vortex trajectories, mixture files,
// report files and sweep rows. Doubles are written in shortest round-trip form.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "aldi/core.hpp"
#include "aldi/estimators.hpp"
#include "aldi/gmm.hpp"
#include "aldi/problems.hpp"
#include "aldi/sampler.hpp"

namespace aldi::io {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  if (first < last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

/// `time,particle,x0,...,x{d-1}`, one row per particle per snapshot.
inline void write_snapshots_csv(std::ostream& out, const std::vector<Snapshot>& snapshots) {
  if (snapshots.empty()) throw std::invalid_argument("write_snapshots_csv: nothing to write");
  const int d = snapshots.front().ensemble.dimension();
  out << "time,particle";
  for (int i = 0; i < d; ++i) out << ",x" << i;
  out << '\n';
  for (const Snapshot& s : snapshots) {
    const Matrix& x = s.ensemble.matrix();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out << format_double(s.time) << ',' << j;
      for (Eigen::Index i = 0; i < x.rows(); ++i) out << ',' << format_double(x(i, j));
      out << '\n';
    }
  }
}

inline std::vector<Snapshot> read_snapshots_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("snapshot csv: empty input");
  std::vector<Snapshot> out;
  std::vector<double> time_values;
  std::vector<std::vector<std::vector<double>>> columns;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) values.push_back(parse_double(field));
    if (values.size() < 3) throw std::runtime_error("snapshot csv: short row");
    if (time_values.empty() || time_values.back() != values[0]) {
      time_values.push_back(values[0]);
      columns.emplace_back();
    }
    columns.back().emplace_back(values.begin() + 2, values.end());
  }
  for (std::size_t s = 0; s < time_values.size(); ++s) {
    std::vector<Vector> particles;
    for (const auto& c : columns[s]) particles.push_back(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
    out.push_back({time_values[s], Ensemble::from_particles(particles)});
  }
  return out;
}

/// `time,x1,y1,x2,y2,x3,y3`.
inline void write_trajectory_csv(std::ostream& out, const VortexTrajectory& path) {
  out << "time,x1,y1,x2,y2,x3,y3\n";
  for (std::size_t k = 0; k < path.states.size(); ++k) {
    out << format_double(path.times[k]);
    for (Eigen::Index i = 0; i < path.states[k].size(); ++i) out << ',' << format_double(path.states[k][i]);
    out << '\n';
  }
}

/// Key-value mixture file:
///   components K / dimension d / then per component: weight, mean (d values),
///   covariance (d*d values, row-major).
inline void write_mixture(std::ostream& out, const GaussianMixture& q) {
  out << "components " << q.components() << '\n' << "dimension " << q.dimension() << '\n';
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ' ' << buf;
  };
  for (int k = 0; k < q.components(); ++k) {
    const GaussianFactor& c = q.component(k);
    out << "weight";
    put(q.weights()[k]);
    out << "\nmean";
    for (Eigen::Index i = 0; i < c.mean().size(); ++i) put(c.mean()[i]);
    out << "\ncovariance";
    for (Eigen::Index i = 0; i < c.covariance().rows(); ++i)
      for (Eigen::Index j = 0; j < c.covariance().cols(); ++j) put(c.covariance()(i, j));
    out << '\n';
  }
}

inline GaussianMixture read_mixture(std::istream& in) {
  std::string key;
  int k = 0, d = 0;
  if (!(in >> key >> k) || key != "components" || k < 1) throw std::runtime_error("mixture file: bad components line");
  if (!(in >> key >> d) || key != "dimension" || d < 1) throw std::runtime_error("mixture file: bad dimension line");
  std::vector<double> weights(static_cast<std::size_t>(k));
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (int c = 0; c < k; ++c) {
    Vector m(d);
    Matrix s(d, d);
    if (!(in >> key >> weights[static_cast<std::size_t>(c)]) || key != "weight")
      throw std::runtime_error("mixture file: bad weight line");
    if (!(in >> key) || key != "mean") throw std::runtime_error("mixture file: bad mean line");
    for (int i = 0; i < d; ++i)
      if (!(in >> m[i])) throw std::runtime_error("mixture file: truncated mean");
    if (!(in >> key) || key != "covariance") throw std::runtime_error("mixture file: bad covariance line");
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (!(in >> s(i, j))) throw std::runtime_error("mixture file: truncated covariance");
    means.push_back(std::move(m));
    covs.push_back(std::move(s));
  }
  return GaussianMixture(weights, means, covs);
}

/// `key = value` lines; config entries are prefixed with `config.`.
inline void write_report(std::ostream& out, const EstimateReport& r) {
  out << "method = " << r.method << '\n';
  out << "p_hat = " << format_double(r.p_hat) << '\n';
  out << "ess = " << format_double(r.ess) << '\n';
  out << "weight_variance = " << format_double(r.weight_variance) << '\n';
  out << "estimator_variance = " << format_double(r.estimator_variance) << '\n';
  out << "standard_error = " << format_double(r.standard_error) << '\n';
  out << "failure_count = " << r.failure_count << '\n';
  out << "sample_count = " << r.sample_count << '\n';
  out << "seed = " << r.seed << '\n';
  out << "unstable = " << (r.unstable ? "true" : "false") << '\n';
  for (const auto& f : r.flags) out << "flag = " << f << '\n';
  for (const auto& [k, v] : r.config) out << "config." << k << " = " << v << '\n';
}

inline std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

struct SweepRow {
  std::string method;
  int ensemble_size = 0;
  double delta = 0.0;
  double noise_variance = 0.0;
  std::int64_t samples = 0;
  int components = 0;
  std::uint64_t seed = 0;
  double p_hat = 0.0;
  double ess = 0.0;
  std::uint64_t failure_count = 0;
  std::string error;
};

inline constexpr const char* kSweepHeader = "method,J,delta,R,M,K,seed,p_hat,ess,failure_count,error";

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

inline void write_sweep_row(std::ostream& out, const SweepRow& r) {
  out << r.method << ',' << r.ensemble_size << ',' << format_double(r.delta) << ',' << format_double(r.noise_variance)
      << ',' << r.samples << ',' << r.components << ',' << r.seed << ',';
  if (r.error.empty()) out << format_double(r.p_hat) << ',' << format_double(r.ess) << ',' << r.failure_count << ',';
  else out << ",,,";
  out << csv_escape(r.error) << '\n';
}

}  // namespace aldi::io
