#pragma once

// End-to-end orchestration: JSON run configuration with named presets,
// ALDI -> EM fit -> importance sampling, artifact emission, and sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldi/core.hpp"
#include "aldi/estimators.hpp"
#include "aldi/gmm.hpp"
#include "aldi/io.hpp"
#include "aldi/problems.hpp"
#include "aldi/sampler.hpp"

namespace aldi {

using json = nlohmann::ordered_json;

/// Error raised by a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Configuration problems detected before any compute starts.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::string problem = "convex";
  SaddleParams saddle;
  VortexParams vortex;
  double vortex_prior_variance = 0.25;
  double tail_c = 3.0;

  AldiConfig aldi;
  SmoothingConfig smoothing;

  std::string method = "mixture_is";  // mixture_is | product | crude_mc
  IsNormalization normalization = IsNormalization::unnormalized;
  int components = 8;
  std::int64_t m_is = 100000;
  std::int64_t m_fit = 0;  // 0: the whole final ensemble
  int em_max_iterations = 500;
  double em_tolerance = 1e-10;
  int em_restarts = 1;

  std::string out_dir;
  bool write_snapshots = false;

  void validate() const;
};

inline const std::vector<std::string>& problem_names() {
  static const std::vector<std::string> names{"convex", "convex_rare", "saddle", "vortex", "gaussian_tail"};
  return names;
}

/// Named parameter set; every other field keeps its RunConfig default.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  c.problem = name;
  c.aldi.ensemble_size = 1000;
  c.smoothing = {1e-3, 1e-2};
  if (name == "convex") {
    c.aldi.step_size = 1e-3;
    c.aldi.horizon = 10.0;
    c.components = 8;
    c.m_is = 100000;
  } else if (name == "convex_rare") {
    c.aldi.step_size = 5e-4;
    c.aldi.horizon = 20.0;
    c.components = 2;
    c.m_is = 100000;
  } else if (name == "saddle") {
    // R = 0.01 makes explicit Euler diverge within a few steps from prior draws at this step size;
    // R = 1 keeps a wide stability margin and a proposal broad enough for well-behaved IS weights.
    c.smoothing.noise_variance = 1.0;
    c.aldi.step_size = 2.5e-4;
    c.aldi.horizon = 5.0;
    c.components = 1;
    c.m_is = 100000;
  } else if (name == "vortex") {
    c.aldi.variant = AldiVariant::gradient_free;
    c.aldi.step_size = 5e-4;
    c.aldi.horizon = 2.5;
    c.components = 1;
    c.m_is = 10000;
  } else if (name == "gaussian_tail") {
    c.aldi.ensemble_size = 200;
    c.aldi.step_size = 1e-3;
    c.aldi.horizon = 5.0;
    c.components = 1;
    c.m_is = 10000;
  } else {
    throw ConfigError("unknown problem '" + name + "'");
  }
  return c;
}

inline GaussianPrior vortex_prior_for(const RunConfig& c) {
  return GaussianPrior::isotropic(equilateral_configuration(c.vortex.energy, c.vortex.circulations),
                                  c.vortex_prior_variance);
}

inline RareEventProblem make_problem(const RunConfig& c) {
  if (c.problem == "convex") return make_convex_problem(ConvexRegime::standard);
  if (c.problem == "convex_rare") return make_convex_problem(ConvexRegime::rare);
  if (c.problem == "saddle") return make_saddle_problem(c.saddle);
  if (c.problem == "vortex") return make_vortex_problem(c.vortex, vortex_prior_for(c));
  if (c.problem == "gaussian_tail") return make_gaussian_tail_problem(c.tail_c);
  throw ConfigError("unknown problem '" + c.problem + "'");
}

/// Reference failure probability where one is available.
inline std::optional<double> reference_probability(const RunConfig& c) {
  if (c.problem == "convex") return convex_reference_probability(convex_prior(ConvexRegime::standard));
  if (c.problem == "convex_rare") return convex_reference_probability(convex_prior(ConvexRegime::rare));
  if (c.problem == "saddle") return saddle_reference_probability(c.saddle, saddle_default_prior());
  if (c.problem == "gaussian_tail") return gaussian_tail_probability(c.tail_c);
  return std::nullopt;
}

inline void RunConfig::validate() const {
  try {
    if (std::find(problem_names().begin(), problem_names().end(), problem) == problem_names().end())
      throw ConfigError("unknown problem '" + problem + "'");
    const RareEventProblem p = make_problem(*this);
    p.validate();
    smoothing.validate();
    aldi.validate(p.dimension);
    if (aldi.variant == AldiVariant::gradient && !p.has_gradient())
      throw ConfigError("problem '" + problem + "' has no gradient; use variant gradient_free");
    if (method != "mixture_is" && method != "product" && method != "crude_mc")
      throw ConfigError("unknown method '" + method + "'");
    if (components < 1) throw ConfigError("estimator.K must be >= 1");
    if (m_is < 1) throw ConfigError("estimator.M_is must be >= 1");
    if (m_fit < 0 || m_fit > aldi.ensemble_size) throw ConfigError("estimator.M_fit must lie in [0, J]");
    const std::int64_t fit = m_fit == 0 ? aldi.ensemble_size : m_fit;
    if (method == "mixture_is" && fit < static_cast<std::int64_t>(components) * (p.dimension + 1))
      throw ConfigError("estimator: M_fit must be >= K (d + 1)");
    if (!(vortex_prior_variance > 0.0)) throw ConfigError("vortex.prior_variance must be > 0");
    EmConfig{components, em_max_iterations, em_tolerance, std::nullopt, 0, em_restarts}.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------- JSON

inline json to_json(const RunConfig& c) {
  json j;
  j["problem"] = c.problem;
  j["saddle"] = {{"lambda", c.saddle.lambda}, {"mu", c.saddle.mu}, {"T", c.saddle.horizon}, {"r", c.saddle.threshold}};
  j["vortex"] = {{"circulations", c.vortex.circulations},
                 {"H", c.vortex.energy},
                 {"r", c.vortex.threshold},
                 {"sigma", c.vortex.sigma},
                 {"dT", c.vortex.forward_step},
                 {"T", c.vortex.forward_horizon},
                 {"prior_variance", c.vortex_prior_variance}};
  j["gaussian_tail"] = {{"c", c.tail_c}};
  json schedule = json::array();
  for (const auto& [t, r] : c.aldi.noise_variance_schedule) schedule.push_back({t, r});
  j["aldi"] = {{"variant", to_string(c.aldi.variant)},
               {"J", c.aldi.ensemble_size},
               {"dtau", c.aldi.step_size},
               {"tau", c.aldi.horizon},
               {"seed", c.aldi.seed},
               {"record_every", c.aldi.record_every},
               {"noise", to_string(c.aldi.noise)},
               {"R_schedule", schedule},
               {"collapse_window", c.aldi.collapse_window},
               {"collapse_threshold", c.aldi.collapse_threshold}};
  j["smoothing"] = {{"delta", c.smoothing.delta}, {"R", c.smoothing.noise_variance}};
  j["estimator"] = {{"method", c.method},
                    {"K", c.components},
                    {"M_is", c.m_is},
                    {"M_fit", c.m_fit},
                    {"normalization", to_string(c.normalization)},
                    {"em_max_iterations", c.em_max_iterations},
                    {"em_tolerance", c.em_tolerance},
                    {"em_restarts", c.em_restarts}};
  j["output"] = {{"dir", c.out_dir}, {"snapshots", c.write_snapshots}};
  return j;
}

namespace detail {
inline void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read_if(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
  }
}
}  // namespace detail

/// Starts from the preset named by "problem" (default convex) and applies every given key.
inline RunConfig from_json(const json& j) {
  detail::reject_unknown(j, {"problem", "saddle", "vortex", "gaussian_tail", "aldi", "smoothing", "estimator", "output", "sweep"}, "");
  std::string name = "convex";
  detail::read_if(j, "problem", name, "");
  RunConfig c = preset(name);
  if (j.contains("saddle")) {
    const json& s = j["saddle"];
    detail::reject_unknown(s, {"lambda", "mu", "T", "r"}, "saddle");
    detail::read_if(s, "lambda", c.saddle.lambda, "saddle");
    detail::read_if(s, "mu", c.saddle.mu, "saddle");
    detail::read_if(s, "T", c.saddle.horizon, "saddle");
    detail::read_if(s, "r", c.saddle.threshold, "saddle");
  }
  if (j.contains("vortex")) {
    const json& v = j["vortex"];
    detail::reject_unknown(v, {"circulations", "H", "r", "sigma", "dT", "T", "prior_variance"}, "vortex");
    detail::read_if(v, "circulations", c.vortex.circulations, "vortex");
    detail::read_if(v, "H", c.vortex.energy, "vortex");
    detail::read_if(v, "r", c.vortex.threshold, "vortex");
    detail::read_if(v, "sigma", c.vortex.sigma, "vortex");
    detail::read_if(v, "dT", c.vortex.forward_step, "vortex");
    detail::read_if(v, "T", c.vortex.forward_horizon, "vortex");
    detail::read_if(v, "prior_variance", c.vortex_prior_variance, "vortex");
  }
  if (j.contains("gaussian_tail")) {
    detail::reject_unknown(j["gaussian_tail"], {"c"}, "gaussian_tail");
    detail::read_if(j["gaussian_tail"], "c", c.tail_c, "gaussian_tail");
  }
  if (j.contains("aldi")) {
    const json& a = j["aldi"];
    detail::reject_unknown(a, {"variant", "J", "dtau", "tau", "seed", "record_every", "noise", "R_schedule",
                               "collapse_window", "collapse_threshold"}, "aldi");
    std::string variant = to_string(c.aldi.variant), noise = to_string(c.aldi.noise);
    detail::read_if(a, "variant", variant, "aldi");
    if (variant == "gradient") c.aldi.variant = AldiVariant::gradient;
    else if (variant == "gradient_free") c.aldi.variant = AldiVariant::gradient_free;
    else throw ConfigError("aldi.variant must be gradient or gradient_free");
    detail::read_if(a, "noise", noise, "aldi");
    if (noise == "projected") c.aldi.noise = NoiseMode::projected;
    else if (noise == "ensemble") c.aldi.noise = NoiseMode::ensemble;
    else throw ConfigError("aldi.noise must be projected or ensemble");
    detail::read_if(a, "J", c.aldi.ensemble_size, "aldi");
    detail::read_if(a, "dtau", c.aldi.step_size, "aldi");
    detail::read_if(a, "tau", c.aldi.horizon, "aldi");
    detail::read_if(a, "seed", c.aldi.seed, "aldi");
    detail::read_if(a, "record_every", c.aldi.record_every, "aldi");
    detail::read_if(a, "R_schedule", c.aldi.noise_variance_schedule, "aldi");
    detail::read_if(a, "collapse_window", c.aldi.collapse_window, "aldi");
    detail::read_if(a, "collapse_threshold", c.aldi.collapse_threshold, "aldi");
  }
  if (j.contains("smoothing")) {
    detail::reject_unknown(j["smoothing"], {"delta", "R"}, "smoothing");
    detail::read_if(j["smoothing"], "delta", c.smoothing.delta, "smoothing");
    detail::read_if(j["smoothing"], "R", c.smoothing.noise_variance, "smoothing");
  }
  if (j.contains("estimator")) {
    const json& e = j["estimator"];
    detail::reject_unknown(e, {"method", "K", "M_is", "M_fit", "normalization", "em_max_iterations", "em_tolerance",
                               "em_restarts"}, "estimator");
    detail::read_if(e, "method", c.method, "estimator");
    std::string norm = to_string(c.normalization);
    detail::read_if(e, "normalization", norm, "estimator");
    if (norm == "unnormalized") c.normalization = IsNormalization::unnormalized;
    else if (norm == "self_normalized") c.normalization = IsNormalization::self_normalized;
    else throw ConfigError("estimator.normalization must be unnormalized or self_normalized");
    detail::read_if(e, "K", c.components, "estimator");
    detail::read_if(e, "M_is", c.m_is, "estimator");
    detail::read_if(e, "M_fit", c.m_fit, "estimator");
    detail::read_if(e, "em_max_iterations", c.em_max_iterations, "estimator");
    detail::read_if(e, "em_tolerance", c.em_tolerance, "estimator");
    detail::read_if(e, "em_restarts", c.em_restarts, "estimator");
  }
  if (j.contains("output")) {
    detail::reject_unknown(j["output"], {"dir", "snapshots"}, "output");
    detail::read_if(j["output"], "dir", c.out_dir, "output");
    detail::read_if(j["output"], "snapshots", c.write_snapshots, "output");
  }
  return c;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------- run

struct PipelineResult {
  RunConfig config;
  EstimateReport report;
  std::optional<AldiRun> aldi;
  std::optional<EmFit> fit;
  std::optional<double> reference;
};

namespace detail {
inline std::vector<std::pair<std::string, std::string>> flatten(const json& j, const std::string& prefix = "") {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      auto sub = flatten(v, key);
      out.insert(out.end(), sub.begin(), sub.end());
    } else if (v.is_number_float()) {
      out.emplace_back(key, io::format_double(v.get<double>()));
    } else if (v.is_string()) {
      out.emplace_back(key, v.get<std::string>());
    } else {
      out.emplace_back(key, v.dump());
    }
  }
  return out;
}

inline Matrix fit_samples(const RunConfig& c, const Ensemble& e) {
  if (c.m_fit == 0 || c.m_fit == e.size()) return e.matrix();
  return e.matrix().leftCols(c.m_fit);
}
}  // namespace detail

/// The IS stream for a given seed; shared by mixture IS and crude MC.
inline RandomStream estimator_stream(std::uint64_t seed) { return derive_stream(seed, {"estimator"}); }

/// Runs the configured estimator. For mixture_is and product an ALDI run
/// precedes it; crude_mc draws M_is prior samples directly.
inline PipelineResult execute(const RunConfig& config) {
  config.validate();
  PipelineResult out;
  out.config = config;
  const RareEventProblem problem = make_problem(config);
  try {
    out.reference = reference_probability(config);
  } catch (const std::exception&) {
    out.reference.reset();
  }
  const std::uint64_t seed = config.aldi.seed;

  if (config.method == "crude_mc") {
    try {
      out.report = crude_monte_carlo(problem, config.m_is, estimator_stream(seed));
    } catch (const std::exception& e) {
      throw StageError("crude_mc", e.what());
    }
  } else {
    try {
      out.aldi = run(problem, config.smoothing, config.aldi);
    } catch (const std::exception& e) {
      throw StageError("aldi", e.what());
    }
    if (config.method == "product") {
      try {
        out.report = product_estimator(detail::fit_samples(config, out.aldi->final_ensemble), problem,
                                       config.smoothing, seed);
      } catch (const std::exception& e) {
        throw StageError("product", e.what());
      }
    } else {
      try {
        EmConfig em{config.components, config.em_max_iterations, config.em_tolerance, std::nullopt,
                    derive_key(seed, {"em"}), config.em_restarts};
        out.fit = fit_em(detail::fit_samples(config, out.aldi->final_ensemble), em);
      } catch (const std::exception& e) {
        throw StageError("em", e.what());
      }
      try {
        out.report = mixture_is_estimator(out.fit->mixture, problem, config.m_is, estimator_stream(seed),
                                          config.normalization);
      } catch (const std::exception& e) {
        throw StageError("importance_sampling", e.what());
      }
    }
  }
  out.report.seed = seed;
  if (out.aldi) {
    for (const auto& w : out.aldi->warnings) out.report.flags.push_back("aldi: " + w);
  }
  if (out.fit) {
    for (const auto& w : out.fit->warnings) out.report.flags.push_back("em: " + w);
    if (!out.fit->converged) out.report.flags.push_back("em: not converged");
  }
  out.report.config = detail::flatten(to_json(config));
  if (out.reference) out.report.config.emplace_back("reference_probability", io::format_double(*out.reference));
  return out;
}

/// Writes ensemble.csv, mixture.txt, report.txt and config.json into dir.
inline void write_artifacts(const PipelineResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "config.json");
    f << to_json(r.config).dump(2) << '\n';
  }
  if (r.aldi) {
    std::ofstream f(dir / "ensemble.csv");
    if (r.config.write_snapshots) io::write_snapshots_csv(f, r.aldi->snapshots);
    else io::write_snapshots_csv(f, {Snapshot{r.aldi->steps * r.config.aldi.step_size, r.aldi->final_ensemble}});
  }
  if (r.fit) {
    std::ofstream f(dir / "mixture.txt");
    io::write_mixture(f, r.fit->mixture);
  }
  std::ofstream f(dir / "report.txt");
  io::write_report(f, r.report);
}

/// execute + write_artifacts. On a stage failure the partial directory gets an
/// error.txt naming the stage, and the error is rethrown.
inline PipelineResult run_pipeline(const RunConfig& config) {
  config.validate();
  const std::filesystem::path dir = config.out_dir;
  try {
    PipelineResult r = execute(config);
    if (!dir.empty()) write_artifacts(r, dir);
    return r;
  } catch (const StageError& e) {
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      std::ofstream f(dir / "error.txt");
      f << "stage = " << e.stage() << "\nmessage = " << e.what() << "\npartial = true\n";
    }
    throw;
  }
}

// ---------------------------------------------------------------- sweep

struct SweepSpec {
  std::string axis;  // J | delta | R | K | M_is
  std::vector<double> values;
  int repetitions = 10;

  void validate() const {
    static const std::set<std::string> axes{"J", "delta", "R", "K", "M_is"};
    if (!axes.count(axis)) throw ConfigError("sweep.axis must be one of J, delta, R, K, M_is");
    if (values.empty()) throw ConfigError("sweep.values must be nonempty");
    if (repetitions < 1) throw ConfigError("sweep.repetitions must be >= 1");
  }
};

inline SweepSpec sweep_from_json(const json& j) {
  if (!j.contains("sweep")) throw ConfigError("config has no 'sweep' block");
  const json& s = j["sweep"];
  detail::reject_unknown(s, {"axis", "values", "repetitions"}, "sweep");
  SweepSpec spec;
  detail::read_if(s, "axis", spec.axis, "sweep");
  detail::read_if(s, "values", spec.values, "sweep");
  detail::read_if(s, "repetitions", spec.repetitions, "sweep");
  spec.validate();
  return spec;
}

inline RunConfig apply_axis(RunConfig c, const std::string& axis, double value) {
  auto as_int = [&](const char* what) {
    if (value != std::floor(value)) throw ConfigError(std::string("sweep value for ") + what + " must be an integer");
    return static_cast<std::int64_t>(value);
  };
  if (axis == "J") c.aldi.ensemble_size = static_cast<int>(as_int("J"));
  else if (axis == "delta") c.smoothing.delta = value;
  else if (axis == "R") c.smoothing.noise_variance = value;
  else if (axis == "K") c.components = static_cast<int>(as_int("K"));
  else if (axis == "M_is") c.m_is = as_int("M_is");
  return c;
}

struct SweepSummaryEntry {
  double value = 0.0;
  double median_abs_error = std::numeric_limits<double>::quiet_NaN();
  int successes = 0;
  int failures = 0;
};

struct SweepResult {
  std::vector<io::SweepRow> rows;
  std::vector<SweepSummaryEntry> summary;
  std::optional<double> reference;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("log_log_slope: need >= 2 paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

/// One pipeline per (value, repetition) with seed = base seed + repetition.
/// Along K and M_is the ALDI ensemble of a repetition is shared by all values,
/// and along M_is the EM fit as well. Failures become rows with the error column set.
inline SweepResult run_sweep(const RunConfig& base, const SweepSpec& spec, int jobs = 1) {
  spec.validate();
  for (double v : spec.values) apply_axis(base, spec.axis, v).validate();
  SweepResult result;
  try {
    result.reference = reference_probability(base);
  } catch (const std::exception&) {
  }
  const bool share_aldi = spec.axis == "K" || spec.axis == "M_is";
  const std::size_t nv = spec.values.size();
  const std::size_t nr = static_cast<std::size_t>(spec.repetitions);
  result.rows.resize(nv * nr);

  auto row_for = [&](const RunConfig& c, std::size_t v) {
    io::SweepRow row;
    row.method = c.method;
    row.ensemble_size = c.aldi.ensemble_size;
    row.delta = c.smoothing.delta;
    row.noise_variance = c.smoothing.noise_variance;
    row.samples = c.m_is;
    row.components = c.components;
    row.seed = c.aldi.seed;
    (void)v;
    return row;
  };
  auto fill = [](io::SweepRow& row, const EstimateReport& r) {
    row.p_hat = r.p_hat;
    row.ess = r.ess;
    row.failure_count = r.failure_count;
  };

  auto task = [&](std::size_t rep) {
    RunConfig seeded = base;
    seeded.aldi.seed = base.aldi.seed + rep;
    seeded.out_dir.clear();
    if (!share_aldi || seeded.method != "mixture_is") {
      for (std::size_t v = 0; v < nv; ++v) {
        const RunConfig c = apply_axis(seeded, spec.axis, spec.values[v]);
        io::SweepRow row = row_for(c, v);
        try {
          fill(row, execute(c).report);
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        result.rows[v * nr + rep] = row;
      }
      return;
    }
    const RareEventProblem problem = make_problem(seeded);
    std::optional<AldiRun> aldi_run;
    std::string aldi_error;
    try {
      aldi_run = run(problem, seeded.smoothing, seeded.aldi);
    } catch (const std::exception& e) {
      aldi_error = std::string("aldi: ") + e.what();
    }
    std::optional<EmFit> shared_fit;
    for (std::size_t v = 0; v < nv; ++v) {
      const RunConfig c = apply_axis(seeded, spec.axis, spec.values[v]);
      io::SweepRow row = row_for(c, v);
      try {
        if (!aldi_run) throw std::runtime_error(aldi_error);
        EmConfig em{c.components, c.em_max_iterations, c.em_tolerance, std::nullopt,
                    derive_key(c.aldi.seed, {"em"}), c.em_restarts};
        const Matrix samples = detail::fit_samples(c, aldi_run->final_ensemble);
        if (spec.axis == "K" || !shared_fit) shared_fit = fit_em(samples, em);
        fill(row, mixture_is_estimator(shared_fit->mixture, problem, c.m_is, estimator_stream(c.aldi.seed),
                                       c.normalization));
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      result.rows[v * nr + rep] = row;
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(nr)));
  if (workers == 1) {
    for (std::size_t rep = 0; rep < nr; ++rep) task(rep);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t rep = next++; rep < nr; rep = next++) task(rep);
      });
    for (auto& t : pool) t.join();
  }

  for (std::size_t v = 0; v < nv; ++v) {
    SweepSummaryEntry entry;
    entry.value = spec.values[v];
    std::vector<double> errors;
    for (std::size_t rep = 0; rep < nr; ++rep) {
      const io::SweepRow& row = result.rows[v * nr + rep];
      if (!row.error.empty()) {
        ++entry.failures;
        continue;
      }
      ++entry.successes;
      if (result.reference) errors.push_back(std::abs(row.p_hat - *result.reference));
    }
    entry.median_abs_error = median(errors);
    result.summary.push_back(entry);
  }
  return result;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << io::kSweepHeader << '\n';
  for (const auto& row : r.rows) io::write_sweep_row(out, row);
}

}  // namespace aldi
