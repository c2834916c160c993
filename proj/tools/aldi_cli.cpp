// aldi: run, sweep, validate and reference subcommands.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "aldi/aldi.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kValidationFailure = 1;
constexpr int kRuntimeFailure = 2;

struct Common {
  std::string config_path;
  std::string problem;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

aldi::json load_config_tree(const Common& c) {
  aldi::json j = c.config_path.empty() ? aldi::json::object() : aldi::load_json_file(c.config_path);
  if (!c.problem.empty()) j["problem"] = c.problem;
  return j;
}

aldi::RunConfig resolve(const Common& c, const aldi::json& tree) {
  aldi::RunConfig cfg = aldi::from_json(tree);
  if (c.seed) cfg.aldi.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

void print_report(const aldi::PipelineResult& r) {
  std::printf("problem    %s\n", r.config.problem.c_str());
  std::printf("method     %s\n", r.report.method.c_str());
  std::printf("p_hat      %.6e\n", r.report.p_hat);
  if (r.reference) std::printf("reference  %.6e\n", *r.reference);
  std::printf("ess        %.1f\n", r.report.ess);
  std::printf("failures   %llu / %llu\n", static_cast<unsigned long long>(r.report.failure_count),
              static_cast<unsigned long long>(r.report.sample_count));
  for (const auto& f : r.report.flags) std::printf("flag       %s\n", f.c_str());
}

int cmd_run(const Common& c) {
  const aldi::RunConfig cfg = resolve(c, load_config_tree(c));
  const aldi::PipelineResult r = aldi::run_pipeline(cfg);
  print_report(r);
  if (!cfg.out_dir.empty()) std::printf("artifacts  %s\n", cfg.out_dir.c_str());
  return kOk;
}

int cmd_sweep(const Common& c) {
  const aldi::json tree = load_config_tree(c);
  const aldi::RunConfig cfg = resolve(c, tree);
  const aldi::SweepSpec spec = aldi::sweep_from_json(tree);
  const fs::path dir = cfg.out_dir.empty() ? fs::path("sweep_out") : fs::path(cfg.out_dir);
  const aldi::SweepResult result = aldi::run_sweep(cfg, spec, c.jobs);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "sweep.csv");
    aldi::write_sweep_csv(f, result);
  }
  std::ofstream summary(dir / "summary.txt");
  if (result.reference) summary << "reference = " << aldi::io::format_double(*result.reference) << '\n';
  std::printf("%-12s %-16s %s\n", spec.axis.c_str(), "median|err|", "ok/failed");
  for (const auto& e : result.summary) {
    std::printf("%-12g %-16.6e %d/%d\n", e.value, e.median_abs_error, e.successes, e.failures);
    summary << spec.axis << '=' << aldi::io::format_double(e.value)
            << " median_abs_error = " << aldi::io::format_double(e.median_abs_error) << " successes = " << e.successes
            << " failures = " << e.failures << '\n';
  }
  {
    std::ofstream f(dir / "config.json");
    aldi::json echo = aldi::to_json(cfg);
    echo["sweep"] = {{"axis", spec.axis}, {"values", spec.values}, {"repetitions", spec.repetitions}};
    f << echo.dump(2) << '\n';
  }
  std::printf("wrote %s\n", (dir / "sweep.csv").c_str());
  return kOk;
}

int cmd_validate(const Common& c, bool inject) {
  aldi::ValidationOptions opt;
  opt.seed = c.seed.value_or(0);
  opt.inject_drift_error = inject;
  const auto results = aldi::validate_all(opt);
  std::ofstream file;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    file.open(fs::path(c.out) / "validation.txt");
  }
  bool all = true;
  for (const auto& r : results) {
    char line[512];
    std::snprintf(line, sizeof line, "%s  %-55s measured %.3e  threshold %.3e%s%s", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.measured, r.threshold, r.detail.empty() ? "" : "  ", r.detail.c_str());
    std::puts(line);
    if (file) file << line << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kValidationFailure;
}

int cmd_reference() {
  using namespace aldi;
  std::printf("convex P_f (prior N(0,I))            %.17g\n", convex_reference_probability(convex_prior(ConvexRegime::standard)));
  std::printf("convex_rare P_f (prior N(-2,0.8 I))  %.17g\n", convex_reference_probability(convex_prior(ConvexRegime::rare)));
  std::printf("saddle P_f (lambda=mu=T=1, r=0.5)    %.17g\n", saddle_reference_probability({}, saddle_default_prior()));
  std::printf("gaussian_tail P_f (c=3)              %.17g\n", gaussian_tail_probability(3.0));
  std::printf("vortex l(H=1), Gamma=(1,1,-2)        %.17g\n", equilateral_side(1.0, {1.0, 1.0, -2.0}));
  const RareEventProblem convex = make_convex_problem();
  for (double r : {1e-1, 1e-2, 1e-3, 1e-4})
    std::printf("convex TV(delta=1e-3, R=%-6g)       %.17g\n", r, posterior_tv_distance(convex, {1e-3, r}).tv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rare-event estimation with ALDI and mixture importance sampling"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--problem", common.problem, "Preset: convex, convex_rare, saddle, vortex, gaussian_tail");
    sub->add_option("--seed", common.seed, "Base seed");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--jobs", common.jobs, "Concurrent sweep repetitions")->check(CLI::PositiveNumber);
  };
  CLI::App* run = app.add_subcommand("run", "ALDI -> mixture fit -> importance sampling");
  CLI::App* sweep = app.add_subcommand("sweep", "Repeat the pipeline over one parameter axis");
  CLI::App* validate = app.add_subcommand("validate", "Run the property battery");
  CLI::App* reference = app.add_subcommand("reference", "Print reference values");
  add_common(run);
  add_common(sweep);
  add_common(validate);
  bool inject = false;
  validate->add_flag("--inject-drift-error", inject, "Negative control: break the drift's mean correction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationFailure;
  }

  try {
    if (*run) return cmd_run(common);
    if (*sweep) return cmd_sweep(common);
    if (*validate) return cmd_validate(common, inject);
    if (*reference) return cmd_reference();
  } catch (const aldi::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kValidationFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
