// Convex benchmark end to end: ALDI, a K-component fit, then mixture IS,
// compared against crude Monte Carlo at the same sample budget.

#include <cstdio>

#include "aldi/aldi.hpp"

int main() {
  using namespace aldi;
  const RareEventProblem problem = make_convex_problem();
  const double reference = convex_reference_probability(problem.prior);

  AldiConfig cfg;
  cfg.seed = 7;
  const AldiRun chain = run(problem, SmoothingConfig{1e-3, 1e-2}, cfg);

  int in_f = 0;
  for (int j = 0; j < chain.final_ensemble.size(); ++j) in_f += problem.evaluate(chain.final_ensemble.particle(j)) <= 0.0;
  std::printf("particles in F after tau = %g: %d of %d\n", cfg.horizon, in_f, cfg.ensemble_size);

  EmConfig em;
  em.components = 8;
  const EmFit fit = fit_em(chain.final_ensemble.matrix(), em);
  const EstimateReport is = mixture_is_estimator(fit.mixture, problem, 100000, derive_stream(7, {"estimator"}));
  const EstimateReport mc = crude_monte_carlo(problem, 100000, derive_stream(7, {"estimator"}));

  std::printf("reference     %.5e\n", reference);
  std::printf("mixture IS    %.5e  (se %.1e, ess %.0f)\n", is.p_hat, is.standard_error, is.ess);
  std::printf("crude MC      %.5e  (se %.1e)\n", mc.p_hat, mc.standard_error);
}
