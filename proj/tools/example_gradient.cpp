// Minimal library use: noisy SI data, one adjoint gradient, one
// finite-difference check, then a short descent run.

#include <iostream>
#include <random>

#include "adjfit/descent.hpp"
#include "adjfit/gradcheck.hpp"

int main() {
  using namespace adjfit;
  const VectorField model = models::si();
  const ParamTriple truth = *model.reference();

  std::mt19937_64 rng(1);
  const Trajectory clean = solve_forward(model, truth, SolverConfig::with_tolerance(1e-10));
  const ErrorFunctional h(make_continuous_sample(clean, /*obs_index=*/0, /*noise_std=*/0.1, 1001, rng));
  const SamplingMeasure sigma = lebesgue();

  const ParamTriple start = perturb(truth, 0.05, rng);
  const auto cfg = SolverConfig::with_tolerance(1e-9);
  print_report(std::cout, model, compare(start, model, h, sigma, cfg, 1e-5));

  FitConfig fit_cfg;
  fit_cfg.steps = 30;
  const FitTrace trace = fit(model, h, sigma, start, fit_cfg);
  std::cout << "loss " << trace.records.front().loss << " -> " << trace.records.back().loss << "\n";
  std::cout << "theta " << trace.records.back().triple.theta.transpose() << " (truth "
            << truth.theta.transpose() << ")\n";
}
