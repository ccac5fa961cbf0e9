#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "adjfit/errors.hpp"
#include "adjfit/measure.hpp"
#include "adjfit/models.hpp"
#include "adjfit/odesolve.hpp"
#include "adjfit/quadrature.hpp"
#include "adjfit/sampling.hpp"

namespace adjfit {

/// Weighted squared error h(tau)(s, p, theta) = w(tau) * (p[obs] - y(tau))^2.
struct ErrorFunctional {
  Sample sample;
  int obs_index = 0;
  /// Optional time weight; unset means w == 1.
  std::function<double(double)> weight;

  explicit ErrorFunctional(Sample s, std::function<double(double)> w = {})
      : sample(std::move(s)), obs_index(sample_obs_index(sample)), weight(std::move(w)) {}

  [[nodiscard]] double target(double tau) const { return sample_value(sample, tau); }
  [[nodiscard]] double weight_at(double tau) const { return weight ? weight(tau) : 1.0; }

  /// Interior points where y (and hence the integrand) is not smooth.
  [[nodiscard]] std::vector<double> knots() const { return sample_knots(sample); }
};

struct LossReport {
  double value = 0.0;
  double continuous_part = 0.0;
  double discrete_part = 0.0;
};

inline double pointwise_error(const ErrorFunctional& h, double tau, const Vector& state) {
  const double r = state[h.obs_index] - h.target(tau);
  return h.weight_at(tau) * r * r;
}

/// g(t): gradient of h(t) over the lifted state (s, p, theta). Only the
/// observed state coordinate is non-zero.
inline Vector error_gradient(const ErrorFunctional& h, double t, const Vector& state,
                             Eigen::Index dim_state, Eigen::Index dim_param) {
  if (state.size() != dim_state || h.obs_index >= dim_state) {
    throw InputError("state dimension does not match the error functional");
  }
  Vector g = Vector::Zero(1 + dim_state + dim_param);
  g[1 + h.obs_index] = 2.0 * h.weight_at(t) * (state[h.obs_index] - h.target(t));
  return g;
}

namespace detail {

inline quad::Options loss_quadrature_options(const SolverConfig& cfg) {
  return {0.1 * cfg.abs_tol, cfg.rel_tol, 400000};
}

inline std::vector<double> loss_breakpoints(const ErrorFunctional& h, const SamplingMeasure& sigma) {
  std::vector<double> interior = h.knots();
  interior.insert(interior.end(), sigma.breakpoints().begin(), sigma.breakpoints().end());
  return quad::merge_breakpoints(0.0, 1.0, interior);
}

}  // namespace detail

/// Loss of an already computed forward trajectory starting at `t0`.
inline LossReport evaluate_loss(const Trajectory& forward, double t0, const ErrorFunctional& h,
                                const SamplingMeasure& sigma, const SolverConfig& cfg) {
  LossReport report;
  if (sigma.has_density()) {
    auto integrand = [&](double tau) {
      const double rho = sigma.density(tau);
      if (rho == 0.0) return 0.0;
      return pointwise_error(h, tau, forward.eval(t0 + tau)) * rho;
    };
    const auto pts = detail::loss_breakpoints(h, sigma);
    report.continuous_part =
        quad::integrate_piecewise(integrand, pts, detail::loss_quadrature_options(cfg)).value;
  }
  for (const auto& atom : sigma.atoms()) {
    report.discrete_part += atom.weight * pointwise_error(h, atom.tau, forward.eval(t0 + atom.tau));
  }
  report.value = report.continuous_part + report.discrete_part;
  return report;
}

/// Solves the forward problem on [t0, t0 + 1] and integrates the pointwise
/// error against sigma.
inline LossReport evaluate_loss(const ParamTriple& triple, const VectorField& model,
                                const ErrorFunctional& h, const SamplingMeasure& sigma,
                                const SolverConfig& cfg) {
  if (h.obs_index < 0 || h.obs_index >= model.dim_state()) {
    throw InputError("observed component out of range for model '" + model.name() + "'");
  }
  const Trajectory forward = solve_forward(model, triple, cfg);
  return evaluate_loss(forward, triple.t0, h, sigma, cfg);
}

}  // namespace adjfit
