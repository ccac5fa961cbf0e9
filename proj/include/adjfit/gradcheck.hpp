#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "adjfit/adjoint.hpp"
#include "adjfit/loss.hpp"

namespace adjfit {

/// Solver tolerance used by the finite-difference oracle, independent of the
/// configuration under test.
inline constexpr double kOracleTolerance = 1e-11;

/// Central differences of the loss over each flat triple coordinate.
inline Vector fd_gradient(const ParamTriple& triple, const VectorField& model,
                          const ErrorFunctional& h, const SamplingMeasure& sigma,
                          const SolverConfig& cfg, double step) {
  if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
  SolverConfig tight = cfg;
  tight.rel_tol = kOracleTolerance;
  tight.abs_tol = kOracleTolerance;
  tight.initial_step = 0.0;
  tight.max_steps = std::max<std::size_t>(cfg.max_steps, 1000000);

  const Vector center = triple.flatten();
  const Eigen::Index d = model.dim_state(), k = model.dim_param();
  Vector grad(center.size());
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    Vector plus = center, minus = center;
    plus[i] += step;
    minus[i] -= step;
    const double lp = evaluate_loss(ParamTriple::unflatten(plus, d, k), model, h, sigma, tight).value;
    const double lm = evaluate_loss(ParamTriple::unflatten(minus, d, k), model, h, sigma, tight).value;
    grad[i] = (lp - lm) / (2.0 * step);
  }
  return grad;
}

struct GradReport {
  Vector adjoint_grad;
  Vector fd_grad;
  Vector rel_err;
  Vector abs_err;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;

  /// Largest relative error, except that coordinates where both gradients
  /// are below `near_zero` in magnitude are judged by absolute error instead.
  [[nodiscard]] bool within(double rel_tol, double abs_tol, double near_zero) const {
    for (Eigen::Index i = 0; i < rel_err.size(); ++i) {
      const bool tiny = std::abs(adjoint_grad[i]) < near_zero && std::abs(fd_grad[i]) < near_zero;
      if (tiny ? abs_err[i] > abs_tol : rel_err[i] > rel_tol) return false;
    }
    return true;
  }
};

inline GradReport make_report(Vector adjoint_grad, Vector fd_grad) {
  GradReport r;
  r.adjoint_grad = std::move(adjoint_grad);
  r.fd_grad = std::move(fd_grad);
  const Eigen::Index n = r.adjoint_grad.size();
  r.rel_err.resize(n);
  r.abs_err.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diff = std::abs(r.adjoint_grad[i] - r.fd_grad[i]);
    const double denom = std::max({std::abs(r.adjoint_grad[i]), std::abs(r.fd_grad[i]), 1e-6});
    r.abs_err[i] = diff;
    r.rel_err[i] = diff / denom;
  }
  r.max_rel_err = n ? r.rel_err.maxCoeff() : 0.0;
  r.max_abs_err = n ? r.abs_err.maxCoeff() : 0.0;
  return r;
}

/// Adjoint gradient at `cfg` against the finite-difference oracle.
inline GradReport compare(const ParamTriple& triple, const VectorField& model,
                          const ErrorFunctional& h, const SamplingMeasure& sigma,
                          const SolverConfig& cfg, double step) {
  Vector adj = gradient(model, triple, h, sigma, cfg);
  Vector fd = fd_gradient(triple, model, h, sigma, cfg, step);
  return make_report(std::move(adj), std::move(fd));
}

inline std::string coordinate_label(const VectorField& model, Eigen::Index i) {
  if (i == 0) return "t0";
  if (i <= model.dim_state()) return "x0[" + std::to_string(i - 1) + "]";
  return "theta[" + std::to_string(i - 1 - model.dim_state()) + "]";
}

inline void print_report(std::ostream& os, const VectorField& model, const GradReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %24s %24s %12s %12s\n", "coord", "adjoint", "finite_diff",
                "abs_err", "rel_err");
  os << line;
  for (Eigen::Index i = 0; i < r.adjoint_grad.size(); ++i) {
    std::snprintf(line, sizeof line, "%-10s %24.16e %24.16e %12.4e %12.4e\n",
                  coordinate_label(model, i).c_str(), r.adjoint_grad[i], r.fd_grad[i],
                  r.abs_err[i], r.rel_err[i]);
    os << line;
  }
  std::snprintf(line, sizeof line, "max_abs_err %.4e  max_rel_err %.4e\n", r.max_abs_err,
                r.max_rel_err);
  os << line;
}

}  // namespace adjfit
