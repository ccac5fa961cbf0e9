#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <cstddef>
#include <string>
#include <vector>

#include "adjfit/errors.hpp"
#include "adjfit/models.hpp"

namespace adjfit {

struct SolverConfig {
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  /// Zero selects the starting step automatically.
  double initial_step = 0.0;
  std::size_t max_steps = 100000;

  static SolverConfig with_tolerance(double tol) { return {tol, tol, 0.0, 1000000}; }

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
      throw InputError("solver tolerances must be positive");
    }
    if (max_steps < 1) throw InputError("max_steps must be at least 1");
    if (initial_step < 0.0) throw InputError("initial_step must be non-negative");
  }
};

/// Dense output of an ODE solve. Accepted steps are stored as (time, state,
/// derivative) nodes. Between nodes the solution is the cubic Hermite
/// interpolant plus an optional quartic correction s^2 (1-s)^2 r per step,
/// which is how the Dormand-Prince continuous extension decomposes.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<double> times, std::vector<Vector> states,
             std::vector<Vector> derivatives, std::vector<Vector> corrections = {})
      : times_(std::move(times)),
        states_(std::move(states)),
        derivatives_(std::move(derivatives)),
        corrections_(std::move(corrections)) {
    if (states_.size() != times_.size() || derivatives_.size() != times_.size() ||
        (!corrections_.empty() && corrections_.size() + 1 != times_.size())) {
      throw InputError("trajectory node arrays have inconsistent lengths");
    }
  }

  [[nodiscard]] double t_start() const { return times_.front(); }
  [[nodiscard]] double t_end() const { return times_.back(); }
  [[nodiscard]] bool forward() const { return t_end() >= t_start(); }
  [[nodiscard]] std::size_t node_count() const { return times_.size(); }
  [[nodiscard]] Eigen::Index dim() const { return states_.front().size(); }
  /// Order of the dense output: 4 with per-step corrections, 3 without.
  [[nodiscard]] int interpolation_order() const { return corrections_.empty() ? 3 : 4; }

  [[nodiscard]] const std::vector<double>& times() const { return times_; }
  [[nodiscard]] const std::vector<Vector>& states() const { return states_; }
  [[nodiscard]] const std::vector<Vector>& derivatives() const { return derivatives_; }
  [[nodiscard]] const Vector& final_state() const { return states_.back(); }

  [[nodiscard]] Vector eval(double t) const {
    const double lo = std::min(t_start(), t_end());
    const double hi = std::max(t_start(), t_end());
    constexpr double slack = 1e-12;
    if (!(t >= lo - slack && t <= hi + slack)) {
      throw RangeError("trajectory evaluated at t=" + std::to_string(t) + " outside [" +
                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    t = std::clamp(t, lo, hi);
    const std::size_t i = locate(t);
    if (t == times_[i]) return states_[i];
    if (t == times_[i + 1]) return states_[i + 1];
    const double h = times_[i + 1] - times_[i];
    const double s = (t - times_[i]) / h;
    const double s1 = 1.0 - s;
    // Nested form anchored on the left node, so constant solutions come back
    // bit-for-bit.
    const Vector diff = states_[i + 1] - states_[i];
    const Vector bend = h * derivatives_[i] - diff;
    Vector inner = diff - h * derivatives_[i + 1] - bend;
    if (!corrections_.empty()) inner += s1 * corrections_[i];
    return states_[i] + s * (diff + s1 * (bend + s * inner));
  }

 private:
  // Index i of the step [times_[i], times_[i+1]] containing t.
  [[nodiscard]] std::size_t locate(double t) const {
    if (times_.size() < 2) return 0;
    std::size_t i;
    if (forward()) {
      auto it = std::upper_bound(times_.begin(), times_.end(), t);
      i = static_cast<std::size_t>(it - times_.begin());
    } else {
      auto it = std::upper_bound(times_.begin(), times_.end(), t, std::greater<>{});
      i = static_cast<std::size_t>(it - times_.begin());
    }
    i = (i == 0) ? 0 : i - 1;
    return std::min(i, times_.size() - 2);
  }

  std::vector<double> times_;
  std::vector<Vector> states_;
  std::vector<Vector> derivatives_;
  std::vector<Vector> corrections_;
};

inline Vector eval_trajectory(const Trajectory& traj, double t) { return traj.eval(t); }

template <typename F>
concept OdeRhs = requires(const F& f, double t, const Vector& y) {
  { f(t, y) } -> std::convertible_to<Vector>;
};

namespace detail {

// Dormand-Prince 5(4) coefficients.
struct DormandPrince {
  static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b - b_hat, the embedded error weights.
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  // Quartic term of the continuous extension (Shampine's coefficients).
  static constexpr double d1 = -12715105075.0 / 11282082432.0,
                          d3 = 87487479700.0 / 32700410799.0,
                          d4 = -10690763975.0 / 1880347072.0,
                          d5 = 701980252875.0 / 199316789632.0,
                          d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

inline double error_norm(const Vector& err, const Vector& y0, const Vector& y1,
                         const SolverConfig& cfg) {
  const Eigen::Index n = err.size();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

template <OdeRhs F>
double initial_step(const F& rhs, double t, const Vector& y, const Vector& f0, double dir,
                    double span, const SolverConfig& cfg) {
  const auto scale = (cfg.abs_tol + cfg.rel_tol * y.array().abs()).matrix();
  const double d0 = (y.array() / scale.array()).matrix().norm() / std::sqrt(double(y.size()));
  const double d1 = (f0.array() / scale.array()).matrix().norm() / std::sqrt(double(y.size()));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Vector y1 = y + dir * h0 * f0;
  const Vector f1 = rhs(t + dir * h0, y1);
  const double d2 =
      ((f1 - f0).array() / scale.array()).matrix().norm() / std::sqrt(double(y.size())) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 5);
  return std::min({100 * h0, h1, span});
}

}  // namespace detail

/// Integrates y' = rhs(t, y) from t_from to t_to (either direction) with an
/// adaptive Dormand-Prince 5(4) pair and a PI step-size controller.
template <OdeRhs F>
Trajectory integrate(const F& rhs, double t_from, const Vector& state_from, double t_to,
                     const SolverConfig& cfg) {
  cfg.validate();
  if (t_from == t_to) throw InputError("integration span has zero length");
  if (!state_from.allFinite()) throw DivergenceError("non-finite initial state");

  using DP = detail::DormandPrince;
  constexpr double safety = 0.9, min_factor = 0.2, max_factor = 5.0;
  constexpr double beta = 0.04, alpha = 0.2 - 0.75 * beta;

  const double dir = t_to > t_from ? 1.0 : -1.0;
  const double span = std::abs(t_to - t_from);

  std::vector<double> times{t_from};
  std::vector<Vector> states{state_from};
  Vector f0 = rhs(t_from, state_from);
  if (!f0.allFinite()) throw DivergenceError("non-finite derivative at t=" + std::to_string(t_from));
  std::vector<Vector> derivs{f0};
  std::vector<Vector> corrections;

  double t = t_from;
  Vector y = state_from;
  double h = cfg.initial_step > 0.0 ? std::min(cfg.initial_step, span)
                                    : detail::initial_step(rhs, t, y, f0, dir, span, cfg);
  double err_prev = 1e-4;
  bool rejected = false;

  for (std::size_t step = 0;; ++step) {
    if (step >= cfg.max_steps) {
      throw IntegrationError("exceeded " + std::to_string(cfg.max_steps) +
                             " steps integrating to t=" + std::to_string(t_to));
    }
    const double remaining = std::abs(t_to - t);
    bool last = false;
    // Absorb a remainder too small to be a step of its own.
    const double sliver = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t_to));
    if (h >= remaining - sliver) {
      h = remaining;
      last = true;
    }
    if (h <= 16 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
      throw IntegrationError("step size underflow at t=" + std::to_string(t));
    }
    const double hs = dir * h;

    const Vector& k1 = f0;
    const Vector k2 = rhs(t + DP::c[1] * hs, y + hs * (DP::a21 * k1));
    const Vector k3 = rhs(t + DP::c[2] * hs, y + hs * (DP::a31 * k1 + DP::a32 * k2));
    const Vector k4 =
        rhs(t + DP::c[3] * hs, y + hs * (DP::a41 * k1 + DP::a42 * k2 + DP::a43 * k3));
    const Vector k5 = rhs(t + DP::c[4] * hs, y + hs * (DP::a51 * k1 + DP::a52 * k2 +
                                                       DP::a53 * k3 + DP::a54 * k4));
    const Vector k6 = rhs(t + hs, y + hs * (DP::a61 * k1 + DP::a62 * k2 + DP::a63 * k3 +
                                            DP::a64 * k4 + DP::a65 * k5));
    const double t_new = last ? t_to : t + hs;
    Vector y_new =
        y + hs * (DP::b1 * k1 + DP::b3 * k3 + DP::b4 * k4 + DP::b5 * k5 + DP::b6 * k6);
    const Vector k7 = rhs(t_new, y_new);
    const Vector err = hs * (DP::e1 * k1 + DP::e3 * k3 + DP::e4 * k4 + DP::e5 * k5 +
                             DP::e6 * k6 + DP::e7 * k7);

    double err_norm = detail::error_norm(err, y, y_new, cfg);
    if (!std::isfinite(err_norm) || !y_new.allFinite() || !k7.allFinite()) {
      if (h <= 1e-12 * span) {
        throw DivergenceError("non-finite state encountered near t=" + std::to_string(t));
      }
      h *= min_factor;
      rejected = true;
      continue;
    }

    if (err_norm <= 1.0) {
      double factor = err_norm == 0.0
                          ? max_factor
                          : safety * std::pow(err_norm, -alpha) * std::pow(err_prev, beta);
      factor = std::clamp(factor, min_factor, max_factor);
      if (rejected) factor = std::min(factor, 1.0);
      err_prev = std::max(err_norm, 1e-4);
      corrections.push_back(hs * (DP::d1 * k1 + DP::d3 * k3 + DP::d4 * k4 + DP::d5 * k5 +
                                  DP::d6 * k6 + DP::d7 * k7));
      t = t_new;
      y = std::move(y_new);
      f0 = k7;
      times.push_back(t);
      states.push_back(y);
      derivs.push_back(f0);
      if (last) break;
      h *= factor;
      rejected = false;
    } else {
      const double factor = std::max(min_factor, safety * std::pow(err_norm, -alpha));
      h *= factor;
      rejected = true;
    }
  }
  return {std::move(times), std::move(states), std::move(derivs), std::move(corrections)};
}

/// Forward solution of x' = f(t, x, theta), x(t0) = x0 on [t0, t0 + 1].
inline Trajectory solve_forward(const VectorField& model, const ParamTriple& triple,
                                const SolverConfig& cfg) {
  model.check_triple(triple);
  const Vector& theta = triple.theta;
  auto rhs = [&model, &theta](double t, const Vector& x) { return model.eval(t, x, theta); };
  return integrate(rhs, triple.t0, triple.x0, triple.t0 + 1.0, cfg);
}

/// Largest component difference between advancing the lifted system by s+t
/// in one go and advancing by s and then by t.
inline double flow_compose_error(const VectorField& model, double t0, const Vector& x0,
                                 const Vector& theta, double s, double t,
                                 const SolverConfig& cfg) {
  if (s < 0 || t < 0 || s + t > 1.0) throw InputError("flow split must satisfy 0 <= s, t, s+t <= 1");
  auto rhs = [&model, &theta](double tt, const Vector& x) { return model.eval(tt, x, theta); };
  auto advance = [&](double from, const Vector& x, double by) -> Vector {
    if (by == 0.0) return x;
    return integrate(rhs, from, x, from + by, cfg).final_state();
  };
  const Vector one_stage = advance(t0, x0, s + t);
  const Vector two_stage = advance(t0 + s, advance(t0, x0, s), t);
  return (one_stage - two_stage).cwiseAbs().maxCoeff();
}

/// Group property of the flow: phi(s+t) == phi(t) o phi(s) within `tol`.
inline bool flow_compose_check(const VectorField& model, double t0, const Vector& x0,
                               const Vector& theta, double s, double t,
                               const SolverConfig& cfg, double tol) {
  return flow_compose_error(model, t0, x0, theta, s, t, cfg) <= tol;
}

inline bool flow_compose_check(const VectorField& model, double t0, const Vector& x0,
                               const Vector& theta, double s, double t,
                               const SolverConfig& cfg) {
  return flow_compose_check(model, t0, x0, theta, s, t, cfg,
                            10.0 * std::max(cfg.rel_tol, cfg.abs_tol));
}

}  // namespace adjfit
