#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "adjfit/errors.hpp"
#include "adjfit/loss.hpp"
#include "adjfit/measure.hpp"
#include "adjfit/models.hpp"
#include "adjfit/odesolve.hpp"

namespace adjfit {

/// Everything the backward pass needs: the model, the triple it is evaluated
/// at, the stored forward trajectory on [t0, t0 + 1], the error functional
/// and the sampling measure. Holds references to model, h and sigma; they
/// must outlive the problem.
class AdjointProblem {
 public:
  AdjointProblem(const VectorField& model, ParamTriple triple, const ErrorFunctional& h,
                 const SamplingMeasure& sigma, SolverConfig cfg)
      : AdjointProblem(model, triple, solve_forward(model, triple, cfg), h, sigma, cfg) {}

  AdjointProblem(const VectorField& model, ParamTriple triple, Trajectory forward,
                 const ErrorFunctional& h, const SamplingMeasure& sigma, SolverConfig cfg)
      : model_(model),
        triple_(std::move(triple)),
        forward_(std::move(forward)),
        h_(h),
        sigma_(sigma),
        cfg_(cfg) {
    model_.check_triple(triple_);
    if (h_.obs_index < 0 || h_.obs_index >= model_.dim_state()) {
      throw InputError("observed component out of range for model '" + model_.name() + "'");
    }
    const double lo = std::min(forward_.t_start(), forward_.t_end());
    const double hi = std::max(forward_.t_start(), forward_.t_end());
    if (lo > triple_.t0 + 1e-12 || hi < triple_.t0 + 1.0 - 1e-12) {
      throw InputError("forward trajectory does not span [t0, t0 + 1]");
    }
  }

  [[nodiscard]] const VectorField& model() const { return model_; }
  [[nodiscard]] const ParamTriple& triple() const { return triple_; }
  [[nodiscard]] const Trajectory& forward() const { return forward_; }
  [[nodiscard]] const ErrorFunctional& error() const { return h_; }
  [[nodiscard]] const SamplingMeasure& measure() const { return sigma_; }
  [[nodiscard]] const SolverConfig& config() const { return cfg_; }
  [[nodiscard]] Eigen::Index dim() const { return model_.dim_triple(); }

  /// x(t0 + t) from the dense forward solution.
  [[nodiscard]] Vector state(double t) const { return forward_.eval(triple_.t0 + t); }

  /// Backpropagation source g(t) = h(t)'(t0 + t, x(t0 + t), theta).
  [[nodiscard]] Vector source(double t) const {
    return error_gradient(h_, t, state(t), model_.dim_state(), model_.dim_param());
  }

  /// J(t) = f'(t0 + t, x(t0 + t), theta), shape d x (1+d+k).
  [[nodiscard]] Matrix jacobian(double t) const {
    return model_.jacobian(triple_.t0 + t, state(t), triple_.theta);
  }

 private:
  const VectorField& model_;
  ParamTriple triple_;
  Trajectory forward_;
  const ErrorFunctional& h_;
  const SamplingMeasure& sigma_;
  SolverConfig cfg_;
};

/// Smooth part of the adjoint right-hand side, -g(t) rho_c(t) - a_2 J(t).
/// Atoms are not included; they enter as jumps between segments.
inline Vector adjoint_rhs(const AdjointProblem& prob, double t, const Vector& a) {
  const Eigen::Index d = prob.model().dim_state();
  if (a.size() != prob.dim()) throw InputError("adjoint state has the wrong length");
  const Vector x = prob.state(t);
  const Matrix jac = prob.model().jacobian(prob.triple().t0 + t, x, prob.triple().theta);
  Vector out = -(jac.transpose() * a.segment(1, d));
  if (prob.measure().has_density()) {
    const double rho = prob.measure().density(t);
    if (rho != 0.0) {
      out -= rho * error_gradient(prob.error(), t, x, d, prob.model().dim_param());
    }
  }
  return out;
}

/// Full record of a backward pass.
struct AdjointSolution {
  struct Segment {
    double from = 1.0;  ///< later time, where the backward solve starts
    double to = 0.0;
    Vector start;
    /// Dense backward solution; empty when the state stayed identically zero.
    std::optional<Trajectory> path;
  };
  struct Jump {
    double tau = 0.0;
    Vector size;
  };

  Vector gradient;
  /// a(1): the initial condition of the first backward segment.
  Vector terminal;
  std::vector<Segment> segments;
  /// Jumps applied when crossing atoms, in the order they were crossed.
  std::vector<Jump> jumps;
  std::size_t integrations = 0;

  /// a(t) for t in [0, 1]. At an atom time the value before the jump (in
  /// backward time) is returned.
  [[nodiscard]] Vector state_at(double t) const {
    if (t < 0.0 || t > 1.0) throw RangeError("adjoint state queried outside [0, 1]");
    for (const auto& seg : segments) {
      if (t <= seg.from && t >= seg.to) {
        if (!seg.path) return seg.start;
        return seg.path->eval(t);
      }
    }
    return gradient;
  }
};

/// Solves the adjoint equation backward from t = 1 to t = 0, splitting the
/// interval at every atom (where the solution jumps by g(tau) rho_d(tau)) and
/// at every point where the data or the density is not smooth.
inline AdjointSolution solve_adjoint(const AdjointProblem& prob) {
  const SamplingMeasure& sigma = prob.measure();
  const Eigen::Index n = prob.dim();

  // Coincident atoms are merged by summing their weights.
  std::map<double, double, std::greater<>> atom_weight;
  for (const auto& atom : sigma.atoms()) atom_weight[atom.tau] += atom.weight;

  std::vector<double> splits{1.0, 0.0};
  for (const auto& [tau, w] : atom_weight) splits.push_back(tau);
  if (sigma.has_density()) {
    for (double k : prob.error().knots()) splits.push_back(k);
    for (double b : sigma.breakpoints()) splits.push_back(b);
  }
  splits.erase(std::remove_if(splits.begin(), splits.end(),
                              [](double s) { return !(s >= 0.0 && s <= 1.0); }),
               splits.end());
  std::sort(splits.begin(), splits.end(), std::greater<>{});
  splits.erase(std::unique(splits.begin(), splits.end()), splits.end());

  AdjointSolution sol;
  Vector a = Vector::Zero(n);
  auto jump_at = [&](double tau) -> std::optional<Vector> {
    const auto it = atom_weight.find(tau);
    if (it == atom_weight.end()) return std::nullopt;
    return Vector(prob.source(tau) * it->second);
  };

  if (auto j = jump_at(1.0)) {
    a += *j;
    sol.jumps.push_back({1.0, *j});
  }
  sol.terminal = a;

  auto rhs = [&prob](double t, const Vector& y) { return adjoint_rhs(prob, t, y); };
  SolverConfig seg_cfg = prob.config();
  for (std::size_t i = 0; i + 1 < splits.size(); ++i) {
    const double hi = splits[i], lo = splits[i + 1];
    if (i > 0) {
      if (auto j = jump_at(hi)) {
        a += *j;
        sol.jumps.push_back({hi, *j});
      }
    }
    AdjointSolution::Segment seg{hi, lo, a, std::nullopt};
    // A zero state with no continuous forcing stays zero: the system is linear.
    if (!a.isZero(0.0) || sigma.has_density()) {
      seg.path = integrate(rhs, hi, a, lo, seg_cfg);
      ++sol.integrations;
      a = seg.path->final_state();
      const auto& ts = seg.path->times();
      if (ts.size() >= 2) {
        double last = std::abs(ts[ts.size() - 1] - ts[ts.size() - 2]);
        if (ts.size() >= 3) last = std::max(last, std::abs(ts[ts.size() - 2] - ts[ts.size() - 3]));
        seg_cfg.initial_step = last;
      }
    }
    if (!a.allFinite()) throw DivergenceError("adjoint state became non-finite");
    sol.segments.push_back(std::move(seg));
  }
  if (auto j = jump_at(0.0)) {
    a += *j;
    sol.jumps.push_back({0.0, *j});
  }
  sol.gradient = std::move(a);
  return sol;
}

/// Gradient of the loss over the flat triple [t0, x0, theta].
inline Vector gradient(const AdjointProblem& prob) { return solve_adjoint(prob).gradient; }

inline Vector gradient(const VectorField& model, const ParamTriple& triple,
                       const ErrorFunctional& h, const SamplingMeasure& sigma,
                       const SolverConfig& cfg) {
  return gradient(AdjointProblem(model, triple, h, sigma, cfg));
}

/// Gradient for an atom-free measure: one backward solve from a(1) = 0.
inline Vector gradient_continuous(const AdjointProblem& prob) {
  if (!prob.measure().atoms().empty()) {
    throw InputError("gradient_continuous requires a measure without atoms");
  }
  return gradient(prob);
}

/// Gradient for a measure concentrated on one time tau: zero on (tau, 1],
/// a jump to g(tau) at tau, then the homogeneous system down to 0.
inline Vector gradient_single_point(const AdjointProblem& prob) {
  const auto& sigma = prob.measure();
  if (sigma.has_density() || sigma.atoms().size() != 1) {
    throw InputError("gradient_single_point requires a measure with exactly one atom");
  }
  return gradient(prob);
}

}  // namespace adjfit
