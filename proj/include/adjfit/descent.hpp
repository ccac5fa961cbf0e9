#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "adjfit/adjoint.hpp"
#include "adjfit/errors.hpp"
#include "adjfit/loss.hpp"
#include "adjfit/measure.hpp"
#include "adjfit/quadrature.hpp"
#include "adjfit/truncnorm.hpp"

namespace adjfit {

/// Multiplies every coordinate of the triple by 1 + N(0, rel_std^2); exact
/// zeros get absolute N(0, rel_std^2) noise instead.
template <typename Rng>
ParamTriple perturb(const ParamTriple& triple, double rel_std, Rng& rng) {
  if (rel_std < 0.0) throw InputError("perturbation std must be non-negative");
  if (rel_std == 0.0) return triple;
  std::normal_distribution<double> noise(0.0, rel_std);
  Vector flat = triple.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double z = noise(rng);
    flat[i] = flat[i] == 0.0 ? z : flat[i] * (1.0 + z);
  }
  return ParamTriple::unflatten(flat, triple.x0.size(), triple.theta.size());
}

namespace detail {

// Expected density of one truncated-normal bump on [0, 1] whose centre is
// uniform on [0, 1], tabulated on a grid and cached per bump width.
class BumpEnvelope {
 public:
  explicit BumpEnvelope(double bump_std) : values_(kGrid) {
    for (int i = 0; i < kGrid; ++i) {
      const double tau = static_cast<double>(i) / (kGrid - 1);
      auto over_centre = [tau, bump_std](double c) {
        return truncnorm_pdf(TruncNormSpec{c, bump_std, 0.0, 1.0}, tau);
      };
      const double pts[] = {0.0, tau, 1.0};
      values_[i] = quad::integrate_piecewise(over_centre, quad::merge_breakpoints(0.0, 1.0, pts),
                                             {1e-12, 1e-10, 100000})
                       .value;
    }
  }

  [[nodiscard]] double operator()(double tau) const {
    const double x = std::clamp(tau, 0.0, 1.0) * (kGrid - 1);
    const int i = std::min(static_cast<int>(x), kGrid - 2);
    const double w = x - i;
    return (1.0 - w) * values_[i] + w * values_[i + 1];
  }

  /// Interpolation nodes, where the envelope has kinks.
  [[nodiscard]] std::vector<double> nodes() const {
    std::vector<double> out(kGrid);
    for (int i = 0; i < kGrid; ++i) out[i] = static_cast<double>(i) / (kGrid - 1);
    return out;
  }

  static const BumpEnvelope& cached(double bump_std) {
    static std::mutex mutex;
    static std::map<double, BumpEnvelope> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(bump_std);
    if (it == cache.end()) it = cache.emplace(bump_std, BumpEnvelope(bump_std)).first;
    return it->second;
  }

 private:
  static constexpr int kGrid = 257;
  std::vector<double> values_;
};

}  // namespace detail

/// Mixture of truncated-normal bumps at `centres`, divided by the expected
/// single-bump density so that, for uniformly drawn centres, the expected
/// measure is close to uniform. Normalized to mass one.
inline SamplingMeasure bump_mixture_measure(std::vector<double> centres, double bump_std) {
  if (centres.empty()) throw InputError("bump mixture needs at least one centre");
  if (!(bump_std > 0.0)) throw InputError("bump std must be positive");
  const auto& envelope = detail::BumpEnvelope::cached(bump_std);
  auto density = [centres, bump_std, &envelope](double tau) {
    double sum = 0.0;
    for (double c : centres) sum += truncnorm_pdf(TruncNormSpec{c, bump_std, 0.0, 1.0}, tau);
    return sum / static_cast<double>(centres.size()) / envelope(tau);
  };
  std::vector<double> breaks = envelope.nodes();
  breaks.insert(breaks.end(), centres.begin(), centres.end());
  return SamplingMeasure::from_parts(density, {}, std::move(breaks));
}

/// Random measure for stochastic descent: `n_bumps` bumps of width `bump_std`
/// with centres drawn uniformly on [0, 1].
template <typename Rng>
SamplingMeasure random_measure(Rng& rng, int n_bumps, double bump_std = 0.1) {
  if (n_bumps < 1) throw InputError("n_bumps must be at least 1");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> centres(static_cast<std::size_t>(n_bumps));
  for (auto& c : centres) c = uniform(rng);
  return bump_mixture_measure(std::move(centres), bump_std);
}

struct FitConfig {
  int steps = 100;
  double learning_rate = 1e-2;
  bool line_search = true;
  int eval_loss_every = 1;
  std::uint64_t seed = 0;
  bool stochastic_measure = false;
  int n_bumps = 5;
  /// Mask over the flat triple [t0 | x0 | theta]; true coordinates are not updated.
  std::vector<bool> frozen_coords;
  SolverConfig solver = SolverConfig::with_tolerance(1e-6);

  void validate(Eigen::Index dim) const {
    if (steps < 1) throw InputError("steps must be at least 1");
    if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
    if (eval_loss_every < 0) throw InputError("eval_loss_every must be non-negative");
    if (!frozen_coords.empty() && static_cast<Eigen::Index>(frozen_coords.size()) != dim) {
      throw InputError("frozen_coords mask has the wrong length");
    }
    solver.validate();
  }
};

struct FitRecord {
  int step = 0;
  ParamTriple triple;
  double grad_norm = 0.0;
  /// NaN when the loss was not evaluated at this step.
  double loss = std::numeric_limits<double>::quiet_NaN();
  /// Step length used to reach this record; zero at step 0 or when no
  /// candidate was accepted.
  double step_size = 0.0;
};

struct FitTrace {
  std::vector<FitRecord> records;
};

/// Plain gradient descent on the triple with optional Armijo backtracking
/// (halving, sufficient-decrease constant 1e-4, at most 30 halvings).
inline FitTrace fit(const VectorField& model, const ErrorFunctional& h, const SamplingMeasure& sigma,
                    const ParamTriple& start, const FitConfig& cfg) {
  cfg.validate(model.dim_triple());
  model.check_triple(start);
  constexpr double armijo_c = 1e-4;
  constexpr int max_halvings = 30;

  const Eigen::Index d = model.dim_state(), k = model.dim_param();
  std::mt19937_64 rng(cfg.seed);
  auto mask = [&](Vector g) {
    for (std::size_t i = 0; i < cfg.frozen_coords.size(); ++i) {
      if (cfg.frozen_coords[i]) g[static_cast<Eigen::Index>(i)] = 0.0;
    }
    return g;
  };

  FitTrace trace;
  ParamTriple triple = start;
  double eta = cfg.learning_rate;
  double step_taken = 0.0;
  std::optional<double> base_loss;  // loss of `triple` under `sigma`, if known

  for (int step = 0;; ++step) {
    std::optional<SamplingMeasure> random_sigma;
    if (cfg.stochastic_measure) random_sigma = random_measure(rng, cfg.n_bumps);
    const SamplingMeasure& step_sigma = random_sigma ? *random_sigma : sigma;

    const AdjointProblem prob(model, triple, h, step_sigma, cfg.solver);
    const Vector grad = mask(gradient(prob));

    FitRecord rec{step, triple, grad.norm(), std::numeric_limits<double>::quiet_NaN(), step_taken};
    const bool want_loss =
        cfg.line_search || (cfg.eval_loss_every > 0 && step % cfg.eval_loss_every == 0) ||
        step == cfg.steps;
    if (want_loss) {
      if (!base_loss) base_loss = evaluate_loss(prob.forward(), triple.t0, h, sigma, cfg.solver).value;
      rec.loss = *base_loss;
    }
    trace.records.push_back(rec);
    if (step == cfg.steps) break;

    if (!cfg.line_search) {
      triple = ParamTriple::unflatten(triple.flatten() - cfg.learning_rate * grad, d, k);
      step_taken = cfg.learning_rate;
      base_loss.reset();
      continue;
    }

    const double current =
        random_sigma ? evaluate_loss(prob.forward(), triple.t0, h, step_sigma, cfg.solver).value
                     : *base_loss;
    const double slope = grad.squaredNorm();
    const Vector flat = triple.flatten();
    double trial = 2.0 * eta;
    std::optional<ParamTriple> accepted;
    std::optional<double> accepted_loss;
    std::string last_failure;
    for (int attempt = 0; attempt <= max_halvings && slope > 0.0; ++attempt, trial *= 0.5) {
      ParamTriple cand = ParamTriple::unflatten(flat - trial * grad, d, k);
      try {
        const double loss = evaluate_loss(cand, model, h, step_sigma, cfg.solver).value;
        last_failure.clear();
        if (std::isfinite(loss) && loss <= current - armijo_c * trial * slope) {
          accepted = std::move(cand);
          accepted_loss = loss;
          break;
        }
      } catch (const IntegrationError& e) {
        last_failure = e.what();
      } catch (const NumericalError& e) {
        last_failure = e.what();
      }
    }
    if (accepted) {
      triple = std::move(*accepted);
      eta = trial;
      step_taken = trial;
      if (random_sigma) {
        base_loss.reset();
      } else {
        base_loss = accepted_loss;
      }
    } else {
      if (!last_failure.empty() && slope > 0.0) {
        throw IntegrationError("line search failed at step " + std::to_string(step) +
                               " after " + std::to_string(max_halvings) +
                               " halvings: " + last_failure);
      }
      step_taken = 0.0;
      eta = std::max(eta * std::pow(0.5, max_halvings), std::numeric_limits<double>::min());
    }
  }
  return trace;
}

}  // namespace adjfit
