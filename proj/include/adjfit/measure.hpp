#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adjfit/errors.hpp"
#include "adjfit/quadrature.hpp"
#include "adjfit/truncnorm.hpp"

namespace adjfit {

struct Atom {
  double tau = 0.0;
  double weight = 0.0;
};

/// Probability measure on [0, 1]: an absolutely continuous density plus
/// finitely many atoms at strictly increasing times.
class SamplingMeasure {
 public:
  using Density = std::function<double(double)>;

  enum class DensityKind { zero, uniform, piecewise_truncnorm, custom };

  /// Parameters of the piecewise truncated-normal density: on each of
  /// `intervals` equal subintervals, 1/intervals times a normal of std `time_std`
  /// centred at the midpoint and truncated to the subinterval.
  struct TruncNormPieces {
    int intervals = 1;
    double time_std = 0.0;
  };

  /// Unit density on [0, 1], no atoms.
  static SamplingMeasure lebesgue() {
    return SamplingMeasure(DensityKind::uniform, [](double) { return 1.0; }, {}, {}, {}, 0.0);
  }

  /// Atoms of weight 1/n at the given strictly increasing times.
  static SamplingMeasure uniform_atoms(std::span<const double> taus) {
    if (taus.empty()) throw InputError("uniform_atoms needs at least one time");
    std::vector<Atom> atoms;
    atoms.reserve(taus.size());
    const double w = 1.0 / static_cast<double>(taus.size());
    for (double tau : taus) atoms.push_back({tau, w});
    validate_atoms(atoms, /*strict=*/true);
    return SamplingMeasure(DensityKind::zero, nullptr, std::move(atoms), {}, {}, 1.0);
  }

  static SamplingMeasure uniform_atoms(std::initializer_list<double> taus) {
    return uniform_atoms(std::span<const double>(taus.begin(), taus.size()));
  }

  /// Piecewise truncated-normal density; integrates to one by construction.
  static SamplingMeasure piecewise_truncnorm(int intervals, double time_std) {
    if (intervals < 1) throw InputError("piecewise density needs at least one interval");
    if (!(time_std > 0.0)) throw InputError("time_std must be positive");
    const double width = 1.0 / intervals;
    auto density = [intervals, time_std, width](double tau) {
      const int j = std::clamp(static_cast<int>(std::floor(tau * intervals)), 0, intervals - 1);
      const TruncNormSpec spec{(j + 0.5) * width, time_std, j * width, (j + 1) * width};
      return truncnorm_pdf(spec, tau) / intervals;
    };
    std::vector<double> breaks;
    for (int j = 0; j < intervals; ++j) {
      if (j > 0) breaks.push_back(j * width);
      breaks.push_back((j + 0.5) * width);
    }
    return SamplingMeasure(DensityKind::piecewise_truncnorm, density, {}, std::move(breaks),
                           TruncNormPieces{intervals, time_std}, 0.0);
  }

  /// Builds a measure from an arbitrary non-negative density and positive
  /// atoms, rescaling both so the total mass is one. Coincident atoms are merged.
  /// `breakpoints` lists interior points where the density is not smooth.
  static SamplingMeasure from_parts(Density density, std::vector<Atom> atoms,
                                    std::vector<double> breakpoints = {}) {
    std::sort(atoms.begin(), atoms.end(),
              [](const Atom& a, const Atom& b) { return a.tau < b.tau; });
    validate_atoms(atoms, /*strict=*/false);
    std::vector<Atom> merged;
    for (const auto& atom : atoms) {
      if (!merged.empty() && merged.back().tau == atom.tau) {
        merged.back().weight += atom.weight;
      } else {
        merged.push_back(atom);
      }
    }

    double continuous = 0.0;
    if (density) {
      constexpr int probes = 1024;
      for (int i = 0; i < probes; ++i) {
        const double tau = static_cast<double>(i) / (probes - 1);
        const double v = density(tau);
        if (!(v >= 0.0) || !std::isfinite(v)) {
          throw InputError("density is negative or non-finite at tau=" + std::to_string(tau));
        }
      }
      continuous = integrate_density(density, breakpoints);
    }
    double discrete = 0.0;
    for (const auto& atom : merged) discrete += atom.weight;
    const double total = continuous + discrete;
    if (!(total > 0.0)) throw InputError("measure has zero total mass");

    for (auto& atom : merged) atom.weight /= total;
    Density scaled;
    DensityKind kind = DensityKind::zero;
    if (density && continuous > 0.0) {
      scaled = [density = std::move(density), total](double tau) { return density(tau) / total; };
      kind = DensityKind::custom;
    }
    return SamplingMeasure(kind, std::move(scaled), std::move(merged), std::move(breakpoints), {},
                           discrete / total);
  }

  /// Density value; zero outside [0, 1].
  [[nodiscard]] double density(double tau) const {
    if (!density_ || tau < 0.0 || tau > 1.0) return 0.0;
    return density_(tau);
  }

  [[nodiscard]] bool has_density() const { return kind_ != DensityKind::zero; }
  [[nodiscard]] DensityKind density_kind() const { return kind_; }
  [[nodiscard]] const TruncNormPieces& truncnorm_pieces() const { return pieces_; }
  [[nodiscard]] const std::vector<Atom>& atoms() const { return atoms_; }
  /// Interior points of (0, 1) where the density is non-smooth or sharply peaked.
  [[nodiscard]] const std::vector<double>& breakpoints() const { return breakpoints_; }

  [[nodiscard]] double continuous_mass() const {
    if (!has_density()) return 0.0;
    return integrate_density(density_, breakpoints_);
  }

  /// Total atom weight, fixed at construction from the normalization: n
  /// atoms of weight 1/n have mass exactly one even though the rounded weights
  /// may not sum to it.
  [[nodiscard]] double discrete_mass() const { return discrete_mass_; }

 private:
  SamplingMeasure(DensityKind kind, Density density, std::vector<Atom> atoms,
                  std::vector<double> breakpoints, TruncNormPieces pieces, double discrete_mass)
      : kind_(kind),
        density_(std::move(density)),
        atoms_(std::move(atoms)),
        breakpoints_(std::move(breakpoints)),
        pieces_(pieces),
        discrete_mass_(discrete_mass) {
    std::sort(breakpoints_.begin(), breakpoints_.end());
    breakpoints_.erase(std::remove_if(breakpoints_.begin(), breakpoints_.end(),
                                      [](double p) { return !(p > 0.0 && p < 1.0); }),
                       breakpoints_.end());
    breakpoints_.erase(std::unique(breakpoints_.begin(), breakpoints_.end()), breakpoints_.end());
  }

  static void validate_atoms(const std::vector<Atom>& atoms, bool strict) {
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& atom = atoms[i];
      if (!(atom.tau >= 0.0 && atom.tau <= 1.0)) {
        throw InputError("atom time " + std::to_string(atom.tau) + " outside [0, 1]");
      }
      if (!(atom.weight > 0.0) || !std::isfinite(atom.weight)) {
        throw InputError("atom weights must be positive and finite");
      }
      if (strict && i > 0 && !(atom.tau > atoms[i - 1].tau)) {
        throw InputError("atom times must be strictly increasing");
      }
    }
  }

  static double integrate_density(const Density& density, const std::vector<double>& breaks) {
    const auto pts = quad::merge_breakpoints(0.0, 1.0, breaks);
    return quad::integrate_piecewise(density, pts, {1e-13, 1e-13, 400000}).value;
  }

  DensityKind kind_;
  Density density_;
  std::vector<Atom> atoms_;
  std::vector<double> breakpoints_;
  TruncNormPieces pieces_;
  double discrete_mass_ = 0.0;
};

inline SamplingMeasure lebesgue() { return SamplingMeasure::lebesgue(); }

inline SamplingMeasure uniform_atoms(std::span<const double> taus) {
  return SamplingMeasure::uniform_atoms(taus);
}

inline SamplingMeasure from_parts(SamplingMeasure::Density density, std::vector<Atom> atoms,
                                  std::vector<double> breakpoints = {}) {
  return SamplingMeasure::from_parts(std::move(density), std::move(atoms), std::move(breakpoints));
}

/// Total mass: quadrature of the density plus the atom weights.
inline double mass_check(const SamplingMeasure& m) { return m.continuous_mass() + m.discrete_mass(); }

}  // namespace adjfit
