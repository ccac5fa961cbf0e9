#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <utility>
#include <variant>
#include <vector>

#include "adjfit/errors.hpp"
#include "adjfit/measure.hpp"
#include "adjfit/odesolve.hpp"
#include "adjfit/truncnorm.hpp"

namespace adjfit {

enum class NoiseMode {
  /// Noise drawn once at the grid points and interpolated.
  frozen,
  /// Fresh noise on every evaluation of the signal; the loss becomes random.
  per_evaluation,
};

namespace detail {

// Shared source of fresh measurement noise for the per-evaluation mode.
class NoiseSource {
 public:
  NoiseSource(double std, std::uint64_t seed) : dist_(0.0, std), rng_(seed) {}
  double draw() {
    std::lock_guard lock(mutex_);
    return dist_(rng_);
  }

 private:
  std::normal_distribution<double> dist_;
  std::mt19937_64 rng_;
  std::mutex mutex_;
};

}  // namespace detail

/// Noisy observation of one state component on a uniform grid over [0, 1],
/// linearly interpolated between grid points.
struct ContinuousSample {
  std::vector<double> grid;
  std::vector<double> values;
  int obs_index = 0;
  double noise_std = 0.0;
  NoiseMode noise_mode = NoiseMode::frozen;
  std::shared_ptr<detail::NoiseSource> fresh_noise;

  [[nodiscard]] double value_at(double tau) const {
    double v = interpolate(tau);
    if (fresh_noise) v += fresh_noise->draw();
    return v;
  }

  /// Interior grid points, where the interpolant has kinks.
  [[nodiscard]] std::vector<double> knots() const {
    if (grid.size() <= 2) return {};
    return {grid.begin() + 1, grid.end() - 1};
  }

  void enable_fresh_noise(std::uint64_t seed) {
    noise_mode = NoiseMode::per_evaluation;
    fresh_noise = std::make_shared<detail::NoiseSource>(noise_std, seed);
  }

 private:
  [[nodiscard]] double interpolate(double tau) const {
    if (tau <= grid.front()) return values.front();
    if (tau >= grid.back()) return values.back();
    const auto it = std::upper_bound(grid.begin(), grid.end(), tau);
    const std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
    const double w = (tau - grid[i]) / (grid[i + 1] - grid[i]);
    return (1.0 - w) * values[i] + w * values[i + 1];
  }
};

/// One noisy observation per equal subinterval, held constant across it.
struct DiscreteSample {
  int n_intervals = 1;
  std::vector<double> sample_times;
  std::vector<double> sample_values;
  int obs_index = 0;
  double time_std = 0.0;
  double noise_std = 0.0;

  [[nodiscard]] double width() const { return 1.0 / n_intervals; }

  [[nodiscard]] std::vector<double> boundaries() const {
    std::vector<double> b(static_cast<std::size_t>(n_intervals) + 1);
    for (int j = 0; j <= n_intervals; ++j) b[j] = static_cast<double>(j) / n_intervals;
    return b;
  }

  [[nodiscard]] int interval_of(double tau) const {
    return std::clamp(static_cast<int>(std::floor(tau * n_intervals)), 0, n_intervals - 1);
  }

  [[nodiscard]] double value_at(double tau) const { return sample_values[interval_of(tau)]; }

  [[nodiscard]] std::vector<double> knots() const {
    auto b = boundaries();
    return {b.begin() + 1, b.end() - 1};
  }
};

using Sample = std::variant<ContinuousSample, DiscreteSample>;

inline double sample_value(const Sample& s, double tau) {
  return std::visit([tau](const auto& v) { return v.value_at(tau); }, s);
}

inline std::vector<double> sample_knots(const Sample& s) {
  return std::visit([](const auto& v) { return v.knots(); }, s);
}

inline int sample_obs_index(const Sample& s) {
  return std::visit([](const auto& v) { return v.obs_index; }, s);
}

namespace detail {

inline void check_obs_index(const Trajectory& traj, int obs_index) {
  if (obs_index < 0 || obs_index >= traj.dim()) {
    throw InputError("observed component " + std::to_string(obs_index) +
                     " out of range for state dimension " + std::to_string(traj.dim()));
  }
}

}  // namespace detail

/// Observes component `obs_index` of a trajectory spanning [t0, t0 + 1] on a
/// uniform grid of `grid_size` relative times, adding i.i.d. N(0, noise_std^2)
/// noise at each grid point.
template <typename Rng>
ContinuousSample make_continuous_sample(const Trajectory& traj, int obs_index, double noise_std,
                                        int grid_size, Rng& rng,
                                        NoiseMode mode = NoiseMode::frozen) {
  detail::check_obs_index(traj, obs_index);
  if (grid_size < 2) throw InputError("grid_size must be at least 2");
  if (noise_std < 0.0) throw InputError("noise_std must be non-negative");
  const double t0 = traj.t_start();
  ContinuousSample out;
  out.obs_index = obs_index;
  out.noise_std = noise_std;
  out.grid.resize(grid_size);
  out.values.resize(grid_size);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < grid_size; ++i) {
    const double tau = static_cast<double>(i) / (grid_size - 1);
    out.grid[i] = tau;
    out.values[i] = traj.eval(t0 + tau)[obs_index];
    if (mode == NoiseMode::frozen && noise_std > 0.0) out.values[i] += noise_std * noise(rng);
  }
  if (mode == NoiseMode::per_evaluation) {
    std::uniform_int_distribution<std::uint64_t> seeds;
    out.enable_fresh_noise(seeds(rng));
  }
  return out;
}

/// Draws one observation time per equal subinterval from a truncated normal
/// centred at its midpoint, and returns the piecewise-constant record together
/// with the measure whose density on subinterval j is (1/n) times that pdf.
template <typename Rng>
std::pair<DiscreteSample, SamplingMeasure> make_discrete_sample(const Trajectory& traj,
                                                                int obs_index, int n_intervals,
                                                                double time_std, double noise_std,
                                                                Rng& rng) {
  detail::check_obs_index(traj, obs_index);
  if (n_intervals < 1) throw InputError("n_intervals must be at least 1");
  if (!(time_std > 0.0)) throw InputError("time_std must be positive");
  if (noise_std < 0.0) throw InputError("noise_std must be non-negative");
  const double t0 = traj.t_start();
  DiscreteSample out;
  out.n_intervals = n_intervals;
  out.obs_index = obs_index;
  out.time_std = time_std;
  out.noise_std = noise_std;
  const double width = 1.0 / n_intervals;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int j = 0; j < n_intervals; ++j) {
    const double lo = j * width, hi = (j + 1) * width;
    double tau = truncnorm_sample(TruncNormSpec{lo + 0.5 * width, time_std, lo, hi}, rng);
    if (tau <= lo) tau = std::nextafter(lo, hi);
    if (tau >= hi) tau = std::nextafter(hi, lo);
    double value = traj.eval(t0 + tau)[obs_index];
    if (noise_std > 0.0) value += noise_std * noise(rng);
    out.sample_times.push_back(tau);
    out.sample_values.push_back(value);
  }
  return {std::move(out), SamplingMeasure::piecewise_truncnorm(n_intervals, time_std)};
}

}  // namespace adjfit
