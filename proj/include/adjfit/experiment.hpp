#pragma once

// End-to-end experiment drivers behind the `adjfit` command-line tool:
// synthesize data from a built-in model, fit perturbed triples over several
// seeded repetitions, and check adjoint gradients against finite differences.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "adjfit/descent.hpp"
#include "adjfit/gradcheck.hpp"
#include "adjfit/io.hpp"
#include "adjfit/loss.hpp"
#include "adjfit/models.hpp"
#include "adjfit/sampling.hpp"

namespace adjfit::experiment {

struct ExperimentConfig {
  std::string model = "si";
  std::string mode = "continuous";
  int obs_index = 0;
  double noise_std = 0.1;
  std::string noise_mode = "frozen";
  int grid_size = 1001;
  int n_intervals = 20;
  /// Zero selects the default, a sixth of the subinterval width.
  double time_std = 0.0;
  double data_tol = 1e-10;
  double perturb_std = 0.05;
  int repetitions = 4;
  std::uint64_t seed = 1;

  int steps = 100;
  double learning_rate = 1e-2;
  bool line_search = true;
  int eval_loss_every = 1;
  bool stochastic_measure = false;
  int n_bumps = 5;
  /// Comma-separated coordinate names to hold fixed, e.g. "t0,theta_1".
  std::string frozen;
  double fit_tol = 1e-6;

  std::string measure = "data";  ///< data | lebesgue | atoms
  int atoms = 10;
  double grad_tol = 1e-9;
  double fd_step = 1e-5;
  double threshold = 1e-4;

  [[nodiscard]] double effective_time_std() const {
    return time_std > 0.0 ? time_std : 1.0 / (6.0 * n_intervals);
  }

  void validate() const {
    (void)builtin_model(model);
    if (mode != "continuous" && mode != "discrete") throw InputError("mode must be continuous or discrete");
    if (noise_mode != "frozen" && noise_mode != "per_evaluation") {
      throw InputError("noise_mode must be frozen or per_evaluation");
    }
    if (noise_std < 0.0 || perturb_std < 0.0) throw InputError("noise and perturbation std must be non-negative");
    if (grid_size < 2) throw InputError("grid_size must be at least 2");
    if (n_intervals < 1) throw InputError("intervals must be at least 1");
    if (repetitions < 1) throw InputError("repetitions must be at least 1");
    if (measure != "data" && measure != "lebesgue" && measure != "atoms") {
      throw InputError("measure must be data, lebesgue or atoms");
    }
    if (atoms < 1) throw InputError("atoms must be at least 1");
    if (!(fd_step > 0.0) || !(threshold > 0.0)) throw InputError("fd_step and threshold must be positive");
  }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  using detail::read_key;
  read_key(j, "model", c.model);
  read_key(j, "mode", c.mode);
  read_key(j, "obs_index", c.obs_index);
  read_key(j, "noise_std", c.noise_std);
  read_key(j, "noise_mode", c.noise_mode);
  read_key(j, "grid_size", c.grid_size);
  read_key(j, "intervals", c.n_intervals);
  read_key(j, "time_std", c.time_std);
  read_key(j, "data_tol", c.data_tol);
  read_key(j, "perturb_std", c.perturb_std);
  read_key(j, "repetitions", c.repetitions);
  read_key(j, "seed", c.seed);
  read_key(j, "steps", c.steps);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "line_search", c.line_search);
  read_key(j, "eval_loss_every", c.eval_loss_every);
  read_key(j, "stochastic_measure", c.stochastic_measure);
  read_key(j, "n_bumps", c.n_bumps);
  read_key(j, "frozen", c.frozen);
  read_key(j, "fit_tol", c.fit_tol);
  read_key(j, "measure", c.measure);
  read_key(j, "atoms", c.atoms);
  read_key(j, "grad_tol", c.grad_tol);
  read_key(j, "fd_step", c.fd_step);
  read_key(j, "threshold", c.threshold);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"model", c.model},
          {"mode", c.mode},
          {"obs_index", c.obs_index},
          {"noise_std", c.noise_std},
          {"noise_mode", c.noise_mode},
          {"grid_size", c.grid_size},
          {"intervals", c.n_intervals},
          {"time_std", c.time_std},
          {"data_tol", c.data_tol},
          {"perturb_std", c.perturb_std},
          {"repetitions", c.repetitions},
          {"seed", c.seed},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"line_search", c.line_search},
          {"eval_loss_every", c.eval_loss_every},
          {"stochastic_measure", c.stochastic_measure},
          {"n_bumps", c.n_bumps},
          {"frozen", c.frozen},
          {"fit_tol", c.fit_tol},
          {"measure", c.measure},
          {"atoms", c.atoms},
          {"grad_tol", c.grad_tol},
          {"fd_step", c.fd_step},
          {"threshold", c.threshold}};
}

inline ParamTriple truth_of(const VectorField& model) {
  if (!model.reference()) throw InputError("model '" + model.name() + "' has no reference triple");
  return *model.reference();
}

/// Solves the reference problem and samples its observed component.
inline io::DataFile generate(const ExperimentConfig& cfg) {
  cfg.validate();
  const VectorField model = builtin_model(cfg.model);
  const ParamTriple truth = truth_of(model);
  const Trajectory traj = solve_forward(model, truth, SolverConfig::with_tolerance(cfg.data_tol));
  std::mt19937_64 rng(cfg.seed);
  io::DataFile data{cfg.model, {}, cfg.seed, truth};
  if (cfg.mode == "continuous") {
    const NoiseMode mode = cfg.noise_mode == "frozen" ? NoiseMode::frozen : NoiseMode::per_evaluation;
    data.sample = make_continuous_sample(traj, cfg.obs_index, cfg.noise_std, cfg.grid_size, rng, mode);
  } else {
    data.sample = make_discrete_sample(traj, cfg.obs_index, cfg.n_intervals, cfg.effective_time_std(),
                                       cfg.noise_std, rng)
                      .first;
  }
  return data;
}

/// Independent generator for repetition `rep` of an experiment seeded with `seed`.
inline std::mt19937_64 repetition_rng(std::uint64_t seed, int rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(rep), 0x5eedU};
  return std::mt19937_64(seq);
}

inline std::vector<bool> parse_frozen(const std::string& spec, const VectorField& model) {
  std::vector<bool> mask;
  if (spec.empty()) return mask;
  const auto names = io::triple_column_names(model.dim_state(), model.dim_param());
  mask.assign(names.size(), false);
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto it = std::find(names.begin(), names.end(), item);
    if (it == names.end()) throw InputError("unknown coordinate '" + item + "' in frozen list");
    mask[static_cast<std::size_t>(it - names.begin())] = true;
  }
  return mask;
}

inline FitConfig fit_config(const ExperimentConfig& cfg, const VectorField& model, std::uint64_t seed) {
  FitConfig fc;
  fc.steps = cfg.steps;
  fc.learning_rate = cfg.learning_rate;
  fc.line_search = cfg.line_search;
  fc.eval_loss_every = cfg.eval_loss_every;
  fc.seed = seed;
  fc.stochastic_measure = cfg.stochastic_measure;
  fc.n_bumps = cfg.n_bumps;
  fc.frozen_coords = parse_frozen(cfg.frozen, model);
  fc.solver = SolverConfig::with_tolerance(cfg.fit_tol);
  return fc;
}

struct Repetition {
  int index = 0;
  ParamTriple start;
  std::optional<FitTrace> trace;
  std::string error;
};

/// Number of worker threads: ADJFIT_THREADS when set, else the hardware count.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("ADJFIT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

template <typename Job>
void run_parallel(int count, Job&& job) {
  const unsigned workers = std::min<unsigned>(thread_budget(), static_cast<unsigned>(count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Runs `cfg.repetitions` fits, each from its own perturbation of the true
/// triple. Failures are reported per repetition.
inline std::vector<Repetition> fit_repetitions(const ExperimentConfig& cfg, const io::DataFile& data) {
  cfg.validate();
  const std::string model_name = data.model.empty() ? cfg.model : data.model;
  const VectorField model = builtin_model(model_name);
  const ParamTriple truth = data.truth.value_or(truth_of(model));
  model.check_triple(truth);
  const ErrorFunctional h(data.sample);
  if (h.obs_index < 0 || h.obs_index >= model.dim_state()) {
    throw InputError("data observes a component the model does not have");
  }
  const SamplingMeasure sigma = io::companion_measure(data.sample);

  std::vector<Repetition> reps(static_cast<std::size_t>(cfg.repetitions));
  run_parallel(cfg.repetitions, [&](int r) {
    auto rng = repetition_rng(cfg.seed, r);
    Repetition& rep = reps[static_cast<std::size_t>(r)];
    rep.index = r;
    rep.start = perturb(truth, cfg.perturb_std, rng);
    try {
      rep.trace = fit(model, h, sigma, rep.start, fit_config(cfg, model, rng()));
    } catch (const std::exception& e) {
      rep.error = e.what();
    }
  });
  return reps;
}

/// step,min_loss,median_loss,max_loss over the successful repetitions.
inline std::string summary_csv(const std::vector<Repetition>& reps) {
  std::ostringstream os;
  os << "step,min_loss,median_loss,max_loss\n";
  std::size_t rows = 0;
  for (const auto& r : reps) {
    if (r.trace) rows = std::max(rows, r.trace->records.size());
  }
  for (std::size_t s = 0; s < rows; ++s) {
    std::vector<double> losses;
    for (const auto& r : reps) {
      if (r.trace && s < r.trace->records.size() && !std::isnan(r.trace->records[s].loss)) {
        losses.push_back(r.trace->records[s].loss);
      }
    }
    os << s;
    if (losses.empty()) {
      os << ",nan,nan,nan\n";
      continue;
    }
    std::sort(losses.begin(), losses.end());
    const std::size_t n = losses.size();
    const double median = n % 2 ? losses[n / 2] : 0.5 * (losses[n / 2 - 1] + losses[n / 2]);
    os << ',' << io::format_double(losses.front()) << ',' << io::format_double(median) << ','
       << io::format_double(losses.back()) << '\n';
  }
  return os.str();
}

/// Predicted observed-component curves at the requested steps, for plotting.
inline nlohmann::json snapshots_json(const std::vector<Repetition>& reps, const io::DataFile& data,
                                     const std::vector<int>& steps, const ExperimentConfig& cfg) {
  const VectorField model = builtin_model(data.model.empty() ? cfg.model : data.model);
  const int obs = sample_obs_index(data.sample);
  constexpr int points = 201;
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / (points - 1);

  nlohmann::json out;
  out["grid"] = grid;
  out["data"] = io::data_to_json(data);
  out["repetitions"] = nlohmann::json::array();
  const SolverConfig solver = SolverConfig::with_tolerance(cfg.fit_tol);
  for (const auto& rep : reps) {
    nlohmann::json jr{{"repetition", rep.index}, {"snapshots", nlohmann::json::array()}};
    if (rep.trace) {
      for (int s : steps) {
        if (s < 0 || s >= static_cast<int>(rep.trace->records.size())) continue;
        const ParamTriple& triple = rep.trace->records[static_cast<std::size_t>(s)].triple;
        std::vector<double> values(points);
        const Trajectory traj = solve_forward(model, triple, solver);
        for (int i = 0; i < points; ++i) values[i] = traj.eval(triple.t0 + grid[i])[obs];
        jr["snapshots"].push_back({{"step", s}, {"triple", io::triple_to_json(triple)}, {"values", values}});
      }
    } else {
      jr["error"] = rep.error;
    }
    out["repetitions"].push_back(std::move(jr));
  }
  return out;
}

struct GradcheckResult {
  ParamTriple triple;
  GradReport report;
  bool passed = false;
};

inline SamplingMeasure gradcheck_measure(const ExperimentConfig& cfg, const Sample& sample) {
  if (cfg.measure == "lebesgue") return SamplingMeasure::lebesgue();
  if (cfg.measure == "atoms") {
    std::vector<double> taus(static_cast<std::size_t>(cfg.atoms));
    for (int j = 0; j < cfg.atoms; ++j) taus[j] = (j + 0.5) / cfg.atoms;
    return SamplingMeasure::uniform_atoms(taus);
  }
  return io::companion_measure(sample);
}

/// Compares adjoint and finite-difference gradients at a perturbed triple.
inline GradcheckResult gradcheck(const ExperimentConfig& cfg, const io::DataFile& data) {
  cfg.validate();
  const VectorField model = builtin_model(data.model.empty() ? cfg.model : data.model);
  const ParamTriple truth = data.truth.value_or(truth_of(model));
  const ErrorFunctional h(data.sample);
  const SamplingMeasure sigma = gradcheck_measure(cfg, data.sample);
  auto rng = repetition_rng(cfg.seed, -1);
  GradcheckResult out;
  out.triple = perturb(truth, cfg.perturb_std, rng);
  out.report = compare(out.triple, model, h, sigma, SolverConfig::with_tolerance(cfg.grad_tol), cfg.fd_step);
  // Coordinates where both gradients are below 1e-6 are pure finite-difference
  // noise in relative terms; judge those by absolute error instead.
  out.passed = out.report.within(cfg.threshold, 1e-7, 1e-6);
  return out;
}

}  // namespace adjfit::experiment
