// Acceptance suite: one PASS/FAIL line per property, with the measured figure
// next to its limit. Exits non-zero when any property fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adjfit/adjoint.hpp"
#include "adjfit/descent.hpp"
#include "adjfit/experiment.hpp"
#include "adjfit/gradcheck.hpp"
#include "adjfit/io.hpp"
#include "oracles.hpp"

using namespace adjfit;
namespace ex = adjfit::experiment;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ContinuousSample signal_of(const VectorField& model, double noise_std, std::uint64_t seed,
                           int points = 1001) {
  const auto traj = solve_forward(model, *model.reference(), SolverConfig::with_tolerance(1e-11));
  std::mt19937_64 rng(seed);
  return make_continuous_sample(traj, 0, noise_std, points, rng);
}

ContinuousSample constant_signal(double value) {
  ContinuousSample s;
  s.grid = {0.0, 1.0};
  s.values = {value, value};
  return s;
}

// Each coordinate moved by up to 10%; zero coordinates by up to 0.1.
ParamTriple near_truth(const VectorField& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  Vector flat = model.reference()->flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = flat[i] == 0.0 ? u(rng) : flat[i] * (1.0 + u(rng));
  return ParamTriple::unflatten(flat, model.dim_state(), model.dim_param());
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome closed_form_exponential() {
  const auto start = std::chrono::steady_clock::now();
  const auto model = models::exponential();
  const auto cfg = SolverConfig::with_tolerance(1e-10);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> x0s(0.2, 3.0), thetas(-2.0, 2.0), ys(-1.0, 4.0);
  double worst = 0.0;
  for (double tau : {0.3, 0.7, 1.0}) {
    const auto sigma = SamplingMeasure::uniform_atoms({tau});
    for (int i = 0; i < 10; ++i) {
      const double x0 = x0s(rng), theta = thetas(rng), y = ys(rng);
      const ErrorFunctional h(constant_signal(y));
      const ParamTriple triple{0.0, Vector::Constant(1, x0), Vector::Constant(1, theta)};
      const Vector adj = gradient_single_point(AdjointProblem(model, triple, h, sigma, cfg));
      const auto report = make_report(adj, oracle::exponential_single_atom_gradient(x0, theta, tau, y));
      worst = std::max(worst, report.max_rel_err);
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-7 && secs < 1.0,
          "max rel err " + fmt("%.3e", worst) + " (limit 1e-7) over 30 cases in " + fmt("%.2f", secs) +
              " s (limit 1 s)"};
}

Outcome finite_difference_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = SolverConfig::with_tolerance(1e-9);
  std::vector<double> ten;
  for (int j = 0; j < 10; ++j) ten.push_back((j + 0.5) / 10);
  struct Named {
    std::string name;
    SamplingMeasure sigma;
  };
  const std::vector<Named> measures{
      {"lebesgue", lebesgue()},
      {"10 atoms", uniform_atoms(ten)},
      {"density+3 atoms",
       from_parts([](double t) { return 1.0 + 0.5 * std::sin(6.0 * t); }, {{0.2, 0.1}, {0.55, 0.2}, {1.0, 0.15}})},
  };
  bool pass = true;
  std::ostringstream detail;
  for (const auto& model : {models::si(), models::lotka_volterra()}) {
    const ErrorFunctional h(signal_of(model, 0.1, 7));
    std::mt19937_64 rng(202);
    for (const auto& m : measures) {
      double worst = 0.0, worst_abs_tiny = 0.0;
      bool ok = true;
      for (int i = 0; i < 20; ++i) {
        const auto report = compare(near_truth(model, rng), model, h, m.sigma, cfg, 1e-5);
        ok = ok && report.within(1e-4, 1e-7, 1e-6);
        for (Eigen::Index c = 0; c < report.rel_err.size(); ++c) {
          const bool tiny = std::abs(report.adjoint_grad[c]) < 1e-6 && std::abs(report.fd_grad[c]) < 1e-6;
          if (tiny) {
            worst_abs_tiny = std::max(worst_abs_tiny, report.abs_err[c]);
          } else {
            worst = std::max(worst, report.rel_err[c]);
          }
        }
      }
      pass = pass && ok;
      detail << model.name() << "/" << m.name << " rel " << fmt("%.2e", worst) << " abs(near-zero) "
             << fmt("%.2e", worst_abs_tiny) << "; ";
    }
  }
  const double secs = seconds_since(start);
  detail << "limits rel 1e-4, abs 1e-7, runtime " << fmt("%.1f", secs) << " s (limit 120 s)";
  return {pass && secs < 120.0, detail.str()};
}

Outcome single_point_semantics() {
  const double tau = 0.4;
  const auto cfg = SolverConfig::with_tolerance(1e-9);
  const auto sigma = SamplingMeasure::uniform_atoms({tau});
  double worst_norm = 0.0, worst_jump = 0.0;
  bool jumps_ok = true;
  for (const auto& model : {models::si(), models::lotka_volterra()}) {
    const ErrorFunctional h(signal_of(model, 0.1, 3));
    std::mt19937_64 rng(303);
    const AdjointProblem prob(model, near_truth(model, rng), h, sigma, cfg);
    const auto sol = solve_adjoint(prob);
    for (int i = 1; i <= 200; ++i) {
      worst_norm = std::max(worst_norm, sol.state_at(tau + (1.0 - tau) * i / 200.0).norm());
    }
    const Vector g = error_gradient(h, tau, prob.forward().eval(prob.triple().t0 + tau), model.dim_state(),
                                    model.dim_param());
    jumps_ok = jumps_ok && sol.jumps.size() == 1 && sol.jumps[0].tau == tau;
    if (!sol.jumps.empty()) {
      const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
      worst_jump = std::max(worst_jump, (sol.jumps[0].size - g).cwiseAbs().maxCoeff() / scale);
    }
  }
  const double machine = 4 * std::numeric_limits<double>::epsilon();
  return {jumps_ok && worst_norm <= 1e-9 && worst_jump <= machine,
          "max |a| on (0.4,1] " + fmt("%.3e", worst_norm) + " (limit 1e-9), jump vs g(0.4) " +
              fmt("%.3e", worst_jump) + " (limit 4 eps)"};
}

Outcome superposition() {
  const auto cfg = SolverConfig::with_tolerance(1e-11);
  const std::vector<Atom> atoms{{0.0, 0.1}, {0.13, 0.25}, {0.4, 0.05}, {0.61, 0.2}, {0.87, 0.3}, {1.0, 0.1}};
  const auto sigma = from_parts(nullptr, atoms);
  double worst = 0.0;
  for (const auto& model : {models::si(), models::lotka_volterra()}) {
    const ErrorFunctional h(signal_of(model, 0.1, 4));
    std::mt19937_64 rng(404);
    for (int i = 0; i < 3; ++i) {
      const auto triple = near_truth(model, rng);
      const Vector whole = gradient(model, triple, h, sigma, cfg);
      Vector sum = Vector::Zero(whole.size());
      for (const auto& atom : sigma.atoms()) {
        sum += atom.weight * gradient(model, triple, h, SamplingMeasure::uniform_atoms({atom.tau}), cfg);
      }
      worst = std::max(worst, (whole - sum).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-8, "max |grad - sum of weighted single-atom grads| " + fmt("%.3e", worst) + " (limit 1e-8)"};
}

Outcome endpoint_identity() {
  const auto cfg = SolverConfig::with_tolerance(1e-9);
  bool exact = true, zero = true;
  std::vector<double> with_one{0.1, 0.5, 1.0};
  std::vector<double> without_one{0.1, 0.5, 0.999};
  for (const auto& model : {models::si(), models::lotka_volterra()}) {
    const ErrorFunctional h(signal_of(model, 0.1, 5));
    std::mt19937_64 rng(505);
    const auto triple = near_truth(model, rng);
    for (const auto& sigma : {uniform_atoms(with_one), from_parts([](double) { return 1.0; }, {{1.0, 0.3}}),
                              SamplingMeasure::uniform_atoms({1.0})}) {
      const AdjointProblem prob(model, triple, h, sigma, cfg);
      const auto sol = solve_adjoint(prob);
      const Vector expected = sigma.atoms().back().weight * prob.source(1.0);
      exact = exact && sol.terminal == expected && sol.segments.front().start == expected;
    }
    for (const auto& sigma : {lebesgue(), uniform_atoms(without_one)}) {
      const auto sol = solve_adjoint(AdjointProblem(model, triple, h, sigma, cfg));
      zero = zero && sol.terminal.isZero(0.0) && sol.segments.front().start.isZero(0.0);
    }
  }
  return {exact && zero, std::string("a(1) == weight(1) g(1) bitwise: ") + (exact ? "yes" : "no") +
                             ", a(1) == 0 without atom at 1: " + (zero ? "yes" : "no")};
}

Outcome descent_property() {
  bool pass = true;
  std::ostringstream detail;
  for (const char* name : {"si", "lotka_volterra"}) {
    const auto start = std::chrono::steady_clock::now();
    ex::ExperimentConfig cfg;
    cfg.model = name;
    cfg.noise_std = 0.0;
    cfg.perturb_std = 0.05;
    cfg.steps = 100;
    cfg.seed = 2024;
    const auto reps = ex::fit_repetitions(cfg, ex::generate(cfg));
    int good = 0;
    double worst_ratio = 0.0;
    for (const auto& r : reps) {
      if (!r.trace) continue;
      const double ratio = r.trace->records.back().loss / r.trace->records.front().loss;
      worst_ratio = std::max(worst_ratio, ratio);
      good += ratio <= 0.1;
    }

    cfg.noise_std = 0.1;
    cfg.steps = 20;
    const auto noisy = ex::fit_repetitions(cfg, ex::generate(cfg));
    bool monotone = true;
    double previous = INFINITY;
    for (int s = 0; s <= 20; ++s) {
      std::vector<double> losses;
      for (const auto& r : noisy) {
        if (r.trace) losses.push_back(r.trace->records[static_cast<std::size_t>(s)].loss);
      }
      if (losses.size() != noisy.size()) {
        monotone = false;
        break;
      }
      std::sort(losses.begin(), losses.end());
      const std::size_t n = losses.size();
      const double median = n % 2 ? losses[n / 2] : 0.5 * (losses[n / 2 - 1] + losses[n / 2]);
      monotone = monotone && median <= previous;
      previous = median;
    }
    const double secs = seconds_since(start);
    pass = pass && good >= 3 && monotone && secs < 300.0;
    detail << name << ": " << good << "/4 reps reach ratio <= 0.1 (worst " << fmt("%.3e", worst_ratio)
           << "), noisy median non-increasing: " << (monotone ? "yes" : "no") << ", " << fmt("%.1f", secs)
           << " s; ";
  }
  detail << "limits >= 3/4, < 300 s per model";
  return {pass, detail.str()};
}

Outcome discrete_limit() {
  // The loss at the true triple scales like (time_std * x')^2; a partition
  // of 1000 subintervals brings w/16 below the bound.
  constexpr int intervals = 1000;
  const double w = 1.0 / intervals;
  const auto tol = SolverConfig::with_tolerance(1e-10);
  bool pass = true;
  std::ostringstream detail;
  for (const auto& model : {models::si(), models::lotka_volterra()}) {
    const auto truth = *model.reference();
    const auto traj = solve_forward(model, truth, tol);
    double previous = INFINITY;
    bool monotone = true;
    detail << model.name() << " n=" << intervals << ":";
    for (int div : {4, 8, 16}) {
      std::mt19937_64 rng(606);
      const auto [sample, sigma] = make_discrete_sample(traj, 0, intervals, w / div, 0.0, rng);
      const double loss = evaluate_loss(traj, truth.t0, ErrorFunctional(sample), sigma, tol).value;
      monotone = monotone && loss < previous;
      previous = loss;
      detail << " w/" << div << " " << fmt("%.3e", loss);
    }
    pass = pass && monotone && previous <= 1e-6;
    detail << (monotone ? " (monotone); " : " (NOT monotone); ");
  }
  detail << "limit 1e-6 at w/16";
  return {pass, detail.str()};
}

Outcome solver_quality() {
  const auto lv = models::lotka_volterra();
  const auto truth = *lv.reference();
  const auto traj = solve_forward(lv, truth, SolverConfig::with_tolerance(1e-9));
  const double v0 = oracle::lotka_volterra_invariant(truth.x0, truth.theta);
  double drift = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    drift = std::max(drift, std::abs(oracle::lotka_volterra_invariant(traj.eval(i / 2000.0), truth.theta) - v0));
  }
  for (const auto& x : traj.states()) {
    drift = std::max(drift, std::abs(oracle::lotka_volterra_invariant(x, truth.theta) - v0));
  }

  const auto cfg = SolverConfig::with_tolerance(1e-10);
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int passed = 0, total = 0;
  double worst = 0.0;
  for (const auto& model : {models::exponential(), models::si(), models::lotka_volterra()}) {
    for (int i = 0; i < 50; ++i) {
      const double s = u(rng), t = (1.0 - s) * u(rng), t0 = u(rng) - 0.5;
      const auto ref = *model.reference();
      const double err = flow_compose_error(model, t0, ref.x0, ref.theta, s, t, cfg);
      worst = std::max(worst, err);
      passed += err <= 1e-7;
      ++total;
    }
  }
  return {drift <= 1e-6 && passed == total,
          "LV invariant drift " + fmt("%.3e", drift) + " (limit 1e-6); group property " + std::to_string(passed) +
              "/" + std::to_string(total) + " splits, worst " + fmt("%.3e", worst) + " (limit 1e-7)"};
}

std::vector<std::string> trace_files(const ex::ExperimentConfig& cfg, const io::DataFile& data) {
  std::vector<std::string> out;
  const auto reps = ex::fit_repetitions(cfg, data);
  for (const auto& r : reps) {
    std::ostringstream os;
    if (r.trace) io::write_trace_csv(os, *r.trace);
    out.push_back(os.str());
  }
  out.push_back(ex::summary_csv(reps));
  return out;
}

Outcome determinism() {
  bool pass = true;
  std::ostringstream detail;
  for (bool stochastic : {false, true}) {
    ex::ExperimentConfig cfg;
    cfg.model = "lotka_volterra";
    cfg.seed = 99;
    cfg.steps = stochastic ? 15 : 40;
    cfg.stochastic_measure = stochastic;
    setenv("ADJFIT_THREADS", "1", 1);
    const auto first = trace_files(cfg, ex::generate(cfg));
    setenv("ADJFIT_THREADS", "4", 1);
    const auto second = trace_files(cfg, ex::generate(cfg));
    const bool same = first == second && !first.front().empty();
    pass = pass && same;
    detail << (stochastic ? "stochastic measure" : "fixed measure") << ": " << (same ? "identical" : "DIFFERENT")
           << "; ";
  }
  unsetenv("ADJFIT_THREADS");
  detail << "two runs, 1 vs 4 threads, 4 traces + summary each";
  return {pass, detail.str()};
}

}  // namespace

int main() {
  struct Check {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Check> checks{
      {"closed-form exponential gradient", closed_form_exponential},
      {"finite-difference gradient oracle", finite_difference_oracle},
      {"single-point adjoint semantics", single_point_semantics},
      {"superposition over atoms", superposition},
      {"terminal value identity", endpoint_identity},
      {"descent reduces loss", descent_property},
      {"discrete limit of weighted loss", discrete_limit},
      {"solver invariant and group property", solver_quality},
      {"byte-identical traces", determinism},
  };
  int failures = 0;
  int index = 0;
  for (const auto& check : checks) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(start);
    failures += !outcome.pass;
    std::printf("[%s] %d %s: %s [%.2f s]\n", outcome.pass ? "PASS" : "FAIL", index, check.name,
                outcome.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu acceptance checks passed\n", index - failures, checks.size());
  return failures == 0 ? 0 : 1;
}
