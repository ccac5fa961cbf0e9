// adjfit: generate synthetic trajectory data, fit ODE triples to it by
// adjoint-gradient descent, and check adjoint gradients.
//
// Exit codes: 0 success, 1 usage/invalid input, 2 numerical failure, 3 I/O.

#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adjfit/experiment.hpp"

namespace {

using adjfit::experiment::ExperimentConfig;
namespace io = adjfit::io;
namespace ex = adjfit::experiment;

enum ExitCode { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

// Values from --config become the defaults that individual flags override.
ExperimentConfig initial_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    std::string path;
    if (arg == "--config" && i + 1 < argc) {
      path = argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      path = arg.substr(std::strlen("--config="));
    }
    if (!path.empty()) return ex::config_from_json(io::read_json_file(path));
  }
  return {};
}

void add_data_options(CLI::App& cmd, ExperimentConfig& cfg) {
  cmd.add_option("--model", cfg.model, "si | lotka_volterra | exponential");
  cmd.add_option("--mode", cfg.mode, "continuous | discrete");
  cmd.add_option("--obs-index", cfg.obs_index, "Observed state component");
  cmd.add_option("--noise-std", cfg.noise_std, "Std of additive measurement noise");
  cmd.add_option("--noise-mode", cfg.noise_mode, "frozen | per_evaluation");
  cmd.add_option("--grid-size", cfg.grid_size, "Grid points of continuous data");
  cmd.add_option("--intervals", cfg.n_intervals, "Subintervals of discrete data");
  cmd.add_option("--time-std", cfg.time_std, "Std of observation times (default: width/6)");
  cmd.add_option("--data-tol", cfg.data_tol, "Solver tolerance for data generation");
}

void add_fit_options(CLI::App& cmd, ExperimentConfig& cfg) {
  cmd.add_option("--steps", cfg.steps, "Gradient descent steps");
  cmd.add_option("--learning-rate", cfg.learning_rate, "Initial step length");
  cmd.add_flag("!--no-line-search", cfg.line_search, "Fixed steps instead of backtracking");
  cmd.add_option("--eval-loss-every", cfg.eval_loss_every, "Loss evaluation period without line search");
  cmd.add_flag("--stochastic-measure", cfg.stochastic_measure, "Draw a random measure per step");
  cmd.add_option("--n-bumps", cfg.n_bumps, "Bumps per random measure");
  cmd.add_option("--frozen", cfg.frozen, "Coordinates to hold fixed, e.g. t0,theta_1");
  cmd.add_option("--fit-tol", cfg.fit_tol, "Solver tolerance during descent");
  cmd.add_option("--repetitions", cfg.repetitions, "Independent seeded repetitions");
}

std::string triple_line(const adjfit::ParamTriple& t) {
  std::ostringstream os;
  os << "t0=" << io::format_double(t.t0) << " x0=[";
  for (Eigen::Index i = 0; i < t.x0.size(); ++i) os << (i ? "," : "") << io::format_double(t.x0[i]);
  os << "] theta=[";
  for (Eigen::Index i = 0; i < t.theta.size(); ++i) os << (i ? "," : "") << io::format_double(t.theta[i]);
  os << "]";
  return os.str();
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& output) {
  const io::DataFile data = ex::generate(cfg);
  io::write_text_file(output, io::data_to_json(data).dump(1) + "\n");
  std::cout << "model " << data.model << "\n";
  std::cout << "truth " << triple_line(*data.truth) << "\n";
  std::cout << "wrote " << output << "\n";
  return kOk;
}

int cmd_fit(const ExperimentConfig& cfg, const std::string& data_path, const std::string& out_dir,
            const std::vector<int>& snapshots) {
  const io::DataFile data = io::data_from_json(io::read_json_file(data_path));
  const auto reps = ex::fit_repetitions(cfg, data);

  std::filesystem::create_directories(out_dir);
  int failures = 0;
  for (const auto& rep : reps) {
    if (!rep.trace) {
      ++failures;
      std::cerr << "repetition " << rep.index << " failed: " << rep.error << "\n";
      continue;
    }
    std::ostringstream csv;
    io::write_trace_csv(csv, *rep.trace);
    const auto path = std::filesystem::path(out_dir) / ("trace_rep" + std::to_string(rep.index) + ".csv");
    io::write_text_file(path.string(), csv.str());
    const auto& first = rep.trace->records.front();
    const auto& last = rep.trace->records.back();
    std::cout << "repetition " << rep.index << ": loss " << io::format_double(first.loss) << " -> "
              << io::format_double(last.loss) << "  final " << triple_line(last.triple) << "\n";
  }
  if (failures == static_cast<int>(reps.size())) return kNumerical;
  io::write_text_file((std::filesystem::path(out_dir) / "summary.csv").string(), ex::summary_csv(reps));
  if (!snapshots.empty()) {
    io::write_text_file((std::filesystem::path(out_dir) / "snapshots.json").string(),
                        ex::snapshots_json(reps, data, snapshots, cfg).dump() + "\n");
  }
  std::cout << "wrote " << out_dir << "\n";
  return kOk;
}

int cmd_gradcheck(const ExperimentConfig& cfg, const std::string& data_path) {
  const io::DataFile data = data_path.empty() ? ex::generate(cfg) : io::data_from_json(io::read_json_file(data_path));
  const auto model = adjfit::builtin_model(data.model.empty() ? cfg.model : data.model);
  const auto result = ex::gradcheck(cfg, data);
  std::cout << "triple " << triple_line(result.triple) << "\n";
  adjfit::print_report(std::cout, model, result.report);
  std::cout << (result.passed ? "PASS" : "FAIL") << " (threshold " << io::format_double(cfg.threshold) << ")\n";
  return result.passed ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit ODE initial time, state and parameters to trajectory data via the adjoint equation"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path, output, data_path, out_dir = ".";
  std::vector<int> snapshots;
  try {
    cfg = initial_config(argc, argv);
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  auto* gen = app.add_subcommand("generate", "Write a synthetic measurement data file");
  gen->add_option("--config", config_path, "JSON experiment config");
  add_data_options(*gen, cfg);
  gen->add_option("--seed", cfg.seed, "Random seed");
  gen->add_option("-o,--output", output, "Output data file")->required();

  auto* fitc = app.add_subcommand("fit", "Fit perturbed triples to a data file");
  fitc->add_option("--config", config_path, "JSON experiment config");
  fitc->add_option("--data", data_path, "Data file from `generate`")->required();
  fitc->add_option("--model", cfg.model, "Model used when the data file does not name one");
  add_fit_options(*fitc, cfg);
  fitc->add_option("--perturb-std", cfg.perturb_std, "Relative std of the start perturbation");
  fitc->add_option("--seed", cfg.seed, "Random seed");
  fitc->add_option("--out-dir", out_dir, "Directory for trace and summary CSVs");
  fitc->add_option("--snapshots", snapshots, "Steps whose predicted curves are dumped")->delimiter(',');

  auto* gc = app.add_subcommand("gradcheck", "Compare adjoint and finite-difference gradients");
  gc->add_option("--config", config_path, "JSON experiment config");
  gc->add_option("--data", data_path, "Data file (generated from the config when omitted)");
  add_data_options(*gc, cfg);
  gc->add_option("--measure", cfg.measure, "data | lebesgue | atoms");
  gc->add_option("--atoms", cfg.atoms, "Number of uniform atoms for --measure atoms");
  gc->add_option("--grad-tol", cfg.grad_tol, "Solver tolerance of the adjoint gradient");
  gc->add_option("--fd-step", cfg.fd_step, "Central difference step");
  gc->add_option("--threshold", cfg.threshold, "Maximum accepted relative error");
  gc->add_option("--perturb-std", cfg.perturb_std, "Relative std of the perturbation");
  gc->add_option("--seed", cfg.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(cfg, output);
    if (*fitc) return cmd_fit(cfg, data_path, out_dir, snapshots);
    if (*gc) return cmd_gradcheck(cfg, data_path);
  } catch (const adjfit::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: invalid JSON content: " << e.what() << "\n";
    return kUsage;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}
