#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "adjfit/descent.hpp"
#include "oracles.hpp"

using namespace adjfit;

namespace {

ContinuousSample clean_data(const VectorField& model, int points = 1001) {
  const auto traj = solve_forward(model, *model.reference(), SolverConfig::with_tolerance(1e-11));
  std::mt19937_64 rng(0);
  return make_continuous_sample(traj, 0, 0.0, points, rng);
}

FitConfig short_fit(int steps) {
  FitConfig cfg;
  cfg.steps = steps;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Perturb, ZeroStdIsIdentity) {
  std::mt19937_64 rng(1);
  const auto t = *models::si().reference();
  EXPECT_EQ(perturb(t, 0.0, rng), t);
}

TEST(Perturb, TwoSigmaBandProbability) {
  std::mt19937_64 rng(17);
  const ParamTriple t{10.0, Vector::Constant(1, 10.0), Vector::Constant(1, 10.0)};
  int inside = 0, total = 0;
  for (int i = 0; i < 20000; ++i) {
    const Vector flat = perturb(t, 0.05, rng).flatten();
    for (Eigen::Index c = 0; c < flat.size(); ++c) {
      inside += (flat[c] >= 9.0 && flat[c] <= 11.0);
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(inside) / total, 0.9545, 0.005);
}

TEST(Perturb, ZeroCoordinatesGetAbsoluteNoiseAndSeedsRepeat) {
  const auto t = *models::si().reference();
  std::mt19937_64 a(4), b(4);
  const auto p = perturb(t, 0.05, a);
  EXPECT_EQ(p, perturb(t, 0.05, b));
  EXPECT_NE(p.t0, 0.0);
  EXPECT_LT(std::abs(p.t0), 0.3);
  std::mt19937_64 c(1);
  EXPECT_THROW(perturb(t, -0.1, c), InputError);
}

TEST(RandomMeasure, HasUnitMass) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(mass_check(random_measure(rng, 5)), 1.0, 1e-8);
}

TEST(RandomMeasure, ExpectedDensityIsNearlyUniform) {
  std::mt19937_64 rng(12);
  constexpr int grid = 64, draws = 2000;
  std::vector<double> mean(grid, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto m = random_measure(rng, 5);
    for (int g = 0; g < grid; ++g) mean[g] += m.density((g + 0.5) / grid) / draws;
  }
  for (int g = 0; g < grid; ++g) EXPECT_NEAR(mean[g], 1.0, 0.15) << "grid point " << g;
}

TEST(RandomMeasure, SingleTightBumpConcentrates) {
  const auto m = bump_mixture_measure({0.5}, 0.01);
  const double near = oracle::simpson([&](double t) { return m.density(t); }, 0.45, 0.55, 4000);
  EXPECT_GT(near, 0.99);
  EXPECT_THROW(bump_mixture_measure({}, 0.1), InputError);
  std::mt19937_64 rng(1);
  EXPECT_THROW(random_measure(rng, 0), InputError);
}

TEST(Fit, StartingAtTruthStaysPut) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model, 100001));
  const auto truth = *model.reference();
  auto cfg = short_fit(3);
  cfg.solver = SolverConfig::with_tolerance(1e-9);
  const auto trace = fit(model, h, lebesgue(), truth, cfg);
  ASSERT_EQ(trace.records.size(), 4u);
  EXPECT_LE(trace.records[0].grad_norm, 1e-6);
  EXPECT_LE((trace.records.back().triple.flatten() - truth.flatten()).norm(), 1e-6);
}

TEST(Fit, SiNoiselessReducesLossTenfold) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model));
  std::mt19937_64 rng(5);
  const auto start = perturb(*model.reference(), 0.05, rng);
  const auto trace = fit(model, h, lebesgue(), start, short_fit(100));
  ASSERT_EQ(trace.records.size(), 101u);
  EXPECT_LE(trace.records.back().loss, 0.1 * trace.records.front().loss);
  for (std::size_t i = 1; i < trace.records.size(); ++i) {
    EXPECT_LE(trace.records[i].loss, trace.records[i - 1].loss) << "step " << i;
  }
}

TEST(Fit, FrozenCoordinatesNeverMove) {
  const auto model = models::lotka_volterra();
  const ErrorFunctional h(clean_data(model));
  std::mt19937_64 rng(6);
  const auto start = perturb(*model.reference(), 0.05, rng);
  auto cfg = short_fit(10);
  cfg.frozen_coords.assign(7, false);
  cfg.frozen_coords[0] = true;
  cfg.frozen_coords[4] = true;
  const auto trace = fit(model, h, lebesgue(), start, cfg);
  for (const auto& rec : trace.records) {
    EXPECT_EQ(rec.triple.t0, start.t0);
    EXPECT_EQ(rec.triple.theta[1], start.theta[1]);
  }
  EXPECT_NE(trace.records.back().triple.theta[0], start.theta[0]);
  EXPECT_LT(trace.records.back().loss, trace.records.front().loss);
}

TEST(Fit, BitReproducible) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model, 201));
  std::mt19937_64 rng(7);
  const auto start = perturb(*model.reference(), 0.05, rng);
  for (bool stochastic : {false, true}) {
    auto cfg = short_fit(8);
    cfg.stochastic_measure = stochastic;
    const auto a = fit(model, h, lebesgue(), start, cfg);
    const auto b = fit(model, h, lebesgue(), start, cfg);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].triple, b.records[i].triple);
      EXPECT_EQ(std::isnan(a.records[i].loss), std::isnan(b.records[i].loss));
      if (!std::isnan(a.records[i].loss)) EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    }
  }
}

TEST(Fit, StochasticMeasureStillDescends) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model));
  std::mt19937_64 rng(9);
  const auto start = perturb(*model.reference(), 0.05, rng);
  auto cfg = short_fit(40);
  cfg.stochastic_measure = true;
  const auto trace = fit(model, h, lebesgue(), start, cfg);
  EXPECT_LT(trace.records.back().loss, 0.5 * trace.records.front().loss);
}

TEST(Fit, FixedStepWithSparseLossEvaluation) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model, 201));
  std::mt19937_64 rng(10);
  const auto start = perturb(*model.reference(), 0.02, rng);
  auto cfg = short_fit(6);
  cfg.line_search = false;
  cfg.learning_rate = 1e-3;
  cfg.eval_loss_every = 3;
  const auto trace = fit(model, h, lebesgue(), start, cfg);
  ASSERT_EQ(trace.records.size(), 7u);
  for (const auto& rec : trace.records) {
    EXPECT_EQ(std::isnan(rec.loss), rec.step % 3 != 0) << rec.step;
    if (rec.step > 0) EXPECT_EQ(rec.step_size, 1e-3);
  }
}

TEST(Fit, ConfigValidation) {
  const auto model = models::si();
  const ErrorFunctional h(clean_data(model, 11));
  const auto start = *model.reference();
  auto bad_steps = short_fit(0);
  EXPECT_THROW(fit(model, h, lebesgue(), start, bad_steps), InputError);
  auto bad_rate = short_fit(1);
  bad_rate.learning_rate = 0.0;
  EXPECT_THROW(fit(model, h, lebesgue(), start, bad_rate), InputError);
  auto bad_mask = short_fit(1);
  bad_mask.frozen_coords = {true};
  EXPECT_THROW(fit(model, h, lebesgue(), start, bad_mask), InputError);
}

TEST(Fit, DivergentCandidatesAreBacktracked) {
  // A huge first step sends Lotka-Volterra candidates into blow-up; the
  // line search must recover by halving.
  const auto model = models::lotka_volterra();
  const ErrorFunctional h(clean_data(model, 201));
  std::mt19937_64 rng(2);
  const auto start = perturb(*model.reference(), 0.05, rng);
  auto cfg = short_fit(3);
  cfg.learning_rate = 1e3;
  const auto trace = fit(model, h, lebesgue(), start, cfg);
  EXPECT_LT(trace.records.back().loss, trace.records.front().loss);
}
