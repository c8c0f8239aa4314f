#include <gtest/gtest.h>

#include <random>

#include "wavemix/wavetrain.hpp"

using namespace wavemix;

namespace {

double lo_omega(double gamma, double k) { return gamma * (1.0 - k * k); }

Field perturbed(const Field& f, double eps, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Field g = f;
  // Smooth noise: a few low modes per component.
  for (std::size_t c = 0; c < g.components; ++c)
    for (int m = 0; m <= 3; ++m) {
      double a = u(rng), b = u(rng);
      for (std::size_t i = 0; i < g.n(); ++i)
        g(c, i) += eps * (a * std::cos(m * g.grid.x(i)) + b * std::sin(m * g.grid.x(i)));
    }
  return g;
}

}  // namespace

TEST(WaveTrain, ExactLambdaOmegaResidual) {
  auto sys = make_lambda_omega(0.5);
  WaveTrain wt;
  wt.k = 0.3;
  wt.omega = 0.455;
  wt.profile = lambda_omega_profile(0.3);
  EXPECT_LE(wave_train_residual(sys, wt), 1e-12);
}

TEST(WaveTrain, ExactGuessConverges) {
  auto sys = make_lambda_omega(0.5);
  auto wt = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), 0.44);
  EXPECT_NEAR(wt.omega, 0.455, 1e-10);
  EXPECT_LE(wt.residual, 1e-10);
  EXPECT_LE(wt.newton_steps.size(), 2u);
  EXPECT_NEAR(std::sqrt(std::norm(wt.profile(0, 0)) + std::norm(wt.profile(1, 0))),
              std::sqrt(1 - 0.09), 1e-10);
}

TEST(WaveTrain, QuadraticConvergenceFromPerturbedGuess) {
  auto sys = make_lambda_omega(0.5);
  Field exact = lambda_omega_profile(0.3);
  auto wt = solve_wave_train(sys, 0.3, perturbed(exact, 0.01, 2), 0.455 * 1.01);
  EXPECT_NEAR(wt.omega, 0.455, 1e-10);
  const auto& e = wt.newton_steps;
  ASSERT_GE(e.size(), 3u);
  // Error of iterate n is approximated by the size of update n.
  int quadratic = 0;
  for (std::size_t n = 0; n + 1 < e.size(); ++n)
    if (e[n] > 1e-12 && e[n + 1] <= 10.0 * e[n] * e[n]) ++quadratic;
  EXPECT_GE(quadratic, 2);
}

TEST(WaveTrain, ShiftedGuessGivesShiftedTrain) {
  auto sys = make_lambda_omega(0.5);
  auto a = solve_wave_train(sys, 0.3, perturbed(lambda_omega_profile(0.3), 0.01, 4), 0.45);
  auto b = solve_wave_train(sys, 0.3, perturbed(lambda_omega_profile(0.3, 64, 1.0), 0.01, 4), 0.45);
  EXPECT_NEAR(a.omega, b.omega, 1e-12);
}

TEST(WaveTrain, ReflectionSymmetry) {
  auto sys = make_lambda_omega(0.8);
  for (double k : {0.2, 0.45}) {
    auto p = solve_wave_train(sys, k, lambda_omega_profile(k), 0.1);
    auto m = solve_wave_train(sys, -k, lambda_omega_profile(-k), 0.1);
    EXPECT_NEAR(p.omega, m.omega, 1e-12);
  }
}

TEST(WaveTrain, Errors) {
  auto sys = make_lambda_omega(0.5);
  PeriodicGrid g(64, 2 * pi);
  Field flat(g, 2);
  for (std::size_t i = 0; i < 64; ++i) flat(0, i) = 0.9;
  EXPECT_THROW(solve_wave_train(sys, 0.3, flat, 0.4), DegenerateGuess);
  EXPECT_THROW(solve_wave_train(sys, 0.0, lambda_omega_profile(0.3), 0.4), RegimeError);
  NewtonOptions one{1e-10, 1};
  EXPECT_THROW(solve_wave_train(sys, 0.3, perturbed(lambda_omega_profile(0.3), 0.05, 1), 0.4, one),
               ConvergenceError);
}

TEST(Branch, LambdaOmegaDispersion) {
  auto sys = make_lambda_omega(0.5);
  auto seed = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), 0.455);
  auto br = continue_branch(sys, 0.1, 0.5, 17, seed);
  ASSERT_EQ(br.size(), 17u);
  EXPECT_FALSE(br.truncated);
  for (std::size_t i = 0; i < br.size(); ++i) {
    EXPECT_NEAR(br.omega_samples[i], lo_omega(0.5, br.k_samples[i]), 1e-8);
    EXPECT_LE(br.trains[i]->residual, 1e-9);
  }
  auto dd = dispersion_derivatives(br, 0.3);
  EXPECT_NEAR(dd.c_g, -0.3, 1e-6);
  EXPECT_NEAR(dd.beta, 0.5, 1e-6);
  EXPECT_THROW(dispersion_derivatives(br, 0.6), RegimeError);
  EXPECT_THROW(dispersion_derivatives(br, 0.1), RegimeError);
}

TEST(Branch, RealGinzburgLandauIsStationary) {
  auto sys = make_lambda_omega(0.0);
  auto seed = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), 0.0);
  auto br = continue_branch(sys, 0.1, 0.5, 9, seed);
  for (double w : br.omega_samples) EXPECT_NEAR(w, 0.0, 1e-10);
  auto dd = dispersion_derivatives(br, 0.3);
  EXPECT_NEAR(dd.c_g, 0.0, 1e-8);
  EXPECT_NEAR(dd.beta, 0.0, 1e-8);
}

TEST(Branch, SinglePoint) {
  auto sys = make_lambda_omega(0.5);
  auto seed = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), 0.455);
  auto br = continue_branch(sys, 0.3, 0.3, 1, seed);
  ASSERT_EQ(br.size(), 1u);
  EXPECT_EQ(br.omega_samples[0], seed.omega);
  EXPECT_THROW(continue_branch(sys, 0.1, 0.5, 4, seed), RegimeError);
}

TEST(Branch, TruncatesAtExistenceBoundary) {
  auto sys = make_lambda_omega(0.5);
  auto seed = solve_wave_train(sys, 0.5, lambda_omega_profile(0.5), 0.375);
  auto br = continue_branch(sys, 0.5, 1.2, 15, seed);
  EXPECT_TRUE(br.truncated);
  EXPECT_LT(br.k_reached_max, 1.0 + 1e-12);
}

TEST(DkProfile, LambdaOmegaAmplitude) {
  for (double gamma : {0.0, 0.5, 1.5}) {
    auto sys = make_lambda_omega(gamma);
    auto wt = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), gamma * 0.91);
    auto pd = dk_profile(sys, wt);
    const double amp = -0.3 / std::sqrt(1 - 0.09);
    for (std::size_t i = 0; i < 64; ++i) {
      double x = wt.profile.grid.x(i);
      EXPECT_NEAR(pd.dk_u(0, i).real(), amp * std::cos(x), 1e-8);
      EXPECT_NEAR(pd.dk_u(1, i).real(), amp * std::sin(x), 1e-8);
    }
    EXPECT_NEAR(pd.dk_omega, -2 * gamma * 0.3, 1e-10);
    Field fd = dk_profile_fd(sys, wt, 1e-4);
    for (std::size_t i = 0; i < fd.values.size(); ++i)
      EXPECT_LT(std::abs(fd.values[i] - pd.dk_u.values[i]), 1e-6);
  }
}

TEST(DkProfile, BranchOverloadInterpolates) {
  auto sys = make_lambda_omega(0.5);
  auto seed = solve_wave_train(sys, 0.3, lambda_omega_profile(0.3), 0.455);
  auto br = continue_branch(sys, 0.1, 0.5, 9, seed);
  auto pd = dk_profile(sys, br, 0.33);
  double amp = std::sqrt(std::norm(pd.dk_u(0, 0)) + std::norm(pd.dk_u(1, 0)));
  EXPECT_NEAR(amp, 0.33 / std::sqrt(1 - 0.33 * 0.33), 1e-8);
  EXPECT_THROW(dk_profile(sys, br, 0.1), RegimeError);
}
