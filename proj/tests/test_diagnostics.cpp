#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "wavemix/diagnostics.hpp"

using namespace wavemix;

namespace {

struct Case {
  RDSystem sys;
  WaveTrain wt;
};

Case lambda_omega(double gamma, double k, std::size_t M = 32) {
  Case s{make_lambda_omega(gamma), {}};
  s.wt = solve_wave_train(s.sys, k, lambda_omega_profile(k, M), gamma * (1 - k * k));
  return s;
}

PeriodicGrid wavelengths(double k, std::size_t N, std::size_t per) {
  return PeriodicGrid(N * per, N * 2 * pi / k);
}

Trajectory single(const Field& u, double t) {
  Trajectory tr;
  tr.grid = u.grid;
  tr.d = u.components;
  tr.times = {t};
  tr.snapshots = {u};
  return tr;
}

// u0(kx - omega t + phi(x)) for a lambda-omega train.
Field modulated(const Case& c, const PeriodicGrid& g, double t, const std::function<double(double)>& phi) {
  RVec theta(g.n_points);
  for (std::size_t i = 0; i < g.n_points; ++i) theta[i] = c.wt.k * g.x(i) - c.wt.omega * t + phi(g.x(i));
  return profile_at(c.wt.profile, g, theta);
}

// Phase field whose data equal the profile in the moving frame exactly.
PhaseField synthetic(const AsymptoticProfile& p, double c_g, double x_center, double half_window,
                     const RVec& times, double L = 400.0, std::size_t n = 2048) {
  PhaseField pf;
  pf.grid = PeriodicGrid(n, L);
  pf.times = times;
  pf.meta.c_g = c_g;
  pf.meta.alpha = p.alpha;
  pf.meta.x_center = x_center;
  pf.meta.window_lo = x_center - half_window;
  pf.meta.window_hi = x_center + half_window;
  for (double t : times) {
    FramePoints fp = frame_points(pf, c_g, t);
    RVec phi(n, 0.0), q(n, 0.0);
    RVec v = profile_eval(p, fp.X, t + 1.0), dv = profile_slope(p, fp.X, t + 1.0);
    for (std::size_t j = 0; j < fp.X.size(); ++j) {
      phi[fp.index[j]] = v[j];
      q[fp.index[j]] = dv[j];
    }
    pf.phi.push_back(phi);
    pf.q.push_back(q);
  }
  return pf;
}

}  // namespace

TEST(ExtractPhase, ExactTrainHasZeroPhase) {
  Case c = lambda_omega(0.5, 0.3);
  PeriodicGrid g = wavelengths(0.3, 8, 16);
  Field u0 = build_initial_data(c.wt, {}, g);
  Trajectory tr = integrate_rd(c.sys, u0, 5.0, 0.05, {2.0});
  PhaseField pf = extract_phase(tr, c.wt);
  ASSERT_EQ(pf.size(), 3u);
  for (std::size_t s = 0; s < pf.size(); ++s) {
    for (double v : pf.phi[s]) EXPECT_NEAR(v, 0.0, 1e-8);
    // Residual carries the O(dt^4) amplitude error of the integrator.
    EXPECT_LT(pf.residual[s], 1e-7);
  }
}

TEST(ExtractPhase, PureTranslation) {
  Case c = lambda_omega(0.5, 0.3);
  PeriodicGrid g = wavelengths(0.3, 8, 16);
  PhaseField pf = extract_phase(single(modulated(c, g, 3.0, [](double) { return 0.1; }), 3.0), c.wt);
  for (double v : pf.phi[0]) EXPECT_NEAR(v, 0.1, 1e-6);
  for (double v : pf.q[0]) EXPECT_NEAR(v, 0.0, 1e-8);
}

TEST(ExtractPhase, RecoversSinusoidalModulation) {
  Case c = lambda_omega(0.0, 0.3);
  PeriodicGrid g = wavelengths(0.3, 32, 16);
  const double L = g.length, eps = 0.05;
  auto phi = [&](double x) { return eps * std::sin(2 * pi * x / L); };
  PhaseField pf = extract_phase(single(modulated(c, g, 0.0, phi), 0.0), c.wt);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i) worst = std::max(worst, std::abs(pf.phi[0][i] - phi(g.x(i))));
  EXPECT_LT(worst / eps, 0.02);
}

TEST(ExtractPhase, InvertsInitialData) {
  // A general two-component train: rotate and stretch the lambda-omega profile so the
  // reference harmonic mixes components unequally.
  Case c = lambda_omega(0.5, 0.3);
  WaveTrain wt = c.wt;
  for (std::size_t i = 0; i < wt.M(); ++i) {
    cplx a = wt.profile(0, i), b = wt.profile(1, i);
    wt.profile(0, i) = 0.3 + a + 0.2 * a * a;
    wt.profile(1, i) = 0.5 * b - 0.1 * a * b;
  }
  PeriodicGrid g = wavelengths(0.3, 32, 16);
  for (double amp : {0.02, 0.05, 0.1}) {
    InitialDataSpec spec;
    spec.phi0_kind = PhaseKind::gaussian_bump;
    spec.amplitude = amp;
    spec.width = 30.0;
    Field u = build_initial_data(wt, spec, g);
    PhaseField pf = extract_phase(single(u, 0.0), wt);
    auto [phi, dphi] = initial_phase(spec, g);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.n_points; ++i) worst = std::max(worst, std::abs(pf.phi[0][i] - phi[i]));
    EXPECT_LT(worst / amp, 0.02) << "amplitude " << amp;
  }
}

TEST(ExtractPhase, Errors) {
  Case c = lambda_omega(0.5, 0.3);
  PeriodicGrid g = wavelengths(0.3, 8, 16);
  Field u = build_initial_data(c.wt, {}, g);
  Field weak = u;
  for (auto& v : weak.values) v *= 0.05;
  EXPECT_THROW(extract_phase(single(weak, 0.0), c.wt), RegimeError);
  // Amplitude fine but far from the orbit: add a large second harmonic.
  Field off = u;
  for (std::size_t i = 0; i < g.n_points; ++i) off(0, i) += 0.5 * std::cos(2 * 0.3 * g.x(i));
  EXPECT_THROW(extract_phase(single(off, 0.0), c.wt), RegimeError);
  EXPECT_THROW(extract_phase(single(Field(PeriodicGrid(64, 50.0), 2), 0.0), c.wt), CommensurabilityError);
}

TEST(CompareToProfile, ExactDataGiveZeroSeries) {
  AsymptoticProfile p;
  p.kind = ProfileKind::logerf_phase;
  p.alpha = 0.75;
  p.beta = 0.5;
  p.phi_plus = 0.5;
  PhaseField pf = synthetic(p, -0.3, 100.0, 100.0, {0.0, 5.0, 20.0});
  DiagnosticSeries a = compare_to_profile(pf, p, -0.3, CompareKind::phase);
  DiagnosticSeries b = compare_to_profile(pf, p, -0.3, CompareKind::wavenumber);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a.sup_err[s], 0.0);
    EXPECT_EQ(a.weighted_err[s], 0.0);
    EXPECT_EQ(b.sup_err[s], 0.0);
  }
  // A wrong group velocity is seen.
  EXPECT_GT(compare_to_profile(pf, p, 0.0, CompareKind::phase).sup_err.back(), 0.05);
}

TEST(CompareToProfile, WavenumberSlopeIsAccurate) {
  AsymptoticProfile p;
  p.kind = ProfileKind::erf_phase;
  p.alpha = 0.8;
  p.phi_plus = 0.5;
  RVec X = {-3.0, -0.5, 0.0, 1.0, 4.0};
  RVec s = profile_slope(p, X, 2.0);
  for (std::size_t i = 0; i < X.size(); ++i) {
    double exact = 0.5 * std::exp(-X[i] * X[i] / (4 * 0.8 * 2.0)) / std::sqrt(4 * pi * 0.8 * 2.0);
    EXPECT_NEAR(s[i], exact, 1e-11);
  }
}

TEST(CompareToProfile, FrameConsistent) {
  AsymptoticProfile p;
  p.kind = ProfileKind::erf_phase;
  p.alpha = 0.8;
  p.phi_plus = 0.4;
  AsymptoticProfile wrong = p;
  wrong.alpha = 0.6;
  PhaseField a = synthetic(p, 0.7, 100.0, 100.0, {0.0, 3.0, 9.0});
  // Same data and frame origin, both moved by 192 cells.
  PhaseField b = a;
  const std::size_t shift = 192;
  const double dx = shift * a.grid.spacing();
  b.meta.x_center += dx;
  b.meta.window_lo += dx;
  b.meta.window_hi += dx;
  const std::size_t n = a.grid.n_points;
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t i = 0; i < n; ++i) {
      b.phi[s][(i + shift) % n] = a.phi[s][i];
      b.q[s][(i + shift) % n] = a.q[s][i];
    }
  DiagnosticSeries ea = compare_to_profile(a, wrong, 0.7, CompareKind::phase);
  DiagnosticSeries eb = compare_to_profile(b, wrong, 0.7, CompareKind::phase);
  for (std::size_t s = 0; s < ea.size(); ++s) {
    EXPECT_GT(ea.sup_err[s], 1e-3);
    EXPECT_NEAR(ea.sup_err[s], eb.sup_err[s], 1e-12);
    EXPECT_NEAR(ea.weighted_err[s], eb.weighted_err[s], 1e-12);
  }
}

TEST(MixingProfile, PicksErfOrLogErf) {
  TrajectoryMeta m;
  m.alpha = 0.8;
  m.beta = 1e-12;
  m.phi_plus = 0.5;
  EXPECT_EQ(mixing_profile(m).kind, ProfileKind::erf_phase);
  m.beta = 0.5;
  EXPECT_EQ(mixing_profile(m).kind, ProfileKind::logerf_phase);
}

TEST(FourierCheck, GaussianDerivativeShape) {
  AsymptoticProfile g;
  g.kind = ProfileKind::gaussian;
  g.alpha = 0.8;
  g.A = 1.3;
  PhaseField pf = synthetic(g, 0.0, 200.0, 200.0, {10.0, 50.0, 100.0});
  FourierCheck fc = renormalized_fourier_check(pf, 0.8, FourierTarget::uc_profile);
  for (std::size_t s = 0; s < pf.size(); ++s) {
    EXPECT_GT(fc.correlation[s], 1.0 - 1e-10);
    EXPECT_NEAR(fc.amplitude[s].real(), 1.3, 1e-8);
    EXPECT_NEAR(fc.amplitude[s].imag(), 0.0, 1e-8);
    EXPECT_LT(std::abs(fc.mass[s]), 1e-8);
  }
  // A wrong alpha lowers the correlation.
  FourierCheck off = renormalized_fourier_check(pf, 0.4, FourierTarget::uc_profile);
  EXPECT_LT(off.correlation.back(), 0.99);
}

TEST(FourierCheck, StepMassEqualsPhaseJump) {
  AsymptoticProfile p;
  p.kind = ProfileKind::logerf_phase;
  p.alpha = 0.75;
  p.beta = 0.5;
  p.phi_minus = 0.1;
  p.phi_plus = 0.6;
  PhaseField pf = synthetic(p, -0.3, 200.0, 200.0, {0.0, 10.0, 50.0});
  FourierCheck fc = renormalized_fourier_check(pf, 0.75, FourierTarget::mass_conservation);
  for (std::size_t s = 0; s < pf.size(); ++s) {
    EXPECT_NEAR(fc.mass[s], 0.5, 1e-6);
    EXPECT_LT(fc.series.sup_err[s], 1e-8);
    EXPECT_LT(fc.series.weighted_err[s], 1e-8);
  }
}

TEST(FourierCheck, LocalizedRunKeepsZeroMode) {
  Case c = lambda_omega(0.5, 0.3);
  PeriodicGrid g = wavelengths(0.3, 16, 16);
  InitialDataSpec spec;
  spec.phi0_kind = PhaseKind::gaussian_bump;
  spec.amplitude = 0.2;
  spec.width = 10.0;
  Trajectory tr = integrate_rd(c.sys, build_initial_data(c.wt, spec, g), 20.0, 0.05, {5.0, 10.0});
  tr.meta.x_center = 0.5 * g.length;
  tr.meta.window_lo = 0.0;
  tr.meta.window_hi = g.length;
  PhaseField pf = extract_phase(tr, c.wt);
  FourierCheck fc = renormalized_fourier_check(pf, 0.75, FourierTarget::mass_conservation);
  for (double m : fc.mass) EXPECT_LT(std::abs(m), 1e-8);
}

TEST(RateFit, SyntheticPowerLaw) {
  DiagnosticSeries s;
  for (double t : geometric_times(1.0, 100.0)) {
    s.times.push_back(t);
    s.sup_err.push_back(3.0 / (t + 1.0));
    s.weighted_err.push_back(std::pow(t + 1.0, -0.5));
  }
  RateFit f = fit_decay_rate(s, 10.0);
  EXPECT_NEAR(f.slope, -1.0, 1e-3);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-9);
  EXPECT_LT(f.residual, 1e-12);
  EXPECT_GE(f.points, 5u);
  EXPECT_GE(f.t_lo, 10.0);
  EXPECT_NEAR(fit_decay_rate(s, 1.0, 100.0, true).slope, -0.5, 1e-3);
  EXPECT_THROW(fit_decay_rate(s, 50.0), RegimeError);
  s.sup_err[s.size() - 1] = 0.0;
  EXPECT_THROW(fit_decay_rate(s, 10.0), InvalidField);
}

TEST(Artifacts, ErrorCsvAndRateJson) {
  DiagnosticSeries s;
  s.times = {1.0, 2.0};
  s.sup_err = {0.5, 0.25};
  s.weighted_err = {1.0, 0.5};
  auto dir = std::filesystem::temp_directory_path() / "wavemix_diag_test";
  std::filesystem::create_directories(dir);
  write_error_csv(s, dir / "error.csv");
  std::ifstream in(dir / "error.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "t,sup_err,weighted_err");
  EXPECT_EQ(row, "1,0.5,1");
  RateFit f;
  f.slope = -0.9;
  f.t_lo = 10;
  f.t_hi = 100;
  write_rate_json(f, dir / "rate.json");
  std::ifstream rj(dir / "rate.json");
  auto j = nlohmann::json::parse(rj);
  EXPECT_EQ(j["slope"], -0.9);
  EXPECT_EQ(j["window"][1], 100.0);
  EXPECT_TRUE(j.contains("residual"));
  EXPECT_TRUE(j.contains("intercept"));
  std::filesystem::remove_all(dir);
}
