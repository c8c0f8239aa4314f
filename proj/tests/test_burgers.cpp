#include <gtest/gtest.h>

#include "wavemix/burgers.hpp"

using namespace wavemix;

namespace {

PeriodicGrid line(std::size_t n = 2048, double L = 400.0) { return PeriodicGrid(n, L); }

Field gaussian(const PeriodicGrid& g, double amp, double w = 1.0, double c = 0.0) {
  return line_field(g, [=](double X) { return amp * std::exp(-(X - c) * (X - c) / w); });
}

RVec xs_of(const PeriodicGrid& g) {
  RVec X(g.n_points);
  for (std::size_t i = 0; i < g.n_points; ++i) X[i] = line_x(g, i);
  return X;
}

}  // namespace

TEST(Burgers, HeatKernelOracle) {
  auto g = line();
  BurgersProblem p{1.0, 0.0, 0.0, 0, 0};
  auto tr = solve_burgers(p, gaussian(g, 1.0), 5.0);
  double err = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i)
    err = std::max(err, std::abs(tr.final()(0, i).real() - heat_gaussian(line_x(g, i), 1.0, 1.0, 4.0)));
  EXPECT_LE(err, 1e-8);
}

TEST(Burgers, ZeroStaysZero) {
  auto g = line(256, 50.0);
  BurgersProblem p{1.0, 1.0, 0.0, 0, 0};
  auto tr = solve_burgers(p, Field(g, 1), 3.0);
  EXPECT_EQ(sup_norm(tr.final()), 0.0);
}

TEST(Burgers, ColeHopfAndMass) {
  auto g = line();
  BurgersProblem p{1.0, 1.0, 0.0, 0, 0};
  Field q0 = gaussian(g, 0.8);
  auto tr = solve_burgers(p, q0, 10.0, 0.01, {2.0, 5.0});
  RVec X = xs_of(g);
  RVec exact = cole_hopf_exact(1.0, 1.0, q0, X, 10.0);
  double err = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i)
    err = std::max(err, std::abs(tr.final()(0, i).real() - exact[i]));
  EXPECT_LE(err, 1e-6);
  for (double m : tr.mass) EXPECT_NEAR(m, tr.mass.front(), 1e-10);
  EXPECT_NEAR(tr.mass.front(), mass(q0), 1e-10);
}

TEST(Burgers, ColeHopfSatisfiesEquation) {
  auto g = line(1024, 200.0);
  Field q0 = gaussian(g, 0.5);
  RVec X = xs_of(g);
  const double T = 3.0, h = 1e-3;
  RVec a = cole_hopf_exact(1.0, 1.0, q0, X, T - h), b = cole_hopf_exact(1.0, 1.0, q0, X, T + h),
       c = cole_hopf_exact(1.0, 1.0, q0, X, T);
  Field q(g, 1), q2(g, 1);
  for (std::size_t i = 0; i < g.n_points; ++i) {
    q(0, i) = c[i];
    q2(0, i) = c[i] * c[i];
  }
  Field qxx = spectral_derivative(q, 2), q2x = spectral_derivative(q2, 1);
  double res = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i) {
    double qt = (b[i] - a[i]) / (2 * h);
    res = std::max(res, std::abs(qt - qxx(0, i).real() - q2x(0, i).real()));
  }
  EXPECT_LE(res, 1e-6);
  // (beta/alpha) * mass = ln(1 + z) for all T
  for (double T2 : {1.5, 4.0, 9.0}) {
    RVec v = cole_hopf_exact(1.0, 1.0, q0, X, T2);
    double m = 0.0;
    for (double x : v) m += x * g.spacing();
    EXPECT_NEAR(m, mass(q0), 1e-10);
  }
  Field zero(g, 1);
  RVec z = cole_hopf_exact(1.0, 1.0, zero, X, 2.0);
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Burgers, ColeHopfApproachesLimitProfile) {
  auto g = line();
  const double alpha = 1.0, beta = 1.0;
  Field q0 = gaussian(g, 0.8);
  const double z = AsymptoticProfile::z_from_mass(alpha, beta, mass(q0));
  double prev = 1e300;
  for (double T : {25.0, 100.0, 400.0}) {
    RVec Xs;
    for (double x = -10; x <= 10; x += 0.25) Xs.push_back(x * std::sqrt(T));
    RVec q = cole_hopf_exact(alpha, beta, q0, Xs, T);
    double err = 0.0;
    for (std::size_t i = 0; i < Xs.size(); ++i)
      err = std::max(err, std::abs(std::sqrt(T) * q[i] - burgers_fz(Xs[i] / std::sqrt(T), alpha, beta, z)));
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LE(prev, 2e-2);
}

TEST(Burgers, GalileanShift) {
  auto g = line(1024, 200.0);
  BurgersProblem p{1.0, 1.0, 0.0, 0, 0};
  const double c = 0.05, T = 6.0;
  Field q0 = gaussian(g, 0.5);
  Field qc = q0;
  for (auto& v : qc.values) v += c;
  auto a = solve_burgers(p, qc, T).final();
  auto b = solve_burgers(p, q0, T).final();
  // c + q(X + 2 beta c (T-1), T)
  auto s = fourier_forward(b);
  for (std::size_t j = 0; j < g.n_points; ++j)
    s.coefficients[j] *= std::exp(cplx(0, g.wavenumber(j) * 2 * p.beta * c * (T - 1)));
  Field shifted = fourier_inverse(s);
  double err = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i)
    err = std::max(err, std::abs(a(0, i).real() - c - shifted(0, i).real()));
  EXPECT_LE(err, 1e-8);
}

TEST(Burgers, ErrorsAndValidation) {
  auto g = line(256, 50.0);
  BurgersProblem bad{1.0, 1.0, 0.1, 1, 0};
  EXPECT_THROW(solve_burgers(bad, gaussian(g, 1.0), 2.0), ConfigError);
  BurgersProblem ok{1.0, 0.0, 0.0, 0, 0};
  EXPECT_THROW(solve_burgers(ok, gaussian(g, 1.0), 2.0, 0.1), ConfigError);
  EXPECT_THROW(cole_hopf_exact(1.0, 0.0, gaussian(g, 1.0), {0.0}, 2.0), ConfigError);
  // exp((beta/alpha) * mass) overflows
  EXPECT_THROW(cole_hopf_exact(1.0, 1.0, gaussian(g, 1000.0), {0.0}, 2.0), InvalidField);
  // Far beyond the explicit stability limit of the flux term.
  BurgersProblem steep{1.0, 1.0, 0.0, 0, 0};
  EXPECT_THROW(solve_burgers(steep, gaussian(g, 1000.0), 2.0, 0.05), InstabilityError);
}

TEST(Profiles, ClosedForms) {
  AsymptoticProfile gp;
  gp.kind = ProfileKind::gaussian;
  EXPECT_NEAR(profile_eval(gp, {0.0}, 1.0)[0], 0.2820948, 1e-7);

  AsymptoticProfile ep;
  ep.kind = ProfileKind::erf_phase;
  ep.alpha = 0.8;
  ep.phi_minus = -0.3;
  ep.phi_plus = 0.9;
  for (double t : {1.0, 7.0, 100.0}) EXPECT_NEAR(profile_eval(ep, {0.0}, t)[0], 0.3, 1e-15);

  auto g = line(4096, 400.0);
  RVec X = xs_of(g);
  for (double z : {-0.5, 0.7, 3.0}) {
    AsymptoticProfile fz;
    fz.kind = ProfileKind::burgers_fz;
    fz.alpha = 1.3;
    fz.beta = 0.7;
    fz.z = z;
    RVec v = profile_eval(fz, X, 1.0);
    double m = 0.0;
    for (double x : v) m += x * g.spacing();
    EXPECT_NEAR(m, fz.alpha / fz.beta * std::log1p(z), 1e-8);
  }
  AsymptoticProfile f0;
  f0.kind = ProfileKind::burgers_fz;
  f0.beta = 1.0;
  for (double v : profile_eval(f0, {-1.0, 0.0, 2.0}, 1.0)) EXPECT_EQ(v, 0.0);

  AsymptoticProfile lp;
  lp.kind = ProfileKind::logerf_phase;
  lp.alpha = 1.0;
  lp.beta = 0.5;
  lp.phi_minus = 0.2;
  lp.phi_plus = 0.7;
  RVec ends = profile_eval(lp, {-200.0, 200.0}, 1.0);
  EXPECT_NEAR(ends[0], 0.2, 1e-12);
  EXPECT_NEAR(ends[1], 0.7, 1e-12);
}

TEST(IntegratedBurgers, MatchesBurgersOnDerivative) {
  auto g = line(1024, 200.0);
  BurgersProblem p{1.0, 0.7, 0.0, 0, 0};
  Field Phi0 = line_field(g, [](double X) { return 0.1 + 0.4 * (1 + std::tanh(X / 2)) / 2; });
  auto tr = solve_integrated_burgers(p, Phi0, 5.0);
  Field q0 = line_field(g, [](double X) { return 0.4 / 4 / std::pow(std::cosh(X / 2), 2); });
  auto q = solve_burgers(p, q0, 5.0).final();
  // Phi_X via the periodic remainder: difference against the smooth end-to-end ramp.
  Field Phi = tr.final();
  const double D = Phi(0, g.n_points - 1).real() - Phi(0, 0).real();
  Field rem(g, 1);
  for (std::size_t i = 0; i < g.n_points; ++i)
    rem(0, i) = Phi(0, i).real() - D * 0.5 * (1 + std::erf(line_x(g, i) / std::sqrt(2.0)));
  Field drem = spectral_derivative(rem, 1);
  double err = 0.0;
  for (std::size_t i = 0; i < g.n_points; ++i) {
    double X = line_x(g, i);
    double dB = std::exp(-X * X / 2) / std::sqrt(2 * pi);
    err = std::max(err, std::abs(drem(0, i).real() + D * dB - q(0, i).real()));
  }
  EXPECT_LE(err, 1e-8);

  Field c(g, 1);
  for (auto& v : c.values) v = 0.25;
  auto tc = solve_integrated_burgers(p, c, 3.0);
  for (auto v : tc.final().values) EXPECT_NEAR(v.real(), 0.25, 1e-14);
}

TEST(IntegratedBurgers, StepLimits) {
  auto g = line(2048, 400.0);
  const double T = 200.0;
  Field Phi0 = line_field(g, [](double X) { return -0.2 + 0.6 * (1 + std::tanh(X)) / 2; });
  for (double beta : {0.0, 1.0}) {
    BurgersProblem p{1.0, beta, 0.0, 0, 0};
    auto Phi = solve_integrated_burgers(p, Phi0, T).final();
    AsymptoticProfile pr;
    pr.kind = beta == 0.0 ? ProfileKind::erf_phase : ProfileKind::logerf_phase;
    pr.alpha = 1.0;
    pr.beta = beta;
    pr.phi_minus = -0.2;
    pr.phi_plus = 0.4;
    RVec X = xs_of(g);
    RVec ref = profile_eval(pr, X, T);
    double err = 0.0;
    for (std::size_t i = 0; i < g.n_points; ++i) err = std::max(err, std::abs(Phi(0, i).real() - ref[i]));
    EXPECT_LE(err, 5e-2) << "beta=" << beta;
  }
}

TEST(DecaySeries, CaseTwoHeat) {
  auto g = line();
  BurgersProblem p{1.0, 0.0, 0.0, 0, 0};
  Field q0 = gaussian(g, 1.0 / std::sqrt(pi));
  auto es = verify_prop1(Prop1Case::ii, p, q0, {10, 25, 50, 100});
  EXPECT_NEAR(profile_eval(es.profile, {0.0}, 1.0)[0], 0.2820948, 1e-6);
  EXPECT_LE(es.rows.back().sup_err, 1e-2);
  EXPECT_LE(es.slope(), -0.4);
  EXPECT_THROW(verify_prop1(Prop1Case::iii, p, q0, {10}), RegimeError);
  EXPECT_THROW(verify_prop1(Prop1Case::i, p, q0, {10}), RegimeError);
}

TEST(DecaySeries, CaseThreeBurgers) {
  auto g = line();
  BurgersProblem p{1.0, 1.0, 0.0, 0, 0};
  auto es = verify_prop1(Prop1Case::iii, p, gaussian(g, 0.8), {10, 25, 50, 100, 200});
  EXPECT_LE(es.slope(), -0.4);
}

TEST(DecaySeries, CaseOneZeroMass) {
  auto g = line();
  BurgersProblem p{1.0, 1.0, 0.0, 0, 0};
  Field q0 = line_field(g, [](double X) { return X * std::exp(-X * X); });
  auto es = verify_prop1(Prop1Case::i, p, q0, {10, 20, 50, 100, 200});
  const double first = es.rows.front().scaled_sup;
  for (auto& r : es.rows) EXPECT_LE(r.scaled_sup, 1.05 * first);
  EXPECT_LT(es.rows.back().sup_err, es.rows.front().sup_err);
}

TEST(DecaySeries, IrrelevantPerturbationKeepsLimit) {
  auto g = line();
  Field q0 = gaussian(g, 0.8);
  RVec X;
  for (int i = -60; i <= 60; ++i) X.push_back(0.1 * i);
  BurgersProblem plain{1.0, 1.0, 0.0, 0, 0}, perturbed{1.0, 1.0, 0.1, 3, 0};
  RVec a = fitted_limit_profile(plain, q0, 50.0, 100.0, X);
  RVec b = fitted_limit_profile(perturbed, q0, 50.0, 100.0, X);
  const double z = AsymptoticProfile::z_from_mass(1.0, 1.0, mass(q0));
  double diff = 0.0, err = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    err = std::max(err, std::abs(a[i] - burgers_fz(X[i], 1.0, 1.0, z)));
  }
  EXPECT_LE(diff, 2e-2);
  EXPECT_LE(err, 5e-3);
  EXPECT_THROW(fitted_limit_profile(plain, q0, 100.0, 50.0, X), ConfigError);
}

TEST(RG, HeatContraction) {
  auto g = line(2048, 400.0);
  BurgersProblem p{1.0, 0.0, 0.0, 0, 0};
  auto rs = rg_iterate(p, gaussian(g, 1.0 / std::sqrt(pi), 2.0), 2.0, 6, ScalingKind::nonzero_mass);
  for (std::size_t n = 1; n < rs.ratios.size(); ++n) EXPECT_LE(rs.ratios[n], std::pow(2.0, -0.9));
  for (std::size_t n = 1; n < rs.masses.size(); ++n) EXPECT_NEAR(rs.masses[n], rs.masses[0], 1e-10);
}

TEST(RG, FixedPointStaysPut) {
  auto g = line(2048, 400.0);
  BurgersProblem p{1.0, 0.0, 0.0, 0, 0};
  // The fixed point at tau = L^-2 is the heat kernel at that time.
  Field q0 = line_field(g, [](double X) { return std::exp(-X * X / 4) / std::sqrt(4 * pi); });
  auto rs = rg_iterate(p, q0, 2.0, 3, ScalingKind::nonzero_mass);
  for (std::size_t n = 1; n < rs.distances.size(); ++n) EXPECT_LE(rs.distances[n], 1e-6);
}

TEST(RG, DomainLeak) {
  auto g = line(512, 40.0);
  BurgersProblem p{1.0, 0.0, 0.0, 0, 0};
  EXPECT_THROW(rg_iterate(p, gaussian(g, 1.0, 20.0), 2.0, 2, ScalingKind::nonzero_mass), RegimeError);
}
