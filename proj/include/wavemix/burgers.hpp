#ifndef WAVEMIX_BURGERS_HPP
#define WAVEMIX_BURGERS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "wavemix/core.hpp"

namespace wavemix {

struct InstabilityError : ConvergenceError {
  using ConvergenceError::ConvergenceError;
};

/** \brief q_T = alpha q_XX + beta (q^2)_X + gamma (q^d1 (q_X)^d2)_X */
struct BurgersProblem {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 0.0;
  int d1 = 0, d2 = 0;

  int degree() const { return d1 + 2 * d2 - 3; }
  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("Burgers diffusion must be positive");
    if (gamma != 0.0 && (d2 > 1 || degree() < 0 || d1 < 0 || d2 < 0)) {
      std::ostringstream os;
      os << "perturbation q^" << d1 << " (q_X)^" << d2 << " violates d2 <= 1, d1 + 2 d2 - 3 >= 0";
      throw ConfigError(os.str());
    }
  }
};

/// Coordinate X of grid point i on a line grid centred at 0.
inline double line_x(const PeriodicGrid& g, std::size_t i) { return g.x(i) - 0.5 * g.length; }

inline Field line_field(const PeriodicGrid& g, const std::function<double(double)>& fn) {
  Field f(g, 1);
  for (std::size_t i = 0; i < g.n_points; ++i) f(0, i) = fn(line_x(g, i));
  return f;
}

/// erf(x) = (1/sqrt(4 pi)) int_{-inf}^x e^{-s^2/4} ds, so erf(0) = 1/2.
inline double erf_p(double x) { return 0.5 * (1.0 + std::erf(0.5 * x)); }

inline double mass(const Field& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.n(); ++i) s += q(0, i).real();
  return s * q.grid.spacing();
}

inline double first_moment(const Field& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.n(); ++i) s += line_x(q.grid, i) * q(0, i).real();
  return s * q.grid.spacing();
}

struct Snapshot {
  double T = 0.0;
  Field q;
};

struct BurgersTrajectory {
  std::vector<Snapshot> snapshots;
  RVec mass;  ///< mass at each snapshot
  const Field& final() const { return snapshots.back().q; }
};

namespace burgers_detail {

/// Integrating-factor RK4 for u_T = a u_XX + N(u) in Fourier space.
class IfRk4 {
 public:
  using Rhs = std::function<void(const CVec& uhat, CVec& out)>;

  IfRk4(const PeriodicGrid& g, double a, Rhs rhs) : g_(g), a_(a), rhs_(std::move(rhs)) {
    kappa2_.resize(g.n_points);
    for (std::size_t j = 0; j < g.n_points; ++j) kappa2_[j] = std::pow(g.wavenumber(j), 2);
  }

  void step(CVec& u, double dt) const {
    const std::size_t n = u.size();
    CVec E(n), E2(n);
    for (std::size_t j = 0; j < n; ++j) {
      E[j] = std::exp(-a_ * kappa2_[j] * 0.5 * dt);
      E2[j] = E[j] * E[j];
    }
    CVec k1(n), k2(n), k3(n), k4(n), tmp(n);
    rhs_(u, k1);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = E[j] * (u[j] + 0.5 * dt * k1[j]);
    rhs_(tmp, k2);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = E[j] * u[j] + 0.5 * dt * k2[j];
    rhs_(tmp, k3);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = E2[j] * u[j] + dt * E[j] * k3[j];
    rhs_(tmp, k4);
    for (std::size_t j = 0; j < n; ++j)
      u[j] = E2[j] * u[j] + dt / 6.0 * (E2[j] * k1[j] + 2.0 * E[j] * (k2[j] + k3[j]) + k4[j]);
  }

 private:
  PeriodicGrid g_;
  double a_;
  Rhs rhs_;
  RVec kappa2_;
};

/// Spectral workspace for products with 2/3 dealiasing.
struct Workspace {
  PeriodicGrid g;
  FftPlan plan;
  RVec kappa;
  std::vector<bool> keep;
  CVec a, b;

  explicit Workspace(const PeriodicGrid& grid) : g(grid), plan(grid.n_points) {
    const std::size_t n = grid.n_points;
    kappa.resize(n);
    keep.resize(n);
    a.resize(n);
    b.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      kappa[j] = grid.wavenumber(j);
      keep[j] = 3 * std::labs(grid.mode(j)) <= static_cast<long>(n);
    }
  }
  /// Physical values of the truncated spectrum times (i kappa)^order.
  void to_physical(const CVec& uhat, int order, CVec& out) {
    const std::size_t n = uhat.size();
    for (std::size_t j = 0; j < n; ++j)
      a[j] = keep[j] ? uhat[j] * ik_power(kappa[j], order) : cplx(0.0);
    if (order % 2 == 1 && n % 2 == 0) a[n / 2] = 0.0;
    plan.inverse(a.data(), out.data());
  }
  /// Spectrum of i kappa * f for physical f, truncated.
  void derivative_of(const CVec& f, CVec& out) {
    plan.forward(f.data(), out.data());
    const std::size_t n = f.size();
    for (std::size_t j = 0; j < n; ++j) out[j] = keep[j] ? cplx(0.0, kappa[j]) * out[j] : cplx(0.0);
    if (n % 2 == 0) out[n / 2] = 0.0;
  }
};

inline double sup_real(const CVec& v) {
  double s = 0.0;
  for (auto x : v) s = std::max(s, std::abs(x.real()));
  return s;
}

/// Advance a spectral state from T0 through the requested times.
template <class Stepper>
std::vector<std::pair<double, CVec>> march(const Stepper& st, CVec uhat, double T0,
                                           RVec times, double dt, FftPlan& plan) {
  std::sort(times.begin(), times.end());
  std::vector<std::pair<double, CVec>> out;
  double T = T0;
  CVec phys(uhat.size());
  plan.inverse(uhat.data(), phys.data());
  double last_sup = sup_real(phys);
  for (double target : times) {
    if (target < T - 1e-12) throw RegimeError("snapshot time before the initial time");
    while (T < target - 1e-12) {
      double h = std::min(dt, target - T);
      st.step(uhat, h);
      T = (target - T - h < 1e-12) ? target : T + h;
      plan.inverse(uhat.data(), phys.data());
      double s = sup_real(phys);
      if (!std::isfinite(s) || (last_sup > 1e-12 && s > 2.0 * last_sup)) {
        std::ostringstream os;
        os << "solution blew up near T=" << T;
        throw InstabilityError(os.str());
      }
      last_sup = s;
    }
    out.emplace_back(target, uhat);
  }
  return out;
}

}  // namespace burgers_detail

/** \brief Pseudo-spectral solve of the perturbed Burgers equation from T0.
 *
 * Diffusion is integrated exactly; the flux terms use RK4 with 2/3 dealiasing.
 * Snapshots are returned at the sorted times (T_final is always included).
 */
inline BurgersTrajectory solve_burgers(const BurgersProblem& p, const Field& q0, double T,
                                       double dt = 0.01, RVec times = {}, double T0 = 1.0) {
  p.validate();
  require_finite(q0);
  if (!(dt > 0.0) || dt > 0.05) throw ConfigError("Burgers time step must lie in (0, 0.05]");
  const PeriodicGrid g = q0.grid;
  const std::size_t n = g.n_points;
  auto ws = std::make_shared<burgers_detail::Workspace>(g);
  auto rhs = [p, ws, n](const CVec& uhat, CVec& out) {
    CVec q(n), qx(n), flux(n);
    ws->to_physical(uhat, 0, q);
    if (p.gamma != 0.0 && p.d2 > 0) ws->to_physical(uhat, 1, qx);
    for (std::size_t i = 0; i < n; ++i) {
      double a = q[i].real();
      double f = p.beta * a * a;
      if (p.gamma != 0.0) {
        double h = std::pow(a, p.d1);
        if (p.d2 > 0) h *= std::pow(qx[i].real(), p.d2);
        f += p.gamma * h;
      }
      flux[i] = f;
    }
    ws->derivative_of(flux, out);
  };
  burgers_detail::IfRk4 st(g, p.alpha, rhs);
  CVec uhat(n);
  FftPlan plan(n);
  plan.forward(q0.values.data(), uhat.data());
  times.push_back(T);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto states = burgers_detail::march(st, uhat, T0, times, dt, plan);
  BurgersTrajectory tr;
  for (auto& [t, s] : states) {
    Field q(g, 1);
    plan.inverse(s.data(), q.values.data());
    for (auto& v : q.values) v = v.real();
    tr.mass.push_back(mass(q));
    tr.snapshots.push_back({t, std::move(q)});
  }
  return tr;
}

/// Antiderivative int_{left end}^{X} f on a line grid, spectrally accurate for decaying f.
inline RVec cumulative_integral(const Field& f) {
  const PeriodicGrid& g = f.grid;
  const std::size_t n = g.n_points;
  const double A = mass(f);
  Field r = f;
  for (auto& v : r.values) v = v.real() - A / g.length;
  auto s = fourier_forward(r);
  for (std::size_t j = 0; j < n; ++j) {
    double kap = g.wavenumber(j);
    if (g.mode(j) == 0 || (n % 2 == 0 && j == n / 2)) {
      s.coefficients[j] = 0.0;
    } else {
      s.coefficients[j] /= cplx(0.0, kap);
    }
  }
  Field P = fourier_inverse(s);
  RVec out(n);
  const double p0 = P(0, 0).real();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = P(0, i).real() - p0 + A * g.x(i) / g.length;
  return out;
}

/** \brief Cole-Hopf solution at time T for data q0 given at T0 = 1, evaluated at X.
 *
 * Q0 = exp((beta/alpha) int q0) is extended by its end values off the grid.
 */
inline RVec cole_hopf_exact(double alpha, double beta, const Field& q0, const RVec& X, double T,
                            double T0 = 1.0) {
  if (beta == 0.0) throw ConfigError("Cole-Hopf needs beta != 0");
  const PeriodicGrid& g = q0.grid;
  const std::size_t n = g.n_points;
  RVec I = cumulative_integral(q0);
  RVec Q0(n), dQ0(n), Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    Q0[i] = std::exp(beta / alpha * I[i]);
    dQ0[i] = beta / alpha * q0(0, i).real() * Q0[i];
    Y[i] = line_x(g, i);
  }
  const double Qleft = 1.0;
  const double Qright = std::exp(beta / alpha * mass(q0));
  if (!(std::isfinite(Qright) && Qright > 0.0))
    throw InvalidField("Cole-Hopf transform of the data is not a finite positive function");
  const double t = T - T0;
  RVec out(X.size());
  if (t <= 0.0) {
    CVec v = fourier_interpolate(q0, 0, [&] {
      RVec xs(X.size());
      for (std::size_t p = 0; p < X.size(); ++p) xs[p] = X[p] + 0.5 * g.length;
      return xs;
    }());
    for (std::size_t p = 0; p < X.size(); ++p) out[p] = v[p].real();
    return out;
  }
  const double s = std::sqrt(2.0 * alpha * t);
  const double h = g.spacing();
  const double ylo = Y.front() - 0.5 * h, yhi = Y.back() + 0.5 * h;
  for (std::size_t p = 0; p < X.size(); ++p) {
    double Q = 0.0, dQ = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = (X[p] - Y[i]) / s;
      double G = std::exp(-0.5 * z * z) / (std::sqrt(2.0 * pi) * s);
      Q += G * Q0[i];
      dQ += G * dQ0[i];
    }
    Q *= h;
    dQ *= h;
    // Constant extensions beyond the half-cells at both ends.
    Q += Qleft * 0.5 * std::erfc((X[p] - ylo) / (std::sqrt(2.0) * s));
    Q += Qright * 0.5 * std::erfc((yhi - X[p]) / (std::sqrt(2.0) * s));
    out[p] = alpha / beta * dQ / Q;
  }
  return out;
}

/// Heat evolution of a Gaussian e^{-X^2/w} from T0 to T with diffusivity alpha.
inline double heat_gaussian(double X, double w, double alpha, double t) {
  double ww = w + 4.0 * alpha * t;
  return std::sqrt(w / ww) * std::exp(-X * X / ww);
}

// ---------------------------------------------------------------------------
// Asymptotic profiles

enum class ProfileKind { gaussian, gaussian_derivative, burgers_fz, erf_phase, logerf_phase };

struct AsymptoticProfile {
  ProfileKind kind = ProfileKind::gaussian;
  double alpha = 1.0, beta = 0.0;
  double A = 1.0;
  double z = 0.0;
  double q_lim = 0.0;
  double phi_lim = 0.0;
  double phi_minus = 0.0, phi_plus = 0.0;

  /// z from ln(1+z) = (beta/alpha) * mass.
  static double z_from_mass(double alpha, double beta, double A) {
    return std::expm1(beta / alpha * A);
  }
};

inline ProfileKind profile_kind_from_string(const std::string& s) {
  if (s == "gaussian") return ProfileKind::gaussian;
  if (s == "gaussian_derivative") return ProfileKind::gaussian_derivative;
  if (s == "burgers_fz") return ProfileKind::burgers_fz;
  if (s == "erf_phase") return ProfileKind::erf_phase;
  if (s == "logerf_phase") return ProfileKind::logerf_phase;
  throw ConfigError("unknown profile kind '" + s + "'");
}

/// f*_z(X) = (alpha/beta) d/dX ln(1 + z erf(X/sqrt(alpha)))
inline double burgers_fz(double X, double alpha, double beta, double z) {
  if (z == 0.0) return 0.0;
  double num = std::sqrt(alpha) * z * std::exp(-X * X / (4.0 * alpha));
  double den = beta * std::sqrt(4.0 * pi) * (1.0 + z * erf_p(X / std::sqrt(alpha)));
  return num / den;
}

/** \brief Closed-form profiles at (x, t); t = 1 gives the rescaled limit shapes.
 *
 * gaussian: A G(x,t); gaussian_derivative: q_lim (x/sqrt t) e^{-x^2/(4 alpha t)} / t;
 * burgers_fz: f*_z(x/sqrt t)/sqrt t; erf_phase and logerf_phase in x/sqrt(alpha t).
 */
inline RVec profile_eval(const AsymptoticProfile& p, const RVec& x, double t) {
  if (!(t > 0.0)) throw ConfigError("profile time must be positive");
  RVec out(x.size());
  const double a = p.alpha;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double X = x[i];
    switch (p.kind) {
      case ProfileKind::gaussian:
        out[i] = p.A * std::exp(-X * X / (4.0 * a * t)) / std::sqrt(4.0 * pi * a * t);
        break;
      case ProfileKind::gaussian_derivative:
        out[i] = p.q_lim * (X / std::sqrt(t)) * std::exp(-X * X / (4.0 * a * t)) / t;
        break;
      case ProfileKind::burgers_fz:
        if (p.beta == 0.0 || !(1.0 + p.z > 0.0)) throw ConfigError("burgers_fz needs beta != 0 and 1+z > 0");
        out[i] = burgers_fz(X / std::sqrt(t), a, p.beta, p.z) / std::sqrt(t);
        break;
      case ProfileKind::erf_phase:
        out[i] = p.phi_minus + (p.phi_plus - p.phi_minus) * erf_p(X / std::sqrt(a * t));
        break;
      case ProfileKind::logerf_phase: {
        if (p.beta == 0.0) throw ConfigError("logerf_phase needs beta != 0");
        double z = std::expm1(p.beta / a * (p.phi_plus - p.phi_minus));
        out[i] = p.phi_minus + a / p.beta * std::log1p(z * erf_p(X / std::sqrt(a * t)));
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Integrated Burgers

/** \brief Phi_T = alpha Phi_XX + beta Phi_X^2 + gamma h(Phi_X, Phi_XX) from T0.
 *
 * Solved for psi = Phi - Phi_- - (Phi_+ - Phi_-) B(X), B a unit error-function step,
 * which is periodic on the line grid.
 */
inline BurgersTrajectory solve_integrated_burgers(const BurgersProblem& p, const Field& Phi0,
                                                  double T, double dt = 0.01, RVec times = {},
                                                  double T0 = 1.0, double step_width = 1.0) {
  p.validate();
  require_finite(Phi0);
  if (!(dt > 0.0) || dt > 0.05) throw ConfigError("Burgers time step must lie in (0, 0.05]");
  const PeriodicGrid g = Phi0.grid;
  const std::size_t n = g.n_points;
  const double phim = Phi0(0, 0).real(), phip = Phi0(0, n - 1).real();
  const double D = phip - phim;
  const double sw = step_width;
  RVec B(n), b1(n), b2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double X = line_x(g, i);
    B[i] = 0.5 * (1.0 + std::erf(X / (std::sqrt(2.0) * sw)));
    b1[i] = std::exp(-X * X / (2.0 * sw * sw)) / (std::sqrt(2.0 * pi) * sw);
    b2[i] = -X / (sw * sw) * b1[i];
  }
  Field psi0(g, 1);
  for (std::size_t i = 0; i < n; ++i) psi0(0, i) = Phi0(0, i).real() - phim - D * B[i];

  auto ws = std::make_shared<burgers_detail::Workspace>(g);
  auto rhs = [p, ws, n, D, b1, b2](const CVec& uhat, CVec& out) {
    CVec px(n), pxx(n), f(n);
    ws->to_physical(uhat, 1, px);
    ws->to_physical(uhat, 2, pxx);
    for (std::size_t i = 0; i < n; ++i) {
      double q = D * b1[i] + px[i].real();
      double qx = D * b2[i] + pxx[i].real();
      double v = p.beta * q * q;
      if (p.gamma != 0.0) v += p.gamma * std::pow(q, p.d1) * std::pow(qx, p.d2);
      f[i] = v;
    }
    ws->plan.forward(f.data(), out.data());
    for (std::size_t j = 0; j < n; ++j)
      if (!ws->keep[j]) out[j] = 0.0;
  };
  // alpha D B'' is linear and time independent; add it exactly through the forcing.
  Field forcing(g, 1);
  for (std::size_t i = 0; i < n; ++i) forcing(0, i) = p.alpha * D * b2[i];
  SpectralCoeffs fh = fourier_forward(forcing);
  auto rhs_full = [rhs, fh, n](const CVec& uhat, CVec& out) {
    rhs(uhat, out);
    for (std::size_t j = 0; j < n; ++j) out[j] += fh.coefficients[j];
  };
  burgers_detail::IfRk4 st(g, p.alpha, rhs_full);
  CVec uhat(n);
  FftPlan plan(n);
  plan.forward(psi0.values.data(), uhat.data());
  times.push_back(T);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto states = burgers_detail::march(st, uhat, T0, times, dt, plan);
  BurgersTrajectory tr;
  for (auto& [t, s] : states) {
    Field Phi(g, 1);
    plan.inverse(s.data(), Phi.values.data());
    for (std::size_t i = 0; i < n; ++i) Phi(0, i) = Phi(0, i).real() + phim + D * B[i];
    tr.mass.push_back(Phi(0, n - 1).real() - Phi(0, 0).real());
    tr.snapshots.push_back({t, std::move(Phi)});
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Decay error series

enum class Prop1Case { i, ii, iii };

struct ErrorRow {
  double T = 0.0;
  double sup_err = 0.0;
  double weighted_err = 0.0;
  double fitted_slope_so_far = std::nan("");
  /// sup |q(., T)| T^{1-b}, filled for the zero-mass case.
  double scaled_sup = std::nan("");
};

struct ErrorSeries {
  Prop1Case which = Prop1Case::ii;
  AsymptoticProfile profile;
  std::vector<ErrorRow> rows;
  /// Rescaled solution T^p q(sqrt(T) X, T) on the grid X = x_i / sqrt(T) at the last T.
  RVec last_X, last_rescaled;
  double slope() const { return rows.empty() ? std::nan("") : rows.back().fitted_slope_so_far; }
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const RVec& x, const RVec& y) {
  std::size_t m = 0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
    ++m;
  }
  if (m < 2) return std::nan("");
  double den = m * sxx - sx * sx;
  return (m * sxy - sx * sy) / den;
}

/** \brief Errors of the rescaled solution against the case's limit profile.
 *
 * Case i uses T q(sqrt T X, T) and q_lim from the first moment at the last T,
 * which is the slope of the Fourier transform at kappa = 0.
 */
inline ErrorSeries verify_prop1(Prop1Case which, const BurgersProblem& p, const Field& q0,
                                RVec T_list, double dt = 0.01, double b = 0.1) {
  const double A = mass(q0);
  const double scale = std::max(1.0, [&] {
    double s = 0.0;
    for (auto v : q0.values) s += std::abs(v.real());
    return s * q0.grid.spacing();
  }());
  const bool zero_mass = std::abs(A) <= 1e-8 * scale;
  if (which == Prop1Case::i && !zero_mass) throw RegimeError("case i needs zero mass");
  if (which != Prop1Case::i && zero_mass) throw RegimeError("cases ii and iii need nonzero mass");
  if (which == Prop1Case::ii && p.beta != 0.0) throw RegimeError("case ii needs beta = 0");
  if (which == Prop1Case::iii && p.beta == 0.0) throw RegimeError("case iii needs beta != 0");
  std::sort(T_list.begin(), T_list.end());
  auto tr = solve_burgers(p, q0, T_list.back(), dt, T_list);

  ErrorSeries es;
  es.which = which;
  es.profile.alpha = p.alpha;
  es.profile.beta = p.beta;
  es.profile.A = A;
  if (which == Prop1Case::i) {
    es.profile.kind = ProfileKind::gaussian_derivative;
    const double M1 = first_moment(tr.final());
    es.profile.q_lim = M1 / (2.0 * p.alpha * std::sqrt(4.0 * pi * p.alpha));
  } else if (which == Prop1Case::ii) {
    es.profile.kind = ProfileKind::gaussian;
  } else {
    es.profile.kind = ProfileKind::burgers_fz;
    es.profile.z = AsymptoticProfile::z_from_mass(p.alpha, p.beta, A);
  }
  const double power = which == Prop1Case::i ? 1.0 : 0.5;
  const PeriodicGrid& g = q0.grid;
  RVec Ts, errs;
  for (const auto& snap : tr.snapshots) {
    const double T = snap.T;
    const double sT = std::sqrt(T);
    RVec X(g.n_points);
    for (std::size_t i = 0; i < g.n_points; ++i) X[i] = line_x(g, i) / sT;
    RVec prof = profile_eval(es.profile, X, 1.0);
    PeriodicGrid rg(g.n_points, g.length / sT);
    Field diff(rg, 1);
    double sup = 0.0, qsup = 0.0;
    RVec resc(g.n_points);
    for (std::size_t i = 0; i < g.n_points; ++i) {
      double v = std::pow(T, power) * snap.q(0, i).real();
      resc[i] = v;
      diff(0, i) = v - prof[i];
      sup = std::max(sup, std::abs(v - prof[i]));
      qsup = std::max(qsup, std::abs(snap.q(0, i).real()));
    }
    ErrorRow row;
    row.T = T;
    row.sup_err = sup;
    row.weighted_err = weighted_sobolev_norm(diff, 2, which == Prop1Case::i ? 3 : 2);
    if (which == Prop1Case::i) row.scaled_sup = qsup * std::pow(T, 1.0 - b);
    Ts.push_back(T);
    errs.push_back(sup);
    row.fitted_slope_so_far = loglog_slope(Ts, errs);
    es.rows.push_back(row);
    es.last_X = X;
    es.last_rescaled = resc;
  }
  return es;
}

/// Extrapolate F(T) = F_inf + C T^{-1/2} from two samples.
inline RVec extrapolate_limit(const RVec& f1, double T1, const RVec& f2, double T2) {
  RVec out(f1.size());
  const double a = std::sqrt(T1), b = std::sqrt(T2);
  for (std::size_t i = 0; i < f1.size(); ++i) out[i] = (b * f2[i] - a * f1[i]) / (b - a);
  return out;
}

/** \brief Limit of T^power q(sqrt(T) X, T) at the points X, extrapolated from T1 < T2.
 *
 * Used to compare limit profiles of different equations on one X grid.
 */
inline RVec fitted_limit_profile(const BurgersProblem& p, const Field& q0, double T1, double T2,
                                 const RVec& X, double power = 0.5, double dt = 0.01) {
  if (!(T1 > 1.0) || !(T2 > T1)) throw ConfigError("fitted_limit_profile needs 1 < T1 < T2");
  auto tr = solve_burgers(p, q0, T2, dt, {T1, T2});
  auto rescaled = [&](double T) {
    const Field* q = nullptr;
    for (const auto& s : tr.snapshots)
      if (std::abs(s.T - T) < 1e-9 * T) q = &s.q;
    RVec xs(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) xs[i] = std::sqrt(T) * X[i] + 0.5 * q0.grid.length;
    CVec v = fourier_interpolate(*q, 0, xs);
    RVec out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::pow(T, power) * v[i].real();
    return out;
  };
  return extrapolate_limit(rescaled(T1), T1, rescaled(T2), T2);
}

// ---------------------------------------------------------------------------
// Discrete renormalization

enum class ScalingKind { nonzero_mass, zero_mass };

struct RenormSequence {
  double L = 2.0;
  ScalingKind kind = ScalingKind::nonzero_mass;
  std::vector<Field> iterates;  ///< q_n(., 1), n = 0..N
  RVec distances;               ///< sup |q_n(., 1) - fixed point|
  RVec ratios;                  ///< ratios[n-1] = distances[n] / distances[n-1], n >= 1
  RVec masses;
};

/** \brief Rescale-and-evolve on a fixed xi domain.
 *
 * q_n(xi, L^-2) = L^s q_{n-1}(L xi, 1) with s = 1 (nonzero mass) or 2 (zero mass),
 * then the rescaled equation is solved on tau in [L^-2, 1].
 */
inline RenormSequence rg_iterate(const BurgersProblem& p, const Field& q0, double L, int N,
                                 ScalingKind kind, double dt = 0.01) {
  p.validate();
  if (L < 2.0 - 1e-12 || L > 8.0 + 1e-12) throw ConfigError("RG scale factor must lie in [2, 8]");
  if (N < 1) throw ConfigError("RG needs at least one step");
  const PeriodicGrid& g = q0.grid;
  const std::size_t n = g.n_points;
  const double s = kind == ScalingKind::nonzero_mass ? 1.0 : 2.0;

  auto fixed_point = [&](const Field& q) {
    AsymptoticProfile pr;
    pr.alpha = p.alpha;
    pr.beta = p.beta;
    if (kind == ScalingKind::zero_mass) {
      pr.kind = ProfileKind::gaussian_derivative;
      pr.q_lim = first_moment(q) / (2.0 * p.alpha * std::sqrt(4.0 * pi * p.alpha));
    } else if (p.beta == 0.0) {
      pr.kind = ProfileKind::gaussian;
      pr.A = mass(q);
    } else {
      pr.kind = ProfileKind::burgers_fz;
      pr.z = AsymptoticProfile::z_from_mass(p.alpha, p.beta, mass(q));
    }
    RVec X(n);
    for (std::size_t i = 0; i < n; ++i) X[i] = line_x(g, i);
    return profile_eval(pr, X, 1.0);
  };
  auto dist = [&](const Field& q) {
    RVec fp = fixed_point(q);
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) d = std::max(d, std::abs(q(0, i).real() - fp[i]));
    return d;
  };

  RenormSequence rs;
  rs.L = L;
  rs.kind = kind;
  rs.iterates.push_back(q0);
  rs.distances.push_back(dist(q0));
  rs.masses.push_back(mass(q0));
  double abs_mass = 0.0;
  for (auto v : q0.values) abs_mass += std::abs(v.real());
  abs_mass *= g.spacing();

  for (int it = 1; it <= N; ++it) {
    const Field& prev = rs.iterates.back();
    RVec xs(n);
    std::vector<bool> inside(n);
    for (std::size_t i = 0; i < n; ++i) {
      double X = L * line_x(g, i);
      inside[i] = std::abs(X) < 0.5 * g.length;
      xs[i] = X + 0.5 * g.length;
    }
    CVec vals = fourier_interpolate(prev, 0, xs);
    Field start(g, 1);
    for (std::size_t i = 0; i < n; ++i)
      start(0, i) = inside[i] ? std::pow(L, s) * vals[i].real() : 0.0;
    // Mass of the part of q_{n-1} pushed off the domain.
    double lost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double X = line_x(g, i);
      if (std::abs(X) >= 0.5 * g.length / L) lost += std::abs(prev(0, i).real());
    }
    lost *= g.spacing();
    if (lost > 1e-6 * std::max(abs_mass, 1e-300)) {
      std::ostringstream os;
      os << "RG step " << it << " pushes mass " << lost << " off the domain; enlarge it";
      throw RegimeError(os.str());
    }
    BurgersProblem pn = p;
    const double Ln = std::pow(L, it);
    if (kind == ScalingKind::nonzero_mass) {
      pn.gamma = p.gamma * std::pow(Ln, -1.0 - p.degree());
    } else {
      pn.beta = p.beta / Ln;
      pn.gamma = p.gamma * std::pow(Ln, 3.0 - 2.0 * p.d1 - 3.0 * p.d2);
    }
    if (pn.gamma == 0.0) pn.d1 = pn.d2 = 0;
    auto tr = solve_burgers(pn, start, 1.0, dt, {}, 1.0 / (L * L));
    rs.iterates.push_back(tr.final());
    rs.masses.push_back(mass(tr.final()));
    rs.distances.push_back(dist(tr.final()));
    rs.ratios.push_back(rs.distances.back() / rs.distances[rs.distances.size() - 2]);
  }
  return rs;
}

}  // namespace wavemix

#endif
