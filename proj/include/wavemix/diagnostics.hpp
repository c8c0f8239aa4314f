#ifndef WAVEMIX_DIAGNOSTICS_HPP
#define WAVEMIX_DIAGNOSTICS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavemix/bloch.hpp"
#include "wavemix/burgers.hpp"
#include "wavemix/core.hpp"
#include "wavemix/simulate.hpp"
#include "wavemix/wavetrain.hpp"

namespace wavemix {

/** \brief Unwrapped phase relative to kx - omega t and q = d_x phi per snapshot. */
struct PhaseField {
  PeriodicGrid grid;
  RVec times;
  std::vector<RVec> phi, q;
  /// sup |u - u0(kx - omega t + phi)| per snapshot.
  RVec residual;
  /// min over x of the demodulated amplitude relative to the profile's first harmonic.
  RVec amplitude_ratio;
  TrajectoryMeta meta;

  std::size_t size() const { return times.size(); }
};

namespace diagnostics_detail {

/// First-harmonic vector a_1 of the profile, one entry per component.
inline CVec first_harmonic(const Field& profile) {
  SpectralCoeffs s = fourier_forward(profile);
  CVec a(profile.components);
  for (std::size_t c = 0; c < profile.components; ++c) a[c] = s.at(c, 1);
  return a;
}

/// Demodulation lowpass in units of k: 1 - 1e-5 at 1/2, 1e-5 at 1, Gaussian kernel tails.
inline double demod_filter(double kappa_over_k) {
  return 0.5 * std::erfc((std::abs(kappa_over_k) - 0.75) * 12.0);
}

inline double wrap_into(double x, double lo, double L) {
  double y = std::fmod(x - lo, L);
  if (y < 0.0) y += L;
  return lo + y;
}

}  // namespace diagnostics_detail

/** \brief Complex demodulation against the first harmonic of u0.
 *
 * z = lowpass[(a_1^* . u) e^{-i(kx - omega t)}] / |a_1|^2 and phi = arg z, unwrapped in x
 * and kept continuous across snapshots at x = 0. The lowpass is an erfc taper that
 * passes |kappa| <= k/2 and removes |kappa| >= k, where the other harmonics sit.
 */
inline PhaseField extract_phase(const Trajectory& traj, const WaveTrain& wt) {
  const PeriodicGrid g = traj.grid;
  const std::size_t n = g.n_points;
  const std::size_t N = wavelengths_in(g, wt.k);
  const CVec a1 = diagnostics_detail::first_harmonic(wt.profile);
  double a1sq = 0.0;
  for (auto v : a1) a1sq += std::norm(v);
  if (a1sq < 1e-16) throw RegimeError("wave-train profile has no first harmonic");
  double amp0 = 0.0;
  for (const auto& v : wt.profile.values) amp0 = std::max(amp0, std::abs(v));

  PhaseField out;
  out.grid = g;
  out.times = traj.times;
  out.meta = traj.meta;
  double prev0 = 0.0;
  const long shift_modes = static_cast<long>(N);
  for (std::size_t s = 0; s < traj.size(); ++s) {
    const double t = traj.times[s];
    const Field& u = traj.snapshots[s];
    Field proj(g, 1);
    for (std::size_t c = 0; c < u.components; ++c)
      for (std::size_t i = 0; i < n; ++i) proj(0, i) += std::conj(a1[c]) * u(c, i).real();
    SpectralCoeffs uc = fourier_forward(proj);
    SpectralCoeffs zc{g, 1, CVec(n, cplx(0.0))};
    const cplx rot = std::exp(cplx(0.0, wt.omega * t)) / a1sq;
    for (long j = -2 * shift_modes; j <= 2 * shift_modes; ++j) {
      const double w = diagnostics_detail::demod_filter(static_cast<double>(j) / static_cast<double>(N));
      if (w < 1e-300 || 2 * std::labs(j + shift_modes) >= static_cast<long>(n)) continue;
      zc.at(0, j) = w * uc.at(0, j + shift_modes) * rot;
    }
    Field z = fourier_inverse(zc);
    Field dz = spectral_derivative(z, 1);

    RVec phi(n), q(n);
    double amin = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
      amin = std::min(amin, std::abs(z(0, i)));
      phi[i] = std::arg(z(0, i));
      q[i] = (dz(0, i) / z(0, i)).imag();
    }
    if (amin < 0.1) {
      std::ostringstream os;
      os << "demodulated amplitude " << amin << " of the first harmonic at t=" << t
         << ", phase undefined";
      throw RegimeError(os.str());
    }
    for (std::size_t i = 1; i < n; ++i) {
      double jump = phi[i] - phi[i - 1];
      phi[i] -= 2.0 * pi * std::round(jump / (2.0 * pi));
    }
    double shift = 2.0 * pi * std::round((phi[0] - prev0) / (2.0 * pi));
    for (auto& v : phi) v -= shift;
    prev0 = phi[0];

    RVec theta(n);
    for (std::size_t i = 0; i < n; ++i) theta[i] = wt.k * g.x(i) - wt.omega * t + phi[i];
    Field model = profile_at(wt.profile, g, theta);
    double res = 0.0;
    for (std::size_t j = 0; j < u.values.size(); ++j)
      res = std::max(res, std::abs(u.values[j].real() - model.values[j].real()));
    if (res > 0.3 * amp0) {
      std::ostringstream os;
      os << "solution is " << res << " from the wave-train orbit at t=" << t
         << ", outside the decomposition regime";
      throw RegimeError(os.str());
    }
    out.phi.push_back(std::move(phi));
    out.q.push_back(std::move(q));
    out.residual.push_back(res);
    out.amplitude_ratio.push_back(amin);
  }
  return out;
}

/// sup distance from u to the wave train shifted by the mean extracted phase.
inline double orbit_distance(const Field& u, const WaveTrain& wt, double t) {
  Trajectory one;
  one.grid = u.grid;
  one.d = u.components;
  one.times = {t};
  one.snapshots = {u};
  PhaseField pf = extract_phase(one, wt);
  double mean = 0.0;
  for (double v : pf.phi[0]) mean += v;
  mean /= static_cast<double>(u.n());
  RVec theta(u.n());
  for (std::size_t i = 0; i < u.n(); ++i) theta[i] = wt.k * u.grid.x(i) - wt.omega * t + mean;
  Field model = profile_at(wt.profile, u.grid, theta);
  double d = 0.0;
  for (std::size_t j = 0; j < u.values.size(); ++j)
    d = std::max(d, std::abs(u.values[j].real() - model.values[j].real()));
  return d;
}

// ---------------------------------------------------------------------------
// Profile comparison

/// times are simulation times; rates use t + clock_offset.
struct DiagnosticSeries {
  RVec times;
  RVec sup_err;
  RVec weighted_err;
  /// Errors were multiplied by (t + clock_offset)^exponent.
  double exponent = 0.0;
  double clock_offset = 1.0;

  std::size_t size() const { return times.size(); }
};

enum class CompareKind { phase, wavenumber };

/// Window points in the frame X = x - x_center - c_g t, sorted by X.
struct FramePoints {
  std::vector<std::size_t> index;
  RVec X;
};

inline FramePoints frame_points(const PhaseField& pf, double c_g, double t) {
  const auto& m = pf.meta;
  const double L = pf.grid.length;
  const double lo = m.window_lo - m.x_center;
  const double width = std::min(m.window_hi - m.window_lo, L);
  std::vector<std::pair<double, std::size_t>> pts;
  for (std::size_t i = 0; i < pf.grid.n_points; ++i) {
    double X = diagnostics_detail::wrap_into(pf.grid.x(i) - m.x_center - c_g * t, lo, L);
    if (X < lo + width - 1e-12) pts.push_back({X, i});
  }
  std::sort(pts.begin(), pts.end());
  FramePoints fp;
  for (auto& [X, i] : pts) {
    fp.X.push_back(X);
    fp.index.push_back(i);
  }
  return fp;
}

/// Five-point derivative of a profile in x.
inline RVec profile_slope(const AsymptoticProfile& p, const RVec& X, double t) {
  const double h = 1e-3;
  auto at = [&](double s) {
    RVec Y(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] + s;
    return profile_eval(p, Y, t);
  };
  RVec m2 = at(-2 * h), m1 = at(-h), p1 = at(h), p2 = at(2 * h);
  RVec out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i)
    out[i] = (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) / (12.0 * h);
  return out;
}

/// (h sum rho^2 (e^2 + e_X^2))^{1/2}, rho^2 = 1 + X^2, centred differences.
inline double windowed_weighted_norm(const RVec& X, const RVec& e) {
  const std::size_t m = X.size();
  if (m < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t a = i == 0 ? 0 : i - 1, b = i + 1 == m ? m - 1 : i + 1;
    double de = (e[b] - e[a]) / (X[b] - X[a]);
    s += (1.0 + X[i] * X[i]) * (e[i] * e[i] + de * de);
  }
  return std::sqrt(s * (X[1] - X[0]));
}

/** \brief Errors of phi (or q) against the profile at (x - x_center - c_g t, t + offset). */
inline DiagnosticSeries compare_to_profile(const PhaseField& pf, const AsymptoticProfile& profile,
                                           double c_g, CompareKind kind, double exponent = 0.0) {
  DiagnosticSeries ser;
  ser.exponent = exponent;
  ser.clock_offset = pf.meta.clock_offset;
  for (std::size_t s = 0; s < pf.size(); ++s) {
    const double t = pf.times[s];
    const double tt = t + ser.clock_offset;
    FramePoints fp = frame_points(pf, c_g, t);
    RVec model = kind == CompareKind::phase ? profile_eval(profile, fp.X, tt)
                                            : profile_slope(profile, fp.X, tt);
    const RVec& data = kind == CompareKind::phase ? pf.phi[s] : pf.q[s];
    RVec e(fp.X.size());
    double sup = 0.0;
    for (std::size_t j = 0; j < fp.X.size(); ++j) {
      e[j] = data[fp.index[j]] - model[j];
      sup = std::max(sup, std::abs(e[j]));
    }
    const double scale = std::pow(tt, exponent);
    ser.times.push_back(t);
    ser.sup_err.push_back(scale * sup);
    ser.weighted_err.push_back(scale * windowed_weighted_norm(fp.X, e));
  }
  return ser;
}

/// Step profile matching the run: erf for beta = 0, log-erf otherwise.
inline AsymptoticProfile mixing_profile(const TrajectoryMeta& m, double beta_zero = 1e-6) {
  AsymptoticProfile p;
  p.alpha = m.alpha;
  p.beta = m.beta;
  p.phi_minus = m.phi_minus;
  p.phi_plus = m.phi_plus;
  p.kind = std::abs(m.beta) < beta_zero ? ProfileKind::erf_phase : ProfileKind::logerf_phase;
  return p;
}

/// phi_lim by least squares against G(X, t + offset) at snapshot s.
inline double fit_phi_lim(const PhaseField& pf, std::size_t s) {
  const double t = pf.times[s];
  FramePoints fp = frame_points(pf, pf.meta.c_g, t);
  AsymptoticProfile g;
  g.kind = ProfileKind::gaussian;
  g.alpha = pf.meta.alpha;
  g.A = 1.0;
  RVec G = profile_eval(g, fp.X, t + pf.meta.clock_offset);
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < G.size(); ++j) {
    num += pf.phi[s][fp.index[j]] * G[j];
    den += G[j] * G[j];
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Renormalized Fourier checks

enum class FourierTarget { uc_profile, mass_conservation };

struct FourierCheck {
  DiagnosticSeries series;
  /// h sum_window q, the total phase shift across the window.
  RVec mass;
  /// |<g, F>| / (|g| |F|) with g = i s e^{-alpha s^2}; uc_profile only.
  RVec correlation;
  /// Least-squares amplitude of g; uc_profile only.
  CVec amplitude;
};

/** \brief Rescaled transform sqrt(t) q^(s / sqrt t) against i s e^{-alpha s^2}, or mass drift.
 *
 * For uc_profile, sup_err is the largest deviation from the fitted multiple of the shape
 * and weighted_err is 1 - correlation. For mass_conservation, sup_err is |mass - mass(0)|
 * and weighted_err is |d mass / dt| between neighbouring snapshots.
 */
inline FourierCheck renormalized_fourier_check(const PhaseField& pf, double alpha,
                                               FourierTarget target, double s_max = 4.0,
                                               std::size_t samples = 81) {
  FourierCheck out;
  out.series.clock_offset = pf.meta.clock_offset;
  const double h = pf.grid.spacing();
  RVec svals(samples);
  for (std::size_t j = 0; j < samples; ++j)
    svals[j] = -s_max + 2.0 * s_max * j / static_cast<double>(samples - 1);
  for (std::size_t s = 0; s < pf.size(); ++s) {
    const double t = pf.times[s];
    const double tt = t + pf.meta.clock_offset;
    FramePoints fp = frame_points(pf, pf.meta.c_g, t);
    double m = 0.0;
    for (std::size_t j = 0; j < fp.X.size(); ++j) m += pf.q[s][fp.index[j]];
    m *= h;
    out.mass.push_back(m);
    out.series.times.push_back(t);
    if (target == FourierTarget::mass_conservation) {
      out.series.sup_err.push_back(std::abs(m - out.mass.front()));
      double rate = 0.0;
      if (s > 0) rate = std::abs(m - out.mass[s - 1]) / (t - pf.times[s - 1]);
      out.series.weighted_err.push_back(rate);
      continue;
    }
    CVec F(samples), gshape(samples);
    for (std::size_t j = 0; j < samples; ++j) {
      const double ell = svals[j] / std::sqrt(tt);
      cplx acc = 0.0;
      for (std::size_t p = 0; p < fp.X.size(); ++p)
        acc += pf.q[s][fp.index[p]] * std::exp(cplx(0.0, -ell * fp.X[p]));
      F[j] = std::sqrt(tt) * h * acc;
      gshape[j] = cplx(0.0, svals[j] * std::exp(-alpha * svals[j] * svals[j]));
    }
    cplx gf = 0.0;
    double gg = 0.0, ff = 0.0;
    for (std::size_t j = 0; j < samples; ++j) {
      gf += std::conj(gshape[j]) * F[j];
      gg += std::norm(gshape[j]);
      ff += std::norm(F[j]);
    }
    const cplx amp = gf / gg;
    double sup = 0.0;
    for (std::size_t j = 0; j < samples; ++j) sup = std::max(sup, std::abs(F[j] - amp * gshape[j]));
    const double corr = ff > 0.0 ? std::abs(gf) / std::sqrt(gg * ff) : 0.0;
    out.correlation.push_back(corr);
    out.amplitude.push_back(amp);
    out.series.sup_err.push_back(sup);
    out.series.weighted_err.push_back(1.0 - corr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rates

struct RateFit {
  double slope = 0.0, intercept = 0.0;
  /// Root-mean-square residual of the log-log fit.
  double residual = 0.0;
  double t_lo = 0.0, t_hi = 0.0;
  std::size_t points = 0;
};

/** \brief Least squares of log err against log(t + clock_offset) over t in [t_min, t_max]. */
inline RateFit fit_decay_rate(const DiagnosticSeries& ser, double t_min,
                              double t_max = std::numeric_limits<double>::infinity(),
                              bool use_weighted = false) {
  const RVec& err = use_weighted ? ser.weighted_err : ser.sup_err;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < ser.size(); ++s)
    if (ser.times[s] >= t_min - 1e-12 && ser.times[s] <= t_max + 1e-12) idx.push_back(s);
  if (idx.size() < 5) throw RegimeError("rate fit needs at least 5 points in the window");
  RMat A(idx.size(), 2);
  RVecE y(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double e = err[idx[r]];
    if (!(e > 0.0)) {
      std::ostringstream os;
      os << "non-positive error " << e << " at t=" << ser.times[idx[r]] << " cannot be fitted in log scale";
      throw InvalidField(os.str());
    }
    A(r, 0) = 1.0;
    A(r, 1) = std::log(ser.times[idx[r]] + ser.clock_offset);
    y(r) = std::log(e);
  }
  RVecE c = A.colPivHouseholderQr().solve(y);
  RateFit fit;
  fit.intercept = c(0);
  fit.slope = c(1);
  fit.residual = std::sqrt((A * c - y).squaredNorm() / static_cast<double>(idx.size()));
  fit.t_lo = ser.times[idx.front()];
  fit.t_hi = ser.times[idx.back()];
  fit.points = idx.size();
  return fit;
}

// ---------------------------------------------------------------------------
// Artifacts

inline void write_error_csv(const DiagnosticSeries& ser, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "t,sup_err,weighted_err\n";
  out << std::setprecision(17);
  for (std::size_t s = 0; s < ser.size(); ++s)
    out << ser.times[s] << "," << ser.sup_err[s] << "," << ser.weighted_err[s] << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

inline nlohmann::json rate_to_json(const RateFit& fit) {
  return {{"slope", fit.slope},
          {"intercept", fit.intercept},
          {"residual", fit.residual},
          {"window", {fit.t_lo, fit.t_hi}},
          {"points", fit.points}};
}

inline void write_rate_json(const RateFit& fit, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << rate_to_json(fit).dump(2) << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace wavemix

#endif
