#ifndef WAVEMIX_SIMULATE_HPP
#define WAVEMIX_SIMULATE_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavemix/bloch.hpp"
#include "wavemix/burgers.hpp"
#include "wavemix/core.hpp"
#include "wavemix/rdsys.hpp"
#include "wavemix/wavetrain.hpp"

namespace wavemix {

// ---------------------------------------------------------------------------
// Initial data

enum class PhaseKind { zero, gaussian_bump, tanh_step };

/** \brief u(x,0) = u0(kx - theta0 + phi0(x)) + v0(x).
 *
 * The gaussian bump is A exp(-(x-c)^2/(2 w^2)). The tanh step rises from phi_minus
 * to phi_plus at c and falls back half a domain later, so the data stay periodic.
 * A NaN center means L/2 for bumps and L/4 for steps.
 */
struct InitialDataSpec {
  double theta0 = 0.0;
  PhaseKind phi0_kind = PhaseKind::zero;
  double amplitude = 0.0;
  double width = 1.0;
  double phi_minus = 0.0, phi_plus = 0.0;
  double center = std::nan("");
  /// Gaussian v0 with one amplitude per component; empty means v0 = 0.
  RVec v0_amplitudes;
  double v0_width = 1.0;
  double v0_center = std::nan("");
  /// Use u0(.; k + phi0') to first order through dk_u0.
  bool wavenumber_consistent = false;

  double phi_d() const { return phi_plus - phi_minus; }
};

inline double phase_center(const InitialDataSpec& s, const PeriodicGrid& g) {
  if (!std::isnan(s.center)) return s.center;
  return s.phi0_kind == PhaseKind::tanh_step ? 0.25 * g.length : 0.5 * g.length;
}

/// phi0 and its x-derivative on the grid.
inline std::pair<RVec, RVec> initial_phase(const InitialDataSpec& s, const PeriodicGrid& g) {
  const std::size_t n = g.n_points;
  RVec phi(n, 0.0), dphi(n, 0.0);
  const double c = phase_center(s, g);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g.x(i);
    switch (s.phi0_kind) {
      case PhaseKind::zero:
        break;
      case PhaseKind::gaussian_bump: {
        double y = x - c;
        double e = std::exp(-y * y / (2.0 * s.width * s.width));
        phi[i] = s.amplitude * e;
        dphi[i] = -s.amplitude * y / (s.width * s.width) * e;
        break;
      }
      case PhaseKind::tanh_step: {
        double a = (x - c) / s.width;
        double b = (x - c - 0.5 * g.length) / s.width;
        double ta = std::tanh(a), tb = std::tanh(b);
        phi[i] = s.phi_minus + 0.5 * s.phi_d() * (ta - tb);
        dphi[i] = 0.5 * s.phi_d() / s.width * ((1.0 - ta * ta) - (1.0 - tb * tb));
        break;
      }
    }
  }
  return {phi, dphi};
}

/// Profile components evaluated at arbitrary phases.
inline Field profile_at(const Field& profile, const PeriodicGrid& g, const RVec& theta) {
  Field out(g, profile.components);
  RVec wrapped(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    wrapped[i] = std::fmod(theta[i], 2.0 * pi);
    if (wrapped[i] < 0.0) wrapped[i] += 2.0 * pi;
  }
  for (std::size_t c = 0; c < profile.components; ++c) {
    CVec v = fourier_interpolate(profile, c, wrapped);
    for (std::size_t i = 0; i < g.n_points; ++i) out(c, i) = v[i].real();
  }
  return out;
}

/** \brief Wave train plus phase and amplitude perturbation on a commensurate grid.
 *
 * dk_u0 is only read when spec.wavenumber_consistent is set.
 */
inline Field build_initial_data(const WaveTrain& wt, const InitialDataSpec& spec,
                                const PeriodicGrid& g, const Field* dk_u0 = nullptr) {
  wavelengths_in(g, wt.k);
  if (spec.phi0_kind == PhaseKind::tanh_step && std::abs(spec.phi_d()) > 0.5 + 1e-12)
    throw RegimeError("phase step |phi_+ - phi_-| must not exceed 0.5");
  if (spec.phi0_kind != PhaseKind::zero && !(spec.width > 0.0))
    throw ConfigError("phase perturbation width must be positive");
  auto [phi, dphi] = initial_phase(spec, g);
  double slope = 0.0;
  for (double v : dphi) slope = std::max(slope, std::abs(v));
  if (slope > 0.2 + 1e-12) {
    std::ostringstream os;
    os << "sup |phi0'| = " << slope << " exceeds 0.2";
    throw RegimeError(os.str());
  }
  const std::size_t n = g.n_points;
  RVec theta(n);
  for (std::size_t i = 0; i < n; ++i) theta[i] = wt.k * g.x(i) - spec.theta0 + phi[i];
  Field u = profile_at(wt.profile, g, theta);

  if (spec.wavenumber_consistent) {
    if (!dk_u0) throw ConfigError("wave-number-consistent data need dk_u0");
    Field uk = profile_at(*dk_u0, g, theta);
    for (std::size_t c = 0; c < u.components; ++c)
      for (std::size_t i = 0; i < n; ++i) u(c, i) += dphi[i] * uk(c, i);
  }
  if (!spec.v0_amplitudes.empty()) {
    if (spec.v0_amplitudes.size() != u.components)
      throw ConfigError("v0 needs one amplitude per component");
    if (!(spec.v0_width > 0.0)) throw ConfigError("v0 width must be positive");
    const double c0 = std::isnan(spec.v0_center) ? 0.5 * g.length : spec.v0_center;
    for (std::size_t c = 0; c < u.components; ++c)
      for (std::size_t i = 0; i < n; ++i) {
        double y = g.x(i) - c0;
        u(c, i) += spec.v0_amplitudes[c] * std::exp(-y * y / (2.0 * spec.v0_width * spec.v0_width));
      }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Time integration

/// Quantities downstream renormalization needs. t_theory = t + clock_offset.
struct TrajectoryMeta {
  double k = 0.0, omega = 0.0, c_p = 0.0, c_g = 0.0, alpha = 0.0, beta = 0.0;
  double clock_offset = 1.0;
  /// Interface or bump position at t = 0 and the analysis window [lo, hi).
  double x_center = 0.0, window_lo = 0.0, window_hi = 0.0;
  double phi_minus = 0.0, phi_plus = 0.0;
  std::string system;
  bool stopped_early = false;
  Warnings warnings;
};

struct Trajectory {
  PeriodicGrid grid;
  std::size_t d = 0;
  RVec times;
  std::vector<Field> snapshots;
  TrajectoryMeta meta;

  std::size_t size() const { return times.size(); }
};

namespace simulate_detail {

/// Lawson RK4 for w' = L w + N(w) with diagonal L, one rate per entry.
inline void lawson_step(CVec& w, const RVec& rate, double dt,
                        const std::function<void(const CVec&, CVec&)>& rhs) {
  const std::size_t n = w.size();
  CVec E(n), E2(n), k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t j = 0; j < n; ++j) {
    E[j] = std::exp(rate[j] * 0.5 * dt);
    E2[j] = E[j] * E[j];
  }
  rhs(w, k1);
  for (std::size_t j = 0; j < n; ++j) tmp[j] = E[j] * (w[j] + 0.5 * dt * k1[j]);
  rhs(tmp, k2);
  for (std::size_t j = 0; j < n; ++j) tmp[j] = E[j] * w[j] + 0.5 * dt * k2[j];
  rhs(tmp, k3);
  for (std::size_t j = 0; j < n; ++j) tmp[j] = E2[j] * w[j] + dt * E[j] * k3[j];
  rhs(tmp, k4);
  for (std::size_t j = 0; j < n; ++j)
    w[j] = E2[j] * w[j] + dt / 6.0 * (E2[j] * k1[j] + 2.0 * E[j] * (k2[j] + k3[j]) + k4[j]);
}

}  // namespace simulate_detail

/** \brief Pseudo-spectral solve of u_t = D u_xx + f(u) on a periodic grid.
 *
 * D = V diag(mu) V^T is diagonalized once; diffusion is exact in the modal Fourier
 * basis and the reaction goes through Lawson RK4 stages. Snapshots at t = 0, the
 * requested times and T. Steps are shortened to land on snapshot times.
 */
inline Trajectory integrate_rd(const RDSystem& sys, const Field& u_ic, double T, double dt,
                               RVec times = {}, double growth_bound = 2.0) {
  if (!(dt > 0.0) || dt > 0.05 + 1e-15) throw ConfigError("integrate_rd needs 0 < dt <= 0.05");
  if (!(T >= 0.0) || !std::isfinite(T)) throw ConfigError("integrate_rd needs a finite T >= 0");
  if (u_ic.components != static_cast<std::size_t>(sys.d))
    throw InvalidField("initial data have the wrong number of components");
  require_finite(u_ic);
  validate_diffusion(sys.D);

  const PeriodicGrid g = u_ic.grid;
  const std::size_t n = g.n_points, d = u_ic.components;
  Eigen::SelfAdjointEigenSolver<RMat> es(sys.D);
  const RMat V = es.eigenvectors();
  const RVecE mu = es.eigenvalues();

  RVec rate(n * d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t j = 0; j < n; ++j)
      rate[a * n + j] = -mu(static_cast<Eigen::Index>(a)) * std::pow(g.wavenumber(j), 2);

  FftPlan plan(n);
  CVec buf(n), phys(n * d), comp(n * d);
  // Modal spectrum -> physical fields (real parts).
  auto to_physical = [&](const CVec& w, CVec& out) {
    for (std::size_t a = 0; a < d; ++a) {
      plan.inverse(w.data() + a * n, buf.data());
      for (std::size_t i = 0; i < n; ++i) comp[a * n + i] = buf[i].real();
    }
    for (std::size_t b = 0; b < d; ++b)
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a)
          s += V(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) * comp[a * n + i].real();
        out[b * n + i] = s;
      }
  };
  auto to_modal = [&](const CVec& u, CVec& w) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b)
          s += V(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) * u[b * n + i].real();
        buf[i] = s;
      }
      plan.forward(buf.data(), w.data() + a * n);
    }
  };
  RVecE point(static_cast<Eigen::Index>(d));
  CVec fvals(n * d);
  auto rhs = [&](const CVec& w, CVec& out) {
    to_physical(w, phys);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < d; ++b) point(static_cast<Eigen::Index>(b)) = phys[b * n + i].real();
      RVecE fv = sys.f(point);
      for (std::size_t b = 0; b < d; ++b) fvals[b * n + i] = fv(static_cast<Eigen::Index>(b));
    }
    to_modal(fvals, out);
  };

  CVec w(n * d);
  to_modal(u_ic.values, w);
  const double bound0 = sup_norm(u_ic);

  times.push_back(T);
  times.push_back(0.0);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              times.end());
  if (times.front() < -1e-12) throw ConfigError("snapshot times must be non-negative");
  if (times.back() > T + 1e-12) throw ConfigError("snapshot time beyond T");

  Trajectory traj;
  traj.grid = g;
  traj.d = d;
  traj.meta.system = sys.name;
  double t = 0.0;
  CVec phys_out(n * d);
  for (double target : times) {
    while (t < target - 1e-12) {
      const double remaining = target - t;
      const double steps = std::ceil(remaining / dt - 1e-9);
      const double h = remaining / steps;
      simulate_detail::lawson_step(w, rate, h, rhs);
      t = (std::abs(target - t - h) < 1e-12) ? target : t + h;
      to_physical(w, phys_out);
      double s = 0.0;
      bool finite = true;
      for (const auto& v : phys_out) {
        if (!std::isfinite(v.real())) finite = false;
        s = std::max(s, std::abs(v.real()));
      }
      if (!finite || (bound0 > 0.0 && s > growth_bound * bound0)) {
        std::ostringstream os;
        os << "solution left the bound " << growth_bound << " x sup|u(0)| near t=" << t;
        throw InstabilityError(os.str());
      }
    }
    to_physical(w, phys_out);
    Field snap(g, d);
    snap.values = phys_out;
    traj.times.push_back(target);
    traj.snapshots.push_back(std::move(snap));
  }
  return traj;
}

/// T, T/r, T/r^2, ... down to t_min, ascending.
inline RVec geometric_times(double t_min, double T, double ratio = std::sqrt(2.0)) {
  if (!(t_min > 0.0) || !(T >= t_min) || !(ratio > 1.0))
    throw ConfigError("geometric_times needs 0 < t_min <= T and ratio > 1");
  RVec out;
  for (double t = T; t >= t_min * (1.0 - 1e-12); t /= ratio) out.push_back(t);
  std::reverse(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Mixing experiments

struct MixingExperiment {
  RDSystem system;
  WaveTrain wave_train;
  InitialDataSpec initial;
  std::size_t wavelengths = 256;
  std::size_t points_per_wavelength = 16;
  double T_final = 100.0;
  double dt = 0.05;
  double snapshot_ratio = std::sqrt(2.0);
  double first_snapshot = 1.0;
  /// Bloch samples over the Brillouin zone for the stability check; 0 skips it.
  std::size_t stability_samples = 64;

  double domain_length() const { return static_cast<double>(wavelengths) * 2.0 * pi / std::abs(wave_train.k); }
};

/// c_g and beta from a local branch, alpha from the critical Bloch curve.
struct ModulationCoefficients {
  double c_g = 0.0, beta = 0.0, alpha = 0.0;
  double dk_omega = 0.0;
  std::optional<StabilityReport> stability;
  Field dk_u0;
};

inline ModulationCoefficients modulation_coefficients(const RDSystem& sys, const WaveTrain& wt,
                                                      std::size_t stability_samples = 64) {
  ModulationCoefficients mc;
  const double dk = std::min(0.05, 0.2 * std::abs(wt.k));
  DispersionBranch br = continue_branch(sys, wt.k - dk, wt.k + dk, 11, wt);
  if (br.truncated) throw RegimeError("wave-train branch ends within 0.05 of k");
  DispersionDerivatives dd = dispersion_derivatives(br, wt.k);
  mc.c_g = dd.c_g;
  mc.beta = dd.beta;
  ProfileDerivative pd = dk_profile(sys, wt);
  mc.dk_u0 = pd.dk_u;
  mc.dk_omega = pd.dk_omega;

  RVec grid = symmetric_grid(0.02, 4);
  if (stability_samples > 0) {
    RVec bz = brillouin_grid(wt.k, stability_samples);
    grid.insert(grid.end(), bz.begin(), bz.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               grid.end());
  }
  BlochEigenData data = compute_spectrum(sys, wt, grid);
  mc.alpha = data.alpha;
  if (stability_samples > 0) mc.stability = verify_hypothesis1(data);
  return mc;
}

/** \brief Integrates the experiment on a grid of wavelengths * points_per_wavelength points.
 *
 * Snapshots at t = 0 and geometrically spaced times up to T_final. When the front width
 * sqrt(alpha (t+1)) exceeds a quarter domain the run stops with a warning.
 */
inline Trajectory run_mixing_experiment(const MixingExperiment& exp) {
  if (!(exp.T_final >= 100.0)) throw ConfigError("mixing experiments need T_final >= 100");
  if (exp.points_per_wavelength < 8) throw ConfigError("need at least 8 points per wavelength");
  const WaveTrain& wt = exp.wave_train;
  ModulationCoefficients mc = modulation_coefficients(exp.system, wt, exp.stability_samples);
  TrajectoryMeta meta;
  if (mc.stability && !mc.stability->stable)
    throw RegimeError("wave train fails the spectral stability check");
  if (!(mc.alpha > 0.0)) throw RegimeError("critical Bloch curve has no positive diffusion");

  const PeriodicGrid g(exp.wavelengths * exp.points_per_wavelength, exp.domain_length());
  Field u_ic = build_initial_data(wt, exp.initial, g, &mc.dk_u0);

  RVec times = geometric_times(exp.first_snapshot, exp.T_final, exp.snapshot_ratio);
  RVec kept;
  for (double t : times) {
    if (std::sqrt(mc.alpha * (t + 1.0)) > 0.25 * g.length) {
      meta.stopped_early = true;
      std::ostringstream os;
      os << "front width reaches a quarter domain before t=" << t << ", stopping early";
      meta.warnings.push_back(os.str());
      break;
    }
    kept.push_back(t);
  }
  if (kept.empty()) throw RegimeError("domain too short for any snapshot before fronts interact");

  Trajectory traj = integrate_rd(exp.system, u_ic, kept.back(), exp.dt, kept);
  meta.k = wt.k;
  meta.omega = wt.omega;
  meta.c_p = wt.c_p();
  meta.c_g = mc.c_g;
  meta.alpha = mc.alpha;
  meta.beta = mc.beta;
  meta.system = exp.system.name;
  meta.x_center = phase_center(exp.initial, g);
  if (exp.initial.phi0_kind == PhaseKind::tanh_step) {
    meta.window_lo = meta.x_center - 0.25 * g.length;
    meta.window_hi = meta.x_center + 0.25 * g.length;
  } else {
    meta.window_lo = meta.x_center - 0.5 * g.length;
    meta.window_hi = meta.x_center + 0.5 * g.length;
  }
  meta.phi_minus = exp.initial.phi_minus;
  meta.phi_plus = exp.initial.phi0_kind == PhaseKind::tanh_step ? exp.initial.phi_plus
                                                                 : exp.initial.phi_minus;
  if (mc.stability)
    for (const auto& w : mc.stability->warnings) meta.warnings.push_back(w);
  traj.meta = meta;
  return traj;
}

// ---------------------------------------------------------------------------
// Persistence: meta.json plus u_XXXX.bin per snapshot, little-endian float64,
// component-major then grid index.

inline nlohmann::json meta_to_json(const Trajectory& traj) {
  const auto& m = traj.meta;
  nlohmann::json j;
  j["k"] = m.k;
  j["omega"] = m.omega;
  j["c_p"] = m.c_p;
  j["c_g"] = m.c_g;
  j["alpha"] = m.alpha;
  j["beta"] = m.beta;
  j["clock_offset"] = m.clock_offset;
  j["x_center"] = m.x_center;
  j["window"] = {m.window_lo, m.window_hi};
  j["phi_minus"] = m.phi_minus;
  j["phi_plus"] = m.phi_plus;
  j["system"] = m.system;
  j["stopped_early"] = m.stopped_early;
  j["warnings"] = m.warnings;
  j["grid"] = {{"n_points", traj.grid.n_points}, {"length", traj.grid.length}, {"components", traj.d}};
  j["times"] = traj.times;
  j["layout"] = "float64 little-endian, component-major then grid index";
  return j;
}

inline std::string snapshot_name(std::size_t s) {
  std::ostringstream os;
  os << "u_" << std::setw(4) << std::setfill('0') << s << ".bin";
  return os.str();
}

namespace simulate_detail {
inline void put_le(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_le(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw InvalidField("truncated snapshot file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}
}  // namespace simulate_detail

inline void write_trajectory(const Trajectory& traj, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "meta.json");
  meta << meta_to_json(traj).dump(2) << "\n";
  for (std::size_t s = 0; s < traj.size(); ++s) {
    std::ofstream out(dir / snapshot_name(s), std::ios::binary);
    for (const auto& v : traj.snapshots[s].values) simulate_detail::put_le(out, v.real());
    if (!out) throw Error("failed writing " + (dir / snapshot_name(s)).string());
  }
}

inline Trajectory read_trajectory(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw ConfigError("no meta.json in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in);
  Trajectory traj;
  traj.grid = PeriodicGrid(j["grid"]["n_points"].get<std::size_t>(), j["grid"]["length"].get<double>());
  traj.d = j["grid"]["components"].get<std::size_t>();
  traj.times = j["times"].get<RVec>();
  auto& m = traj.meta;
  m.k = j["k"];
  m.omega = j["omega"];
  m.c_p = j["c_p"];
  m.c_g = j["c_g"];
  m.alpha = j["alpha"];
  m.beta = j["beta"];
  m.clock_offset = j["clock_offset"];
  m.x_center = j["x_center"];
  m.window_lo = j["window"][0];
  m.window_hi = j["window"][1];
  m.phi_minus = j["phi_minus"];
  m.phi_plus = j["phi_plus"];
  m.system = j["system"];
  m.stopped_early = j["stopped_early"];
  m.warnings = j["warnings"].get<Warnings>();
  for (std::size_t s = 0; s < traj.times.size(); ++s) {
    std::ifstream f(dir / snapshot_name(s), std::ios::binary);
    if (!f) throw ConfigError("missing snapshot " + snapshot_name(s));
    Field u(traj.grid, traj.d);
    for (auto& v : u.values) v = simulate_detail::get_le(f);
    traj.snapshots.push_back(std::move(u));
  }
  return traj;
}

}  // namespace wavemix

#endif
