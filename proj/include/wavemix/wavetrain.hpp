#ifndef WAVEMIX_WAVETRAIN_HPP
#define WAVEMIX_WAVETRAIN_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <vector>

#include "wavemix/core.hpp"
#include "wavemix/rdsys.hpp"

namespace wavemix {

/** \brief Periodic solution of k^2 D u'' + omega u' + f(u) = 0 on [0, 2pi). */
struct WaveTrain {
  double k = 0.0;
  double omega = 0.0;
  Field profile;
  double residual = 0.0;
  /// Sup-norm residual before each Newton step and after the last one.
  std::vector<double> newton_residuals;
  /// Sup-norm of each Newton update.
  std::vector<double> newton_steps;

  double c_p() const { return omega / k; }
  std::size_t M() const { return profile.n(); }
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iters = 25;
};

namespace detail {

/// Stacked real unknown vector (u_0 ... u_{d-1}) from a real Field.
inline RVecE pack(const Field& f) {
  RVecE v(f.values.size());
  for (std::size_t i = 0; i < f.values.size(); ++i) v(i) = f.values[i].real();
  return v;
}

inline Field unpack(const RVecE& v, const PeriodicGrid& g, std::size_t d) {
  Field f(g, d);
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = v(i);
  return f;
}

/// Real first and second collocation derivative matrices on [0, 2pi).
struct ProfileOps {
  RMat D1, D2;
  explicit ProfileOps(std::size_t M)
      : D1(spectral_diff_matrix(M, 2.0 * pi, 1).real()),
        D2(spectral_diff_matrix(M, 2.0 * pi, 2).real()) {}
};

inline RVecE point(const RVecE& u, int d, std::size_t M, std::size_t i) {
  RVecE p(d);
  for (int c = 0; c < d; ++c) p(c) = u(c * M + i);
  return p;
}

/// k^2 D u'' + omega u' + f(u)
inline RVecE bvp_residual(const RDSystem& sys, const ProfileOps& ops,
                          const RVecE& u, double k, double omega) {
  const int d = sys.d;
  const std::size_t M = static_cast<std::size_t>(u.size()) / d;
  RVecE r(u.size());
  std::vector<RVecE> u2(d), u1(d);
  for (int c = 0; c < d; ++c) {
    u2[c] = ops.D2 * u.segment(c * M, M);
    u1[c] = ops.D1 * u.segment(c * M, M);
  }
  for (std::size_t i = 0; i < M; ++i) {
    RVecE fi = sys.f(point(u, d, M, i));
    for (int a = 0; a < d; ++a) {
      double s = omega * u1[a](i) + fi(a);
      for (int b = 0; b < d; ++b) s += k * k * sys.D(a, b) * u2[b](i);
      r(a * M + i) = s;
    }
  }
  return r;
}

/// d(residual)/du: k^2 D (x) D2 + omega I (x) D1 + blockdiag f'(u_i)
inline RMat bvp_jacobian(const RDSystem& sys, const ProfileOps& ops,
                         const RVecE& u, double k, double omega) {
  const int d = sys.d;
  const std::size_t M = static_cast<std::size_t>(u.size()) / d;
  RMat J = RMat::Zero(d * M, d * M);
  for (int a = 0; a < d; ++a) {
    J.block(a * M, a * M, M, M) += omega * ops.D1;
    for (int b = 0; b < d; ++b)
      if (sys.D(a, b) != 0.0)
        J.block(a * M, b * M, M, M) += k * k * sys.D(a, b) * ops.D2;
  }
  for (std::size_t i = 0; i < M; ++i) {
    RMat Ji = sys.jac_f(point(u, d, M, i));
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) J(a * M + i, b * M + i) += Ji(a, b);
  }
  return J;
}

/// [J, D1 u; h (D1 g)^T, 0]
inline RMat bordered(const RMat& J, const RVecE& du, const RVecE& dg, double h) {
  const Eigen::Index N = J.rows();
  RMat B = RMat::Zero(N + 1, N + 1);
  B.topLeftCorner(N, N) = J;
  B.topRightCorner(N, 1) = du;
  B.bottomLeftCorner(1, N) = h * dg.transpose();
  return B;
}

inline RVecE apply_blockwise(const RMat& A, const RVecE& u, int d) {
  const Eigen::Index M = A.rows();
  RVecE r(u.size());
  for (int c = 0; c < d; ++c) r.segment(c * M, M) = A * u.segment(c * M, M);
  return r;
}

inline void check_solvable(const Eigen::PartialPivLU<RMat>& lu, const RMat& B,
                           const char* what) {
  // Cheap reciprocal condition estimate from the LU factors.
  double umax = lu.matrixLU().diagonal().cwiseAbs().maxCoeff();
  double umin = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(umin > 1e-13 * std::max(umax, B.cwiseAbs().maxCoeff())))
    throw ConvergenceError(std::string(what) + ": bordered Jacobian is singular");
}

}  // namespace detail

/// Degenerate-guess errors are reported as RegimeError.
struct DegenerateGuess : RegimeError {
  using RegimeError::RegimeError;
};

inline double wave_train_residual(const RDSystem& sys, const WaveTrain& wt) {
  detail::ProfileOps ops(wt.M());
  return detail::bvp_residual(sys, ops, detail::pack(wt.profile), wt.k, wt.omega)
      .cwiseAbs()
      .maxCoeff();
}

inline WaveTrain solve_wave_train(const RDSystem& sys, double k,
                                  const Field& guess, double omega_guess,
                                  const NewtonOptions& opt = {}) {
  if (k == 0.0 || !std::isfinite(k)) throw RegimeError("wave number must be nonzero");
  if (static_cast<int>(guess.components) != sys.d)
    throw InvalidField("guess has wrong number of components");
  const std::size_t M = guess.n();
  const int d = sys.d;
  const double h = 2.0 * pi / static_cast<double>(M);
  detail::ProfileOps ops(M);

  RVecE g = detail::pack(guess);
  RVecE dg = detail::apply_blockwise(ops.D1, g, d);
  if (dg.cwiseAbs().maxCoeff() < 1e-10)
    throw DegenerateGuess("guess is spatially constant, phase condition degenerate");

  RVecE u = g;
  double omega = omega_guess;
  WaveTrain wt;
  wt.k = k;
  for (int it = 0;; ++it) {
    RVecE F = detail::bvp_residual(sys, ops, u, k, omega);
    double phase = h * dg.dot(u - g);
    double res = std::max(F.cwiseAbs().maxCoeff(), std::abs(phase));
    if (!std::isfinite(res)) {
      throw ConvergenceError("Newton diverged (non-finite residual)");
    }
    wt.newton_residuals.push_back(res);
    if (res <= opt.tol) break;
    if (it >= opt.max_iters) {
      std::ostringstream os;
      os << "Newton did not converge in " << opt.max_iters
         << " iterations, last residual " << res;
      throw ConvergenceError(os.str());
    }
    RMat J = detail::bvp_jacobian(sys, ops, u, k, omega);
    RVecE du = detail::apply_blockwise(ops.D1, u, d);
    RMat B = detail::bordered(J, du, dg, h);
    Eigen::PartialPivLU<RMat> lu(B);
    try {
      detail::check_solvable(lu, B, "solve_wave_train");
    } catch (const ConvergenceError& e) {
      throw DegenerateGuess(e.what());
    }
    RVecE rhs(F.size() + 1);
    rhs << -F, -phase;
    RVecE step = lu.solve(rhs);
    u += step.head(F.size());
    omega += step(F.size());
    wt.newton_steps.push_back(step.cwiseAbs().maxCoeff());
  }
  if (detail::apply_blockwise(ops.D1, u, d).cwiseAbs().maxCoeff() < 1e-8)
    throw ConvergenceError("Newton collapsed onto a spatially constant state");
  wt.omega = omega;
  wt.profile = detail::unpack(u, guess.grid, d);
  wt.residual = wt.newton_residuals.back();
  return wt;
}

/// Closed-form lambda-omega profile r(cos, sin), r = sqrt(1-k^2).
inline Field lambda_omega_profile(double k, std::size_t M = 64,
                                  double shift = 0.0) {
  if (std::abs(k) >= 1.0) throw RegimeError("lambda-omega wave trains need |k| < 1");
  PeriodicGrid g(M, 2.0 * pi);
  Field f(g, 2);
  double r = std::sqrt(1.0 - k * k);
  for (std::size_t i = 0; i < M; ++i) {
    f(0, i) = r * std::cos(g.x(i) + shift);
    f(1, i) = r * std::sin(g.x(i) + shift);
  }
  return f;
}

/** \brief Samples of k -> omega(k) with the wave trains that produced them. */
struct DispersionBranch {
  std::vector<double> k_samples;
  std::vector<double> omega_samples;
  std::vector<std::shared_ptr<const WaveTrain>> trains;
  /// Interval actually reached; smaller than requested after a failure.
  double k_reached_min = 0.0, k_reached_max = 0.0;
  bool truncated = false;

  std::size_t size() const { return k_samples.size(); }
  std::size_t nearest(double k) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < size(); ++i)
      if (std::abs(k_samples[i] - k) < std::abs(k_samples[best] - k)) best = i;
    return best;
  }
};

inline DispersionBranch continue_branch(const RDSystem& sys, double k_min,
                                        double k_max, int steps,
                                        const WaveTrain& seed,
                                        const NewtonOptions& opt = {}) {
  if (k_max < k_min) throw RegimeError("continue_branch needs k_min <= k_max");
  if (seed.k < k_min - 1e-14 || seed.k > k_max + 1e-14)
    throw RegimeError("seed wave number outside the continuation interval");
  DispersionBranch br;
  if (steps == 1 && k_min == k_max) {
    br.k_samples = {seed.k};
    br.omega_samples = {seed.omega};
    br.trains = {std::make_shared<const WaveTrain>(seed)};
    br.k_reached_min = br.k_reached_max = seed.k;
    return br;
  }
  if (steps < 8) throw RegimeError("continue_branch needs at least 8 steps");

  std::vector<double> ks(steps);
  for (int i = 0; i < steps; ++i)
    ks[i] = k_min + (k_max - k_min) * i / static_cast<double>(steps - 1);
  std::size_t start = 0;
  for (int i = 0; i < steps; ++i)
    if (std::abs(ks[i] - seed.k) < std::abs(ks[start] - seed.k)) start = i;

  std::map<double, std::shared_ptr<const WaveTrain>> solved;
  auto sweep = [&](int dir) {
    const WaveTrain* prev = &seed;
    for (int i = static_cast<int>(start); i >= 0 && i < steps; i += dir) {
      try {
        auto wt = std::make_shared<const WaveTrain>(
            solve_wave_train(sys, ks[i], prev->profile, prev->omega, opt));
        solved[ks[i]] = wt;
        prev = wt.get();
      } catch (const Error&) {
        if (i == static_cast<int>(start)) throw;
        br.truncated = true;
        return;
      }
    }
  };
  sweep(+1);
  sweep(-1);
  for (const auto& [kk, wt] : solved) {
    br.k_samples.push_back(kk);
    br.omega_samples.push_back(wt->omega);
    br.trains.push_back(wt);
  }
  br.k_reached_min = br.k_samples.front();
  br.k_reached_max = br.k_samples.back();
  return br;
}

struct DispersionDerivatives {
  double c_g = 0.0;
  double omega_kk = 0.0;
  double beta = 0.0;
};

/// Local quartic least-squares fit through the 5-9 samples nearest k.
inline DispersionDerivatives dispersion_derivatives(const DispersionBranch& br,
                                                    double k) {
  const std::size_t n = br.size();
  if (n < 5 || k < br.k_samples.front() || k > br.k_samples.back())
    throw RegimeError("query wave number outside the continued branch");
  std::size_t below = 0, above = 0;
  for (double s : br.k_samples) {
    if (s < k - 1e-14) ++below;
    if (s > k + 1e-14) ++above;
  }
  if (below < 2 || above < 2)
    throw RegimeError("query wave number needs two branch samples on each side");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(br.k_samples[a] - k) < std::abs(br.k_samples[b] - k);
  });
  const std::size_t m = std::min<std::size_t>(9, n);
  double scale = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    scale = std::max(scale, std::abs(br.k_samples[idx[j]] - k));
  RMat A(m, 5);
  RVecE y(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = (br.k_samples[idx[j]] - k) / scale;
    for (int p = 0; p < 5; ++p) A(j, p) = std::pow(s, p);
    y(j) = br.omega_samples[idx[j]];
  }
  RVecE c = A.colPivHouseholderQr().solve(y);
  DispersionDerivatives out;
  out.c_g = c(1) / scale;
  out.omega_kk = 2.0 * c(2) / (scale * scale);
  out.beta = -0.5 * out.omega_kk;
  return out;
}

/** \brief k-derivative of a wave train, with d omega/dk from the same solve. */
struct ProfileDerivative {
  Field dk_u;
  double dk_omega = 0.0;
};

/// Differentiates the profile equation in k; phase fixed by <u0', u_k> = 0.
inline ProfileDerivative dk_profile(const RDSystem& sys, const WaveTrain& wt) {
  const std::size_t M = wt.M();
  const int d = sys.d;
  const double h = 2.0 * pi / static_cast<double>(M);
  detail::ProfileOps ops(M);
  RVecE u = detail::pack(wt.profile);
  RVecE du = detail::apply_blockwise(ops.D1, u, d);
  RVecE d2u = detail::apply_blockwise(ops.D2, u, d);
  RMat J = detail::bvp_jacobian(sys, ops, u, wt.k, wt.omega);
  RMat B = detail::bordered(J, du, du, h);
  Eigen::PartialPivLU<RMat> lu(B);
  detail::check_solvable(lu, B, "dk_profile");
  // d/dk of k^2 D u'' is 2k D u''.
  RVecE rhs = RVecE::Zero(u.size() + 1);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      rhs.segment(a * M, M) -= 2.0 * wt.k * sys.D(a, b) * d2u.segment(b * M, M);
  RVecE sol = lu.solve(rhs);
  ProfileDerivative pd;
  pd.dk_u = detail::unpack(sol.head(u.size()), wt.profile.grid, d);
  pd.dk_omega = sol(u.size());
  return pd;
}

inline ProfileDerivative dk_profile(const RDSystem& sys,
                                    const DispersionBranch& br, double k) {
  if (br.size() < 3 || k <= br.k_samples.front() || k >= br.k_samples.back())
    throw RegimeError("dk_profile needs k interior to the branch");
  const WaveTrain& near = *br.trains[br.nearest(k)];
  if (std::abs(near.k - k) < 1e-14) return dk_profile(sys, near);
  return dk_profile(sys, solve_wave_train(sys, k, near.profile, near.omega));
}

/// Centred difference of profiles at k +- h, phase pinned to wt.
inline Field dk_profile_fd(const RDSystem& sys, const WaveTrain& wt, double h) {
  WaveTrain p = solve_wave_train(sys, wt.k + h, wt.profile, wt.omega);
  WaveTrain m = solve_wave_train(sys, wt.k - h, wt.profile, wt.omega);
  Field out(wt.profile.grid, wt.profile.components);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = (p.profile.values[i] - m.profile.values[i]) / (2.0 * h);
  return out;
}

}  // namespace wavemix

#endif
