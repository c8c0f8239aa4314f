#ifndef WAVEMIX_BLOCH_HPP
#define WAVEMIX_BLOCH_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wavemix/core.hpp"
#include "wavemix/rdsys.hpp"
#include "wavemix/wavetrain.hpp"

namespace wavemix {

using CMat = Eigen::MatrixXcd;
using CVecE = Eigen::VectorXcd;

// ---------------------------------------------------------------------------
// Profile-space helpers. Inner products are over [0, 2pi), conjugate-linear
// in the first slot.

namespace bloch_detail {

inline CVecE to_vec(const Field& f) {
  CVecE v(static_cast<Eigen::Index>(f.values.size()));
  for (std::size_t i = 0; i < f.values.size(); ++i) v(i) = f.values[i];
  return v;
}

inline Field to_field(const CVecE& v, const PeriodicGrid& g, std::size_t d) {
  Field f(g, d);
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = v(i);
  return f;
}

inline cplx inner(const CVecE& u, const CVecE& v, std::size_t M) {
  return u.dot(v) * (2.0 * pi / static_cast<double>(M));
}

inline double norm(const CVecE& u, std::size_t M) {
  return std::sqrt(inner(u, u, M).real());
}

inline CVecE blockwise(const CMat& A, const CVecE& u, std::size_t d) {
  const Eigen::Index M = A.rows();
  CVecE r(u.size());
  for (std::size_t c = 0; c < d; ++c)
    r.segment(c * M, M) = A * u.segment(c * M, M);
  return r;
}

}  // namespace bloch_detail

/// d theta u0 as a Field.
inline Field profile_derivative(const WaveTrain& wt, int order = 1) {
  return spectral_derivative(wt.profile, order);
}

/** \brief Collocation matrix of k^2 D (d + i l/k)^2 + omega (d + i l/k) + f'(u0). */
inline CMat assemble_bloch_operator(const RDSystem& sys, const WaveTrain& wt,
                                    double ell) {
  if (std::abs(ell) > 0.5 * std::abs(wt.k) + 1e-12)
    throw RegimeError("Bloch wave number outside the Brillouin zone");
  const std::size_t M = wt.M();
  const int d = sys.d;
  const double nu = ell / wt.k;
  CMat D1 = spectral_diff_matrix(M, 2.0 * pi, 1, nu);
  CMat D2 = spectral_diff_matrix(M, 2.0 * pi, 2, nu);
  const Eigen::Index Mi = static_cast<Eigen::Index>(M);
  CMat A = CMat::Zero(d * Mi, d * Mi);
  for (int a = 0; a < d; ++a) {
    A.block(a * Mi, a * Mi, Mi, Mi) += wt.omega * D1;
    for (int b = 0; b < d; ++b)
      if (sys.D(a, b) != 0.0)
        A.block(a * Mi, b * Mi, Mi, Mi) += wt.k * wt.k * sys.D(a, b) * D2;
  }
  for (std::size_t i = 0; i < M; ++i) {
    RVecE p(d);
    for (int c = 0; c < d; ++c) p(c) = wt.profile(c, i).real();
    RMat J = sys.jac_f(p);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) A(a * Mi + i, b * Mi + i) += J(a, b);
  }
  return A;
}

/// Discretization of k^2 D^T d^2 - omega d + f'(u0)^T, assembled directly.
inline CMat assemble_adjoint_operator(const RDSystem& sys, const WaveTrain& wt) {
  const std::size_t M = wt.M();
  const int d = sys.d;
  CMat D1 = spectral_diff_matrix(M, 2.0 * pi, 1);
  CMat D2 = spectral_diff_matrix(M, 2.0 * pi, 2);
  const Eigen::Index Mi = static_cast<Eigen::Index>(M);
  CMat A = CMat::Zero(d * Mi, d * Mi);
  for (int a = 0; a < d; ++a) {
    A.block(a * Mi, a * Mi, Mi, Mi) -= wt.omega * D1;
    for (int b = 0; b < d; ++b)
      if (sys.D(b, a) != 0.0)
        A.block(a * Mi, b * Mi, Mi, Mi) += wt.k * wt.k * sys.D(b, a) * D2;
  }
  for (std::size_t i = 0; i < M; ++i) {
    RVecE p(d);
    for (int c = 0; c < d; ++c) p(c) = wt.profile(c, i).real();
    RMat J = sys.jac_f(p);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) A(a * Mi + i, b * Mi + i) += J(b, a);
  }
  return A;
}

/** \brief Critical Bloch eigenpair at one ell in the fixed gauge.
 *
 * Gauge: |v1| = |d theta u0|, <d theta u0, v1> > 0, <u_ad, v1> = 1.
 */
struct BlochEigenpair {
  double ell = 0.0;
  cplx lambda;
  CVecE v1;
  CVecE u_ad;
  /// Eigenvalues sorted by decreasing real part, critical one excluded.
  CVec others;
  /// Best and second-best normalized overlap with the tracking reference.
  double overlap = 0.0, overlap_runner_up = 0.0;
};

namespace bloch_detail {

/// Left eigenvector by inverse iteration on A^H - conj(lambda).
inline CVecE left_eigenvector(const CMat& A, cplx lambda, const CVecE& start) {
  const Eigen::Index n = A.rows();
  double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  CMat B = A.adjoint();
  B.diagonal().array() -= std::conj(lambda) + cplx(1e-11 * scale, 0.0);
  Eigen::PartialPivLU<CMat> lu(B);
  CVecE x = start;
  for (int it = 0; it < 3; ++it) {
    x = lu.solve(x);
    x /= x.norm();
  }
  (void)n;
  return x;
}

}  // namespace bloch_detail

inline BlochEigenpair bloch_eigenpair(const RDSystem& sys, const WaveTrain& wt,
                                      double ell, const CVecE& reference) {
  const std::size_t M = wt.M();
  const std::size_t d = static_cast<std::size_t>(sys.d);
  CMat A = assemble_bloch_operator(sys, wt, ell);
  Eigen::ComplexEigenSolver<CMat> ces(A, true);
  if (ces.info() != Eigen::Success) throw ConvergenceError("Bloch eigensolver failed");
  const auto& ev = ces.eigenvalues();
  const auto& V = ces.eigenvectors();

  const double rn = reference.norm();
  Eigen::Index best = 0;
  double o1 = -1.0, o2 = -1.0;
  for (Eigen::Index j = 0; j < ev.size(); ++j) {
    double o = std::abs(reference.dot(V.col(j))) / (rn * V.col(j).norm());
    if (o > o1) {
      o2 = o1;
      o1 = o;
      best = j;
    } else if (o > o2) {
      o2 = o;
    }
  }
  BlochEigenpair ep;
  ep.ell = ell;
  ep.lambda = ev(best);
  ep.overlap = o1;
  ep.overlap_runner_up = std::max(o2, 0.0);
  for (Eigen::Index j = 0; j < ev.size(); ++j)
    if (j != best) ep.others.push_back(ev(j));
  std::sort(ep.others.begin(), ep.others.end(),
            [](cplx a, cplx b) { return a.real() > b.real(); });

  CVecE du0 = bloch_detail::to_vec(profile_derivative(wt));
  CVecE v = V.col(best);
  v *= bloch_detail::norm(du0, M) / bloch_detail::norm(v, M);
  cplx ph = bloch_detail::inner(du0, v, M);
  v *= std::conj(ph) / std::abs(ph);
  CVecE w = bloch_detail::left_eigenvector(A, ep.lambda, v);
  cplx pair = bloch_detail::inner(w, v, M);
  w /= std::conj(pair);
  ep.v1 = v;
  ep.u_ad = w;
  (void)d;
  return ep;
}

/** \brief Sampled Bloch spectrum with the tracked critical curve. */
struct BlochEigenData {
  double k = 0.0;
  double omega = 0.0;
  std::size_t M = 0, d = 0;
  RVec ell;
  /// Per ell: the n_eigs eigenvalues of largest real part, sorted, critical included.
  std::vector<CVec> eigenvalues;
  std::vector<BlochEigenpair> pairs;
  /// Normalized adjoint null function at ell = 0, <u_ad, d theta u0> = 1.
  Field u_ad0;
  cplx lambda1_prime0 = std::nan("");
  double alpha = std::nan("");
  Warnings warnings;

  cplx lambda1(std::size_t q) const { return pairs[q].lambda; }
  std::size_t size() const { return ell.size(); }
  /// Index of the sample closest to ell = 0.
  std::size_t zero_index() const {
    std::size_t z = 0;
    for (std::size_t q = 1; q < ell.size(); ++q)
      if (std::abs(ell[q]) < std::abs(ell[z])) z = q;
    return z;
  }
};

/// Normalized adjoint null function, <u_ad, d theta u0> = 1.
inline Field adjoint_null(const RDSystem& sys, const WaveTrain& wt) {
  const std::size_t M = wt.M();
  CMat A = assemble_bloch_operator(sys, wt, 0.0);
  Eigen::ComplexEigenSolver<CMat> ces(A, false);
  std::vector<double> mags;
  for (Eigen::Index j = 0; j < ces.eigenvalues().size(); ++j)
    mags.push_back(std::abs(ces.eigenvalues()(j)));
  std::sort(mags.begin(), mags.end());
  if (mags.size() < 2 || mags[1] <= 1e-4) {
    std::ostringstream os;
    os << "zero eigenvalue is not simple (second smallest |lambda| = "
       << (mags.size() > 1 ? mags[1] : 0.0) << ")";
    throw RegimeError(os.str());
  }
  CVecE du0 = bloch_detail::to_vec(profile_derivative(wt));
  CVecE w = bloch_detail::left_eigenvector(A, 0.0, du0);
  w /= std::conj(bloch_detail::inner(w, du0, M));
  return bloch_detail::to_field(w, wt.profile.grid, wt.profile.components);
}

/** \brief Eigenpairs on ell_grid with the critical curve followed by overlap. */
inline BlochEigenData compute_spectrum(const RDSystem& sys, const WaveTrain& wt,
                                       const RVec& ell_grid, int n_eigs = 8) {
  BlochEigenData data;
  data.k = wt.k;
  data.omega = wt.omega;
  data.M = wt.M();
  data.d = static_cast<std::size_t>(sys.d);
  data.ell = ell_grid;
  const std::size_t n = ell_grid.size();
  if (n == 0) throw RegimeError("empty Bloch wave-number grid");
  for (double l : ell_grid)
    if (l < -0.5 * std::abs(wt.k) - 1e-12 || l > 0.5 * std::abs(wt.k) + 1e-12)
      throw RegimeError("Bloch wave-number grid leaves the Brillouin zone");

  data.u_ad0 = adjoint_null(sys, wt);
  data.pairs.resize(n);
  data.eigenvalues.resize(n);

  // March outward from the sample nearest 0 in both directions.
  std::vector<std::size_t> order(n);
  for (std::size_t q = 0; q < n; ++q) order[q] = q;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ell_grid[a] < ell_grid[b]; });
  std::size_t zpos = 0;
  for (std::size_t p = 1; p < n; ++p)
    if (std::abs(ell_grid[order[p]]) < std::abs(ell_grid[order[zpos]])) zpos = p;

  CVecE du0 = bloch_detail::to_vec(profile_derivative(wt));
  auto solve_at = [&](std::size_t q, const CVecE& ref) {
    data.pairs[q] = bloch_eigenpair(sys, wt, ell_grid[q], ref);
    const auto& ep = data.pairs[q];
    if (ep.overlap_runner_up > 0.95 * ep.overlap) {
      std::ostringstream os;
      os << "branch tracking ambiguous at ell=" << ell_grid[q];
      data.warnings.push_back(os.str());
    }
    CVec all = ep.others;
    all.push_back(ep.lambda);
    std::sort(all.begin(), all.end(), [](cplx a, cplx b) { return a.real() > b.real(); });
    if (static_cast<int>(all.size()) > n_eigs) all.resize(n_eigs);
    data.eigenvalues[q] = all;
  };
  solve_at(order[zpos], du0);
  for (std::size_t p = zpos + 1; p < n; ++p) solve_at(order[p], data.pairs[order[p - 1]].v1);
  for (std::size_t p = zpos; p-- > 0;) solve_at(order[p], data.pairs[order[p + 1]].v1);

  // Local polynomial fit near ell = 0 when the grid resolves it.
  std::vector<std::size_t> near;
  for (std::size_t q = 0; q < n; ++q)
    if (std::abs(ell_grid[q]) <= 0.02 && std::abs(ell_grid[q]) > 0.0) near.push_back(q);
  if (near.size() >= 4) {
    RMat Ar(near.size(), 2), Ai(near.size(), 2);
    RVecE yr(near.size()), yi(near.size());
    for (std::size_t r = 0; r < near.size(); ++r) {
      double l = ell_grid[near[r]];
      Ar(r, 0) = l * l;
      Ar(r, 1) = l * l * l * l;
      Ai(r, 0) = l;
      Ai(r, 1) = l * l * l;
      yr(r) = data.pairs[near[r]].lambda.real();
      yi(r) = data.pairs[near[r]].lambda.imag();
    }
    RVecE cr = Ar.colPivHouseholderQr().solve(yr);
    RVecE ci = Ai.colPivHouseholderQr().solve(yi);
    data.alpha = -cr(0);
    data.lambda1_prime0 = cplx(0.0, ci(0));
  }
  return data;
}

/// Symmetric ell grid of n points covering [-k/2, k/2).
inline RVec brillouin_grid(double k, std::size_t n) {
  RVec g(n);
  for (std::size_t q = 0; q < n; ++q)
    g[q] = -0.5 * std::abs(k) + std::abs(k) * static_cast<double>(q) / static_cast<double>(n);
  return g;
}

/// Uniform grid on [-ell_max, ell_max] with 2m+1 points.
inline RVec symmetric_grid(double ell_max, std::size_t m) {
  RVec g(2 * m + 1);
  for (std::size_t q = 0; q <= 2 * m; ++q)
    g[q] = ell_max * (static_cast<double>(q) - static_cast<double>(m)) / static_cast<double>(m);
  return g;
}

struct StabilityViolation {
  int j = 0;  ///< 1 for the critical curve, 2 for the rest of the spectrum
  double ell = 0.0;
  cplx lambda;
};

struct StabilityReport {
  bool stable = false;
  double sigma0 = 0.0, ell0 = 0.0, alpha0 = 0.0, ell1 = 0.0;
  double isolation_radius = 0.0;
  std::vector<StabilityViolation> violations;
  Warnings warnings;
};

inline StabilityReport verify_hypothesis1(const BlochEigenData& data) {
  StabilityReport rep;
  rep.warnings = data.warnings;
  const std::size_t n = data.size();
  if (n < 64) rep.warnings.push_back("fewer than 64 Bloch samples, parabola may be unresolved");
  const double tiny = 1e-10;

  double rest = -1e300;
  for (std::size_t q = 0; q < n; ++q) {
    for (cplx l : data.pairs[q].others) {
      rest = std::max(rest, l.real());
      if (l.real() >= -tiny) rep.violations.push_back({2, data.ell[q], l});
    }
    double l = data.ell[q];
    if (std::abs(l) > 1e-12 && data.lambda1(q).real() >= -tiny)
      rep.violations.push_back({1, l, data.lambda1(q)});
  }

  // Isolation radius: critical eigenvalue keeps half its ell=0 distance to the rest.
  auto gap = [&](std::size_t q) {
    double g = 1e300;
    for (cplx o : data.pairs[q].others) g = std::min(g, std::abs(o - data.lambda1(q)));
    return g;
  };
  const std::size_t z = data.zero_index();
  const double gap0 = gap(z);
  double radius = 0.5 * std::abs(data.k);
  for (std::size_t q = 0; q < n; ++q)
    if (gap(q) < 0.5 * gap0) radius = std::min(radius, std::abs(data.ell[q]));
  rep.isolation_radius = radius;
  rep.ell1 = 0.5 * radius;

  if (!rep.violations.empty()) return rep;

  // Choose ell0 among sample magnitudes to maximize min(alpha0 ell0^2, sigma0).
  RVec cands;
  for (double l : data.ell)
    if (std::abs(l) > 1e-12) cands.push_back(std::abs(l));
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  double best_score = -1.0;
  for (double e0 : cands) {
    double a0 = 1e300, s0 = -rest;
    for (std::size_t q = 0; q < n; ++q) {
      double l = std::abs(data.ell[q]);
      double re = data.lambda1(q).real();
      if (l < 1e-12) continue;
      if (l < e0) {
        a0 = std::min(a0, -re / (l * l));
      } else {
        s0 = std::min(s0, -re);
      }
    }
    if (a0 == 1e300) continue;
    double score = std::min(a0 * e0 * e0, s0);
    if (a0 > 0.0 && s0 > 0.0 && score > best_score) {
      best_score = score;
      rep.ell0 = e0;
      rep.alpha0 = a0;
      rep.sigma0 = s0;
    }
  }
  rep.stable = best_score > 0.0;
  return rep;
}

/** \brief First and second derivative of the critical eigenvalue at ell = 0. */
struct Lambda1Derivatives {
  cplx lambda1_prime0;
  cplx lambda1_second0;
  double alpha() const { return -0.5 * lambda1_second0.real(); }
};

/// Adjoint quadrature. dk_u0 is first re-gauged so that <u_ad, dk_u0> = 0.
inline Lambda1Derivatives lambda1_derivatives_quadrature(const RDSystem& sys,
                                                         const WaveTrain& wt,
                                                         const Field& u_ad,
                                                         const Field& dk_u0) {
  const std::size_t M = wt.M();
  const std::size_t d = static_cast<std::size_t>(sys.d);
  CVecE ua = bloch_detail::to_vec(u_ad);
  CVecE u1 = bloch_detail::to_vec(profile_derivative(wt, 1));
  CVecE u2 = bloch_detail::to_vec(profile_derivative(wt, 2));
  CVecE uk = bloch_detail::to_vec(dk_u0);
  uk -= bloch_detail::inner(ua, uk, M) * u1;
  CMat D1 = spectral_diff_matrix(M, 2.0 * pi, 1);
  CVecE uk1 = bloch_detail::blockwise(D1, uk, d);

  auto applyD = [&](const CVecE& x) {
    CVecE r = CVecE::Zero(x.size());
    const Eigen::Index Mi = static_cast<Eigen::Index>(M);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        r.segment(a * Mi, Mi) += sys.D(a, b) * x.segment(b * Mi, Mi);
    return r;
  };
  Lambda1Derivatives out;
  out.lambda1_prime0 =
      cplx(0.0, 1.0) * bloch_detail::inner(ua, wt.c_p() * u1 + 2.0 * wt.k * applyD(u2), M);
  out.lambda1_second0 =
      -bloch_detail::inner(ua, 4.0 * wt.k * applyD(uk1) + 2.0 * applyD(u1), M);
  if (std::abs(out.lambda1_second0.imag()) > 1e-6)
    throw ConvergenceError("second derivative of the critical eigenvalue is not real");
  return out;
}

/** \brief Residual of d_ell v1(., 0) = i dk_u0 modulo the d theta u0 direction. */
inline double check_dlv_identity(const RDSystem& sys, const WaveTrain& wt,
                                 const Field& dk_u0, double h = 1e-3) {
  const std::size_t M = wt.M();
  CVecE du0 = bloch_detail::to_vec(profile_derivative(wt));
  auto p = bloch_eigenpair(sys, wt, h, du0);
  auto m = bloch_eigenpair(sys, wt, -h, du0);
  CVecE r = (p.v1 - m.v1) / (2.0 * h) - cplx(0.0, 1.0) * bloch_detail::to_vec(dk_u0);
  r -= (bloch_detail::inner(du0, r, M) / bloch_detail::inner(du0, du0, M)) * du0;
  return bloch_detail::norm(r, M);
}

// ---------------------------------------------------------------------------
// Bloch transform

struct CommensurabilityError : InvalidField {
  using InvalidField::InvalidField;
};

/** \brief w~(theta_p, ell_q) for ell_q = q k / N, q in [-N/2, N/2).
 *
 * Storage is ell-major, then component, then theta.
 */
struct BlochField {
  double k = 0.0;
  std::size_t N = 0;  ///< wavelengths in the domain = ell samples
  std::size_t P = 0;  ///< theta points per wavelength
  std::size_t d = 1;
  CVec values;

  BlochField() = default;
  BlochField(double kk, std::size_t n_ell, std::size_t p, std::size_t dd)
      : k(kk), N(n_ell), P(p), d(dd), values(n_ell * p * dd, cplx(0.0)) {}

  long q_of(std::size_t slot) const {
    return static_cast<long>(slot) - static_cast<long>(N / 2);
  }
  double ell(std::size_t slot) const { return k * static_cast<double>(q_of(slot)) / static_cast<double>(N); }
  double dell() const { return k / static_cast<double>(N); }
  cplx& operator()(std::size_t slot, std::size_t c, std::size_t p) {
    return values[(slot * d + c) * P + p];
  }
  const cplx& operator()(std::size_t slot, std::size_t c, std::size_t p) const {
    return values[(slot * d + c) * P + p];
  }
  CVecE column(std::size_t slot) const {
    CVecE v(static_cast<Eigen::Index>(d * P));
    for (std::size_t i = 0; i < d * P; ++i) v(i) = values[slot * d * P + i];
    return v;
  }
  void set_column(std::size_t slot, const CVecE& v) {
    for (std::size_t i = 0; i < d * P; ++i) values[slot * d * P + i] = v(i);
  }
  bool same_grid(const BlochField& o) const {
    return N == o.N && P == o.P && d == o.d && std::abs(k - o.k) < 1e-14;
  }
  RVec ell_grid() const {
    RVec g(N);
    for (std::size_t s = 0; s < N; ++s) g[s] = ell(s);
    return g;
  }
};

/// Number of wavelengths of 2 pi / k in the grid, or throws.
inline std::size_t wavelengths_in(const PeriodicGrid& g, double k) {
  const double quantum = 2.0 * pi / std::abs(k);
  const double N = g.length / quantum;
  const double Nr = std::round(N);
  if (Nr < 1.0 || std::abs(N - Nr) > 1e-9 * std::max(1.0, N)) {
    std::ostringstream os;
    os << "domain length " << g.length << " is not a multiple of 2pi/k = " << quantum;
    throw CommensurabilityError(os.str());
  }
  std::size_t n = static_cast<std::size_t>(Nr);
  if (g.n_points % n != 0) {
    std::ostringstream os;
    os << "grid of " << g.n_points << " points does not split into " << n
       << " wavelengths";
    throw CommensurabilityError(os.str());
  }
  return n;
}

inline BlochField bloch_transform(const Field& u, double k) {
  const std::size_t N = wavelengths_in(u.grid, k);
  const std::size_t n = u.n();
  const std::size_t P = n / N;
  SpectralCoeffs s = fourier_forward(u);
  BlochField w(k, N, P, u.components);
  FftPlan plan(P);
  CVec b(P), out(P);
  const double scale = static_cast<double>(N) / k;
  for (std::size_t slot = 0; slot < N; ++slot) {
    const long q = w.q_of(slot);
    for (std::size_t c = 0; c < u.components; ++c) {
      std::fill(b.begin(), b.end(), cplx(0.0));
      for (std::size_t jm = 0; jm < n; ++jm) {
        long m = u.grid.mode(jm);
        long r = m - q;
        if (((r % static_cast<long>(N)) + static_cast<long>(N)) % static_cast<long>(N) != 0) continue;
        long j = r / static_cast<long>(N);
        std::size_t pj = static_cast<std::size_t>(((j % static_cast<long>(P)) + static_cast<long>(P)) % static_cast<long>(P));
        b[pj] = s.coefficients[c * n + jm];
      }
      plan.inverse(b.data(), out.data());
      for (std::size_t p = 0; p < P; ++p) w(slot, c, p) = scale * out[p];
    }
  }
  return w;
}

inline Field inverse_bloch_transform(const BlochField& w, const PeriodicGrid& grid) {
  const std::size_t n = w.N * w.P;
  if (grid.n_points != n) throw InvalidField("grid does not match the Bloch field");
  SpectralCoeffs s{grid, w.d, CVec(n * w.d, cplx(0.0))};
  FftPlan plan(w.P);
  CVec in(w.P), b(w.P);
  const double scale = w.k / static_cast<double>(w.N);
  for (std::size_t slot = 0; slot < w.N; ++slot) {
    const long q = w.q_of(slot);
    for (std::size_t c = 0; c < w.d; ++c) {
      for (std::size_t p = 0; p < w.P; ++p) in[p] = w(slot, c, p);
      plan.forward(in.data(), b.data());
      for (std::size_t jm = 0; jm < n; ++jm) {
        long m = grid.mode(jm);
        long r = m - q;
        if (((r % static_cast<long>(w.N)) + static_cast<long>(w.N)) % static_cast<long>(w.N) != 0) continue;
        long j = r / static_cast<long>(w.N);
        std::size_t pj = static_cast<std::size_t>(((j % static_cast<long>(w.P)) + static_cast<long>(w.P)) % static_cast<long>(w.P));
        s.coefficients[c * n + jm] = scale * b[pj];
      }
    }
  }
  return fourier_inverse(s);
}

/// 2 pi k * sum |w~|^2 dell * (dtheta / 2pi); equals the integral of |u|^2 dtheta.
inline double bloch_parseval_sum(const BlochField& w) {
  double s = 0.0;
  for (auto v : w.values) s += std::norm(v);
  return 2.0 * pi * w.k * s * w.dell() / static_cast<double>(w.P);
}

/// Integral of |u|^2 in theta = k x.
inline double theta_l2_squared(const Field& u, double k) {
  double s = 0.0;
  for (auto v : u.values) s += std::norm(v);
  return s * u.grid.spacing() * std::abs(k);
}

/// Convolution in ell. Across the zone edge w~(theta, l + k) = e^{-i theta} w~(theta, l),
/// which is what the defining sum over j gives.
inline BlochField bloch_convolution(const BlochField& a, const BlochField& b) {
  if (!a.same_grid(b)) throw InvalidField("Bloch convolution needs matching grids");
  BlochField out(a.k, a.N, a.P, a.d);
  const long N = static_cast<long>(a.N);
  RVec theta(a.P);
  for (std::size_t p = 0; p < a.P; ++p) theta[p] = 2.0 * pi * static_cast<double>(p) / static_cast<double>(a.P);
  for (std::size_t s = 0; s < a.N; ++s) {
    const long q = a.q_of(s);
    for (std::size_t s2 = 0; s2 < a.N; ++s2) {
      const long q2 = b.q_of(s2);
      long r = q - q2;
      long wrap = 0;
      while (r < -N / 2) {
        r += N;
        --wrap;
      }
      while (r >= N - N / 2) {
        r -= N;
        ++wrap;
      }
      const std::size_t sr = static_cast<std::size_t>(r + N / 2);
      for (std::size_t c = 0; c < a.d; ++c)
        for (std::size_t p = 0; p < a.P; ++p) {
          cplx ph = wrap == 0 ? cplx(1.0) : std::exp(cplx(0.0, -static_cast<double>(wrap) * theta[p]));
          out(s, c, p) += a.dell() * ph * a(sr, c, p) * b(s2, c, p);
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mode filters

/// C-infinity cutoff: 1 on |s| <= 1, 0 on |s| >= 2, nonincreasing in |s|.
inline double chi(double s) {
  double a = std::abs(s);
  if (a <= 1.0) return 1.0;
  if (a >= 2.0) return 0.0;
  auto g = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
  double up = g(2.0 - a), dn = g(a - 1.0);
  return up / (up + dn);
}

enum class Filter { fs_c, fs_s, mf_c, mf_s, c, s };

/** \brief Bloch-space mode filters built from the critical eigenpairs. */
struct ModeFilterSet {
  double k = 0.0;
  double ell1 = 0.0;
  std::size_t N = 0, P = 0, d = 0;
  RVec ell;
  /// Eigenpairs on the ell grid; empty vectors where no filter is active.
  std::vector<CVecE> v1, u_ad;

  /// Scaling of chi for each filter, negative when the filter is 1 - Q chi.
  static double factor(Filter f) {
    switch (f) {
      case Filter::fs_c: case Filter::fs_s: return 4.0;
      case Filter::mf_c: case Filter::mf_s: return 8.0;
      case Filter::c: return 2.0;
      case Filter::s: return 16.0;
    }
    return 0.0;
  }
  static bool complementary(Filter f) {
    return f == Filter::fs_s || f == Filter::mf_s || f == Filter::s;
  }
  double cutoff(Filter f, double l) const { return chi(factor(f) * l / ell1); }

  /// Q^c(ell_q) x = <u_ad, x> v1
  CVecE project(std::size_t q, const CVecE& x) const {
    if (v1[q].size() == 0) return CVecE::Zero(x.size());
    return bloch_detail::inner(u_ad[q], x, P) * v1[q];
  }

  CVecE apply(Filter f, std::size_t q, const CVecE& x) const {
    CVecE qx = cutoff(f, ell[q]) * project(q, x);
    return complementary(f) ? CVecE(x - qx) : qx;
  }

  BlochField apply(Filter f, const BlochField& w) const {
    check(w);
    BlochField out = w;
    for (std::size_t q = 0; q < N; ++q) out.set_column(q, apply(f, q, w.column(q)));
    return out;
  }

  /// Scalar filters p^c: P^c x = (p^c x) v1.
  CVec scalar(Filter f, const BlochField& w) const {
    if (complementary(f)) throw InvalidField("scalar filters exist for critical projections only");
    check(w);
    CVec out(N, cplx(0.0));
    for (std::size_t q = 0; q < N; ++q)
      if (v1[q].size() != 0)
        out[q] = cutoff(f, ell[q]) * bloch_detail::inner(u_ad[q], w.column(q), P);
    return out;
  }

  void check(const BlochField& w) const {
    if (w.N != N || w.P != P || w.d != d || std::abs(w.k - k) > 1e-14)
      throw InvalidField("Bloch field grid does not match the mode filters");
  }
};

/** \brief Filters on the ell grid of a transformed field with N wavelengths.
 *
 * The wave-train profile must use P = M collocation points.
 */
inline ModeFilterSet build_mode_filters(const RDSystem& sys, const WaveTrain& wt,
                                        std::size_t N, double ell1) {
  if (!(ell1 > 0.0) || ell1 > 0.5 * std::abs(wt.k))
    throw RegimeError("ell1 must lie in (0, k/2]");
  ModeFilterSet fs;
  fs.k = wt.k;
  fs.ell1 = ell1;
  fs.N = N;
  fs.P = wt.M();
  fs.d = static_cast<std::size_t>(sys.d);
  fs.v1.resize(N);
  fs.u_ad.resize(N);
  BlochField probe(wt.k, N, fs.P, fs.d);
  fs.ell = probe.ell_grid();

  CVecE du0 = bloch_detail::to_vec(profile_derivative(wt));
  // Track from ell = 0 outward so the critical branch is followed.
  const std::size_t z = N / 2;
  std::vector<BlochEigenpair> eps(N);
  auto active = [&](std::size_t q) { return std::abs(fs.ell[q]) < ell1; };
  double gap0 = -1.0;
  auto store = [&](std::size_t q, const CVecE& ref) {
    eps[q] = bloch_eigenpair(sys, wt, fs.ell[q], ref);
    double g = 1e300;
    for (cplx o : eps[q].others) g = std::min(g, std::abs(o - eps[q].lambda));
    if (gap0 < 0.0) gap0 = g;
    if (g < 0.25 * gap0) {
      std::ostringstream os;
      os << "critical eigenvalue not isolated at ell=" << fs.ell[q];
      throw RegimeError(os.str());
    }
    fs.v1[q] = eps[q].v1;
    fs.u_ad[q] = eps[q].u_ad;
  };
  store(z, du0);
  for (std::size_t q = z + 1; q < N && active(q); ++q) store(q, eps[q - 1].v1);
  for (std::size_t q = z; q-- > 0 && active(q);) store(q, eps[q + 1].v1);
  return fs;
}

/// Largest entry of (Q^c)^2 - Q^c over the active ell samples.
inline double projection_idempotence_error(const ModeFilterSet& fs) {
  double worst = 0.0;
  for (std::size_t q = 0; q < fs.N; ++q) {
    if (fs.v1[q].size() == 0) continue;
    cplx p = bloch_detail::inner(fs.u_ad[q], fs.v1[q], fs.P);
    worst = std::max(worst, std::abs(p - 1.0) * fs.v1[q].cwiseAbs().maxCoeff() *
                                fs.u_ad[q].cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Sup norms of the six filter identities on w.
inline std::array<double, 6> mode_filter_identity_residuals(const ModeFilterSet& fs,
                                                            const BlochField& w) {
  auto sup_diff = [](const BlochField& a, const BlochField& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
      s = std::max(s, std::abs(a.values[i] - b.values[i]));
    return s;
  };
  auto one_minus = [&](Filter f, const BlochField& x) {
    BlochField y = fs.apply(f, x);
    for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] = x.values[i] - y.values[i];
    return y;
  };
  BlochField zero = w;
  std::fill(zero.values.begin(), zero.values.end(), cplx(0.0));
  std::array<double, 6> r{};
  r[0] = sup_diff(one_minus(Filter::c, fs.apply(Filter::fs_c, w)), zero);
  r[1] = sup_diff(one_minus(Filter::fs_c, fs.apply(Filter::mf_c, w)), zero);
  r[2] = sup_diff(one_minus(Filter::s, fs.apply(Filter::fs_s, w)), zero);
  r[3] = sup_diff(one_minus(Filter::s, fs.apply(Filter::mf_s, w)), zero);
  BlochField a = fs.apply(Filter::fs_c, w), b = fs.apply(Filter::fs_s, w);
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
  r[4] = sup_diff(a, w);
  a = fs.apply(Filter::mf_c, w);
  b = fs.apply(Filter::mf_s, w);
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
  r[5] = sup_diff(a, w);
  return r;
}

// ---------------------------------------------------------------------------
// Initial-data decomposition

struct Decomposition {
  Field phi0;  ///< scalar phase on the x grid
  Field w0;    ///< remainder in the shifted coordinate
  double critical_residual = 0.0;  ///< sup of (1 - P^s) w0 in Bloch space
  int iterations = 0;
};

namespace bloch_detail {

/// Wave train u0(theta) sampled at theta = k x_i on a commensurate grid.
inline Field tile_profile(const Field& profile, const PeriodicGrid& g, std::size_t N) {
  const std::size_t P = profile.n();
  Field u(g, profile.components);
  for (std::size_t c = 0; c < profile.components; ++c)
    for (std::size_t i = 0; i < g.n_points; ++i) u(c, i) = profile(c, i % P);
  (void)N;
  return u;
}

/// f evaluated at x_i + shift_i by spectral interpolation, all components.
inline Field shifted(const Field& f, const RVec& shift) {
  Field out(f.grid, f.components);
  RVec xs(f.n());
  for (std::size_t i = 0; i < f.n(); ++i) xs[i] = f.grid.x(i) + shift[i];
  for (std::size_t c = 0; c < f.components; ++c) {
    CVec v = fourier_interpolate(f, c, xs);
    for (std::size_t i = 0; i < f.n(); ++i) out(c, i) = v[i];
  }
  return out;
}

}  // namespace bloch_detail

/** \brief Split u_ic into a filtered phase and a remainder with no critical part.
 *
 * Ansatz u_ic(theta) = u0(vartheta) + k psi dk_u0(vartheta) + w0(vartheta),
 * theta = vartheta - phi(vartheta), psi = d phi / d vartheta.
 */
inline Decomposition decompose_initial_data(const Field& u_ic, const WaveTrain& wt,
                                            const Field& dk_u0,
                                            const ModeFilterSet& filters,
                                            int max_iters = 30) {
  const double k = wt.k;
  const std::size_t N = wavelengths_in(u_ic.grid, k);
  if (u_ic.n() / N != wt.M()) throw InvalidField("points per wavelength must match the profile grid");
  Field u0 = bloch_detail::tile_profile(wt.profile, u_ic.grid, N);
  Field uk = bloch_detail::tile_profile(dk_u0, u_ic.grid, N);
  Field du0 = bloch_detail::tile_profile(profile_derivative(wt), u_ic.grid, N);

  double amp = 0.0, dist = 0.0;
  for (std::size_t i = 0; i < u0.values.size(); ++i) {
    amp = std::max(amp, std::abs(u0.values[i]));
    dist = std::max(dist, std::abs(u_ic.values[i] - u0.values[i]));
  }
  if (dist > 0.2 * amp) throw RegimeError("initial data too far from the wave-train orbit");

  // b(ell) = p^c[d theta u0 + i ell dk_u0], both as Bloch columns at ell.
  const std::size_t P = wt.M();
  auto correction = [&](const BlochField& wt_res) {
    CVec phihat(N, cplx(0.0));
    for (std::size_t q = 0; q < N; ++q) {
      double l = wt_res.ell(q);
      double c8 = filters.cutoff(Filter::mf_c, l);
      if (c8 == 0.0 || filters.v1[q].size() == 0) continue;
      CVecE B(static_cast<Eigen::Index>(filters.d * P));
      for (std::size_t c = 0; c < filters.d; ++c)
        for (std::size_t p = 0; p < P; ++p)
          B(c * P + p) = du0(c, p) + cplx(0.0, l) * uk(c, p);
      cplx b = bloch_detail::inner(filters.u_ad[q], B, P);
      phihat[q] = c8 * bloch_detail::inner(filters.u_ad[q], wt_res.column(q), P) / b;
    }
    return phihat;
  };
  // phi from Bloch amplitudes: a theta-independent column at each ell.
  auto phase_field = [&](const CVec& phihat) {
    BlochField pf(k, N, P, 1);
    for (std::size_t q = 0; q < N; ++q)
      for (std::size_t p = 0; p < P; ++p) pf(q, 0, p) = phihat[q];
    Field phi = inverse_bloch_transform(pf, u_ic.grid);
    for (auto& v : phi.values) v = v.real();
    return phi;
  };

  CVec phihat(N, cplx(0.0));
  Decomposition dec;
  for (int it = 0; it < max_iters; ++it) {
    Field phi = phase_field(phihat);
    Field dphi = spectral_derivative(phi, 1);
    // theta = vartheta - phi(vartheta): sample u_ic at x - phi/k
    RVec sh(u_ic.n());
    for (std::size_t i = 0; i < u_ic.n(); ++i) sh[i] = -phi(0, i).real() / k;
    Field u_back = bloch_detail::shifted(u_ic, sh);
    Field w0(u_ic.grid, u_ic.components);
    for (std::size_t c = 0; c < u_ic.components; ++c)
      for (std::size_t i = 0; i < u_ic.n(); ++i) {
        // dphi is d/dx; psi = d phi / d vartheta = dphi / k
        double psi = dphi(0, i).real() / k;
        w0(c, i) = u_back(c, i) - u0(c, i) - k * psi * uk(c, i);
      }
    BlochField ww = bloch_transform(w0, k);
    BlochField crit = filters.apply(Filter::s, ww);
    double res = 0.0;
    for (std::size_t i = 0; i < crit.values.size(); ++i)
      res = std::max(res, std::abs(ww.values[i] - crit.values[i]));
    dec.phi0 = phi;
    dec.w0 = w0;
    dec.critical_residual = res;
    dec.iterations = it;
    if (res <= 1e-10) break;
    CVec corr = correction(ww);
    for (std::size_t q = 0; q < N; ++q) phihat[q] += corr[q];
  }
  return dec;
}

// ---------------------------------------------------------------------------
// Phase multiplier

struct PhaseMultiplierData {
  RVec ell;
  CVec b0, li_action, m, lambda1;
  RVec residual;
  double slope = std::nan("");
  double slope_intercept = std::nan("");
  cplx m0;
  cplx b0_at_zero;
};

/** \brief m(ell) = (i ell / k) p_mf^c[L_i e^{i ell theta/k}] / b0(ell) vs lambda1(ell).
 *
 * d_ell v1 is taken at the current ell by centred differences of the gauged
 * eigenfunction family.
 */
inline PhaseMultiplierData phase_multiplier_check(const RDSystem& sys,
                                                  const WaveTrain& wt,
                                                  const Field& dk_u0, double ell1,
                                                  const RVec& ell_grid,
                                                  double h = 1e-4) {
  const std::size_t M = wt.M();
  const std::size_t d = static_cast<std::size_t>(sys.d);
  const double k = wt.k;
  CVecE u1 = bloch_detail::to_vec(profile_derivative(wt, 1));
  CVecE u2 = bloch_detail::to_vec(profile_derivative(wt, 2));
  CVecE uk = bloch_detail::to_vec(dk_u0);
  auto applyD = [&](const CVecE& x) {
    CVecE r = CVecE::Zero(x.size());
    const Eigen::Index Mi = static_cast<Eigen::Index>(M);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        r.segment(a * Mi, Mi) += sys.D(a, b) * x.segment(b * Mi, Mi);
    return r;
  };

  PhaseMultiplierData out;
  out.ell = ell_grid;
  CVecE ref = u1;
  auto eval = [&](double l, CVecE& ref_io, cplx& lam, cplx& b0, cplx& li) {
    auto ep = bloch_eigenpair(sys, wt, l, ref_io);
    auto pp = bloch_eigenpair(sys, wt, l + h, ep.v1);
    auto pm = bloch_eigenpair(sys, wt, l - h, ep.v1);
    ref_io = ep.v1;
    CVecE dv = (pp.v1 - pm.v1) / (2.0 * h);
    CMat A = assemble_bloch_operator(sys, wt, l);
    const cplx I(0.0, 1.0);
    // L(e i d_ell v1) = e A (i d_ell v1)
    CVecE Li = k * (A * (I * dv) + k * applyD(2.0 * u2 + I * (l / k) * u1) + wt.c_p() * u1);
    CVecE B0 = u1 - I * l * uk;
    double c8 = chi(8.0 * l / ell1), c4 = chi(4.0 * l / ell1);
    li = c8 * bloch_detail::inner(ep.u_ad, Li, M);
    b0 = c4 * bloch_detail::inner(ep.u_ad, B0, M);
    lam = ep.lambda;
  };
  for (double l : ell_grid) {
    cplx lam, b0, li;
    eval(l, ref, lam, b0, li);
    cplx m = (cplx(0.0, l) / k) * li / b0;
    out.b0.push_back(b0);
    out.li_action.push_back(li);
    out.m.push_back(m);
    out.lambda1.push_back(lam);
    out.residual.push_back(std::abs(m - lam));
  }
  {
    cplx lam, b0, li;
    CVecE r0 = u1;
    eval(0.0, r0, lam, b0, li);
    out.m0 = (cplx(0.0, 0.0) / k) * li / b0;
    out.b0_at_zero = b0;
  }
  // log-log slope over positive ell
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < ell_grid.size(); ++i)
    if (ell_grid[i] > 0.0 && out.residual[i] > 0.0) {
      xs.push_back(std::log(ell_grid[i]));
      ys.push_back(std::log(out.residual[i]));
    }
  if (xs.size() >= 2) {
    RMat A(xs.size(), 2);
    RVecE y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      A(i, 0) = 1.0;
      A(i, 1) = xs[i];
      y(i) = ys[i];
    }
    RVecE c = A.colPivHouseholderQr().solve(y);
    out.slope_intercept = c(0);
    out.slope = c(1);
  }
  return out;
}

/// Geometric grid of n points on [a, b].
inline RVec geometric_grid(double a, double b, std::size_t n) {
  RVec g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = a * std::pow(b / a, static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

}  // namespace wavemix

#endif
