#ifndef WAVEMIX_CORE_HPP
#define WAVEMIX_CORE_HPP

#include <fftw3.h>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavemix {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;
using RVec = std::vector<double>;

inline constexpr double pi = std::numbers::pi;

/** \brief Base of all library errors. */
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidField : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
/** \brief Parameters outside the regime where the computation is meaningful. */
struct RegimeError : Error {
  using Error::Error;
};
struct ConvergenceError : Error {
  using Error::Error;
};

/// Sink for non-fatal diagnostics. Functions append when non-null.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* w, std::string msg) {
  if (w) w->push_back(std::move(msg));
}

/** \brief Uniform grid on [0, length). */
struct PeriodicGrid {
  std::size_t n_points = 0;
  double length = 0.0;

  PeriodicGrid() = default;
  PeriodicGrid(std::size_t n, double len) : n_points(n), length(len) {
    if (n < 8) throw InvalidField("PeriodicGrid needs n_points >= 8");
    if (!(len > 0.0) || !std::isfinite(len))
      throw InvalidField("PeriodicGrid needs a positive finite length");
  }

  double spacing() const { return length / static_cast<double>(n_points); }
  double x(std::size_t i) const { return spacing() * static_cast<double>(i); }
  /// Signed integer wave number of FFT slot j.
  long mode(std::size_t j) const {
    long n = static_cast<long>(n_points);
    long m = static_cast<long>(j);
    return m < n / 2 ? m : m - n;
  }
  /// Physical wave number 2*pi*m/length of FFT slot j.
  double wavenumber(std::size_t j) const { return 2.0 * pi * mode(j) / length; }
  std::size_t slot(long m) const {
    long n = static_cast<long>(n_points);
    return static_cast<std::size_t>(((m % n) + n) % n);
  }
  bool operator==(const PeriodicGrid&) const = default;
};

/** \brief d-component complex field, component-major storage. */
struct Field {
  PeriodicGrid grid;
  std::size_t components = 1;
  CVec values;

  Field() = default;
  Field(const PeriodicGrid& g, std::size_t d)
      : grid(g), components(d), values(g.n_points * d, cplx(0.0)) {}

  std::size_t n() const { return grid.n_points; }
  cplx& operator()(std::size_t c, std::size_t i) { return values[c * n() + i]; }
  const cplx& operator()(std::size_t c, std::size_t i) const {
    return values[c * n() + i];
  }
  cplx* component(std::size_t c) { return values.data() + c * n(); }
  const cplx* component(std::size_t c) const { return values.data() + c * n(); }

  double max_imag() const {
    double m = 0.0;
    for (auto v : values) m = std::max(m, std::abs(v.imag()));
    return m;
  }
};

/// Fourier coefficients, same layout as Field but indexed by FFT slot.
struct SpectralCoeffs {
  PeriodicGrid grid;
  std::size_t components = 1;
  CVec coefficients;

  std::size_t n() const { return grid.n_points; }
  cplx& at(std::size_t c, long m) { return coefficients[c * n() + grid.slot(m)]; }
  cplx at(std::size_t c, long m) const {
    return coefficients[c * n() + grid.slot(m)];
  }
};

namespace detail {
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/** \brief Owning 1D complex FFTW plan pair with its own buffers.
 *
 * Not safe to execute concurrently on one instance; give each thread its own.
 */
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    buf_ = fftw_alloc_complex(n);
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    fwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_FORWARD,
                            FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_BACKWARD,
                            FFTW_ESTIMATE);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_);
  }

  std::size_t size() const { return n_; }

  /// out[j] = (1/n) sum_i in[i] e^{-2 pi i j i / n}
  void forward(const cplx* in, cplx* out) {
    copy_in(in);
    fftw_execute(fwd_);
    const double s = 1.0 / static_cast<double>(n_);
    for (std::size_t j = 0; j < n_; ++j)
      out[j] = cplx(buf_[j][0] * s, buf_[j][1] * s);
  }
  /// out[i] = sum_j in[j] e^{2 pi i j i / n}
  void inverse(const cplx* in, cplx* out) {
    copy_in(in);
    fftw_execute(bwd_);
    for (std::size_t j = 0; j < n_; ++j) out[j] = cplx(buf_[j][0], buf_[j][1]);
  }

 private:
  void copy_in(const cplx* in) {
    for (std::size_t j = 0; j < n_; ++j) {
      buf_[j][0] = in[j].real();
      buf_[j][1] = in[j].imag();
    }
  }
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// (i*kappa)^order without the precision loss of complex pow.
inline cplx ik_power(double kappa, int order) {
  cplx r = 1.0;
  for (int p = 0; p < order; ++p) r *= cplx(0.0, kappa);
  return r;
}

inline void require_finite(const Field& f) {
  for (auto v : f.values)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw InvalidField("field contains non-finite values");
}

inline SpectralCoeffs fourier_forward(const Field& f) {
  require_finite(f);
  SpectralCoeffs s{f.grid, f.components, CVec(f.values.size())};
  FftPlan plan(f.n());
  for (std::size_t c = 0; c < f.components; ++c)
    plan.forward(f.component(c), s.coefficients.data() + c * f.n());
  return s;
}

inline Field fourier_inverse(const SpectralCoeffs& s) {
  Field f(s.grid, s.components);
  FftPlan plan(s.n());
  for (std::size_t c = 0; c < s.components; ++c)
    plan.inverse(s.coefficients.data() + c * s.n(), f.component(c));
  return f;
}

/// Fraction of spectral energy in the outermost sixteenth of the modes.
inline double top_mode_energy_fraction(const SpectralCoeffs& s) {
  double total = 0.0, top = 0.0;
  const long cut = static_cast<long>(s.n()) / 2 - static_cast<long>(s.n()) / 16;
  for (std::size_t c = 0; c < s.components; ++c)
    for (std::size_t j = 0; j < s.n(); ++j) {
      double e = std::norm(s.coefficients[c * s.n() + j]);
      total += e;
      if (std::labs(s.grid.mode(j)) >= cut) top += e;
    }
  return total > 0.0 ? top / total : 0.0;
}

inline Field spectral_derivative(const Field& f, int order,
                                 Warnings* warnings = nullptr) {
  if (order < 1 || order > 4)
    throw InvalidField("spectral_derivative order must be 1..4");
  SpectralCoeffs s = fourier_forward(f);
  if (top_mode_energy_fraction(s) > 1e-8)
    warn(warnings, "spectral_derivative: top-mode energy fraction above 1e-8");
  const std::size_t n = f.n();
  for (std::size_t c = 0; c < f.components; ++c)
    for (std::size_t j = 0; j < n; ++j) {
      // Nyquist mode has no well-defined odd derivative.
      if (order % 2 == 1 && s.grid.mode(j) == -static_cast<long>(n / 2)) {
        s.coefficients[c * n + j] = 0.0;
        continue;
      }
      s.coefficients[c * n + j] *= ik_power(s.grid.wavenumber(j), order);
    }
  return fourier_inverse(s);
}

/** \brief Discrete weighted Sobolev norm (sum_{j<=m2} |ρ^m1 ∂^j f|^2)^{1/2}.
 *
 * ρ(x) = sqrt(1+x^2) with x measured from the domain midpoint, trapezoid rule.
 */
inline double weighted_sobolev_norm(const Field& f, int m2, int m1,
                                    Warnings* warnings = nullptr) {
  if (m2 < 0 || m2 > 3 || m1 < 0 || m1 > 3)
    throw InvalidField("weighted_sobolev_norm needs m1, m2 in 0..3");
  const std::size_t n = f.n();
  const double h = f.grid.spacing();
  const double mid = 0.5 * f.grid.length;

  double edge = 0.0;
  for (std::size_t c = 0; c < f.components; ++c)
    edge = std::max({edge, std::abs(f(c, 0)), std::abs(f(c, n - 1))});
  if (edge > 1e-8)
    warn(warnings, "weighted_sobolev_norm: field does not decay at the domain ends");

  RVec w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = f.grid.x(i) - mid;
    w[i] = std::pow(1.0 + x * x, m1);
  }
  auto add = [&](const Field& g) {
    double s = 0.0;
    for (std::size_t c = 0; c < g.components; ++c)
      for (std::size_t i = 0; i < n; ++i) s += w[i] * std::norm(g(c, i));
    return s;
  };
  double sum = add(f);
  for (int k = 1; k <= m2; ++k) sum += add(spectral_derivative(f, k));
  return std::sqrt(sum * h);
}

/// Trigonometric interpolation of component c at arbitrary points.
inline CVec fourier_interpolate(const Field& f, std::size_t c, const RVec& xs) {
  Field one(f.grid, 1);
  for (std::size_t i = 0; i < f.n(); ++i) one(0, i) = f(c, i);
  SpectralCoeffs s = fourier_forward(one);
  const std::size_t n = f.n();
  const long nyq = -static_cast<long>(n / 2);
  CVec out(xs.size());
  for (std::size_t p = 0; p < xs.size(); ++p) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      long m = s.grid.mode(j);
      double kx = s.grid.wavenumber(j) * xs[p];
      if (m == nyq) {
        acc += s.coefficients[j] * std::cos(kx);
      } else {
        acc += s.coefficients[j] * cplx(std::cos(kx), std::sin(kx));
      }
    }
    out[p] = acc;
  }
  return out;
}

/** \brief Circulant collocation matrix of (d/dx + i*shift*2pi/length)^order.
 *
 * Odd orders drop the Nyquist mode when shift is zero so the matrix stays real.
 */
inline Eigen::MatrixXcd spectral_diff_matrix(std::size_t n, double length,
                                             int order, double shift = 0.0) {
  PeriodicGrid g(n, length);
  CVec sym(n), col(n);
  for (std::size_t j = 0; j < n; ++j) {
    long m = g.mode(j);
    if (shift == 0.0 && order % 2 == 1 && m == -static_cast<long>(n / 2)) {
      sym[j] = 0.0;
      continue;
    }
    sym[j] = ik_power(2.0 * pi * (static_cast<double>(m) + shift) / length,
                      order) /
             static_cast<double>(n);
  }
  FftPlan plan(n);
  plan.inverse(sym.data(), col.data());
  Eigen::MatrixXcd D(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) D(i, j) = col[(i + n - j) % n];
  return D;
}

/// Discrete L2 norm sqrt(h sum |f|^2).
inline double l2_norm(const Field& f) {
  double s = 0.0;
  for (auto v : f.values) s += std::norm(v);
  return std::sqrt(s * f.grid.spacing());
}

inline double sup_norm(const Field& f) {
  double s = 0.0;
  for (auto v : f.values) s = std::max(s, std::abs(v));
  return s;
}

}  // namespace wavemix

#endif
