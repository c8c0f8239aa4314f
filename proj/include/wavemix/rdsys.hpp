#ifndef WAVEMIX_RDSYS_HPP
#define WAVEMIX_RDSYS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wavemix/core.hpp"

namespace wavemix {

using RMat = Eigen::MatrixXd;
using RVecE = Eigen::VectorXd;

/** \brief u_t = D u_xx + f(u). Immutable once built. */
struct RDSystem {
  int d = 0;
  RMat D;
  std::function<RVecE(const RVecE&)> f;
  std::function<RMat(const RVecE&)> jac_f;
  std::string name;
  /// Only set for the lambda-omega family.
  bool lambda_omega = false;
  double gamma = 0.0;
};

/// Throws ConfigError when D is not symmetric positive definite.
inline void validate_diffusion(const RMat& D) {
  if (D.rows() != D.cols() || D.rows() < 1)
    throw ConfigError("diffusion matrix must be square and non-empty");
  if ((D - D.transpose()).cwiseAbs().maxCoeff() > 1e-14)
    throw ConfigError("diffusion matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<RMat> es(D);
  double lo = es.eigenvalues().minCoeff();
  if (!(lo > 0.0)) {
    std::ostringstream os;
    os << "diffusion matrix is not positive definite (eigenvalue " << lo << ")";
    throw ConfigError(os.str());
  }
}

/// Largest relative mismatch between jac_f and centred differences at u.
inline double jacobian_fd_mismatch(const RDSystem& sys, const RVecE& u,
                                   double h = 1e-6) {
  RMat J = sys.jac_f(u);
  double worst = 0.0;
  for (int j = 0; j < sys.d; ++j) {
    RVecE up = u, um = u;
    up(j) += h;
    um(j) -= h;
    RVecE col = (sys.f(up) - sys.f(um)) / (2.0 * h);
    for (int i = 0; i < sys.d; ++i) {
      double scale = std::max(1.0, std::abs(J(i, j)));
      worst = std::max(worst, std::abs(col(i) - J(i, j)) / scale);
    }
  }
  return worst;
}

/// A(1-|A|^2) - i gamma |A|^2 A written for u = (Re A, Im A).
inline RDSystem make_lambda_omega(double gamma) {
  RDSystem s;
  s.d = 2;
  s.D = RMat::Identity(2, 2);
  s.name = "lambda_omega";
  s.lambda_omega = true;
  s.gamma = gamma;
  s.f = [gamma](const RVecE& u) {
    double rho = u(0) * u(0) + u(1) * u(1);
    double lam = 1.0 - rho, om = -gamma * rho;
    RVecE r(2);
    r << lam * u(0) - om * u(1), om * u(0) + lam * u(1);
    return r;
  };
  s.jac_f = [gamma](const RVecE& u) {
    double a = u(0), b = u(1);
    double rho = a * a + b * b;
    double lam = 1.0 - rho, om = -gamma * rho;
    // dλ/du = -2u, dω_f/du = -2γu
    RMat J(2, 2);
    J(0, 0) = lam - 2.0 * a * a + 2.0 * gamma * a * b;
    J(0, 1) = -2.0 * a * b - om + 2.0 * gamma * b * b;
    J(1, 0) = om - 2.0 * gamma * a * a - 2.0 * a * b;
    J(1, 1) = -2.0 * gamma * a * b + lam - 2.0 * b * b;
    return J;
  };
  return s;
}

/// One monomial c * prod u_i^e_i contributing to f_target.
struct PolyTerm {
  int target = 0;
  double coefficient = 0.0;
  std::vector<int> exponents;
};

inline RDSystem make_polynomial_system(const RMat& D,
                                       std::vector<PolyTerm> terms) {
  validate_diffusion(D);
  const int d = static_cast<int>(D.rows());
  for (const auto& t : terms) {
    if (t.target < 0 || t.target >= d)
      throw ConfigError("f_polynomial target_component out of range");
    if (static_cast<int>(t.exponents.size()) != d)
      throw ConfigError("f_polynomial exponents must have length d");
    for (int e : t.exponents)
      if (e < 0) throw ConfigError("f_polynomial exponents must be >= 0");
  }
  auto shared = std::make_shared<const std::vector<PolyTerm>>(std::move(terms));
  RDSystem s;
  s.d = d;
  s.D = D;
  s.name = "polynomial";
  s.f = [shared, d](const RVecE& u) {
    RVecE r = RVecE::Zero(d);
    for (const auto& t : *shared) {
      double m = t.coefficient;
      for (int i = 0; i < d; ++i) m *= std::pow(u(i), t.exponents[i]);
      r(t.target) += m;
    }
    return r;
  };
  s.jac_f = [shared, d](const RVecE& u) {
    RMat J = RMat::Zero(d, d);
    for (const auto& t : *shared)
      for (int j = 0; j < d; ++j) {
        if (t.exponents[j] == 0) continue;
        double m = t.coefficient * t.exponents[j];
        for (int i = 0; i < d; ++i)
          m *= std::pow(u(i), i == j ? t.exponents[i] - 1 : t.exponents[i]);
        J(t.target, j) += m;
      }
    return J;
  };
  return s;
}

inline RDSystem load_system(const nlohmann::json& cfg) {
  try {
    if (cfg.contains("family")) {
      std::string fam = cfg.at("family").get<std::string>();
      if (fam != "lambda_omega")
        throw ConfigError("unknown system family '" + fam + "'");
      double gamma = cfg.value("gamma", 0.0);
      if (!std::isfinite(gamma)) throw ConfigError("gamma must be finite");
      return make_lambda_omega(gamma);
    }
    int d = cfg.at("d").get<int>();
    if (d < 1) throw ConfigError("d must be positive");
    auto flat = cfg.at("D").get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != d * d)
      throw ConfigError("D must have d*d entries");
    RMat D(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) D(i, j) = flat[i * d + j];
    std::vector<PolyTerm> terms;
    for (const auto& t : cfg.at("f_polynomial")) {
      terms.push_back({t.at("target_component").get<int>(),
                       t.at("coefficient").get<double>(),
                       t.at("exponents").get<std::vector<int>>()});
    }
    RDSystem s = make_polynomial_system(D, std::move(terms));
    RVecE probe = RVecE::LinSpaced(d, 0.3, 0.9);
    if (jacobian_fd_mismatch(s, probe) > 1e-6)
      throw ConfigError("generated Jacobian failed the finite-difference check");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed system config: ") + e.what());
  }
}

}  // namespace wavemix

#endif
