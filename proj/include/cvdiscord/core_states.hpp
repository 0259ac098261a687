#pragma once

// Bipartite Gaussian states in shot-noise units: a mean vector and a 4x4
// covariance matrix over the quadratures (x_A, p_A, x_B, p_B).

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvdiscord/errors.hpp"
#include "cvdiscord/numerics.hpp"

namespace cvdiscord {

using Vector2 = Eigen::Vector2d;
using Vector4 = Eigen::Vector4d;
using Matrix2 = Eigen::Matrix2d;
using Matrix4 = Eigen::Matrix4d;

/// Vacuum quadrature variance of the shot-noise convention.
inline constexpr double kShotNoiseVacuum = 1.0;
/// Vacuum variance implied by a vacuum marginal exp(-x^2)/sqrt(pi).
inline constexpr double kHalfVacuum = 0.5;

inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr double kPhysicalityTolerance = 1e-9;

/// Two-mode symplectic form, block order (x_A, p_A, x_B, p_B).
inline Matrix4 symplectic_form() {
  Matrix4 omega = Matrix4::Zero();
  omega(0, 1) = 1.0;
  omega(1, 0) = -1.0;
  omega(2, 3) = 1.0;
  omega(3, 2) = -1.0;
  return omega;
}

struct InvariantCheck {
  std::string name;
  bool passed = false;
  /// Measured quantity the check is based on (asymmetry, smallest eigenvalue, ...).
  double margin = 0.0;
};

struct ValidationReport {
  std::vector<InvariantCheck> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const InvariantCheck& c) { return c.passed; });
  }

  const InvariantCheck& check(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) {
        return c;
      }
    }
    throw std::out_of_range("no invariant named " + name);
  }

  std::string summary() const {
    std::ostringstream os;
    for (const auto& c : checks) {
      os << c.name << '=' << (c.passed ? "pass" : "fail") << '(' << c.margin << ") ";
    }
    return os.str();
  }
};

/// Smallest eigenvalue of sigma + i v0 Omega (uncertainty principle).
inline double physicality_margin(const Matrix4& sigma, double v0) {
  const Eigen::Matrix4cd m =
      sigma.cast<std::complex<double>>() +
      std::complex<double>(0.0, v0) * symplectic_form().cast<std::complex<double>>();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> solver(m, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

/// Checks symmetry, positive definiteness and physicality of a 4x4 covariance.
inline ValidationReport validate_covariance(const Eigen::MatrixXd& sigma,
                                            double v0 = kShotNoiseVacuum) {
  if (sigma.rows() != 4 || sigma.cols() != 4) {
    throw MalformedInputError("covariance matrix must be 4x4, got " +
                              std::to_string(sigma.rows()) + "x" +
                              std::to_string(sigma.cols()));
  }
  if (!sigma.allFinite()) {
    throw MalformedInputError("covariance matrix has non-finite entries");
  }
  if (!(v0 > 0.0) || !std::isfinite(v0)) {
    throw MalformedInputError("vacuum variance must be positive and finite");
  }
  ValidationReport report;
  const double asymmetry = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  report.checks.push_back({"symmetric", asymmetry <= kSymmetryTolerance, asymmetry});

  const Matrix4 sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix4> solver(sym, Eigen::EigenvaluesOnly);
  const double min_eig = solver.eigenvalues().minCoeff();
  report.checks.push_back({"positive_definite", min_eig > 0.0, min_eig});

  const double phys = physicality_margin(sym, v0);
  report.checks.push_back({"physical", phys >= -kPhysicalityTolerance, phys});
  return report;
}

class CovarianceMatrix {
 public:
  /// Validates and wraps sigma; throws DomainError if any invariant fails.
  static CovarianceMatrix make(const Matrix4& sigma, double v0 = kShotNoiseVacuum) {
    const auto report = validate_covariance(sigma, v0);
    if (!report.ok()) {
      throw DomainError("invalid covariance matrix: " + report.summary());
    }
    return CovarianceMatrix(0.5 * (sigma + sigma.transpose()), v0);
  }

  static CovarianceMatrix vacuum(double v0 = kShotNoiseVacuum) {
    return CovarianceMatrix(v0 * Matrix4::Identity(), v0);
  }

  const Matrix4& matrix() const { return sigma_; }
  double v0() const { return v0_; }
  double operator()(int i, int j) const { return sigma_(i, j); }

  Matrix2 block_a() const { return sigma_.topLeftCorner<2, 2>(); }
  Matrix2 block_b() const { return sigma_.bottomRightCorner<2, 2>(); }
  Matrix2 block_c() const { return sigma_.topRightCorner<2, 2>(); }

 private:
  CovarianceMatrix(const Matrix4& sigma, double v0) : sigma_(sigma), v0_(v0) {}

  Matrix4 sigma_;
  double v0_;
};

class QuadratureMeans {
 public:
  QuadratureMeans() = default;

  explicit QuadratureMeans(const Vector4& values) : values_(values) {
    if (!values.allFinite()) {
      throw MalformedInputError("quadrature means must be finite");
    }
  }

  const Vector4& values() const { return values_; }

 private:
  Vector4 values_ = Vector4::Zero();
};

class GaussianBipartiteState {
 public:
  GaussianBipartiteState(QuadratureMeans means, CovarianceMatrix cov)
      : means_(std::move(means)), cov_(std::move(cov)) {}

  static GaussianBipartiteState vacuum(double v0 = kShotNoiseVacuum) {
    return {QuadratureMeans{}, CovarianceMatrix::vacuum(v0)};
  }

  const QuadratureMeans& means() const { return means_; }
  const CovarianceMatrix& cov() const { return cov_; }
  double v0() const { return cov_.v0(); }

 private:
  QuadratureMeans means_;
  CovarianceMatrix cov_;
};

/// One optical mode, quadratures (x, p).
struct SingleModeState {
  Vector2 means = Vector2::Zero();
  Matrix2 cov = Matrix2::Identity();
  double v0 = kShotNoiseVacuum;

  static SingleModeState vacuum(double v0 = kShotNoiseVacuum) {
    return {Vector2::Zero(), v0 * Matrix2::Identity(), v0};
  }
};

/// Amplitude transmissivity eta in (0, 1]; reflectivity sqrt(1 - eta^2).
class BeamSplitter {
 public:
  static BeamSplitter make(double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) {
      throw DomainError("beam splitter transmissivity must lie in (0, 1], got " +
                        std::to_string(eta));
    }
    return BeamSplitter(eta);
  }

  static BeamSplitter balanced() { return BeamSplitter(std::numbers::sqrt2 / 2.0); }

  double eta() const { return eta_; }
  double eta_tilde() const { return eta_tilde_; }

  /// Output quadratures as a linear map of the inputs, applied to x and p alike:
  /// out_1 = eta in_1 - eta~ in_2, out_2 = eta~ in_1 + eta in_2.
  Matrix4 mixing_matrix() const {
    Matrix4 s = Matrix4::Zero();
    s.topLeftCorner<2, 2>() = eta_ * Matrix2::Identity();
    s.topRightCorner<2, 2>() = -eta_tilde_ * Matrix2::Identity();
    s.bottomLeftCorner<2, 2>() = eta_tilde_ * Matrix2::Identity();
    s.bottomRightCorner<2, 2>() = eta_ * Matrix2::Identity();
    return s;
  }

 private:
  explicit BeamSplitter(double eta) : eta_(eta), eta_tilde_(std::sqrt(1.0 - eta * eta)) {}

  double eta_;
  double eta_tilde_;
};

/// Vacuum with Gaussian displacement noise of `depth` vacuum standard deviations
/// on each quadrature: variances (1 + d_x^2, 1 + d_p^2) v0.
inline SingleModeState modulated_beam(double depth_x, double depth_p,
                                      double v0 = kShotNoiseVacuum) {
  if (!std::isfinite(depth_x) || !std::isfinite(depth_p) || depth_x < 0.0 ||
      depth_p < 0.0) {
    throw DomainError("modulation depths must be finite and non-negative");
  }
  SingleModeState s = SingleModeState::vacuum(v0);
  s.cov(0, 0) = (1.0 + depth_x * depth_x) * v0;
  s.cov(1, 1) = (1.0 + depth_p * depth_p) * v0;
  return s;
}

inline GaussianBipartiteState tensor_product(const SingleModeState& a,
                                             const SingleModeState& b) {
  if (a.v0 != b.v0) {
    throw DomainError("modes use different vacuum conventions");
  }
  Vector4 means;
  means << a.means, b.means;
  Matrix4 sigma = Matrix4::Zero();
  sigma.topLeftCorner<2, 2>() = a.cov;
  sigma.bottomRightCorner<2, 2>() = b.cov;
  return {QuadratureMeans(means), CovarianceMatrix::make(sigma, a.v0)};
}

inline GaussianBipartiteState apply_beam_splitter(const GaussianBipartiteState& state,
                                                  const BeamSplitter& bs) {
  const Matrix4 s = bs.mixing_matrix();
  const Matrix4 sigma = s * state.cov().matrix() * s.transpose();
  const Vector4 means = s * state.means().values();
  return {QuadratureMeans(means), CovarianceMatrix::make(sigma, state.v0())};
}

/// Undoes apply_beam_splitter (the mixing matrix is orthogonal).
inline GaussianBipartiteState apply_inverse_beam_splitter(const GaussianBipartiteState& state,
                                                          const BeamSplitter& bs) {
  const Matrix4 s = bs.mixing_matrix().transpose();
  const Matrix4 sigma = s * state.cov().matrix() * s.transpose();
  const Vector4 means = s * state.means().values();
  return {QuadratureMeans(means), CovarianceMatrix::make(sigma, state.v0())};
}

/// Splits `input` on a 50:50 beam splitter with vacuum in the idle port.
inline GaussianBipartiteState split_balanced(const SingleModeState& input) {
  return apply_beam_splitter(tensor_product(input, SingleModeState::vacuum(input.v0)),
                             BeamSplitter::balanced());
}

/// Local-oscillator rotation; row i of block k is (cos t_k, sin t_k) / (-sin t_k, cos t_k).
inline Matrix4 local_rotation(double theta_a, double theta_b) {
  Matrix4 u = Matrix4::Zero();
  const double ca = std::cos(theta_a), sa = std::sin(theta_a);
  const double cb = std::cos(theta_b), sb = std::sin(theta_b);
  u.topLeftCorner<2, 2>() << ca, sa, -sa, ca;
  u.bottomRightCorner<2, 2>() << cb, sb, -sb, cb;
  return u;
}

/// sigma -> U sigma U^T, means -> U means. After rotation, component 0 (2) is the
/// quadrature a homodyne detector at phase theta_A (theta_B) measures.
inline GaussianBipartiteState rotate_local(const GaussianBipartiteState& state, double theta_a,
                                           double theta_b) {
  const Matrix4 u = local_rotation(theta_a, theta_b);
  const Matrix4 sigma = u * state.cov().matrix() * u.transpose();
  const Vector4 means = u * state.means().values();
  return {QuadratureMeans(means), CovarianceMatrix::make(sigma, state.v0())};
}

/// Analytic zero-discord test for Gaussian states: max |C_ij| <= tol.
inline bool c_block_is_zero(const GaussianBipartiteState& state, double tol) {
  return state.cov().block_c().cwiseAbs().maxCoeff() <= tol;
}

inline double condition_number(const Matrix4& sigma) {
  Eigen::SelfAdjointEigenSolver<Matrix4> solver(sigma, Eigen::EigenvaluesOnly);
  const auto ev = solver.eigenvalues();
  return ev.maxCoeff() / ev.minCoeff();
}

/// Gaussian Wigner function at `point`.
inline double wigner_density(const GaussianBipartiteState& state, const Vector4& point) {
  const Matrix4& sigma = state.cov().matrix();
  const double cond = condition_number(sigma);
  if (!(cond > 0.0) || cond > 1e13) {
    throw NumericError("covariance matrix is numerically singular (condition number " +
                       std::to_string(cond) + ")");
  }
  Eigen::LLT<Matrix4> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericError("covariance matrix is not positive definite");
  }
  const Vector4 d = point - state.means().values();
  const double quad = d.dot(llt.solve(d));
  const double det = llt.matrixL().determinant();  // sqrt(det sigma)
  return std::exp(-0.5 * quad) / (4.0 * numerics::kPi * numerics::kPi * det);
}

}  // namespace cvdiscord
