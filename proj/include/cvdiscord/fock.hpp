#pragma once

// Truncated number-basis numerics: the two bipartite counterexamples that bound
// the peak-separation criterion for general non-Gaussian states.
//
// Joint states are (dim_a*dim_b)^2 complex matrices indexed by i*dim_b + j with i
// the A photon number and j the B photon number.

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/marginals.hpp"
#include "cvdiscord/numerics.hpp"

namespace cvdiscord::fock {

using cplx = std::complex<double>;
using StateVector = Eigen::VectorXcd;
using Operator = Eigen::MatrixXcd;

inline constexpr double kTailTolerance = 1e-8;
inline constexpr std::size_t kDefaultDim = 20;
inline constexpr std::size_t kEscalatedDim = 40;

// ---------------------------------------------------------------------------
// Single-mode states

/// Poisson tail mass of |alpha> beyond the truncation.
inline double coherent_tail(cplx alpha, std::size_t dim) {
  const double m = std::norm(alpha);
  double term = std::exp(-m), kept = 0.0;
  for (std::size_t n = 0; n < dim; ++n) {
    kept += term;
    term *= m / static_cast<double>(n + 1);
  }
  return std::max(0.0, 1.0 - kept);
}

inline StateVector coherent_fock(cplx alpha, std::size_t dim) {
  if (dim == 0) {
    throw DomainError("truncation dimension must be positive");
  }
  const double tail = coherent_tail(alpha, dim);
  if (tail >= kTailTolerance) {
    throw TruncationError("coherent state |alpha|^2 = " + std::to_string(std::norm(alpha)) +
                          " loses " + std::to_string(tail) + " probability at dim " +
                          std::to_string(dim));
  }
  StateVector v(dim);
  cplx c = std::exp(-0.5 * std::norm(alpha));
  for (std::size_t n = 0; n < dim; ++n) {
    v(n) = c;
    c *= alpha / std::sqrt(static_cast<double>(n + 1));
  }
  return v / v.norm();
}

inline StateVector number_state(std::size_t n, std::size_t dim) {
  if (n >= dim) {
    throw TruncationError("number state |" + std::to_string(n) + "> needs dim > " +
                          std::to_string(n));
  }
  StateVector v = StateVector::Zero(dim);
  v(n) = 1.0;
  return v;
}

/// Squeezed vacuum S(r)|0>; x variance is e^{-2r} v0.
inline StateVector squeezed_vacuum_fock(double r, std::size_t dim) {
  StateVector v = StateVector::Zero(dim);
  const double t = -std::tanh(r);
  double c = 1.0 / std::sqrt(std::cosh(r));
  double kept = 0.0;
  for (std::size_t m = 0; 2 * m < dim; ++m) {
    v(2 * m) = c;
    kept += c * c;
    // c_{2m+2} / c_{2m} = t sqrt((2m+1)(2m+2)) / (2 (m+1))
    c *= t * std::sqrt((2.0 * m + 1.0) * (2.0 * m + 2.0)) / (2.0 * (m + 1.0));
  }
  if (1.0 - kept >= kTailTolerance) {
    throw TruncationError("squeezed vacuum r = " + std::to_string(r) + " loses " +
                          std::to_string(1.0 - kept) + " probability at dim " +
                          std::to_string(dim));
  }
  return v / v.norm();
}

inline Operator thermal_fock(double nbar, std::size_t dim) {
  if (!(nbar >= 0.0)) {
    throw DomainError("thermal mean photon number must be >= 0");
  }
  const double q = nbar / (nbar + 1.0);
  const double tail = std::pow(q, static_cast<double>(dim));
  if (tail >= kTailTolerance) {
    throw TruncationError("thermal state nbar = " + std::to_string(nbar) + " loses " +
                          std::to_string(tail) + " probability at dim " + std::to_string(dim));
  }
  Operator rho = Operator::Zero(dim, dim);
  double p = 1.0 / (nbar + 1.0);
  for (std::size_t n = 0; n < dim; ++n) {
    rho(n, n) = p;
    p *= q;
  }
  return rho / rho.trace().real();
}

inline Operator projector(const StateVector& v) { return v * v.adjoint(); }

/// Smallest of {20, 40} for which `build(dim)` succeeds without a truncation error.
template <class Build>
auto with_escalation(Build&& build) -> decltype(build(std::size_t{})) {
  try {
    return build(kDefaultDim);
  } catch (const TruncationError&) {
    return build(kEscalatedDim);
  }
}

// ---------------------------------------------------------------------------
// Bipartite density matrices

class FockDensityMatrix {
 public:
  FockDensityMatrix(std::size_t dim_a, std::size_t dim_b, Operator rho)
      : dim_a_(dim_a), dim_b_(dim_b), rho_(std::move(rho)) {
    if (rho_.rows() != static_cast<Eigen::Index>(dim_a * dim_b) || rho_.cols() != rho_.rows()) {
      throw MalformedInputError("density matrix size does not match dim_a * dim_b");
    }
    if (hermiticity_error() > 1e-10) {
      throw DomainError("density matrix is not Hermitian");
    }
    if (std::abs(trace() - 1.0) > 1e-8) {
      throw DomainError("density matrix trace " + std::to_string(trace()) + " != 1");
    }
  }

  std::size_t dim_a() const { return dim_a_; }
  std::size_t dim_b() const { return dim_b_; }
  const Operator& matrix() const { return rho_; }

  double trace() const { return rho_.trace().real(); }
  double hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Operator> solver(rho_, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
  }

  /// Hermitian to 1e-10, unit trace to 1e-8, eigenvalues >= -1e-8.
  bool is_valid() const {
    return hermiticity_error() <= 1e-10 && std::abs(trace() - 1.0) <= 1e-8 &&
           min_eigenvalue() >= -1e-8;
  }

  cplx operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return rho_(static_cast<Eigen::Index>(i * dim_b_ + j),
                static_cast<Eigen::Index>(k * dim_b_ + l));
  }

 private:
  std::size_t dim_a_;
  std::size_t dim_b_;
  Operator rho_;
};

inline Operator kron(const Operator& a, const Operator& b) {
  Operator out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline Operator partial_trace_a(const FockDensityMatrix& rho) {
  const auto da = rho.dim_a(), db = rho.dim_b();
  Operator out = Operator::Zero(db, db);
  for (std::size_t i = 0; i < da; ++i) {
    out += rho.matrix().block(i * db, i * db, db, db);
  }
  return out;
}

inline Operator partial_trace_b(const FockDensityMatrix& rho) {
  const auto da = rho.dim_a(), db = rho.dim_b();
  Operator out = Operator::Zero(da, da);
  for (std::size_t i = 0; i < da; ++i) {
    for (std::size_t k = 0; k < da; ++k) {
      out(i, k) = rho.matrix().block(i * db, k * db, db, db).trace();
    }
  }
  return out;
}

struct FockDims {
  /// 0 selects the default with automatic escalation.
  std::size_t a = 0;
  std::size_t b = 0;
};

/// 1/4 [ |a><a| (x) (|0>+|1>)(<0|+<1|) + |-a><-a| (x) (|0>-|1>)(<0|-<1|) ]:
/// classical on B in the basis {|+>, |->, |2>, ...}.
inline FockDensityMatrix build_ce_zero_discord(cplx alpha = 1.0, FockDims dims = {}) {
  auto coherent_pair = [&](std::size_t d) {
    return std::pair{coherent_fock(alpha, d), coherent_fock(-alpha, d)};
  };
  const auto [ket_a, ket_ma] = dims.a ? coherent_pair(dims.a) : with_escalation(coherent_pair);
  const std::size_t da = static_cast<std::size_t>(ket_a.size());
  const std::size_t db = dims.b ? dims.b : kDefaultDim;
  if (db < 2) {
    throw TruncationError("zero-discord counterexample needs dim_b >= 2");
  }
  const StateVector plus = (number_state(0, db) + number_state(1, db)) / std::sqrt(2.0);
  const StateVector minus = (number_state(0, db) - number_state(1, db)) / std::sqrt(2.0);
  Operator rho = 0.5 * kron(projector(ket_a), projector(plus)) +
                 0.5 * kron(projector(ket_ma), projector(minus));
  return {da, db, rho};
}

struct HiddenDiscordParams {
  double nbar = 1.0;
  double r = 0.5;
  FockDims dims;
  /// A-side states; default coherent |alpha_a> and |-alpha_a>.
  std::optional<Operator> rho_a1;
  std::optional<Operator> rho_a2;
  cplx alpha_a = 1.0;
};

/// 1/2 rho_A1 (x) thermal(nbar) + 1/2 rho_A2 (x) squeezed_vacuum(r).
inline FockDensityMatrix build_ce_hidden_discord(const HiddenDiscordParams& p = {}) {
  auto b_states = [&](std::size_t d) {
    return std::pair{thermal_fock(p.nbar, d), projector(squeezed_vacuum_fock(p.r, d))};
  };
  const auto [rho_th, rho_s] = p.dims.b ? b_states(p.dims.b) : with_escalation(b_states);
  Operator a1, a2;
  if (p.rho_a1 && p.rho_a2) {
    a1 = *p.rho_a1;
    a2 = *p.rho_a2;
    if (a1.rows() != a2.rows()) {
      throw DomainError("A-side states must share a dimension");
    }
  } else {
    auto a_states = [&](std::size_t d) {
      return std::pair{projector(coherent_fock(p.alpha_a, d)),
                       projector(coherent_fock(-p.alpha_a, d))};
    };
    std::tie(a1, a2) = p.dims.a ? a_states(p.dims.a) : with_escalation(a_states);
  }
  const Operator rho = 0.5 * kron(a1, rho_th) + 0.5 * kron(a2, rho_s);
  return {static_cast<std::size_t>(a1.rows()), static_cast<std::size_t>(rho_th.rows()), rho};
}

// ---------------------------------------------------------------------------
// Quadrature representation

/// Harmonic-oscillator eigenfunctions psi_0..psi_{count-1} at x, normalized so that
/// |psi_0|^2 is a Gaussian of variance v0.
inline std::vector<double> eigenfunctions(double x, std::size_t count, double v0) {
  std::vector<double> psi(count);
  if (count == 0) {
    return psi;
  }
  const double xi = x / std::sqrt(2.0 * v0);
  const double norm = std::pow(2.0 * v0, -0.25) * std::pow(numerics::kPi, -0.25);
  psi[0] = norm * std::exp(-0.5 * xi * xi);
  if (count > 1) {
    psi[1] = std::sqrt(2.0) * xi * psi[0];
  }
  for (std::size_t n = 1; n + 1 < count; ++n) {
    const double np1 = static_cast<double>(n + 1);
    psi[n + 1] = std::sqrt(2.0 / np1) * xi * psi[n] - std::sqrt(n / np1) * psi[n - 1];
  }
  return psi;
}

class QuadratureGrid {
 public:
  static QuadratureGrid uniform(double lo, double hi, std::size_t points,
                                double v0 = kShotNoiseVacuum) {
    if (points < 2 || !(hi > lo)) {
      throw DomainError("quadrature grid needs hi > lo and at least 2 points");
    }
    QuadratureGrid g;
    g.v0_ = v0;
    g.points_.resize(points);
    for (std::size_t i = 0; i < points; ++i) {
      g.points_[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
  }

  /// Symmetric grid over [-range, range] sqrt(v0) with the given spacing in sqrt(v0).
  static QuadratureGrid symmetric(double range = 12.0, double spacing = 0.01,
                                  double v0 = kShotNoiseVacuum) {
    const auto half = static_cast<std::size_t>(std::llround(range / spacing));
    const double s = std::sqrt(v0);
    return uniform(-range * s, range * s, 2 * half + 1, v0);
  }

  const std::vector<double>& points() const { return points_; }
  double spacing() const { return points_[1] - points_[0]; }
  double v0() const { return v0_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<double> points_;
  double v0_ = kShotNoiseVacuum;
};

/// p(x) = sum_mn rho_mn psi_m(x) psi_n(x) for the quadrature at phase theta.
inline double homodyne_density(const Operator& rho, double x, double v0 = kShotNoiseVacuum,
                               double theta = 0.0) {
  const auto psi = eigenfunctions(x, static_cast<std::size_t>(rho.rows()), v0);
  double total = 0.0;
  for (Eigen::Index m = 0; m < rho.rows(); ++m) {
    for (Eigen::Index n = 0; n < rho.cols(); ++n) {
      cplx e = rho(m, n);
      if (theta != 0.0) {
        e *= std::polar(1.0, -theta * static_cast<double>(m - n));
      }
      total += e.real() * psi[m] * psi[n];
    }
  }
  return total;
}

inline std::vector<double> homodyne_marginal_fock(const Operator& rho, const QuadratureGrid& grid,
                                                  double theta = 0.0) {
  std::vector<double> out;
  out.reserve(grid.size());
  for (double x : grid.points()) {
    out.push_back(homodyne_density(rho, x, grid.v0(), theta));
  }
  return out;
}

/// Composite Simpson (odd point count) or trapezoid rule on a uniform grid.
inline double grid_integral(const std::vector<double>& f, double h) {
  const std::size_t n = f.size();
  if (n < 2) {
    return 0.0;
  }
  if (n % 2 == 1 && n >= 3) {
    double s = f.front() + f.back();
    for (std::size_t i = 1; i + 1 < n; ++i) {
      s += (i % 2 ? 4.0 : 2.0) * f[i];
    }
    return s * h / 3.0;
  }
  double s = 0.5 * (f.front() + f.back());
  for (std::size_t i = 1; i + 1 < n; ++i) {
    s += f[i];
  }
  return s * h;
}

/// Matrix of the projector onto x_theta >= 0, from overlap integrals of eigenfunction
/// products over x > 0 (spacing 0.01 sqrt(v0)).
inline Operator quadrature_projector(std::size_t dim, Side side, double v0 = kShotNoiseVacuum,
                                     double theta = 0.0) {
  const double s = std::sqrt(v0);
  // Beyond the classical turning point sqrt((4n+2) v0) the eigenfunctions decay fast.
  const double range = std::max(12.0, std::sqrt(4.0 * static_cast<double>(dim) + 2.0) + 8.0) * s;
  const double h = 0.01 * s;
  auto steps = static_cast<std::size_t>(std::ceil(range / h));
  steps += steps % 2;  // even interval count for Simpson
  const double dx = range / static_cast<double>(steps);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const auto psi = eigenfunctions(static_cast<double>(i) * dx, dim, v0);
    const Eigen::Map<const Eigen::VectorXd> v(psi.data(), static_cast<Eigen::Index>(dim));
    acc.noalias() += w * v * v.transpose();
  }
  acc *= dx / 3.0;
  Operator out(dim, dim);
  for (std::size_t m = 0; m < dim; ++m) {
    for (std::size_t n = 0; n < dim; ++n) {
      // x < 0 half by parity of psi_m psi_n.
      double val = acc(m, n);
      if (side == Side::minus) {
        val *= ((m + n) % 2 == 0) ? 1.0 : -1.0;
      }
      out(m, n) = val * std::polar(1.0, theta * (static_cast<double>(m) - static_cast<double>(n)));
    }
  }
  return out;
}

struct ConditionalState {
  Operator rho_b;
  double probability = 0.0;
};

/// rho_{B|side} = Tr_A[rho (Pi_side (x) 1)] / p_side, with Pi_side the projector of A's
/// quadrature at theta_a onto the half line.
inline ConditionalState conditional_B_given_sign(const FockDensityMatrix& rho, Side side,
                                                 double theta_a = 0.0,
                                                 double v0 = kShotNoiseVacuum) {
  const auto da = rho.dim_a(), db = rho.dim_b();
  const Operator pi = quadrature_projector(da, side, v0, theta_a);
  Operator out = Operator::Zero(db, db);
  for (std::size_t i = 0; i < da; ++i) {
    for (std::size_t k = 0; k < da; ++k) {
      const cplx w = pi(k, i);
      if (w == 0.0) {
        continue;
      }
      out += w * rho.matrix().block(i * db, k * db, db, db);
    }
  }
  const double p = out.trace().real();
  if (!(p > 1e-14)) {
    throw NumericError("conditioning event has vanishing probability");
  }
  return {out / p, p};
}

/// Frobenius norm of [rho1, rho2].
inline double commutator_norm(const Operator& rho1, const Operator& rho2) {
  if (rho1.rows() != rho2.rows() || rho1.cols() != rho2.cols()) {
    throw DomainError("commutator of operators with different dimensions");
  }
  return (rho1 * rho2 - rho2 * rho1).norm();
}

/// Columns |+>, |->, |2>, |3>, ... with |+-> = (|0> +- |1>)/sqrt 2.
inline Operator plus_minus_basis(std::size_t dim) {
  Operator w = Operator::Identity(dim, dim);
  const double r = 1.0 / std::sqrt(2.0);
  w(0, 0) = r;
  w(1, 0) = r;
  w(0, 1) = r;
  w(1, 1) = -r;
  return w;
}

/// True iff rho = sum_j p_j rho_{A|j} (x) |j><j| in the given B basis (columns), i.e. all
/// off-diagonal B blocks have Frobenius norm <= tol.
inline bool verify_classical_on_B(const FockDensityMatrix& rho, const Operator& basis,
                                  double tol = 1e-10) {
  const auto da = rho.dim_a(), db = rho.dim_b();
  if (basis.rows() != static_cast<Eigen::Index>(db) || basis.cols() != basis.rows()) {
    throw DomainError("B basis must be a dim_b x dim_b matrix of column vectors");
  }
  if ((basis.adjoint() * basis - Operator::Identity(db, db)).cwiseAbs().maxCoeff() > 1e-10) {
    throw DomainError("B basis is not orthonormal");
  }
  const Operator u = kron(Operator::Identity(da, da), basis);
  const Operator t = u.adjoint() * rho.matrix() * u;
  for (std::size_t j = 0; j < db; ++j) {
    for (std::size_t l = 0; l < db; ++l) {
      if (j == l) {
        continue;
      }
      double ss = 0.0;
      for (std::size_t i = 0; i < da; ++i) {
        for (std::size_t k = 0; k < da; ++k) {
          ss += std::norm(t(i * db + j, k * db + l));
        }
      }
      if (std::sqrt(ss) > tol) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Marginal summaries

struct MarginalSummary {
  double peak = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double norm = 0.0;
};

/// Peak (grid maximum refined by a parabola), mean and variance of the homodyne
/// marginal of rho on the grid.
inline MarginalSummary summarize_marginal(const Operator& rho, const QuadratureGrid& grid,
                                          double theta = 0.0) {
  const auto p = homodyne_marginal_fock(rho, grid, theta);
  const auto& x = grid.points();
  const double h = grid.spacing();
  MarginalSummary s;
  s.norm = grid_integral(p, h);
  std::vector<double> xp(p.size()), x2p(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    xp[i] = x[i] * p[i];
    x2p[i] = x[i] * x[i] * p[i];
  }
  s.mean = grid_integral(xp, h) / s.norm;
  s.variance = grid_integral(x2p, h) / s.norm - s.mean * s.mean;
  std::size_t im = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[im]) {
      im = i;
    }
  }
  s.peak = x[im];
  if (im > 0 && im + 1 < p.size()) {
    const double denom = p[im - 1] - 2.0 * p[im] + p[im + 1];
    if (denom < 0.0) {
      s.peak += h * 0.5 * (p[im - 1] - p[im + 1]) / denom;
    }
  }
  return s;
}

struct CounterexampleReport {
  ConditionalState plus;
  ConditionalState minus;
  MarginalSummary marginal_plus;
  MarginalSummary marginal_minus;
  double peak_separation = 0.0;
  double variance_ratio = 1.0;  // larger conditional variance over the smaller
  double commutator = 0.0;      // || [rho_B|+, rho_B|-] ||
};

inline CounterexampleReport analyze_counterexample(const FockDensityMatrix& rho,
                                                   double v0 = kShotNoiseVacuum) {
  CounterexampleReport r;
  r.plus = conditional_B_given_sign(rho, Side::plus, 0.0, v0);
  r.minus = conditional_B_given_sign(rho, Side::minus, 0.0, v0);
  const auto grid = QuadratureGrid::symmetric(
      std::max(12.0, std::sqrt(4.0 * static_cast<double>(rho.dim_b()) + 2.0) + 6.0), 0.01, v0);
  r.marginal_plus = summarize_marginal(r.plus.rho_b, grid);
  r.marginal_minus = summarize_marginal(r.minus.rho_b, grid);
  r.peak_separation = r.marginal_plus.peak - r.marginal_minus.peak;
  const double vp = r.marginal_plus.variance, vm = r.marginal_minus.variance;
  r.variance_ratio = std::max(vp, vm) / std::min(vp, vm);
  r.commutator = commutator_norm(r.plus.rho_b, r.minus.rho_b);
  return r;
}

}  // namespace cvdiscord::fock
