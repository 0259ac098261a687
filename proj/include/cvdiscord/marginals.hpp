#pragma once

// Homodyne marginals. Gaussian states reduce to a bivariate normal in the two
// measured quadratures, written as exp(-lambda xA^2 - mu xB^2 + 2 nu xA xB).
// P-function mixtures of coherent states behind a beam splitter are handled as
// averages of displaced vacua over the P-function.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/numerics.hpp"

namespace cvdiscord {

enum class Side { plus, minus };

inline const char* to_string(Side s) { return s == Side::plus ? "plus" : "minus"; }

class MarginalForm {
 public:
  static MarginalForm make(double lambda, double mu, double nu, double theta_a = 0.0,
                           double theta_b = 0.0, double mean_a = 0.0, double mean_b = 0.0) {
    if (!(lambda > 0.0) || !(mu > 0.0) || !std::isfinite(nu) ||
        !(lambda * mu - nu * nu > 0.0)) {
      throw DomainError("marginal form is not integrable (need lambda, mu > 0 and "
                        "lambda*mu - nu^2 > 0)");
    }
    return MarginalForm(lambda, mu, nu, theta_a, theta_b, mean_a, mean_b);
  }

  /// Form of a bivariate normal with covariance [[var_a, cov],[cov, var_b]].
  static MarginalForm from_covariance(double var_a, double var_b, double cov,
                                      double theta_a = 0.0, double theta_b = 0.0,
                                      double mean_a = 0.0, double mean_b = 0.0) {
    const double det = var_a * var_b - cov * cov;
    if (!(det > 0.0) || !(var_a > 0.0)) {
      throw NumericError("measured-quadrature covariance is singular (det " +
                         std::to_string(det) + ")");
    }
    // Sigma^-1 = [[var_b, -cov], [-cov, var_a]] / det
    return make(0.5 * var_b / det, 0.5 * var_a / det, 0.5 * cov / det, theta_a, theta_b,
                mean_a, mean_b);
  }

  double lambda() const { return lambda_; }
  double mu() const { return mu_; }
  double nu() const { return nu_; }
  double theta_a() const { return theta_a_; }
  double theta_b() const { return theta_b_; }
  double mean_a() const { return mean_a_; }
  double mean_b() const { return mean_b_; }

  double discriminant() const { return lambda_ * mu_ - nu_ * nu_; }
  double variance_a() const { return 0.5 * mu_ / discriminant(); }
  double variance_b() const { return 0.5 * lambda_ / discriminant(); }
  double covariance() const { return 0.5 * nu_ / discriminant(); }

 private:
  MarginalForm(double lambda, double mu, double nu, double ta, double tb, double ma, double mb)
      : lambda_(lambda), mu_(mu), nu_(nu), theta_a_(ta), theta_b_(tb), mean_a_(ma), mean_b_(mb) {}

  double lambda_, mu_, nu_;
  double theta_a_, theta_b_;
  double mean_a_, mean_b_;
};

inline MarginalForm joint_marginal_form(const GaussianBipartiteState& state, double theta_a,
                                        double theta_b) {
  const auto rotated = rotate_local(state, theta_a, theta_b);
  const Matrix4& s = rotated.cov().matrix();
  const Vector4& m = rotated.means().values();
  return MarginalForm::from_covariance(s(0, 0), s(2, 2), s(0, 2), theta_a, theta_b, m(0), m(2));
}

/// nu for the four local-oscillator settings {0, pi/2}^2.
struct NuTable {
  double nu_00 = 0.0;
  double nu_0_90 = 0.0;
  double nu_90_0 = 0.0;
  double nu_90_90 = 0.0;
};

inline NuTable nu_table(const GaussianBipartiteState& state) {
  constexpr double q = std::numbers::pi / 2.0;
  return {joint_marginal_form(state, 0.0, 0.0).nu(), joint_marginal_form(state, 0.0, q).nu(),
          joint_marginal_form(state, q, 0.0).nu(), joint_marginal_form(state, q, q).nu()};
}

inline double joint_marginal_density(const MarginalForm& f, double x_a, double x_b) {
  const double a = x_a - f.mean_a();
  const double b = x_b - f.mean_b();
  return std::sqrt(f.discriminant()) / numerics::kPi *
         std::exp(-f.lambda() * a * a - f.mu() * b * b + 2.0 * f.nu() * a * b);
}

/// Unconditional marginal of x_B.
inline double marginal_density_b(const MarginalForm& f, double x_b) {
  return numerics::normal_pdf(x_b, f.mean_b(), f.variance_b());
}

/// Probability that x_A falls on `side` of the threshold (x_A >= t is plus).
inline double side_probability(const MarginalForm& f, Side side, double threshold = 0.0) {
  const double plus = numerics::normal_upper_tail(threshold, f.mean_a(), f.variance_a());
  return side == Side::plus ? plus : 1.0 - plus;
}

namespace detail {
// Argument z of 1 +/- erf(z) in the conditional density.
inline double conditional_erf_argument(const MarginalForm& f, double x_b, double threshold) {
  const double sl = std::sqrt(f.lambda());
  return f.nu() / sl * (x_b - f.mean_b()) - (threshold - f.mean_a()) * sl;
}
}  // namespace detail

/// Density of x_B given x_A on `side` of the threshold, normalized to unit integral.
/// With zero means and threshold 0 this is proportional to
/// exp((nu^2 - mu lambda) x^2 / lambda) (1 +/- erf(nu x / sqrt(lambda))).
inline double conditional_marginal_density(const MarginalForm& f, double x_b, Side side,
                                           double threshold = 0.0) {
  const double z = detail::conditional_erf_argument(f, x_b, threshold);
  const double gate = side == Side::plus ? std::erfc(-z) : std::erfc(z);
  const double p = side_probability(f, side, threshold);
  if (!(p > 0.0)) {
    throw NumericError("conditioning event has zero probability");
  }
  return marginal_density_b(f, x_b) * 0.5 * gate / p;
}

/// Location of the maximum of the conditional density. The log-density is concave,
/// so its derivative has a single root.
inline double conditional_peak(const MarginalForm& f, Side side, double threshold = 0.0,
                               numerics::RootOptions opts = {}) {
  const double sd = std::sqrt(f.variance_b());
  const double a = f.nu() / std::sqrt(f.lambda());
  const double sign = side == Side::plus ? 1.0 : -1.0;
  auto dlog = [&](double x) {
    const double z = detail::conditional_erf_argument(f, x, threshold);
    return -(x - f.mean_b()) / f.variance_b() + sign * a * numerics::dlog_one_plus_erf(sign * z);
  };
  double half_width = 10.0 * sd;
  while (dlog(f.mean_b() - half_width) <= 0.0 || dlog(f.mean_b() + half_width) >= 0.0) {
    half_width *= 2.0;
    if (half_width > 1e4 * sd) {
      throw NumericError("could not bracket the conditional peak");
    }
  }
  return numerics::bisect(dlog, f.mean_b() - half_width, f.mean_b() + half_width, opts);
}

/// argmax D_{B|+} - argmax D_{B|-}. Zero iff nu = 0; same sign as nu.
inline double analytic_peak_separation(const MarginalForm& f, double threshold = 0.0) {
  if (f.nu() == 0.0) {
    return 0.0;
  }
  return conditional_peak(f, Side::plus, threshold) - conditional_peak(f, Side::minus, threshold);
}

// ---------------------------------------------------------------------------
// P-function mixtures

struct CoherentPoint {
  std::complex<double> alpha;
};

/// Thermal state with mean photon number nbar (Gaussian P-function).
struct ThermalNoise {
  double nbar = 0.0;
};

/// Uniform-phase orbit of real coherent amplitudes alpha0 cos(phi).
struct ArcsineOrbit {
  double alpha0 = 0.0;
};

using ComponentKind = std::variant<CoherentPoint, ThermalNoise, ArcsineOrbit>;

struct MixtureComponent {
  double weight = 1.0;
  ComponentKind kind;
};

inline const char* kind_name(const ComponentKind& k) {
  return std::visit(
      [](const auto& c) -> const char* {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, CoherentPoint>) {
          return "coherent";
        } else if constexpr (std::is_same_v<T, ThermalNoise>) {
          return "thermal";
        } else {
          return "arcsine";
        }
      },
      k);
}

inline void validate_components(const std::vector<MixtureComponent>& components) {
  if (components.empty()) {
    throw DomainError("mixture has no components");
  }
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight >= 0.0 && c.weight <= 1.0)) {
      throw DomainError("mixture weight outside [0, 1]");
    }
    total += c.weight;
    std::visit(
        [](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ThermalNoise>) {
            if (!(k.nbar >= 0.0) || !std::isfinite(k.nbar)) {
              throw DomainError("thermal mean photon number must be >= 0");
            }
          } else if constexpr (std::is_same_v<T, ArcsineOrbit>) {
            if (!(k.alpha0 > 0.0) || !std::isfinite(k.alpha0)) {
              throw DomainError("arcsine amplitude must be > 0");
            }
          } else {
            if (!std::isfinite(k.alpha.real()) || !std::isfinite(k.alpha.imag())) {
              throw DomainError("coherent amplitude must be finite");
            }
          }
        },
        c.kind);
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError("mixture weights sum to " + std::to_string(total) + ", expected 1");
  }
}

/// Beam-splitter output of a P-function mixture on port 1 with vacuum on port 2.
class PMixtureState {
 public:
  static PMixtureState make(std::vector<MixtureComponent> components, double eta,
                            double v0 = kShotNoiseVacuum) {
    validate_components(components);
    if (!(v0 > 0.0)) {
      throw DomainError("vacuum variance must be positive");
    }
    return PMixtureState(std::move(components), BeamSplitter::make(eta), v0);
  }

  const std::vector<MixtureComponent>& components() const { return components_; }
  const BeamSplitter& beam_splitter() const { return bs_; }
  double eta() const { return bs_.eta(); }
  double v0() const { return v0_; }

 private:
  PMixtureState(std::vector<MixtureComponent> c, BeamSplitter bs, double v0)
      : components_(std::move(c)), bs_(bs), v0_(v0) {}

  std::vector<MixtureComponent> components_;
  BeamSplitter bs_;
  double v0_;
};

/// Displacement of the input mode in quadrature units: a coherent amplitude alpha
/// moves (x, p) by 2 sqrt(v0) (Re alpha, Im alpha).
inline Vector2 coherent_displacement(std::complex<double> alpha, double v0) {
  return 2.0 * std::sqrt(v0) * Vector2(alpha.real(), alpha.imag());
}

/// Calls fn(mean_displacement, isotropic_displacement_variance) for each point of the
/// component's P-function and returns the P-weighted average of the results.
template <class Fn>
double average_over_p(const ComponentKind& kind, double v0, Fn&& fn) {
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, CoherentPoint>) {
          return fn(coherent_displacement(k.alpha, v0), 0.0);
        } else if constexpr (std::is_same_v<T, ThermalNoise>) {
          // Re/Im alpha each carry variance nbar/2.
          return fn(Vector2::Zero(), 2.0 * v0 * k.nbar);
        } else {
          const double amp = 2.0 * std::sqrt(v0) * k.alpha0;
          auto integrand = [&](double phi) {
            return fn(Vector2(amp * std::cos(phi), 0.0), 0.0);
          };
          // cos is symmetric about pi, so [0, pi] carries the full average.
          return numerics::integrate(integrand, 0.0, numerics::kPi, 1e-9) / numerics::kPi;
        }
      },
      kind);
}

inline double project(const Vector2& d, double theta) {
  return std::cos(theta) * d.x() + std::sin(theta) * d.y();
}

/// Marginal D_1 of the input mode's Wigner function along the quadrature at theta.
class InputMarginal {
 public:
  InputMarginal(std::vector<MixtureComponent> components, double v0 = kShotNoiseVacuum,
                double theta = 0.0)
      : components_(std::move(components)), v0_(v0), theta_(theta) {
    validate_components(components_);
  }

  double operator()(double x) const {
    double total = 0.0;
    for (const auto& c : components_) {
      total += c.weight * average_over_p(c.kind, v0_, [&](const Vector2& d, double var_d) {
                 return numerics::normal_pdf(x, project(d, theta_), v0_ + var_d);
               });
    }
    return total;
  }

  double v0() const { return v0_; }

 private:
  std::vector<MixtureComponent> components_;
  double v0_;
  double theta_;
};

inline InputMarginal input_marginal_D1(const std::vector<MixtureComponent>& components,
                                       double v0 = kShotNoiseVacuum, double theta = 0.0) {
  return InputMarginal(components, v0, theta);
}

namespace detail {

/// Gaussian parameters of (x_1, x_2) at the output for one P-function point.
struct OutputPairGaussian {
  double mean_1, mean_2, var_1, var_2, cov;
};

inline OutputPairGaussian output_pair(const PMixtureState& pm, const Vector2& d, double var_d,
                                      double theta_a, double theta_b) {
  const double e = pm.eta(), et = pm.beam_splitter().eta_tilde();
  return {e * project(d, theta_a), et * project(d, theta_b), pm.v0() + e * e * var_d,
          pm.v0() + et * et * var_d, e * et * var_d * std::cos(theta_a - theta_b)};
}

inline double bivariate_normal_pdf(const OutputPairGaussian& g, double x1, double x2) {
  const double det = g.var_1 * g.var_2 - g.cov * g.cov;
  const double a = x1 - g.mean_1, b = x2 - g.mean_2;
  const double quad = (g.var_2 * a * a - 2.0 * g.cov * a * b + g.var_1 * b * b) / det;
  return std::exp(-0.5 * quad) / (2.0 * numerics::kPi * std::sqrt(det));
}

template <class Fn>
double mixture_average(const PMixtureState& pm, Fn&& fn) {
  double total = 0.0;
  for (const auto& c : pm.components()) {
    total += c.weight * average_over_p(c.kind, pm.v0(), fn);
  }
  return total;
}

}  // namespace detail

/// Joint density of the homodyne outcomes (x_1 at theta_a on the transmitted mode,
/// x_2 at theta_b on the reflected mode). For theta_a = theta_b = 0 this equals
/// D_1(eta x1 + eta~ x2) * N(eta x2 - eta~ x1; 0, v0).
inline double output_joint_density(const PMixtureState& pm, double x1, double x2,
                                   double theta_a = 0.0, double theta_b = 0.0) {
  return detail::mixture_average(pm, [&](const Vector2& d, double var_d) {
    return detail::bivariate_normal_pdf(detail::output_pair(pm, d, var_d, theta_a, theta_b), x1,
                                        x2);
  });
}

/// Marginal density of x_2 (mode B) at the output.
inline double output_marginal_b(const PMixtureState& pm, double x2, double theta_b = 0.0) {
  return detail::mixture_average(pm, [&](const Vector2& d, double var_d) {
    const auto g = detail::output_pair(pm, d, var_d, theta_b, theta_b);
    return numerics::normal_pdf(x2, g.mean_2, g.var_2);
  });
}

/// Probability that x_1 >= threshold (plus) or < threshold (minus).
inline double output_side_probability(const PMixtureState& pm, Side side, double threshold,
                                      double theta_a = 0.0) {
  const double plus = detail::mixture_average(pm, [&](const Vector2& d, double var_d) {
    const auto g = detail::output_pair(pm, d, var_d, theta_a, theta_a);
    return numerics::normal_upper_tail(threshold, g.mean_1, g.var_1);
  });
  return side == Side::plus ? plus : 1.0 - plus;
}

/// Density of x_2 conditioned on x_1 lying on `side` of the threshold.
inline double output_conditional_density(const PMixtureState& pm, double x2, Side side,
                                         double threshold = 0.0, double theta_a = 0.0,
                                         double theta_b = 0.0) {
  const double p = output_side_probability(pm, side, threshold, theta_a);
  if (!(p > 0.0)) {
    throw NumericError("conditioning event has zero probability");
  }
  const double joint = detail::mixture_average(pm, [&](const Vector2& d, double var_d) {
    const auto g = detail::output_pair(pm, d, var_d, theta_a, theta_b);
    // x_1 | x_2 is Gaussian.
    const double m1 = g.mean_1 + g.cov / g.var_2 * (x2 - g.mean_2);
    const double v1 = g.var_1 - g.cov * g.cov / g.var_2;
    const double tail = numerics::normal_upper_tail(threshold, m1, v1);
    const double gate = side == Side::plus ? tail : 1.0 - tail;
    return numerics::normal_pdf(x2, g.mean_2, g.var_2) * gate;
  });
  return joint / p;
}

/// Four-mode Wigner function of the output, (x1, p1, x2, p2).
inline double output_wigner_from_P(const PMixtureState& pm, const Vector4& point) {
  const double e = pm.eta(), et = pm.beam_splitter().eta_tilde();
  return detail::mixture_average(pm, [&](const Vector2& d, double var_d) {
    Vector4 mean;
    mean << e * d, et * d;
    Matrix4 cov = pm.v0() * Matrix4::Identity();
    cov.topLeftCorner<2, 2>() += e * e * var_d * Matrix2::Identity();
    cov.bottomRightCorner<2, 2>() += et * et * var_d * Matrix2::Identity();
    cov.topRightCorner<2, 2>() += e * et * var_d * Matrix2::Identity();
    cov.bottomLeftCorner<2, 2>() += e * et * var_d * Matrix2::Identity();
    const Vector4 r = point - mean;
    Eigen::LLT<Matrix4> llt(cov);
    return std::exp(-0.5 * r.dot(llt.solve(r))) /
           (4.0 * numerics::kPi * numerics::kPi * llt.matrixL().determinant());
  });
}

}  // namespace cvdiscord
