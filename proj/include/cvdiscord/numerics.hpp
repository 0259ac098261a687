#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cvdiscord/errors.hpp"

namespace cvdiscord::numerics {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInvSqrtPi = std::numbers::inv_sqrtpi;

inline double normal_pdf(double x, double mean, double variance) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * kPi * variance);
}

/// P(X > t) for X ~ N(mean, variance).
inline double normal_upper_tail(double t, double mean, double variance) {
  return 0.5 * std::erfc((t - mean) / std::sqrt(2.0 * variance));
}

/// Scaled complementary error function exp(w^2) erfc(w).
inline double erfcx(double w) {
  if (w < 25.0) {
    return std::exp(w * w) * std::erfc(w);
  }
  // Asymptotic series; relative error below 1e-12 for w >= 25.
  const double inv2 = 1.0 / (w * w);
  const double series =
      1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2 - 1.875 * inv2 * inv2 * inv2;
  return series / (w * std::sqrt(kPi));
}

/// d/dz log(1 + erf(z)), stable for large negative z.
inline double dlog_one_plus_erf(double z) {
  // 1 + erf(z) = erfc(-z) = exp(-z^2) erfcx(-z)
  return 2.0 * kInvSqrtPi / erfcx(-z);
}

inline double log_one_plus_erf(double z) {
  if (z > -5.0) {
    return std::log1p(std::erf(z));
  }
  return -z * z + std::log(erfcx(-z));
}

struct RootOptions {
  double x_tolerance = 1e-10;
  int max_iterations = 200;
};

/// Bisection on a sign-changing bracket.
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     RootOptions opts = {}) {
  double f_lo = f(lo);
  const double f_hi = f(hi);
  if (f_lo == 0.0) {
    return lo;
  }
  if (f_hi == 0.0) {
    return hi;
  }
  if ((f_lo > 0.0) == (f_hi > 0.0)) {
    throw NumericError("root not bracketed on [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
  }
  for (int i = 0; i < opts.max_iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= opts.x_tolerance) {
      return mid;
    }
    const double f_mid = f(mid);
    if (f_mid == 0.0) {
      return mid;
    }
    if ((f_mid > 0.0) == (f_lo > 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  if (hi - lo <= opts.x_tolerance) {
    return 0.5 * (lo + hi);
  }
  throw NumericError("bisection did not converge within " +
                     std::to_string(opts.max_iterations) + " iterations");
}

/// Adaptive Gauss-Kronrod quadrature on a finite interval.
template <class F>
double integrate(F&& f, double a, double b, double abs_tolerance = 1e-9) {
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      std::forward<F>(f), a, b, 15, abs_tolerance, &error);
}

}  // namespace cvdiscord::numerics
