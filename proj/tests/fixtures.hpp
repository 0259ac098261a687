#pragma once

#include <random>

#include "cvdiscord/core_states.hpp"

namespace fixtures {

using namespace cvdiscord;

/// Measured two-mode covariance of the split Gaussian-modulated beam.
inline Matrix4 measured_sigma() {
  Matrix4 s;
  s << 15.96, 0, 17.58, 0,  //
      0, 14.37, 0, 13.55,   //
      17.58, 0, 22.62, 0,   //
      0, 13.55, 0, 14.81;
  return s;
}

inline GaussianBipartiteState measured_state() {
  return {QuadratureMeans{}, CovarianceMatrix::make(measured_sigma())};
}

/// S S^T + G G^T: a random symplectic image of the vacuum (local squeezing, local
/// rotations, beam splitter) plus classical noise. Always physical.
template <class Rng>
GaussianBipartiteState random_physical_state(Rng& rng, bool random_means = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  auto squeeze = [&](double r) {
    Matrix4 s = Matrix4::Identity();
    s(0, 0) = std::exp(r);
    s(1, 1) = std::exp(-r);
    s(2, 2) = std::exp(-0.7 * r);
    s(3, 3) = std::exp(0.7 * r);
    return s;
  };
  const Matrix4 sym = local_rotation(2 * std::numbers::pi * u(rng), 2 * std::numbers::pi * u(rng)) *
                      BeamSplitter::make(0.05 + 0.95 * u(rng)).mixing_matrix() *
                      squeeze(0.8 * (u(rng) - 0.5)) *
                      local_rotation(2 * std::numbers::pi * u(rng), 2 * std::numbers::pi * u(rng));
  Matrix4 noise;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      noise(i, j) = g(rng);
    }
  }
  const Matrix4 sigma = sym * sym.transpose() + 0.5 * noise * noise.transpose();
  Vector4 means = Vector4::Zero();
  if (random_means) {
    for (int i = 0; i < 4; ++i) {
      means(i) = g(rng);
    }
  }
  return {QuadratureMeans(means), CovarianceMatrix::make(0.5 * (sigma + sigma.transpose()))};
}

}  // namespace fixtures
