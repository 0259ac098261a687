#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cvdiscord/marginals.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cvdiscord;
using oracles::integrate_form;
using oracles::wigner_marginal;

namespace {

constexpr double kQuarter = std::numbers::pi / 2.0;

GaussianBipartiteState diagonal_block_state(double a1, double a2, double b1, double b2,
                                            double c11, double c12, double c21, double c22) {
  Matrix4 s;
  s << a1, 0, c11, c12,  //
      0, a2, c21, c22,   //
      c11, c21, b1, 0,   //
      c12, c22, 0, b2;
  return {QuadratureMeans{}, CovarianceMatrix::make(s)};
}

/// Same-quadrature covariance of a beam with modulation depth d split 50:50.
MarginalForm split_form(double depth) {
  const double v = 1.0 + depth * depth;
  return MarginalForm::from_covariance((v + 1) / 2, (v + 1) / 2, (v - 1) / 2);
}

double integrate_line(const std::function<double(double)>& f, double c, double half) {
  return numerics::integrate(f, c - half, c + half, 1e-12);
}

}  // namespace

TEST(JointMarginalForm, ProductState) {
  const auto s = diagonal_block_state(3.0, 2.0, 5.0, 4.0, 0, 0, 0, 0);
  const auto f = joint_marginal_form(s, 0, 0);
  EXPECT_NEAR(f.lambda(), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(f.mu(), 1.0 / 10.0, 1e-15);
  EXPECT_EQ(f.nu(), 0.0);
}

TEST(JointMarginalForm, NuClosedForm) {
  const auto s = diagonal_block_state(3.0, 2.0, 5.0, 4.0, 1.5, 0, 0, 0);
  EXPECT_NEAR(joint_marginal_form(s, 0, 0).nu(), 1.5 / (2 * (3.0 * 5.0 - 1.5 * 1.5)), 1e-15);
}

TEST(JointMarginalForm, MeasuredFixture) {
  const auto nu = nu_table(fixtures::measured_state());
  EXPECT_NEAR(nu.nu_00, 0.16917249821011995, 1e-13);
  EXPECT_NEAR(nu.nu_90_90, 0.23188395876401602, 1e-13);
  EXPECT_NEAR(nu.nu_0_90, 0.0, 1e-15);
  EXPECT_NEAR(nu.nu_90_0, 0.0, 1e-15);
  EXPECT_NEAR(nu.nu_00, 0.1692, 1e-3);
  EXPECT_NEAR(nu.nu_90_90, 0.2323, 1e-3);
}

TEST(JointMarginalForm, IntegrabilityEnforced) {
  EXPECT_THROW(MarginalForm::make(1.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(MarginalForm::make(-1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW(MarginalForm::from_covariance(1.0, 1.0, 1.0), NumericError);
}

TEST(NuTable, ProductStateIsZero) {
  const auto nu = nu_table(GaussianBipartiteState::vacuum());
  EXPECT_EQ(nu.nu_00, 0.0);
  EXPECT_EQ(nu.nu_0_90, 0.0);
  EXPECT_EQ(nu.nu_90_0, 0.0);
  EXPECT_EQ(nu.nu_90_90, 0.0);
}

TEST(NuTable, SingleCrossTermSelectsOneEntry) {
  const auto s = diagonal_block_state(3.0, 3.0, 3.0, 3.0, 0, 1.0, 0, 0);
  const auto nu = nu_table(s);
  EXPECT_NEAR(nu.nu_00, 0.0, 1e-15);
  EXPECT_NEAR(nu.nu_0_90, 1.0 / (2 * (9.0 - 1.0)), 1e-14);
  EXPECT_NEAR(nu.nu_90_0, 0.0, 1e-15);
  EXPECT_NEAR(nu.nu_90_90, 0.0, 1e-15);
}

TEST(NuTable, ClosedFormsOnDiagonalBlockStates) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> diag(2.0, 10.0), cr(-1.0, 1.0);
  int checked = 0;
  while (checked < 100) {
    const double a1 = diag(rng), a2 = diag(rng), b1 = diag(rng), b2 = diag(rng);
    const double c11 = cr(rng) * 0.9 * std::sqrt(a1 * b1), c12 = cr(rng) * 0.5,
                 c21 = cr(rng) * 0.5, c22 = cr(rng) * 0.9 * std::sqrt(a2 * b2);
    Matrix4 s;
    s << a1, 0, c11, c12, 0, a2, c21, c22, c11, c21, b1, 0, c12, c22, 0, b2;
    if (!validate_covariance(s).ok()) {
      continue;
    }
    const auto nu = nu_table({QuadratureMeans{}, CovarianceMatrix::make(s)});
    EXPECT_NEAR(nu.nu_00, c11 / (2 * (a1 * b1 - c11 * c11)), 1e-10);
    EXPECT_NEAR(nu.nu_0_90, c12 / (2 * (a1 * b2 - c12 * c12)), 1e-10);
    EXPECT_NEAR(nu.nu_90_0, c21 / (2 * (a2 * b1 - c21 * c21)), 1e-10);
    EXPECT_NEAR(nu.nu_90_90, c22 / (2 * (a2 * b2 - c22 * c22)), 1e-10);
    ++checked;
  }
}

TEST(JointMarginalDensity, StandardNormalAtOrigin) {
  const auto f = MarginalForm::make(0.5, 0.5, 0.0);
  EXPECT_NEAR(joint_marginal_density(f, 0, 0), 1.0 / (2 * std::numbers::pi), 1e-16);
}

TEST(JointMarginalDensity, Normalized) {
  EXPECT_NEAR(integrate_form(joint_marginal_form(fixtures::measured_state(), 0, 0)), 1.0, 1e-6);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 20; ++i) {
    const auto s = fixtures::random_physical_state(rng);
    EXPECT_NEAR(integrate_form(joint_marginal_form(s, 1.3 * i, 0.7 * i)), 1.0, 1e-6);
  }
}

TEST(JointMarginalDensity, MatchesWignerIntegralOnFixture) {
  const auto s = fixtures::measured_state();
  const double analytic = joint_marginal_density(joint_marginal_form(s, 0, 0), 1.0, 1.0);
  EXPECT_NEAR(wigner_marginal(s, 0, 0, 1.0, 1.0) / analytic, 1.0, 1e-6);
}

TEST(JointMarginalDensity, MatchesWignerIntegralOnRandomStates) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  std::normal_distribution<double> g;
  for (int i = 0; i < 40; ++i) {
    const auto s = fixtures::random_physical_state(rng);
    const double ta = phase(rng), tb = phase(rng);
    const auto f = joint_marginal_form(s, ta, tb);
    const double xa = f.mean_a() + 1.5 * g(rng) * std::sqrt(f.variance_a());
    const double xb = f.mean_b() + 1.5 * g(rng) * std::sqrt(f.variance_b());
    EXPECT_NEAR(wigner_marginal(s, ta, tb, xa, xb) / joint_marginal_density(f, xa, xb), 1.0, 1e-5);
  }
}

TEST(ConditionalDensity, NoCorrelationGivesUnconditional) {
  const auto f = MarginalForm::make(0.3, 0.2, 0.0);
  for (double x : {-3.0, -0.5, 0.0, 1.0, 4.0}) {
    EXPECT_NEAR(conditional_marginal_density(f, x, Side::plus), marginal_density_b(f, x), 1e-15);
    EXPECT_NEAR(conditional_marginal_density(f, x, Side::minus), marginal_density_b(f, x), 1e-15);
  }
}

TEST(ConditionalDensity, MatchesZeroMeanClosedForm) {
  const auto f = joint_marginal_form(fixtures::measured_state(), 0, 0);
  const double l = f.lambda(), m = f.mu(), n = f.nu();
  auto unnormalized = [&](double x, double s) {
    return std::exp((n * n - m * l) / l * x * x) * (1 + s * std::erf(n * x / std::sqrt(l)));
  };
  const double zp = integrate_line([&](double x) { return unnormalized(x, 1); }, 0, 80);
  for (double x : {-5.0, 0.0, 2.0, 7.0}) {
    EXPECT_NEAR(conditional_marginal_density(f, x, Side::plus), unnormalized(x, 1) / zp, 1e-12);
  }
}

TEST(ConditionalDensity, HalfSumIsUnconditional) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const auto s = fixtures::random_physical_state(rng, false);
    const auto f = joint_marginal_form(s, 0.4 * i, 0.9 * i);
    for (double x = -8; x <= 8; x += 0.5) {
      const double half = 0.5 * (conditional_marginal_density(f, x, Side::plus) +
                                 conditional_marginal_density(f, x, Side::minus));
      EXPECT_NEAR(half, marginal_density_b(f, x), 1e-9);
    }
  }
}

TEST(ConditionalDensity, WeightedSumWithThresholdAndMeans) {
  std::mt19937_64 rng(81);
  for (int i = 0; i < 20; ++i) {
    const auto s = fixtures::random_physical_state(rng, true);
    const auto f = joint_marginal_form(s, 0.3 * i, 0.2 * i);
    const double t = 0.7 - 0.1 * i;
    const double pp = side_probability(f, Side::plus, t), pm = side_probability(f, Side::minus, t);
    EXPECT_NEAR(pp + pm, 1.0, 1e-15);
    for (double x = -6; x <= 6; x += 1.0) {
      const double mix = pp * conditional_marginal_density(f, x, Side::plus, t) +
                         pm * conditional_marginal_density(f, x, Side::minus, t);
      EXPECT_NEAR(mix, marginal_density_b(f, x), 1e-9);
    }
  }
}

TEST(ConditionalDensity, Normalized) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto s = fixtures::random_physical_state(rng);
    const auto f = joint_marginal_form(s, 0.5 * i, 0.25 * i);
    const double half = 20 * std::sqrt(f.variance_b());
    for (auto side : {Side::plus, Side::minus}) {
      for (double t : {0.0, f.mean_a() - 1.0}) {
        EXPECT_NEAR(integrate_line([&](double x) { return conditional_marginal_density(f, x, side, t); },
                                   f.mean_b(), half),
                    1.0, 1e-6);
      }
    }
    EXPECT_NEAR(integrate_line([&](double x) { return marginal_density_b(f, x); }, f.mean_b(), half),
                1.0, 1e-6);
  }
}

TEST(PeakSeparation, MeasuredFixtureValues) {
  const auto s = fixtures::measured_state();
  const auto f00 = joint_marginal_form(s, 0, 0);
  EXPECT_NEAR(conditional_peak(f00, Side::plus), 2.41287874425817201, 1e-9);
  EXPECT_NEAR(conditional_peak(f00, Side::minus), -2.41287874425817201, 1e-9);
  EXPECT_NEAR(analytic_peak_separation(f00), 4.82575748851634403, 1e-9);
  EXPECT_NEAR(analytic_peak_separation(joint_marginal_form(s, kQuarter, kQuarter)),
              3.87380587902422362, 1e-9);
}

TEST(PeakSeparation, SplitBeamValues) {
  EXPECT_NEAR(analytic_peak_separation(split_form(0.2)), 0.0315992772221446832, 1e-10);
  EXPECT_NEAR(conditional_peak(split_form(0.2), Side::plus), 0.01579963861107234, 1e-10);
  EXPECT_NEAR(analytic_peak_separation(split_form(1.0)), 0.640814603371098524, 1e-9);
  EXPECT_NEAR(analytic_peak_separation(split_form(4.5)), 3.47563334547696667, 1e-9);
  EXPECT_NEAR(analytic_peak_separation(split_form(5.0)), 3.72264345893793218, 1e-9);
  // Same through the state pipeline.
  const auto f = joint_marginal_form(split_balanced(modulated_beam(4.5, 4.5)), 0, 0);
  EXPECT_NEAR(analytic_peak_separation(f), 3.47563334547696667, 1e-9);
}

TEST(PeakSeparation, IncreasesWithDepth) {
  double prev = -1.0;
  for (int i = 0; i < 22; ++i) {
    const double d = 5.0 * i / 21.0;
    const double delta = analytic_peak_separation(split_form(d));
    EXPECT_GT(delta, prev) << "depth " << d;
    prev = delta;
  }
  EXPECT_EQ(analytic_peak_separation(split_form(0.0)), 0.0);
}

TEST(PeakSeparation, SignLaw) {
  for (double nu : {-0.2, -0.05, -1e-4, 1e-4, 0.05, 0.2}) {
    const auto f = MarginalForm::make(0.5, 0.4, nu);
    const auto g = MarginalForm::make(0.5, 0.4, -nu);
    const double d = analytic_peak_separation(f);
    EXPECT_EQ(std::signbit(d), std::signbit(nu));
    EXPECT_NEAR(d, -analytic_peak_separation(g), 1e-9);
  }
  EXPECT_EQ(analytic_peak_separation(MarginalForm::make(0.5, 0.4, 0.0)), 0.0);
  const auto z = MarginalForm::make(0.5, 0.4, 0.0);
  EXPECT_NEAR(conditional_peak(z, Side::plus), 0.0, 1e-9);
}

TEST(PeakSeparation, PeakIsGridMaximum) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 10; ++i) {
    const auto s = fixtures::random_physical_state(rng);
    const auto f = joint_marginal_form(s, 0.1 * i, 0.2 * i);
    const double peak = conditional_peak(f, Side::plus, 0.3);
    const double sd = std::sqrt(f.variance_b());
    double best = peak, best_val = 0.0;
    for (double x = peak - sd; x <= peak + sd; x += sd * 1e-4) {
      const double v = conditional_marginal_density(f, x, Side::plus, 0.3);
      if (v > best_val) {
        best_val = v;
        best = x;
      }
    }
    EXPECT_NEAR(best, peak, 2e-4 * sd);
  }
}

// ---------------------------------------------------------------------------
// P-function mixtures

TEST(PMixture, WeightValidation) {
  EXPECT_THROW(PMixtureState::make({{0.5, CoherentPoint{0.0}}}, 0.7), DomainError);
  EXPECT_THROW(PMixtureState::make({{1.0, ArcsineOrbit{0.0}}}, 0.7), DomainError);
  EXPECT_THROW(PMixtureState::make({{1.0, ThermalNoise{-1.0}}}, 0.7), DomainError);
  EXPECT_THROW(PMixtureState::make({}, 0.7), DomainError);
  EXPECT_THROW(PMixtureState::make({{1.0, CoherentPoint{0.0}}}, 1.5), DomainError);
  EXPECT_NO_THROW(PMixtureState::make(
      {{0.25, CoherentPoint{1.0}}, {0.25, ThermalNoise{2.0}}, {0.5, ArcsineOrbit{1.0}}}, 0.7));
}

TEST(InputMarginal, CoherentVacuum) {
  const auto d1 = input_marginal_D1({{1.0, CoherentPoint{0.0}}});
  for (double x : {-2.0, 0.0, 1.0}) {
    EXPECT_NEAR(d1(x), numerics::normal_pdf(x, 0.0, 1.0), 1e-15);
  }
  const auto shifted = input_marginal_D1({{1.0, CoherentPoint{{1.5, 0.0}}}});
  EXPECT_NEAR(shifted(3.0), numerics::normal_pdf(0.0, 0.0, 1.0), 1e-15);
}

TEST(InputMarginal, ThermalVariance) {
  const auto d1 = input_marginal_D1({{1.0, ThermalNoise{2.0}}});
  EXPECT_NEAR(d1(0.7), numerics::normal_pdf(0.7, 0.0, 5.0), 1e-15);
}

TEST(InputMarginal, VacuumThermalMixtureIsLeptokurtic) {
  const auto d1 = input_marginal_D1({{0.5, CoherentPoint{0.0}}, {0.5, ThermalNoise{4.0}}});
  auto moment = [&](int k) {
    return integrate_line([&](double x) { return std::pow(x, k) * d1(x); }, 0.0, 40.0);
  };
  const double m0 = moment(0), m2 = moment(2), m4 = moment(4);
  EXPECT_NEAR(m0, 1.0, 1e-9);
  EXPECT_GT(m4 / (m2 * m2), 3.0 + 0.5);
}

TEST(InputMarginal, ArcsineIsDoublePeaked) {
  const double alpha0 = 4.0;
  const auto d1 = input_marginal_D1({{1.0, ArcsineOrbit{alpha0}}});
  double best = 0.0, best_val = 0.0;
  for (double x = 0.0; x <= 12.0; x += 0.01) {
    if (d1(x) > best_val) {
      best_val = d1(x);
      best = x;
    }
  }
  EXPECT_NEAR(best, 2.0 * alpha0, 1.0);
  EXPECT_GT(best_val, 1.5 * d1(0.0));
  EXPECT_NEAR(d1(-best), best_val, 1e-9);
  EXPECT_NEAR(integrate_line([&](double x) { return d1(x); }, 0.0, 20.0), 1.0, 1e-6);
}

TEST(OutputJoint, CoherentInputFactorizes) {
  const auto pm = PMixtureState::make({{1.0, CoherentPoint{{1.2, -0.3}}}}, 0.6);
  const double x1 = 0.4, x2 = -1.1;
  const double joint = output_joint_density(pm, x1, x2);
  const double m1 = integrate_line([&](double y) { return output_joint_density(pm, x1, y); }, 0, 15);
  EXPECT_NEAR(joint, m1 * output_marginal_b(pm, x2), 1e-12);
  EXPECT_NEAR(output_conditional_density(pm, x2, Side::plus, 0.5),
              output_conditional_density(pm, x2, Side::minus, 0.5), 1e-12);
}

TEST(OutputJoint, MatchesTransformedInputMarginal) {
  const std::vector<MixtureComponent> comps = {
      {0.3, CoherentPoint{{1.0, 0.5}}}, {0.3, ThermalNoise{1.5}}, {0.4, ArcsineOrbit{2.0}}};
  for (double eta : {0.3, std::sqrt(0.5), 0.9}) {
    const auto pm = PMixtureState::make(comps, eta);
    const auto d1 = input_marginal_D1(comps);
    const double et = pm.beam_splitter().eta_tilde();
    for (double x1 : {-2.0, 0.3, 3.0}) {
      for (double x2 : {-1.0, 0.0, 2.5}) {
        const double expected =
            d1(eta * x1 + et * x2) * numerics::normal_pdf(eta * x2 - et * x1, 0.0, 1.0);
        EXPECT_NEAR(output_joint_density(pm, x1, x2), expected, 1e-9);
      }
    }
  }
}

TEST(OutputJoint, Normalized) {
  const auto pm = PMixtureState::make(
      {{0.5, CoherentPoint{0.0}}, {0.25, ThermalNoise{3.0}}, {0.25, ArcsineOrbit{2.5}}}, 0.7);
  const double total = integrate_line(
      [&](double x1) {
        return integrate_line([&](double x2) { return output_joint_density(pm, x1, x2); }, 0, 25);
      },
      0, 25);
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(OutputConditional, VacuumCoherentMixtureDiffers) {
  const auto pm =
      PMixtureState::make({{0.5, CoherentPoint{0.0}}, {0.5, CoherentPoint{2.0}}}, std::sqrt(0.5));
  const double t = 1.4;
  double max_diff = 0.0;
  for (double x = -3; x <= 6; x += 0.25) {
    max_diff = std::max(max_diff, std::abs(output_conditional_density(pm, x, Side::plus, t) -
                                           output_conditional_density(pm, x, Side::minus, t)));
  }
  EXPECT_GT(max_diff, 0.05);
}

TEST(OutputConditional, NormalizedAndConsistent) {
  const auto pm = PMixtureState::make({{0.5, CoherentPoint{0.0}}, {0.5, ThermalNoise{4.0}}}, 0.7);
  for (double t : {0.0, -1.0}) {
    for (auto side : {Side::plus, Side::minus}) {
      EXPECT_NEAR(integrate_line([&](double x) { return output_conditional_density(pm, x, side, t); },
                                 0, 30),
                  1.0, 1e-6);
    }
    const double pp = output_side_probability(pm, Side::plus, t);
    for (double x = -5; x <= 5; x += 0.5) {
      const double mix = pp * output_conditional_density(pm, x, Side::plus, t) +
                         (1 - pp) * output_conditional_density(pm, x, Side::minus, t);
      EXPECT_NEAR(mix, output_marginal_b(pm, x), 1e-9);
    }
  }
}

TEST(OutputWigner, VacuumInputIsProductVacuum) {
  const auto pm = PMixtureState::make({{1.0, CoherentPoint{0.0}}}, 0.4);
  const auto vac = GaussianBipartiteState::vacuum();
  for (const Vector4& p : {Vector4(0, 0, 0, 0), Vector4(1, -0.5, 0.3, 2), Vector4(-2, 1, 1, 1)}) {
    EXPECT_NEAR(output_wigner_from_P(pm, p), wigner_density(vac, p), 1e-15);
  }
}

TEST(OutputWigner, MomentumIntegralGivesJointDensity) {
  const auto pm = PMixtureState::make({{0.5, ThermalNoise{1.0}}, {0.5, ArcsineOrbit{1.5}}}, 0.7);
  const double x1 = 0.5, x2 = -0.8;
  const double marg = integrate_line(
      [&](double p1) {
        return integrate_line([&](double p2) { return output_wigner_from_P(pm, Vector4(x1, p1, x2, p2)); },
                              0, 12);
      },
      0, 12);
  EXPECT_NEAR(marg, output_joint_density(pm, x1, x2), 1e-8);
}

TEST(OutputWigner, MixtureHasExcessVarianceAtB) {
  const auto pm = PMixtureState::make({{0.5, CoherentPoint{0.0}}, {0.5, ThermalNoise{2.0}}}, 0.7);
  const double var =
      integrate_line([&](double x) { return x * x * output_marginal_b(pm, x); }, 0, 30);
  EXPECT_GT(var, 1.0 + 0.1);
  const auto coh = PMixtureState::make({{1.0, CoherentPoint{0.0}}}, 0.7);
  EXPECT_NEAR(integrate_line([&](double x) { return x * x * output_marginal_b(coh, x); }, 0, 30), 1.0,
              1e-8);
}
