#include "rvemor/material.hpp"

#include "oracles/explicit_plasticity.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace rvemor;

namespace {

MaterialParams matrix_params() { return MaterialParams::plastic(1.0, 0.3, 0.01, 0.02, 1.05); }

Mat3 shear(double gamma) {
  Mat3 F = Mat3::Identity();
  F(0, 1) = gamma;
  return F;
}

// Drives a virgin point through a few random plastic steps so later checks
// start from a non-trivial history.
QuadPointState random_history(std::mt19937_64& rng, const MaterialParams& p) {
  QuadPointState s;
  for (int k = 0; k < 3; ++k) {
    const Mat3 F = testutil::random_gradient(rng, 0.08);
    s = stress_update(F, s, p, {.compute_tangent = false}).state_new;
  }
  return s;
}

} // namespace

TEST(StrainEnergy, VanishesAtIdentity) {
  EXPECT_EQ(strain_energy<double>(Mat3::Identity(), matrix_params()), 0.0);
}

TEST(StrainEnergy, UniaxialStretchHandValue) {
  const Mat3 F = Eigen::Vector3d(2.0, 1.0, 1.0).asDiagonal();
  EXPECT_NEAR(strain_energy<double>(F, MaterialParams::elastic(1.0, 0.3)), 0.448920, 1e-6);
}

TEST(StrainEnergy, FrameIndifference) {
  std::mt19937_64 rng(11);
  const auto p = matrix_params();
  for (int k = 0; k < 100; ++k) {
    const Mat3 R = testutil::random_rotation(rng);
    const Mat3 F = testutil::random_gradient(rng, 0.3);
    EXPECT_NEAR(strain_energy<double>(R, p), 0.0, 1e-12);
    EXPECT_NEAR(strain_energy<double>(Mat3(R * F), p), strain_energy<double>(F, p), 1e-12);
  }
}

TEST(StrainEnergy, InvertedElementThrows) {
  Mat3 F = Mat3::Identity();
  F(0, 0) = -1.0;
  EXPECT_THROW(strain_energy<double>(F, matrix_params()), InversionError);
  EXPECT_THROW(mandel_stress<double>(F, matrix_params()), InversionError);
}

namespace {
Mat3 mandel_by_fd(const Mat3& Fe, const MaterialParams& p, double step) {
  Mat3 dW;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Mat3 Fp = Fe, Fm = Fe;
      Fp(i, j) += step;
      Fm(i, j) -= step;
      dW(i, j) = (strain_energy<double>(Fp, p) - strain_energy<double>(Fm, p)) / (2 * step);
    }
  return Fe.transpose() * dW;
}
} // namespace

TEST(MandelStress, ZeroAtIdentity) {
  EXPECT_EQ(mandel_stress<double>(Mat3::Identity(), matrix_params()).norm(), 0.0);
}

TEST(MandelStress, SmallStretchMatchesEnergyDifferences) {
  const auto p = MaterialParams::elastic(1.0, 0.3);
  const Mat3 F = Eigen::Vector3d(1.0 + 1e-6, 1.0, 1.0).asDiagonal();
  const Mat3 M = mandel_stress<double>(F, p);
  EXPECT_LT(testutil::max_abs(M - mandel_by_fd(F, p, 1e-5)), 1e-8);
  EXPECT_LT(testutil::max_abs(M - F.transpose() * elastic_piola<double>(F, p)), 1e-15);
}

TEST(MandelStress, RandomGradientsMatchEnergyDifferences) {
  std::mt19937_64 rng(5);
  const auto p = MaterialParams::elastic(3.0, 0.25);
  for (int k = 0; k < 50; ++k) {
    const Mat3 F = testutil::random_gradient(rng, 0.3);
    const Mat3 M = mandel_stress<double>(F, p);
    const Mat3 fd = mandel_by_fd(F, p, 1e-5);
    EXPECT_LT(testutil::max_abs(M - fd), 1e-6 * std::max(1.0, testutil::max_abs(M)));
  }
}

TEST(YieldValue, VirginUnstressed) {
  EXPECT_DOUBLE_EQ(yield_value(Mat3::Zero(), 0.0, matrix_params()), -0.01);
}

TEST(YieldValue, PurePressureDoesNotYield) {
  for (double pr : {-3.0, 0.5, 100.0})
    EXPECT_NEAR(yield_value(Mat3(pr * Mat3::Identity()), 0.0, matrix_params()), -0.01, 1e-14);
}

TEST(YieldValue, HardenedHandValue) {
  // Deviatoric M with sqrt(3/2 M:M) = 0.05.
  Mat3 M = Mat3::Zero();
  M(0, 1) = M(1, 0) = 0.05 / std::sqrt(3.0);
  EXPECT_NEAR(yield_value(M, 0.5, matrix_params()), 0.05 - 0.01 - 0.02 * std::pow(0.5, 1.05), 1e-15);
  EXPECT_NEAR(yield_value(M, 0.5, matrix_params()), 0.030335, 1e-5);
}

TEST(YieldValue, ElasticOnlyIsMinusInfinity) {
  EXPECT_EQ(yield_value(Mat3::Identity(), 0.0, MaterialParams::elastic(20, 0.3)),
            -std::numeric_limits<double>::infinity());
}

TEST(MaterialParams, RejectsInvalid) {
  EXPECT_THROW(MaterialParams::plastic(-1, 0.3, 0.01, 0.02, 1.05), ConfigError);
  EXPECT_THROW(MaterialParams::plastic(1, 0.5, 0.01, 0.02, 1.05), ConfigError);
  EXPECT_THROW(MaterialParams::plastic(1, 0.3, 0.0, 0.02, 1.05), ConfigError);
  EXPECT_THROW(MaterialParams::plastic(1, 0.3, 0.01, -1, 1.05), ConfigError);
  EXPECT_THROW(MaterialParams::plastic(1, 0.3, 0.01, 0.02, 0.0), ConfigError);
  EXPECT_NO_THROW(MaterialParams::elastic(20, 0.3));
}

TEST(StressUpdate, IdentityVirginIsStressFree) {
  const auto r = stress_update(Mat3::Identity(), {}, matrix_params());
  EXPECT_EQ(r.P.norm(), 0.0);
  EXPECT_FALSE(r.plastic);
  EXPECT_EQ(r.state_new.lambda, 0.0);
  EXPECT_EQ((r.state_new.Fp - Mat3::Identity()).norm(), 0.0);
}

TEST(StressUpdate, SmallShearStaysElastic) {
  const auto p = matrix_params();
  const Mat3 F = shear(0.005);
  ASSERT_LT(yield_value(mandel_stress<double>(F, p), 0.0, p), 0.0);
  const auto r = stress_update(F, {}, p);
  EXPECT_FALSE(r.plastic);
  EXPECT_EQ(r.delta_lambda, 0.0);
  EXPECT_EQ((r.state_new.Fp - Mat3::Identity()).norm(), 0.0);
}

TEST(StressUpdate, ShearRampMatchesExplicitOracle) {
  const auto p = matrix_params();
  const oracle::Material om{p.E, p.nu, p.M0, p.h, p.m};
  QuadPointState s;
  oracle::State os;
  const int steps = 20;
  const double gamma_max = 0.2;
  int plastic_checks = 0;
  for (int k = 1; k <= steps; ++k) {
    const Mat3 F0 = shear(gamma_max * (k - 1) / steps);
    const Mat3 F1 = shear(gamma_max * k / steps);
    s = stress_update(F1, s, p).state_new;
    oracle::integrate(os, F0, F1, 10000 / steps, om);
    if (os.lambda > 1e-4) {
      EXPECT_NEAR(s.lambda, os.lambda, 0.01 * os.lambda) << "increment " << k;
      ++plastic_checks;
    }
  }
  EXPECT_GT(plastic_checks, 10);
}

TEST(StressUpdate, PlasticIncompressibilityAndKkt) {
  std::mt19937_64 rng(21);
  const auto p = matrix_params();
  int plastic = 0;
  for (int k = 0; k < 100; ++k) {
    const QuadPointState s0 = random_history(rng, p);
    const Mat3 F = testutil::random_gradient(rng, 0.1);
    const auto r = stress_update(F, s0, p);
    EXPECT_NEAR(r.state_new.Fp.determinant(), 1.0, 1e-8);
    EXPECT_GE(r.delta_lambda, 0.0);
    EXPECT_GE(r.state_new.lambda, s0.lambda);
    const Mat3 Fe = F * r.state_new.Fp.inverse();
    const double y = yield_value(mandel_stress<double>(Fe, p), r.state_new.lambda, p);
    EXPECT_LE(y, p.yield_tolerance());
    EXPECT_LE(std::abs(r.delta_lambda * y), p.yield_tolerance() * std::max(r.delta_lambda, 1e-300));
    if (r.plastic) {
      ++plastic;
      EXPECT_NEAR(y, 0.0, p.yield_tolerance());
    }
  }
  EXPECT_GT(plastic, 50);
}

TEST(StressUpdate, ElasticReversibility) {
  const auto p = matrix_params();
  QuadPointState s;
  for (double g : {0.002, 0.004, 0.006, 0.003, 0.0}) s = stress_update(shear(g), s, p).state_new;
  const auto r = stress_update(Mat3::Identity(), s, p);
  EXPECT_LT(r.P.norm(), 1e-14);
  EXPECT_EQ(r.state_new.lambda, 0.0);
}

TEST(StressUpdate, InvertedGradientThrows) {
  Mat3 F = Mat3::Identity();
  F(1, 1) = -0.5;
  EXPECT_THROW(stress_update(F, {}, matrix_params()), InversionError);
}

TEST(StressUpdate, ElasticOnlyNeverFlows) {
  const auto p = MaterialParams::elastic(20.0, 0.3);
  const auto r = stress_update(shear(0.5), {}, p);
  EXPECT_FALSE(r.plastic);
  EXPECT_EQ(r.state_new.lambda, 0.0);
}

TEST(TangentCheck, ReferenceConfiguration) {
  EXPECT_LT(tangent_check(Mat3::Identity(), {}, matrix_params()), 1e-8);
}

TEST(TangentCheck, RandomElasticStates) {
  std::mt19937_64 rng(3);
  const auto p = MaterialParams::elastic(20.0, 0.3);
  for (int k = 0; k < 100; ++k) {
    const Mat3 F = testutil::random_gradient(rng, 0.2);
    EXPECT_LT(tangent_check(F, {}, p), 1e-5);
  }
}

TEST(TangentCheck, RandomPlasticStates) {
  std::mt19937_64 rng(4);
  const auto p = matrix_params();
  int checked = 0;
  while (checked < 100) {
    const QuadPointState s0 = random_history(rng, p);
    const Mat3 F = testutil::random_gradient(rng, 0.1);
    if (!stress_update(F, s0, p, {.compute_tangent = false}).plastic) continue;
    EXPECT_LT(tangent_check(F, s0, p), 1e-4);
    ++checked;
  }
}

TEST(TangentCheck, FiniteDifferenceFallbackAgrees) {
  const auto p = matrix_params();
  const Mat3 F = shear(0.08);
  const auto exact = stress_update(F, {}, p);
  const auto fd = stress_update(F, {}, p, {.fd_tangent = true});
  ASSERT_TRUE(exact.plastic);
  EXPECT_LT(testutil::max_abs(exact.tangent - fd.tangent), 1e-6);
  EXPECT_LT(testutil::max_abs(exact.P - fd.P), 1e-15);
}
