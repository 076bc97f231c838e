#include "rvemor/loading.hpp"

#include <gtest/gtest.h>

using namespace rvemor;

TEST(CompleteStretch, Examples) {
  EXPECT_DOUBLE_EQ(complete_stretch(1.0, 0.0).U22, 1.0);
  EXPECT_NEAR(complete_stretch(1.25, 0.0).U22, 0.8, 1e-15);
  EXPECT_NEAR(complete_stretch(1.0, 0.5).U22, 1.25, 1e-15);
  EXPECT_THROW(complete_stretch(1.0, 0.6), ConfigError); // U22 = 1.36
  EXPECT_THROW(complete_stretch(0.0, 0.0), ConfigError);
  EXPECT_THROW(complete_stretch(1.3, 0.0), ConfigError);
}

TEST(CyclicPath, PeakAndReturn) {
  const LoadPath p = cyclic_path(1.2, 0.0, 1000);
  ASSERT_EQ(p.size(), 1000u);
  EXPECT_NEAR(p.increments[499].U11, 1.2, 1e-15);
  EXPECT_EQ(p.increments[999], MacroStretch{});
  EXPECT_EQ(p.kind, PathKind::cyclic);
}

TEST(CyclicPath, ShearRampSequence) {
  const LoadPath p = cyclic_path(1.0, 0.3, 4);
  const double expect[] = {0.15, 0.3, 0.15, 0.0};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.increments[k].U12, expect[k], 1e-15);
}

TEST(CyclicPath, IsochoricPalindrome) {
  for (auto [a, b] : {std::pair{1.2, 0.0}, {0.85, 0.1}, {1.1, -0.3}, {1.0, 0.45}}) {
    const LoadPath p = cyclic_path(a, b, 200);
    for (const auto& U : p.increments) {
      EXPECT_NEAR(U.det(), 1.0, 1e-12);
      EXPECT_TRUE(U.within_bounds());
    }
    // increments k and n - k coincide (1-based)
    for (int k = 1; k < 200; ++k) EXPECT_EQ(p.increments[k - 1], p.increments[200 - k - 1]);
  }
  EXPECT_THROW(cyclic_path(1.2, 0.0, 5), ConfigError);
  EXPECT_THROW(cyclic_path(1.3, 0.0, 10), ConfigError);
}

TEST(RandomPath, ZeroStepStaysAtIdentity) {
  const LoadPath p = random_path(0.0, 50, 1);
  for (const auto& U : p.increments) EXPECT_EQ(U, MacroStretch{});
}

TEST(RandomPath, DeterministicPerSeed) {
  const LoadPath a = random_path(0.002, 300, 42), b = random_path(0.002, 300, 42),
                 c = random_path(0.002, 300, 43);
  EXPECT_EQ(a.increments, b.increments);
  EXPECT_NE(a.increments, c.increments);
  EXPECT_EQ(a.seed, 42u);
}

TEST(RandomPath, FixedStepWithinBounds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LoadPath p = random_path(0.002, 1000, seed);
    ASSERT_EQ(p.size(), 1000u);
    double u11 = 1.0, u12 = 0.0;
    for (const auto& U : p.increments) {
      EXPECT_TRUE(U.strictly_inside());
      EXPECT_NEAR(U.det(), 1.0, 1e-12);
      EXPECT_NEAR(std::hypot(U.U11 - u11, U.U12 - u12), 0.002, 1e-12);
      u11 = U.U11;
      u12 = U.U12;
    }
  }
}

TEST(RandomPath, LargeStepsStayAdmissible) {
  // Big steps hit the boundary constantly; re-draw and reflection keep it inside.
  const LoadPath p = random_path(0.1, 2000, 7);
  for (const auto& U : p.increments) EXPECT_TRUE(U.within_bounds());
}

TEST(HomogeneousField, Examples) {
  GeometryConfig g;
  g.n = 4;
  const PeriodicMesh m = build_rve_mesh(g);
  const HomogeneousField id = homogeneous_field(MacroStretch{}, m);
  EXPECT_EQ(id.omega.norm(), 0.0);
  EXPECT_EQ((id.Psi * id.omega).norm(), 0.0);

  const HomogeneousField h = homogeneous_field(MacroStretch{1.1, 1.0 / 1.1, 0.0}, m);
  const Eigen::VectorXd u = h.Psi * h.omega;
  const int node = 4; // X = (1, 0)
  ASSERT_EQ(m.nodes[node], Vec2(1.0, 0.0));
  EXPECT_NEAR(u(2 * node), 0.1, 1e-15);
  EXPECT_NEAR(u(2 * node + 1), 0.0, 1e-15);
}

TEST(HomogeneousField, MatchesTensorProduct) {
  GeometryConfig g;
  g.n = 7;
  const PeriodicMesh m = build_rve_mesh(g);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(0.85, 1.15), s(-0.3, 0.3);
  for (int k = 0; k < 20; ++k) {
    const MacroStretch U = complete_stretch(a(rng), s(rng));
    const HomogeneousField h = homogeneous_field(U, m);
    const Eigen::VectorXd u = h.Psi * h.omega;
    const Eigen::Matrix2d H = U.tensor().topLeftCorner<2, 2>() - Eigen::Matrix2d::Identity();
    for (int n = 0; n < m.n_nodes(); ++n)
      EXPECT_LT((u.segment<2>(2 * n) - H * m.nodes[n]).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(CyclicFan, RaysInsideBounds) {
  const auto t = cyclic_fan(8, 0.2);
  ASSERT_EQ(t.size(), 8u);
  EXPECT_NEAR(t[0].first, 1.2, 1e-15);
  EXPECT_NEAR(t[0].second, 0.0, 1e-15);
  EXPECT_NEAR(t[2].first, 1.0, 1e-15);
  EXPECT_NEAR(t[2].second, 0.2, 1e-15);
  for (auto [a, b] : cyclic_fan(16, 0.6, 0.1)) {
    EXPECT_NO_THROW(cyclic_path(a, b, 10));
    EXPECT_LE(std::hypot(a - 1.0, b), 0.6 + 1e-15);
  }
  // U11 = 0.8 completes to U22 = 1.25: on the bound, so the ray is shortened
  const auto w = cyclic_fan(2, 0.2);
  EXPECT_LT(std::abs(w[1].first - 1.0), 0.2);
  EXPECT_TRUE(cyclic_fan(0, 0.1).empty());
}
