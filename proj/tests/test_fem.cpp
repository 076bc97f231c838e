#include "rvemor/fem.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <map>
#include <set>

using namespace rvemor;

namespace {

GeometryConfig one_particle(int n, double r = 0.25) {
  GeometryConfig g;
  g.n = n;
  g.particles = {{Vec2(0.5, 0.5), r}};
  return g;
}

Eigen::VectorXd fluctuation(const DnsSolution& s, const MacroStretch& U, const Discretization& d) {
  return s.u - d.Psi() * U.omega();
}

double periodicity_error(const Eigen::VectorXd& u, const MacroStretch& U, const PeriodicMesh& m) {
  return constraint_residual(u, U, m).cwiseAbs().maxCoeff();
}

} // namespace

TEST(Mesh, TwoByTwoCounts) {
  GeometryConfig g;
  g.n = 2;
  const PeriodicMesh m = build_rve_mesh(g);
  EXPECT_EQ(m.n_elements(), 4);
  EXPECT_EQ(m.n_nodes(), 9);
  EXPECT_EQ(m.corners.size(), 4u);
  // four edge midpoints, pairwise periodic
  std::set<int> paired;
  for (const Pairing& p : m.pairings) {
    paired.insert(p.slave);
    paired.insert(p.master);
  }
  EXPECT_EQ(m.pairings.size(), 2u);
  EXPECT_EQ(paired, (std::set<int>{1, 3, 5, 7}));
  EXPECT_EQ(m.n_quad_points(), 16);
}

TEST(Mesh, CentredParticleCountMatchesPointInCircle) {
  const PeriodicMesh m = build_rve_mesh(one_particle(8));
  int expected = 0;
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      const double x = (i + 0.5) / 8.0 - 0.5, y = (j + 0.5) / 8.0 - 0.5;
      if (x * x + y * y < 0.25 * 0.25) ++expected;
    }
  int count = 0;
  for (Phase p : m.phase) count += p == Phase::particle;
  EXPECT_EQ(count, expected);
  EXPECT_GT(count, 0);
}

TEST(Mesh, BoundaryNodesPairedOnceByLatticeVector) {
  for (int n : {2, 3, 7, 16}) {
    GeometryConfig g = GeometryConfig::desk_default();
    g.n = n;
    const PeriodicMesh m = build_rve_mesh(g);
    std::map<int, int> seen;
    for (const Pairing& p : m.pairings) {
      ++seen[p.slave];
      ++seen[p.master];
      const Vec2 d = m.nodes[p.slave] - m.nodes[p.master];
      EXPECT_NEAR((d - p.offset).norm(), 0.0, 1e-15);
      EXPECT_TRUE((p.offset - Vec2(1, 0)).norm() < 1e-15 || (p.offset - Vec2(0, 1)).norm() < 1e-15);
    }
    const std::set<int> corners(m.corners.begin(), m.corners.end());
    for (int a = 0; a < m.n_nodes(); ++a) {
      const Vec2& X = m.nodes[a];
      const bool boundary = X(0) == 0.0 || X(1) == 0.0 || X(0) == 1.0 || X(1) == 1.0;
      if (corners.count(a)) {
        EXPECT_EQ(seen.count(a), 0u);
      } else if (boundary) {
        EXPECT_EQ(seen[a], 1) << "node " << a;
      } else {
        EXPECT_EQ(seen.count(a), 0u);
      }
    }
  }
}

TEST(Mesh, RejectsInvalidGeometry) {
  GeometryConfig g;
  g.n = 1;
  EXPECT_THROW(build_rve_mesh(g), ConfigError);
  g.n = 4;
  g.particles = {{Vec2(0.05, 0.05), 0.1}};
  EXPECT_THROW(build_rve_mesh(g), ConfigError);
  g.particles = {{Vec2(0.95, 0.5), 0.1}, {Vec2(0.1, 0.5), 0.1}}; // overlap across the edge
  EXPECT_THROW(build_rve_mesh(g), ConfigError);
  g.particles = {{Vec2(0.5, 0.5), 0.6}};
  EXPECT_THROW(build_rve_mesh(g), ConfigError);
}

TEST(Mesh, FingerprintTracksPhases) {
  const auto a = fingerprint(build_rve_mesh(one_particle(8)));
  const auto b = fingerprint(build_rve_mesh(one_particle(8, 0.15)));
  const auto c = fingerprint(build_rve_mesh(one_particle(8)));
  EXPECT_NE(a, b);
  EXPECT_EQ(a, c);
}

TEST(Element, ReferenceGeometry) {
  const PeriodicMesh m = build_rve_mesh(one_particle(4));
  for (int e = 0; e < m.n_elements(); ++e) {
    const ElementGeometry geo = element_geometry(m, e);
    double vol = 0.0;
    for (int q = 0; q < 4; ++q) {
      EXPECT_GT(geo.dvol[q], 0.0);
      vol += geo.dvol[q];
      // partition of unity: gradients sum to zero
      EXPECT_NEAR(geo.grad[q].colwise().sum().norm(), 0.0, 1e-13);
    }
    EXPECT_NEAR(vol, 1.0 / 16.0, 1e-15);
  }
}

TEST(Fbar, Examples) {
  std::mt19937_64 rng(3);
  const Mat3 F = testutil::random_plane_gradient(rng, 0.2);
  EXPECT_NEAR((fbar_deformation(F, F) - F).norm(), 0.0, 1e-15);

  Mat3 Fq = Mat3::Identity();
  Fq(0, 0) = 1.21;
  const Mat3 Fb = fbar_deformation(Fq, Mat3::Identity());
  EXPECT_NEAR(Fb(0, 0), 1.21 / 1.1, 1e-15);
  EXPECT_NEAR(Fb(1, 1), 1.0 / 1.1, 1e-15);
  EXPECT_NEAR((Fb.topLeftCorner<2, 2>().determinant()), 1.0, 1e-14);
  EXPECT_EQ(Fb(2, 2), 1.0);

  for (int k = 0; k < 100; ++k) {
    const Mat3 a = testutil::random_plane_gradient(rng, 0.3);
    const Mat3 c = testutil::random_plane_gradient(rng, 0.3);
    const Mat3 b = fbar_deformation(a, c);
    EXPECT_NEAR((b.topLeftCorner<2, 2>().determinant()), (c.topLeftCorner<2, 2>().determinant()), 1e-12);
  }
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = -1.0;
  EXPECT_THROW(fbar_deformation(bad, Mat3::Identity()), InversionError);
}

TEST(Fbar, ElementDeterminantConstantAcrossGaussPoints) {
  const PeriodicMesh m = build_rve_mesh(one_particle(4));
  const ElementGeometry geo = element_geometry(m, 5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.03, 0.03);
  ElementVector ue;
  for (int k = 0; k < 8; ++k) ue(k) = u(rng);
  const Mat3 Fc = embed_plane(in_plane_gradient(geo.grad_center, ue));
  const double Jc = Fc.topLeftCorner<2, 2>().determinant();
  for (int q = 0; q < 4; ++q) {
    const Mat3 Fq = embed_plane(in_plane_gradient(geo.grad[q], ue));
    EXPECT_NEAR((fbar_deformation(Fq, Fc).topLeftCorner<2, 2>().determinant()), Jc, 1e-12);
  }
}

namespace {

/// max |K - FD(f_int)| / max(1, max |K|), column-wise central differences.
double stiffness_fd_error(const Eigen::VectorXd& u, const std::vector<QuadPointState>& states,
                          const Discretization& disc, const Materials& mats, double h = 1e-7) {
  const AssemblyResult a = assemble(u, states, disc, mats, true);
  const Eigen::MatrixXd K = Eigen::MatrixXd(a.K);
  double err = 0.0;
  for (int j = 0; j < disc.n_dofs(); ++j) {
    Eigen::VectorXd up = u, um = u;
    up(j) += h;
    um(j) -= h;
    const Eigen::VectorXd col =
        (assemble(up, states, disc, mats, false).f_int - assemble(um, states, disc, mats, false).f_int) /
        (2 * h);
    err = std::max(err, (col - K.col(j)).cwiseAbs().maxCoeff());
  }
  return err / std::max(1.0, K.cwiseAbs().maxCoeff());
}

} // namespace

TEST(Assembly, ReferenceStateIsStressFreeWithRigidModes) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  const Materials mats;
  const std::vector<QuadPointState> st(disc.n_quad_points());
  const AssemblyResult a = assemble(Eigen::VectorXd::Zero(disc.n_dofs()), st, disc, mats);
  EXPECT_LT(a.f_int.cwiseAbs().maxCoeff(), 1e-14);
  const Eigen::MatrixXd K(a.K);
  EXPECT_LT((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = ev.maxCoeff();
  int zero = 0;
  for (int i = 0; i < ev.size(); ++i) {
    EXPECT_GT(ev(i), -1e-12 * scale);
    zero += std::abs(ev(i)) < 1e-10 * scale;
  }
  EXPECT_EQ(zero, 3); // two translations and one infinitesimal rotation
}

TEST(Assembly, StiffnessMatchesFiniteDifferencesElastic) {
  const Discretization disc(build_rve_mesh(one_particle(3, 0.2)));
  const Materials mats;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-1e-3, 1e-3);
  Eigen::VectorXd u(disc.n_dofs());
  for (int i = 0; i < u.size(); ++i) u(i) = d(rng);
  const std::vector<QuadPointState> st(disc.n_quad_points());
  // stays below yield
  const AssemblyResult a = assemble(u, st, disc, mats, false);
  for (const auto& s : a.states) ASSERT_EQ(s.lambda, 0.0);
  EXPECT_LT(stiffness_fd_error(u, st, disc, mats), 1e-5);
}

TEST(Assembly, StiffnessMatchesFiniteDifferencesPlastic) {
  const Discretization disc(build_rve_mesh(one_particle(3, 0.2)));
  const Materials mats;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> d(-0.02, 0.02);
  // pre-deform to build plastic history, then a further random step
  Eigen::VectorXd u = disc.Psi() * MacroStretch{1.04, 1.0 / 1.04, 0.0}.omega();
  for (int i = 0; i < u.size(); ++i) u(i) += d(rng);
  std::vector<QuadPointState> st(disc.n_quad_points());
  st = assemble(u, st, disc, mats, false).states;
  Eigen::VectorXd u2 = u + disc.Psi() * Eigen::Vector3d(0.02, -0.01, 0.03);
  for (int i = 0; i < u.size(); ++i) u2(i) += 0.2 * d(rng);
  const AssemblyResult a = assemble(u2, st, disc, mats, false);
  int plastic = 0;
  for (std::size_t q = 0; q < st.size(); ++q) plastic += a.states[q].lambda > st[q].lambda;
  ASSERT_GT(plastic, 4);
  EXPECT_LT(stiffness_fd_error(u2, st, disc, mats), 1e-4);
}

TEST(Assembly, LinearFieldGivesZeroInteriorForces) {
  GeometryConfig g;
  g.n = 5;
  const Discretization disc(build_rve_mesh(g));
  const Materials mats = Materials::homogeneous(MaterialParams::plastic(1, 0.3, 0.01, 0.02, 1.05));
  const MacroStretch U = complete_stretch(1.1, 0.08);
  const Eigen::VectorXd u = disc.Psi() * U.omega();
  const std::vector<QuadPointState> st(disc.n_quad_points());
  const AssemblyResult a = assemble(u, st, disc, mats, false);
  double interior = 0.0, boundary = 0.0;
  for (int n = 0; n < disc.mesh().n_nodes(); ++n) {
    const Vec2& X = disc.mesh().nodes[n];
    const bool on_boundary = X(0) == 0.0 || X(1) == 0.0 || X(0) == 1.0 || X(1) == 1.0;
    const double f = a.f_int.segment<2>(2 * n).norm();
    (on_boundary ? boundary : interior) = std::max(on_boundary ? boundary : interior, f);
  }
  EXPECT_LT(interior, 1e-13);
  EXPECT_GT(boundary, 1e-4);
  // uniform stress everywhere
  for (const Mat3& P : a.P) EXPECT_LT((P - a.P[0]).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Assembly, DeterministicAndShapeChecked) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  const Materials mats;
  Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(disc.n_dofs(), -0.01, 0.01);
  const std::vector<QuadPointState> st(disc.n_quad_points());
  const AssemblyResult a = assemble(u, st, disc, mats), b = assemble(u, st, disc, mats);
  EXPECT_EQ(0, std::memcmp(a.K.valuePtr(), b.K.valuePtr(), sizeof(double) * a.K.nonZeros()));
  EXPECT_THROW(assemble(Eigen::VectorXd::Zero(3), st, disc, mats), DataMismatchError);
}

TEST(Homogenize, UniformAndZero) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  Mat3 P;
  P << 1, 2, 0, 3, 4, 0, 0, 0, 5;
  EXPECT_LT((homogenize_stress(std::vector<Mat3>(disc.n_quad_points(), P), disc) - P).norm(), 1e-14);
  EXPECT_EQ(homogenize_stress(std::vector<Mat3>(disc.n_quad_points(), Mat3::Zero()), disc).norm(), 0.0);
}

TEST(Dns, IdentityPathStaysAtRest) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  LoadPath path;
  path.increments.assign(3, MacroStretch{});
  const auto sol = solve_dns(path, disc, Materials{});
  ASSERT_EQ(sol.size(), 3u);
  for (const auto& s : sol) {
    EXPECT_TRUE(s.converged);
    EXPECT_EQ(s.iterations, 0);
    EXPECT_EQ(s.u.norm(), 0.0);
  }
}

TEST(Dns, HomogeneousMaterialHasNoFluctuation) {
  const Discretization disc(build_rve_mesh(GeometryConfig::desk_default()));
  const MaterialParams p = MaterialParams::plastic(1, 0.3, 0.01, 0.02, 1.05);
  const Materials mats = Materials::homogeneous(p);
  const LoadPath path = cyclic_path(1.08, 0.06, 8);
  const auto sol = solve_dns(path, disc, mats);
  QuadPointState point;
  for (std::size_t k = 0; k < path.size(); ++k) {
    const MacroStretch& U = path.increments[k];
    EXPECT_LT(fluctuation(sol[k], U, disc).cwiseAbs().maxCoeff(), 1e-9);
    const StressResult sr = stress_update(U.tensor(), point, p, {false});
    point = sr.state_new;
    EXPECT_LT((sol[k].P_macro - sr.P).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, sr.P.norm()));
  }
  EXPECT_GT(point.lambda, 0.0);
}

TEST(Dns, PeriodicityAndAntiPeriodicReactions) {
  const Discretization disc(build_rve_mesh(one_particle(6)));
  const Materials mats;
  LoadPath path;
  path.increments = {complete_stretch(1.0, 0.0005), complete_stretch(1.0, 0.001)};
  const auto sol = solve_dns(path, disc, mats);
  std::vector<QuadPointState> st(disc.n_quad_points());
  for (std::size_t k = 0; k < path.size(); ++k) {
    const MacroStretch& U = path.increments[k];
    EXPECT_LT(periodicity_error(sol[k].u, U, disc.mesh()), 1e-10);
    EXPECT_LT(sol[k].constraint_error, 1e-10);
    const AssemblyResult a = assemble(sol[k].u, st, disc, mats, false);
    for (const auto& s : a.states) ASSERT_EQ(s.lambda, 0.0);
    const double scale = a.f_int.cwiseAbs().maxCoeff();
    ASSERT_GT(scale, 0.0);
    for (const Pairing& pr : disc.mesh().pairings) {
      const Vec2 sum = a.f_int.segment<2>(2 * pr.slave) + a.f_int.segment<2>(2 * pr.master);
      EXPECT_LT(sum.norm(), 1e-9 * std::max(1.0, scale));
    }
    // the fluctuation is periodic
    const Eigen::VectorXd w = fluctuation(sol[k], U, disc);
    for (const Pairing& pr : disc.mesh().pairings)
      EXPECT_LT((w.segment<2>(2 * pr.slave) - w.segment<2>(2 * pr.master)).norm(), 1e-10);
  }
  // two-phase mesh: non-trivial fluctuation
  EXPECT_GT(fluctuation(sol[1], path.increments[1], disc).norm(), 1e-6);
}

TEST(Dns, QuadraticConvergenceOnElasticStep) {
  const Discretization disc(build_rve_mesh(GeometryConfig::desk_default()));
  LoadPath path;
  path.increments = {complete_stretch(1.001, 0.0005)};
  SolverConfig cfg;
  cfg.tol_newton = 1e-10;
  cfg.force_floor = 0.0;
  cfg.max_iter = 10;
  std::vector<double> r;
  try {
    r = solve_dns(path, disc, Materials{}, cfg)[0].residuals;
  } catch (const NonConvergenceError&) {
    FAIL() << "tight tolerance not reached";
  }
  ASSERT_GE(r.size(), 3u);
  // r_{k+1} <= C r_k^2 on every reduction above round-off
  for (std::size_t k = 0; k + 1 < r.size(); ++k) {
    if (r[k + 1] < 1e-13) break;
    EXPECT_LT(r[k + 1], 10.0 * r[k] * r[k]) << "iteration " << k;
  }
}

TEST(Dns, BisectionRecoversAndReportsExhaustion) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  LoadPath path;
  path.increments = {complete_stretch(1.1, 0.05)};
  SolverConfig cfg;
  cfg.max_iter = 4;
  const auto sol = solve_dns(path, disc, Materials{}, cfg);
  EXPECT_TRUE(sol[0].converged);
  EXPECT_GT(sol[0].bisections, 0);
  EXPECT_LT(periodicity_error(sol[0].u, path.increments[0], disc.mesh()), 1e-10);

  cfg.max_iter = 1;
  cfg.max_bisections = 0;
  try {
    solve_dns(path, disc, Materials{}, cfg);
    FAIL() << "expected failure";
  } catch (const NonConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("increment 1"), std::string::npos);
  }
}

TEST(Dns, CountsLinearSolvesAndKeepsRequestedStates) {
  const Discretization disc(build_rve_mesh(one_particle(4)));
  LoadPath path = cyclic_path(1.05, 0.0, 4);
  SolverConfig cfg;
  cfg.keep_states_at = {2};
  const Counters before = counters();
  const auto sol = solve_dns(path, disc, Materials{}, cfg);
  const Counters used = counters() - before;
  int its = 0;
  for (const auto& s : sol) its += s.iterations;
  EXPECT_EQ(used.linear_solves, its);
  EXPECT_TRUE(sol[0].states.empty());
  EXPECT_EQ(static_cast<int>(sol[1].states.size()), disc.n_quad_points());
  // lambda is non-decreasing across committed increments
  int observed = 0;
  const auto observer = [&](int, const DnsSolution&, const std::vector<QuadPointState>&) { ++observed; };
  solve_dns(path, disc, Materials{}, cfg, observer);
  EXPECT_EQ(observed, 4);
}
