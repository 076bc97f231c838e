#pragma once

// Assembly over the periodic mesh and the full-order Newton solver. Periodic
// constraints are enforced with Lagrange multipliers in the bordered system
//
//   [ K_ff  C^T ] [du]   [ -(f_int + C^T g) ]
//   [ C     0   ] [dg] = [ -c(u)            ]
//
// where corner dofs are prescribed by the homogeneous field and eliminated.

#include "rvemor/element.hpp"
#include "rvemor/errors.hpp"
#include "rvemor/instrumentation.hpp"
#include "rvemor/loading.hpp"
#include "rvemor/material.hpp"
#include "rvemor/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

namespace rvemor {

struct Materials {
  MaterialParams matrix = MaterialParams::plastic(1.0, 0.3, 0.01, 0.02, 1.05);
  MaterialParams particle = MaterialParams::elastic(20.0, 0.3);

  const MaterialParams& of(Phase ph) const { return ph == Phase::particle ? particle : matrix; }

  /// Particles given the matrix parameters.
  static Materials homogeneous(const MaterialParams& p) { return {p, p}; }
};

/// Mesh plus everything derived from it once: element geometry, the
/// homogeneous interpolator and the symbolic stiffness pattern.
class Discretization {
public:
  explicit Discretization(PeriodicMesh mesh) : mesh_(std::move(mesh)) {
    geometry_.reserve(mesh_.n_elements());
    for (int e = 0; e < mesh_.n_elements(); ++e) {
      geometry_.push_back(element_geometry(mesh_, e));
      for (double dv : geometry_.back().dvol) volume_ += dv;
    }
    Psi_ = homogeneous_interpolator(mesh_);
    build_pattern();
  }

  const PeriodicMesh& mesh() const { return mesh_; }
  const ElementGeometry& geometry(int e) const { return geometry_[e]; }
  const Eigen::MatrixXd& Psi() const { return Psi_; }
  double volume() const { return volume_; }
  int n_dofs() const { return mesh_.n_dofs(); }
  int n_quad_points() const { return mesh_.n_quad_points(); }

  std::array<int, 8> element_dofs(int e) const {
    std::array<int, 8> d{};
    for (int a = 0; a < 4; ++a) {
      d[2 * a] = 2 * mesh_.elements[e][a];
      d[2 * a + 1] = 2 * mesh_.elements[e][a] + 1;
    }
    return d;
  }

  ElementVector gather(const Eigen::VectorXd& u, int e) const {
    ElementVector ue;
    const auto d = element_dofs(e);
    for (int k = 0; k < 8; ++k) ue(k) = u(d[k]);
    return ue;
  }

  /// Empty stiffness with the full element pattern.
  const Eigen::SparseMatrix<double>& pattern() const { return pattern_; }
  /// Position in pattern().valuePtr() of local entry (k, l) of element e, at k * 8 + l.
  const std::array<int, 64>& scatter(int e) const { return scatter_[e]; }

private:
  void build_pattern() {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(64 * mesh_.n_elements());
    for (int e = 0; e < mesh_.n_elements(); ++e) {
      const auto d = element_dofs(e);
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) trip.emplace_back(d[k], d[l], 0.0);
    }
    pattern_.resize(n_dofs(), n_dofs());
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    scatter_.resize(mesh_.n_elements());
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (int e = 0; e < mesh_.n_elements(); ++e) {
      const auto d = element_dofs(e);
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
          // column-major: column d[l], row d[k]
          const int* first = inner + outer[d[l]];
          const int* last = inner + outer[d[l] + 1];
          scatter_[e][k * 8 + l] = static_cast<int>(std::lower_bound(first, last, d[k]) - inner);
        }
    }
  }

  PeriodicMesh mesh_;
  std::vector<ElementGeometry> geometry_;
  Eigen::MatrixXd Psi_;
  Eigen::SparseMatrix<double> pattern_;
  std::vector<std::array<int, 64>> scatter_;
  double volume_ = 0.0;
};

struct AssemblyResult {
  Eigen::VectorXd f_int;
  Eigen::SparseMatrix<double> K;
  /// Trial states, not yet committed.
  std::vector<QuadPointState> states;
  std::vector<Mat3> P;
};

/// Element loop in fixed order: internal force, (optionally) stiffness and
/// trial states for displacement u from the committed history `states`.
inline AssemblyResult assemble(const Eigen::VectorXd& u, const std::vector<QuadPointState>& states,
                               const Discretization& disc, const Materials& materials,
                               bool stiffness = true, const MaterialOptions& opt = {}) {
  const PeriodicMesh& mesh = disc.mesh();
  if (u.size() != disc.n_dofs())
    throw DataMismatchError("displacement length does not match the mesh");
  if (static_cast<int>(states.size()) != disc.n_quad_points())
    throw DataMismatchError("state count does not match the mesh");
  ++counters().assemblies;
  AssemblyResult out;
  out.f_int = Eigen::VectorXd::Zero(disc.n_dofs());
  out.states.resize(states.size());
  out.P.resize(states.size());
  if (stiffness) out.K = disc.pattern();
  double* values = stiffness ? out.K.valuePtr() : nullptr;

  for (int e = 0; e < mesh.n_elements(); ++e) {
    const ElementVector ue = disc.gather(u, e);
    ElementResponse er;
    try {
      er = element_response(disc.geometry(e), ue, &states[QuadRule::size * e],
                            materials.of(mesh.phase[e]), stiffness, opt);
    } catch (const NonConvergenceError& ex) {
      std::ostringstream os;
      os << "element " << e << ": " << ex.what();
      throw NonConvergenceError(os.str());
    } catch (const InversionError& ex) {
      std::ostringstream os;
      os << "element " << e << ": " << ex.what();
      throw InversionError(os.str());
    }
    const auto d = disc.element_dofs(e);
    for (int k = 0; k < 8; ++k) out.f_int(d[k]) += er.f(k);
    for (int q = 0; q < QuadRule::size; ++q) {
      out.states[QuadRule::size * e + q] = er.states[q];
      out.P[QuadRule::size * e + q] = er.P[q];
    }
    if (stiffness) {
      const auto& sc = disc.scatter(e);
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) values[sc[k * 8 + l]] += er.K(k, l);
    }
  }
  return out;
}

/// Reference-volume average of the first Piola-Kirchhoff stress over all
/// quadrature points.
inline Mat3 homogenize_stress(const std::vector<Mat3>& P, const Discretization& disc) {
  if (static_cast<int>(P.size()) != disc.n_quad_points())
    throw DataMismatchError("stress count does not match the mesh");
  Mat3 sum = Mat3::Zero();
  double vol = 0.0;
  for (int e = 0; e < disc.mesh().n_elements(); ++e)
    for (int q = 0; q < QuadRule::size; ++q) {
      const double dv = disc.geometry(e).dvol[q];
      sum += dv * P[QuadRule::size * e + q];
      vol += dv;
    }
  return sum / vol;
}

/// c(u) = u_slave - u_master - (U - I) . offset, two rows per pairing.
inline Eigen::VectorXd constraint_residual(const Eigen::VectorXd& u, const MacroStretch& U,
                                           const PeriodicMesh& mesh) {
  Eigen::VectorXd c(mesh.n_constraints());
  const Eigen::Matrix2d H = U.tensor().topLeftCorner<2, 2>() - Eigen::Matrix2d::Identity();
  for (std::size_t p = 0; p < mesh.pairings.size(); ++p) {
    const Pairing& pr = mesh.pairings[p];
    const Vec2 jump = H * pr.offset;
    for (int i = 0; i < 2; ++i)
      c(2 * p + i) = u(2 * pr.slave + i) - u(2 * pr.master + i) - jump(i);
  }
  return c;
}

struct SolverConfig {
  double tol_newton = 1e-9;
  int max_iter = 25;
  int max_bisections = 4;
  /// Smallest line-search fraction of a Newton step.
  double min_step = 1.0 / 16.0;
  /// Residual norms below this absolute floor count as converged.
  double force_floor = 1e-12;
  bool keep_all_states = false;
  /// 1-based increments whose quadrature states are retained.
  std::vector<int> keep_states_at;
  MaterialOptions material;

  void validate() const {
    if (!(tol_newton > 0.0)) throw ConfigError("solver.tol_newton must be positive");
    if (max_iter < 1) throw ConfigError("solver.max_iter must be at least 1");
    if (max_bisections < 0) throw ConfigError("solver.max_bisections must be non-negative");
  }
  bool keeps(int inc) const {
    return keep_all_states ||
           std::find(keep_states_at.begin(), keep_states_at.end(), inc) != keep_states_at.end();
  }
};

struct DnsSolution {
  Eigen::VectorXd u;
  Eigen::VectorXd g;
  /// Empty unless retained through SolverConfig.
  std::vector<QuadPointState> states;
  bool converged = false;
  int iterations = 0;
  int bisections = 0;
  Mat3 P_macro = Mat3::Zero();
  /// Residual norm per Newton iteration (all bisection segments).
  std::vector<double> residuals;
  double constraint_error = 0.0;
};

/// Optional per-increment hook receiving the 1-based increment index, the
/// solution and the committed quadrature states.
using IncrementObserver =
    std::function<void(int, const DnsSolution&, const std::vector<QuadPointState>&)>;

namespace detail {

/// Bordered (saddle-point) operator over free dofs and multipliers with a
/// fixed sparsity pattern, refactorized every iteration.
class BorderedSystem {
public:
  explicit BorderedSystem(const Discretization& disc) : disc_(disc) {
    const PeriodicMesh& mesh = disc.mesh();
    free_.assign(disc.n_dofs(), 0);
    for (int c : mesh.corners) free_[2 * c] = free_[2 * c + 1] = -1;
    n_free_ = 0;
    for (int& f : free_)
      if (f == 0) f = n_free_++;
    n_c_ = mesh.n_constraints();

    std::vector<Eigen::Triplet<double>> trip;
    const Eigen::SparseMatrix<double>& P = disc.pattern();
    for (int col = 0; col < P.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(P, col); it; ++it)
        if (free_[it.row()] >= 0 && free_[col] >= 0)
          trip.emplace_back(free_[it.row()], free_[col], 0.0);
    for (std::size_t p = 0; p < mesh.pairings.size(); ++p)
      for (int i = 0; i < 2; ++i) {
        const int row = n_free_ + 2 * static_cast<int>(p) + i;
        const int s = free_[2 * mesh.pairings[p].slave + i];
        const int m = free_[2 * mesh.pairings[p].master + i];
        trip.emplace_back(row, s, 1.0);
        trip.emplace_back(row, m, -1.0);
        trip.emplace_back(s, row, 1.0);
        trip.emplace_back(m, row, -1.0);
      }
    A_.resize(n_free_ + n_c_, n_free_ + n_c_);
    A_.setFromTriplets(trip.begin(), trip.end());
    A_.makeCompressed();

    // Map each stiffness entry onto its slot in A_ (or -1 for prescribed dofs).
    map_.assign(P.nonZeros(), -1);
    for (int col = 0; col < P.outerSize(); ++col)
      for (int idx = P.outerIndexPtr()[col]; idx < P.outerIndexPtr()[col + 1]; ++idx) {
        const int row = P.innerIndexPtr()[idx];
        if (free_[row] < 0 || free_[col] < 0) continue;
        const int c = free_[col];
        const int* first = A_.innerIndexPtr() + A_.outerIndexPtr()[c];
        const int* last = A_.innerIndexPtr() + A_.outerIndexPtr()[c + 1];
        map_[idx] = static_cast<int>(std::lower_bound(first, last, free_[row]) - A_.innerIndexPtr());
      }
    lu_.analyzePattern(A_);
  }

  int n_free() const { return n_free_; }
  int n_constraints() const { return n_c_; }
  int free_index(int dof) const { return free_[dof]; }

  /// Solves for (du_free, dg); false if the factorization failed.
  bool solve(const Eigen::SparseMatrix<double>& K, const Eigen::VectorXd& rhs,
             Eigen::VectorXd& sol) {
    const double* kv = K.valuePtr();
    double* av = A_.valuePtr();
    for (std::size_t i = 0; i < map_.size(); ++i)
      if (map_[i] >= 0) av[map_[i]] = kv[i];
    ++counters().linear_solves;
    lu_.factorize(A_);
    if (lu_.info() != Eigen::Success) return false;
    sol = lu_.solve(rhs);
    return lu_.info() == Eigen::Success && sol.allFinite();
  }

private:
  const Discretization& disc_;
  std::vector<int> free_;
  int n_free_ = 0;
  int n_c_ = 0;
  Eigen::SparseMatrix<double> A_;
  std::vector<int> map_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
};

} // namespace detail

/// Full-order incremental solution of the periodic RVE along a macro-stretch
/// path. Throws NonConvergenceError naming the increment when bisection is
/// exhausted.
inline std::vector<DnsSolution> solve_dns(const LoadPath& path, const Discretization& disc,
                                          const Materials& materials, const SolverConfig& cfg = {},
                                          const IncrementObserver& observer = {}) {
  cfg.validate();
  const PeriodicMesh& mesh = disc.mesh();
  const Eigen::MatrixXd& Psi = disc.Psi();
  detail::BorderedSystem system(disc);
  const int nf = system.n_free();
  const int nc = system.n_constraints();

  Eigen::VectorXd u = Eigen::VectorXd::Zero(disc.n_dofs());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(nc);
  std::vector<QuadPointState> states(disc.n_quad_points());
  MacroStretch U_committed;
  std::vector<Mat3> P_committed(disc.n_quad_points(), Mat3::Zero());
  std::vector<DnsSolution> out;
  out.reserve(path.size());

  std::vector<int> corner_dofs;
  for (int c : mesh.corners) corner_dofs.insert(corner_dofs.end(), {2 * c, 2 * c + 1});

  DnsSolution current;
  // One Newton solve from the committed state to U_target; commits on success.
  auto newton = [&](const MacroStretch& U_target) -> bool {
    Eigen::VectorXd u_try = u + Psi * (U_target.omega() - U_committed.omega());
    const Eigen::VectorXd hom = Psi * U_target.omega();
    for (int d : corner_dofs) u_try(d) = hom(d);
    Eigen::VectorXd g_try = g;
    Eigen::VectorXd rhs(nf + nc), sol, u_base, g_base;
    double r_prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= cfg.max_iter; ++it) {
      // Backtracking on the residual norm: halve the Newton step while it
      // fails to reduce the residual (at most min_step).
      AssemblyResult asmb;
      Eigen::VectorXd r_free(nf), c;
      double rnorm = 0.0;
      for (double step = 1.0;; step *= 0.5) {
        bool ok = true;
        try {
          asmb = assemble(u_try, states, disc, materials, true, cfg.material);
        } catch (const InversionError&) {
          ok = false;
        } catch (const NonConvergenceError&) {
          ok = false;
        }
        if (ok) {
          c = constraint_residual(u_try, U_target, mesh);
          for (int d = 0; d < disc.n_dofs(); ++d) {
            const int f = system.free_index(d);
            if (f >= 0) r_free(f) = asmb.f_int(d);
          }
          for (std::size_t p = 0; p < mesh.pairings.size(); ++p)
            for (int i = 0; i < 2; ++i) {
              const double gi = g_try(2 * p + i);
              r_free(system.free_index(2 * mesh.pairings[p].slave + i)) += gi;
              r_free(system.free_index(2 * mesh.pairings[p].master + i)) -= gi;
            }
          rnorm = std::hypot(r_free.norm(), c.norm());
          ok = std::isfinite(rnorm);
        }
        if (ok && (it == 0 || rnorm <= (1.0 - 1e-4 * step) * r_prev)) break;
        if (it == 0 || step <= cfg.min_step) {
          if (!ok) return false;
          break; // accept the smallest step and let Newton carry on
        }
        u_try = u_base;
        g_try = g_base;
        for (int d = 0; d < disc.n_dofs(); ++d) {
          const int f = system.free_index(d);
          if (f >= 0) u_try(d) += 0.5 * step * sol(f);
        }
        g_try += 0.5 * step * sol.tail(nc);
      }
      current.residuals.push_back(rnorm);
      const double scale = std::max(asmb.f_int.norm(), cfg.force_floor);
      const double cnorm = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
      if ((r_free.norm() <= cfg.tol_newton * scale || r_free.norm() <= cfg.force_floor) &&
          cnorm <= 1e-12 * mesh.size) {
        u = u_try;
        g = g_try;
        states = std::move(asmb.states);
        P_committed = std::move(asmb.P);
        U_committed = U_target;
        current.iterations += it;
        current.constraint_error = cnorm;
        return true;
      }
      if (it == cfg.max_iter) return false;
      r_prev = rnorm;
      rhs.head(nf) = -r_free;
      rhs.tail(nc) = -c;
      if (!system.solve(asmb.K, rhs, sol)) return false;
      u_base = u_try;
      g_base = g_try;
      for (int d = 0; d < disc.n_dofs(); ++d) {
        const int f = system.free_index(d);
        if (f >= 0) u_try(d) += sol(f);
      }
      g_try += sol.tail(nc);
    }
    return false;
  };

  std::function<void(const MacroStretch&, const MacroStretch&, int, int)> segment =
      [&](const MacroStretch& from, const MacroStretch& to, int depth, int inc) {
        if (newton(to)) return;
        if (depth >= cfg.max_bisections) {
          std::ostringstream os;
          os << "simulation failed at increment " << inc << " after " << depth
             << " bisections (U11 = " << to.U11 << ", U12 = " << to.U12 << ")";
          throw NonConvergenceError(os.str());
        }
        ++current.bisections;
        const double m11 = 0.5 * (from.U11 + to.U11), m12 = 0.5 * (from.U12 + to.U12);
        const MacroStretch mid{m11, (1.0 + m12 * m12) / m11, m12};
        segment(from, mid, depth + 1, inc);
        segment(mid, to, depth + 1, inc);
      };

  for (std::size_t k = 0; k < path.size(); ++k) {
    const int inc = static_cast<int>(k) + 1;
    current = DnsSolution{};
    segment(U_committed, path.increments[k], 0, inc);
    current.converged = true;
    current.u = u;
    current.g = g;
    current.P_macro = homogenize_stress(P_committed, disc);
    if (cfg.keeps(inc)) current.states = states;
    if (observer) observer(inc, current, states);
    out.push_back(std::move(current));
  }
  return out;
}

} // namespace rvemor
