#pragma once

// Snapshot collection, POD basis through the eigendecomposition of the
// snapshot Gram matrix, and the Galerkin-reduced Newton solver
//
//   u = Psi omega + Phi alpha,
//   Phi^T K Phi dalpha = -Phi^T f_int - Phi^T K Psi domega.
//
// The basis is periodic and vanishes at the corners because every snapshot
// does, so no multipliers are needed in the reduced system.

#include "rvemor/errors.hpp"
#include "rvemor/fem.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/instrumentation.hpp"
#include "rvemor/loading.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>
#include <vector>

namespace rvemor {

struct SnapshotMeta {
  int simulation = 0;
  /// 1-based increment within its simulation.
  int increment = 0;
  MacroStretch U;
};

struct SnapshotSet {
  /// n_u x n_t fluctuation columns.
  Eigen::MatrixXd U;
  std::vector<SnapshotMeta> meta;
  std::uint64_t mesh_fingerprint = 0;

  int n_u() const { return static_cast<int>(U.rows()); }
  int n_t() const { return static_cast<int>(U.cols()); }
};

/// u - Psi omega(U).
inline Eigen::VectorXd fluctuation_part(const Eigen::VectorXd& u, const MacroStretch& U,
                                        const Eigen::MatrixXd& Psi) {
  return u - Psi * U.omega();
}

/// One run's converged increments as fluctuation columns. With a stride s the
/// kept increments are s, 2s, 3s, ... (1-based).
inline SnapshotSet collect_snapshots(const std::vector<DnsSolution>& run, const LoadPath& path,
                                     const Discretization& disc, int simulation = 0, int stride = 1) {
  if (stride < 1) throw ConfigError("pod.stride must be at least 1");
  if (run.size() != path.size()) throw DataMismatchError("run and load path lengths differ");
  SnapshotSet s;
  s.mesh_fingerprint = fingerprint(disc.mesh());
  std::vector<int> keep;
  for (std::size_t k = 0; k < run.size(); ++k)
    if (run[k].converged && (k + 1) % stride == 0) keep.push_back(static_cast<int>(k));
  s.U.resize(disc.n_dofs(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    const int k = keep[c];
    if (run[k].u.size() != disc.n_dofs()) throw DataMismatchError("snapshot length does not match the mesh");
    s.U.col(c) = fluctuation_part(run[k].u, path.increments[k], disc.Psi());
    s.meta.push_back({simulation, k + 1, path.increments[k]});
  }
  return s;
}

/// Concatenates sets from the same mesh, ordered by (simulation, increment).
inline SnapshotSet merge_snapshots(const std::vector<SnapshotSet>& sets) {
  SnapshotSet out;
  if (sets.empty()) return out;
  out.mesh_fingerprint = sets.front().mesh_fingerprint;
  std::vector<std::pair<int, int>> order; // (set, column)
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].mesh_fingerprint != out.mesh_fingerprint || sets[i].n_u() != sets.front().n_u())
      throw DataMismatchError("snapshots from different meshes cannot be merged");
    for (int c = 0; c < sets[i].n_t(); ++c) order.emplace_back(static_cast<int>(i), c);
  }
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    const SnapshotMeta& ma = sets[a.first].meta[a.second];
    const SnapshotMeta& mb = sets[b.first].meta[b.second];
    return std::tie(ma.simulation, ma.increment) < std::tie(mb.simulation, mb.increment);
  });
  out.U.resize(sets.front().n_u(), static_cast<Eigen::Index>(order.size()));
  for (std::size_t c = 0; c < order.size(); ++c) {
    out.U.col(c) = sets[order[c].first].U.col(order[c].second);
    out.meta.push_back(sets[order[c].first].meta[order[c].second]);
  }
  return out;
}

struct ReducedBasis {
  Eigen::MatrixXd Phi;
  /// min(n_t, n_u) values, non-increasing.
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd Psi;
  std::uint64_t mesh_fingerprint = 0;

  int n_u() const { return static_cast<int>(Phi.rows()); }
  int n_b() const { return static_cast<int>(Phi.cols()); }

  /// Content hash of Phi and the mesh fingerprint; trained models record it.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add("RVEBASIS");
    h.add_value(mesh_fingerprint);
    h.add_value(static_cast<std::int64_t>(Phi.rows()));
    h.add_value(static_cast<std::int64_t>(Phi.cols()));
    for (Eigen::Index i = 0; i < Phi.size(); ++i) h.add_value(Phi.data()[i]);
    return h.digest();
  }
};

/// Relative eigenvalue threshold below which a Gram eigenvalue counts as zero.
inline constexpr double rank_tolerance = 1e-12;

/// Singular values at or below this are solver noise: fluctuation fields are
/// only resolved to the Newton tolerance.
inline constexpr double zero_singular_value = 1e-9;

/// Number of Gram eigenvalues above rank_tolerance times the largest (and
/// above the noise floor).
inline int numerical_rank(const Eigen::VectorXd& singular_values) {
  if (singular_values.size() == 0 || !(singular_values(0) > zero_singular_value)) return 0;
  const double cut = std::max(rank_tolerance * singular_values(0) * singular_values(0),
                              zero_singular_value * zero_singular_value);
  int r = 0;
  while (r < singular_values.size() && singular_values(r) * singular_values(r) > cut) ++r;
  return r;
}

/// Largest-magnitude entry of each column made positive (first one on ties).
inline void fix_signs(Eigen::MatrixXd& Phi) {
  for (Eigen::Index j = 0; j < Phi.cols(); ++j) {
    Eigen::Index imax = 0;
    Phi.col(j).cwiseAbs().maxCoeff(&imax);
    if (Phi(imax, j) < 0.0) Phi.col(j) *= -1.0;
  }
}

/// POD basis of the snapshot columns via the n_t x n_t Gram matrix.
inline ReducedBasis build_basis(const SnapshotSet& snapshots, int n_b, const Eigen::MatrixXd& Psi) {
  const Eigen::MatrixXd& U = snapshots.U;
  if (U.cols() == 0) throw DataMismatchError("no snapshots to build a basis from");
  if (n_b < 1) throw ConfigError("pod.n_b must be at least 1");
  if (Psi.rows() != U.rows()) throw DataMismatchError("interpolator and snapshots disagree on n_u");

  const Eigen::MatrixXd G = U.transpose() * U;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success) throw Error("Gram matrix eigendecomposition failed");
  // ascending -> descending
  const Eigen::Index n_t = G.rows();
  const Eigen::Index n_sv = std::min<Eigen::Index>(n_t, U.rows());
  ReducedBasis basis;
  basis.singular_values.resize(n_sv);
  for (Eigen::Index i = 0; i < n_sv; ++i)
    basis.singular_values(i) = std::sqrt(std::max(0.0, es.eigenvalues()(n_t - 1 - i)));

  const int rank = numerical_rank(basis.singular_values);
  if (n_b > rank) {
    std::ostringstream os;
    os << "requested " << n_b << " basis functions but the snapshots have numerical rank " << rank;
    throw RankError(os.str());
  }
  Eigen::MatrixXd V(n_t, n_b);
  for (int i = 0; i < n_b; ++i) V.col(i) = es.eigenvectors().col(n_t - 1 - i);
  basis.Phi = U * V;
  for (int i = 0; i < n_b; ++i) basis.Phi.col(i) /= basis.Phi.col(i).norm();
  // One re-orthogonalization sweep removes the eps * sigma_1 / sigma_i loss
  // of orthogonality of the weakest retained columns.
  for (int i = 0; i < n_b; ++i) {
    for (int j = 0; j < i; ++j)
      basis.Phi.col(i) -= basis.Phi.col(j).dot(basis.Phi.col(i)) * basis.Phi.col(j);
    basis.Phi.col(i) /= basis.Phi.col(i).norm();
  }
  fix_signs(basis.Phi);
  basis.Psi = Psi;
  basis.mesh_fingerprint = snapshots.mesh_fingerprint;
  return basis;
}

/// alpha = Phi^T u_tilde (least squares for an orthonormal basis).
inline Eigen::VectorXd project(const Eigen::VectorXd& u_tilde, const ReducedBasis& basis) {
  if (u_tilde.size() != basis.n_u()) throw DataMismatchError("field length does not match the basis");
  return basis.Phi.transpose() * u_tilde;
}

struct ReducedSolution {
  Eigen::VectorXd alpha;
  Eigen::VectorXd u;
  /// Empty unless retained through SolverConfig.
  std::vector<QuadPointState> states;
  bool converged = false;
  int iterations = 0;
  int bisections = 0;
  Mat3 P_macro = Mat3::Zero();
  /// ||Phi^T f_int|| per iteration.
  std::vector<double> residuals;
};

using ReducedObserver =
    std::function<void(int, const ReducedSolution&, const std::vector<QuadPointState>&)>;

/// Galerkin-reduced incremental solution along `path`.
inline std::vector<ReducedSolution> solve_reduced(const LoadPath& path, const ReducedBasis& basis,
                                                  const Discretization& disc, const Materials& materials,
                                                  const SolverConfig& cfg = {},
                                                  const ReducedObserver& observer = {}) {
  cfg.validate();
  if (basis.mesh_fingerprint != fingerprint(disc.mesh()) || basis.n_u() != disc.n_dofs())
    throw DataMismatchError("basis was built on a different mesh (fingerprint " +
                            hex64(basis.mesh_fingerprint) + " vs " + hex64(fingerprint(disc.mesh())) + ")");
  const Eigen::MatrixXd& Phi = basis.Phi;
  const Eigen::MatrixXd& Psi = disc.Psi();
  const int nb = basis.n_b();

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(nb);
  std::vector<QuadPointState> states(disc.n_quad_points());
  std::vector<Mat3> P_committed(disc.n_quad_points(), Mat3::Zero());
  MacroStretch U_committed;
  ReducedSolution current;

  auto newton = [&](const MacroStretch& U_target) -> bool {
    const Eigen::Vector3d domega = U_target.omega() - U_committed.omega();
    const Eigen::VectorXd u_hom = Psi * U_target.omega();
    Eigen::VectorXd a = alpha, a_base, da;
    // iteration 0 linearizes about the committed configuration and carries
    // the prescribed macro increment; later ones sit at U_target
    Eigen::VectorXd u = Psi * U_committed.omega() + Phi * a;
    double r_prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= cfg.max_iter + 1; ++it) {
      AssemblyResult asmb;
      Eigen::VectorXd r;
      double rnorm = 0.0;
      for (double step = 1.0;; step *= 0.5) {
        bool ok = true;
        try {
          asmb = assemble(u, states, disc, materials, true, cfg.material);
        } catch (const InversionError&) {
          ok = false;
        } catch (const NonConvergenceError&) {
          ok = false;
        }
        if (ok) {
          r = Phi.transpose() * asmb.f_int;
          rnorm = r.norm();
          ok = std::isfinite(rnorm);
        }
        if (ok && (it <= 1 || rnorm <= (1.0 - 1e-4 * step) * r_prev)) break;
        if (it <= 1 || step <= cfg.min_step) {
          if (!ok) return false;
          break;
        }
        a = a_base + 0.5 * step * da;
        u = u_hom + Phi * a;
      }
      Eigen::VectorXd rhs = -r;
      if (it == 0) {
        rhs.noalias() -= Phi.transpose() * (asmb.K * (Psi * domega));
      } else {
        current.residuals.push_back(rnorm);
        const double scale = std::max(asmb.f_int.norm(), cfg.force_floor);
        if (rnorm <= cfg.tol_newton * scale || rnorm <= cfg.force_floor) {
          alpha = a;
          states = std::move(asmb.states);
          P_committed = std::move(asmb.P);
          U_committed = U_target;
          current.iterations += it;
          current.u = u;
          return true;
        }
        if (it == cfg.max_iter + 1) return false;
        r_prev = rnorm;
      }
      const Eigen::MatrixXd Kr = Phi.transpose() * (asmb.K * Phi);
      ++counters().linear_solves;
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(Kr);
      da = lu.solve(rhs);
      if (!da.allFinite()) return false;
      a_base = a;
      a += da;
      u = u_hom + Phi * a;
    }
    return false;
  };

  std::function<void(const MacroStretch&, const MacroStretch&, int, int)> segment =
      [&](const MacroStretch& from, const MacroStretch& to, int depth, int inc) {
        if (newton(to)) return;
        if (depth >= cfg.max_bisections) {
          std::ostringstream os;
          os << "reduced simulation failed at increment " << inc << " after " << depth << " bisections";
          throw NonConvergenceError(os.str());
        }
        ++current.bisections;
        const double m11 = 0.5 * (from.U11 + to.U11), m12 = 0.5 * (from.U12 + to.U12);
        const MacroStretch mid{m11, (1.0 + m12 * m12) / m11, m12};
        segment(from, mid, depth + 1, inc);
        segment(mid, to, depth + 1, inc);
      };

  std::vector<ReducedSolution> out;
  out.reserve(path.size());
  for (std::size_t k = 0; k < path.size(); ++k) {
    const int inc = static_cast<int>(k) + 1;
    current = ReducedSolution{};
    segment(U_committed, path.increments[k], 0, inc);
    current.converged = true;
    current.alpha = alpha;
    current.P_macro = homogenize_stress(P_committed, disc);
    if (cfg.keeps(inc)) current.states = states;
    if (observer) observer(inc, current, states);
    out.push_back(std::move(current));
  }
  return out;
}

} // namespace rvemor
