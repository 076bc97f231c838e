#pragma once

// Equation-free online stage: the RNN predicts the POD coefficients of each
// increment, u = Psi omega + Phi alpha is reconstructed, every quadrature
// point is updated once and committed, and the stress is homogenized. No
// stiffness is assembled and no linear system is solved.
//
// Also the comparison tooling shared by the online, reduced and full runs.

#include "rvemor/errors.hpp"
#include "rvemor/fem.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/instrumentation.hpp"
#include "rvemor/loading.hpp"
#include "rvemor/pod.hpp"
#include "rvemor/rnn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace rvemor {

struct OnlineConfig {
  bool keep_all_states = false;
  /// 1-based increments whose quadrature states are retained.
  std::vector<int> keep_states_at;
  /// Keep the previous state of an element whose update fails instead of
  /// aborting; the failure is recorded.
  bool continue_on_failure = false;

  bool keeps(int inc) const {
    return keep_all_states ||
           std::find(keep_states_at.begin(), keep_states_at.end(), inc) != keep_states_at.end();
  }
};

struct PointFailure {
  int increment = 0;
  int element = 0;
  std::string message;
};

struct OnlineIncrement {
  Eigen::VectorXd alpha;
  Eigen::VectorXd u;
  Mat3 P_macro = Mat3::Zero();
  /// ||Phi^T f_int||: equilibrium defect of the predicted field (diagnostic only).
  double residual = 0.0;
  double force_scale = 0.0;
  std::vector<QuadPointState> states;
};

struct OnlineTiming {
  double predict = 0.0;
  double reconstruct = 0.0;
  double stress = 0.0;
  double homogenize = 0.0;
  double diagnostics = 0.0;
  double total = 0.0;
};

struct OnlineResult {
  std::vector<OnlineIncrement> increments;
  std::vector<PointFailure> failures;
  OnlineTiming timing;
  Counters work;
};

/// Supplies alpha for increment k (0-based) given the macro stretch.
using CoefficientSource = std::function<Eigen::VectorXd(int, const MacroStretch&)>;

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline OnlineResult run_online_core(const LoadPath& path, const ReducedBasis& basis,
                                    const Discretization& disc, const Materials& materials,
                                    const CoefficientSource& source, const OnlineConfig& cfg) {
  if (basis.mesh_fingerprint != fingerprint(disc.mesh()) || basis.n_u() != disc.n_dofs())
    throw DataMismatchError("basis was built on a different mesh (fingerprint " +
                            hex64(basis.mesh_fingerprint) + " vs " + hex64(fingerprint(disc.mesh())) + ")");
  const PeriodicMesh& mesh = disc.mesh();
  const Eigen::MatrixXd& Phi = basis.Phi;
  const Eigen::MatrixXd& Psi = disc.Psi();
  MaterialOptions mopt;
  mopt.compute_tangent = false;

  OnlineResult out;
  out.increments.reserve(path.size());
  std::vector<QuadPointState> states(disc.n_quad_points()), next(disc.n_quad_points());
  std::vector<Mat3> P(disc.n_quad_points(), Mat3::Zero());
  Eigen::VectorXd f(disc.n_dofs());
  const Counters before = counters();
  const auto t_all = Clock::now();

  for (std::size_t k = 0; k < path.size(); ++k) {
    const int inc = static_cast<int>(k) + 1;
    const MacroStretch& U = path.increments[k];
    OnlineIncrement rec;

    auto t0 = Clock::now();
    rec.alpha = source(static_cast<int>(k), U);
    out.timing.predict += seconds_since(t0);
    if (rec.alpha.size() != basis.n_b()) throw DataMismatchError("coefficient count does not match the basis");

    t0 = Clock::now();
    rec.u = Psi * U.omega();
    rec.u.noalias() += Phi * rec.alpha;
    out.timing.reconstruct += seconds_since(t0);

    // one stress update per quadrature point, committed immediately
    t0 = Clock::now();
    f.setZero();
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const int q0 = QuadRule::size * e;
      try {
        const ElementResponse er =
            element_response(disc.geometry(e), disc.gather(rec.u, e), &states[q0], materials.of(mesh.phase[e]), false, mopt);
        const auto d = disc.element_dofs(e);
        for (int i = 0; i < 8; ++i) f(d[i]) += er.f(i);
        for (int q = 0; q < QuadRule::size; ++q) {
          next[q0 + q] = er.states[q];
          P[q0 + q] = er.P[q];
        }
      } catch (const Error& ex) {
        std::ostringstream os;
        os << "increment " << inc << ", element " << e << ": " << ex.what();
        if (!cfg.continue_on_failure) throw NonConvergenceError(os.str());
        out.failures.push_back({inc, e, ex.what()});
        for (int q = 0; q < QuadRule::size; ++q) next[q0 + q] = states[q0 + q];
      }
    }
    std::swap(states, next);
    out.timing.stress += seconds_since(t0);

    t0 = Clock::now();
    rec.P_macro = homogenize_stress(P, disc);
    out.timing.homogenize += seconds_since(t0);

    t0 = Clock::now();
    rec.residual = (Phi.transpose() * f).norm();
    rec.force_scale = f.norm();
    out.timing.diagnostics += seconds_since(t0);

    if (cfg.keeps(inc)) rec.states = states;
    out.increments.push_back(std::move(rec));
  }
  out.timing.total = seconds_since(t_all);
  out.work = counters() - before;
  return out;
}

} // namespace detail

/// Online RNN-MOR run. The model must have been trained on coefficients of
/// this very basis.
inline OnlineResult run_online(const LoadPath& path, const ReducedBasis& basis, const RnnModel& model,
                               const Discretization& disc, const Materials& materials,
                               const OnlineConfig& cfg = {}) {
  model.validate();
  if (model.dims.n_b != basis.n_b())
    throw DataMismatchError("model predicts " + std::to_string(model.dims.n_b) + " coefficients, basis has " +
                            std::to_string(basis.n_b()));
  if (model.basis_fingerprint != basis.fingerprint())
    throw DataMismatchError("model was trained on basis " + hex64(model.basis_fingerprint) +
                            ", given basis is " + hex64(basis.fingerprint()));
  if (model.dims.n_in != 2) throw DataMismatchError("online stage feeds (U11, U12); model expects " +
                                                    std::to_string(model.dims.n_in) + " inputs");
  for (const auto& U : path.increments)
    if (!U.within_bounds()) throw ConfigError("load path leaves the admissible stretch range");
  RnnStepper stepper(model);
  return detail::run_online_core(
      path, basis, disc, materials,
      [&](int, const MacroStretch& U) { return stepper.step(Eigen::Vector2d(U.U11, U.U12)); }, cfg);
}

/// Same online stage fed with given coefficients (n_b x n_inc) instead of the
/// network: separates the network error from the reduction error.
inline OnlineResult run_online_oracle(const LoadPath& path, const ReducedBasis& basis,
                                      const Eigen::MatrixXd& alpha, const Discretization& disc,
                                      const Materials& materials, const OnlineConfig& cfg = {}) {
  if (alpha.rows() != basis.n_b() || alpha.cols() != static_cast<Eigen::Index>(path.size()))
    throw DataMismatchError("coefficient history has the wrong shape");
  return detail::run_online_core(
      path, basis, disc, materials, [&](int k, const MacroStretch&) -> Eigen::VectorXd { return alpha.col(k); },
      cfg);
}

/// RNN inputs of a path: (U11, U12) per increment.
inline Eigen::MatrixXd path_inputs(const LoadPath& path) {
  Eigen::MatrixXd X(2, static_cast<Eigen::Index>(path.size()));
  for (std::size_t k = 0; k < path.size(); ++k) X.col(k) << path.increments[k].U11, path.increments[k].U12;
  return X;
}

// ---------------------------------------------------------------------------
// Comparison

/// What the comparison needs from any of the three methods.
struct FieldTrace {
  std::string method;
  /// n_b x n_inc; may be empty (e.g. full-order run without a basis).
  Eigen::MatrixXd alpha;
  std::vector<Mat3> P_macro;
  /// Per-quadrature-point lambda at selected 1-based increments.
  std::map<int, Eigen::VectorXd> lambda;
  double seconds = 0.0;
  Counters work;

  int n_increments() const { return static_cast<int>(P_macro.size()); }
};

inline Eigen::VectorXd lambda_field(const std::vector<QuadPointState>& states) {
  Eigen::VectorXd l(static_cast<Eigen::Index>(states.size()));
  for (std::size_t q = 0; q < states.size(); ++q) l(q) = states[q].lambda;
  return l;
}

/// Quarter points of the path: {n/4, n/2, 3n/4, n} (1-based, deduplicated).
inline std::vector<int> default_lambda_increments(int n_inc) {
  std::vector<int> out;
  for (int i = 1; i <= 4; ++i) {
    const int k = std::max(1, (n_inc * i) / 4);
    if (n_inc > 0 && (out.empty() || out.back() != k)) out.push_back(k);
  }
  return out;
}

inline FieldTrace trace_of(const OnlineResult& r, std::string method = "rnn-mor") {
  FieldTrace t;
  t.method = std::move(method);
  const int n = static_cast<int>(r.increments.size());
  if (n > 0) t.alpha.resize(r.increments.front().alpha.size(), n);
  for (int k = 0; k < n; ++k) {
    const auto& rec = r.increments[k];
    t.alpha.col(k) = rec.alpha;
    t.P_macro.push_back(rec.P_macro);
    if (!rec.states.empty()) t.lambda[k + 1] = lambda_field(rec.states);
  }
  t.seconds = r.timing.total;
  t.work = r.work;
  return t;
}

inline FieldTrace trace_of(const std::vector<ReducedSolution>& run, std::string method = "mor") {
  FieldTrace t;
  t.method = std::move(method);
  const int n = static_cast<int>(run.size());
  if (n > 0) t.alpha.resize(run.front().alpha.size(), n);
  for (int k = 0; k < n; ++k) {
    t.alpha.col(k) = run[k].alpha;
    t.P_macro.push_back(run[k].P_macro);
    if (!run[k].states.empty()) t.lambda[k + 1] = lambda_field(run[k].states);
  }
  return t;
}

/// Full-order trace; with a basis the coefficients are the projections of the
/// fluctuation fields.
inline FieldTrace trace_of(const std::vector<DnsSolution>& run, const LoadPath& path, const Discretization& disc,
                           const ReducedBasis* basis = nullptr, std::string method = "dns") {
  if (run.size() != path.size()) throw DataMismatchError("run and load path lengths differ");
  FieldTrace t;
  t.method = std::move(method);
  const int n = static_cast<int>(run.size());
  if (basis && n > 0) t.alpha.resize(basis->n_b(), n);
  for (int k = 0; k < n; ++k) {
    if (basis) t.alpha.col(k) = project(fluctuation_part(run[k].u, path.increments[k], disc.Psi()), *basis);
    t.P_macro.push_back(run[k].P_macro);
    if (!run[k].states.empty()) t.lambda[k + 1] = lambda_field(run[k].states);
  }
  return t;
}

/// In-plane components (P11, P22, P12, P21) of the macro stress.
inline Eigen::Vector4d in_plane(const Mat3& P) { return {P(0, 0), P(1, 1), P(0, 1), P(1, 0)}; }

struct ErrorReport {
  std::string a, b;
  /// ||alpha_a - alpha_b||^2 per increment.
  std::vector<double> coefficient_mse;
  /// Loss-style average over the path: (1/n_inc) sum_k ||alpha_a - alpha_b||^2.
  double coefficient_error = std::numeric_limits<double>::quiet_NaN();
  /// sqrt(sum_k |P_a - P_b|^2) / sqrt(sum_k |P_b|^2) over the in-plane components.
  double stress_error = 0.0;
  std::map<int, Eigen::VectorXd> lambda_difference;
  std::map<int, double> lambda_max_difference;
};

/// Errors of `a` relative to the reference `b`.
inline ErrorReport compare_fields(const FieldTrace& a, const FieldTrace& b) {
  if (a.n_increments() != b.n_increments())
    throw DataMismatchError("traces have " + std::to_string(a.n_increments()) + " and " +
                            std::to_string(b.n_increments()) + " increments");
  ErrorReport r;
  r.a = a.method;
  r.b = b.method;
  const int n = a.n_increments();
  if (a.alpha.size() > 0 && b.alpha.size() > 0) {
    if (a.alpha.rows() != b.alpha.rows() || a.alpha.cols() != b.alpha.cols())
      throw DataMismatchError("coefficient histories have different shapes");
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      const double e = (a.alpha.col(k) - b.alpha.col(k)).squaredNorm();
      r.coefficient_mse.push_back(e);
      sum += e;
    }
    r.coefficient_error = n > 0 ? sum / n : 0.0;
  }
  double num = 0.0, den = 0.0;
  for (int k = 0; k < n; ++k) {
    num += (in_plane(a.P_macro[k]) - in_plane(b.P_macro[k])).squaredNorm();
    den += in_plane(b.P_macro[k]).squaredNorm();
  }
  r.stress_error = num == 0.0 ? 0.0 : std::sqrt(num / den);
  for (const auto& [inc, la] : a.lambda) {
    const auto it = b.lambda.find(inc);
    if (it == b.lambda.end()) continue;
    if (la.size() != it->second.size()) throw DataMismatchError("lambda fields have different sizes");
    r.lambda_difference[inc] = la - it->second;
    r.lambda_max_difference[inc] = (la - it->second).cwiseAbs().maxCoeff();
  }
  return r;
}

/// Full-scale reference values of the coefficient error (reported, not targets).
inline constexpr double reference_cyclic_coefficient_error = 3e-5;
inline constexpr double reference_random_coefficient_error = 4e-4;

/// Triangle-inequality sanity row: e(rnn, dns) <= e(rnn, mor) + e(mor, dns)
/// for the relative stress-trace error, which is a scaled norm.
struct ErrorDecomposition {
  double rnn_vs_dns = 0.0, rnn_vs_mor = 0.0, mor_vs_dns = 0.0;
  bool consistent = false;
};

inline ErrorDecomposition decompose_error(const FieldTrace& rnn, const FieldTrace& mor, const FieldTrace& dns) {
  ErrorDecomposition d;
  d.rnn_vs_dns = compare_fields(rnn, dns).stress_error;
  d.mor_vs_dns = compare_fields(mor, dns).stress_error;
  // both errors scaled by the same dns norm so the triangle inequality holds
  double num = 0.0, den = 0.0;
  for (int k = 0; k < rnn.n_increments(); ++k) {
    num += (in_plane(rnn.P_macro[k]) - in_plane(mor.P_macro[k])).squaredNorm();
    den += in_plane(dns.P_macro[k]).squaredNorm();
  }
  d.rnn_vs_mor = den > 0.0 ? std::sqrt(num / den) : 0.0;
  d.consistent = d.rnn_vs_dns <= d.rnn_vs_mor + d.mor_vs_dns + 1e-14;
  return d;
}

} // namespace rvemor
