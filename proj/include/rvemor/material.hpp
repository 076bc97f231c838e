#pragma once

// Finite-strain elastoplasticity with multiplicative split F = Fe . Fp,
// compressible neo-Hookean stored energy, von Mises yield in the Mandel
// stress with power-law isotropic hardening and associated flow.

#include "rvemor/errors.hpp"
#include "rvemor/instrumentation.hpp"
#include "rvemor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace rvemor {

struct MaterialParams {
  double E = 1.0;
  double nu = 0.3;
  /// Initial yield stress; ignored when elastic_only is set.
  double M0 = 0.01;
  double h = 0.02;
  double m = 1.05;
  /// Stands in for an infinite initial yield stress.
  bool elastic_only = false;

  static MaterialParams plastic(double E, double nu, double M0, double h, double m) {
    MaterialParams p{E, nu, M0, h, m, false};
    p.validate();
    return p;
  }
  static MaterialParams elastic(double E, double nu) {
    MaterialParams p{E, nu, std::numeric_limits<double>::infinity(), 0.0, 1.0, true};
    p.validate();
    return p;
  }

  double shear_modulus() const { return E / (2.0 * (1.0 + nu)); }
  double lame_lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
  double yield_tolerance() const { return 1e-10 * E; }

  void validate() const {
    std::ostringstream why;
    if (!(E > 0.0)) why << "E must be positive; ";
    if (!(nu > -1.0 && nu < 0.5)) why << "nu must lie in (-1, 0.5); ";
    if (!elastic_only) {
      if (!(M0 > 0.0) || std::isinf(M0)) why << "M0 must be positive and finite (use elastic_only); ";
      if (!(h >= 0.0)) why << "h must be non-negative; ";
      if (!(m > 0.0)) why << "m must be positive; ";
    }
    if (!why.str().empty()) throw ConfigError("invalid material parameters: " + why.str());
  }

  bool operator==(const MaterialParams&) const = default;
};

/// History at one quadrature point.
struct QuadPointState {
  Mat3 Fp = Mat3::Identity();
  double lambda = 0.0;
};

struct MaterialOptions {
  bool compute_tangent = true;
  /// Replace the exact linearization by central differences (debugging aid).
  bool fd_tangent = false;
  double fd_step = 1e-7;
  int max_iterations = 50;
};

struct StressResult {
  Mat3 P = Mat3::Zero();
  /// dP/dF_bar, entry (3i+j, 3k+l) = dP_ij / dF_kl. Zero when not requested.
  Tensor4 tangent = Tensor4::Zero();
  QuadPointState state_new;
  double delta_lambda = 0.0;
  int iterations = 0;
  bool plastic = false;
};

namespace detail {

template <class S>
S log_det_checked(const Matrix3<S>& Fe) {
  using std::log;
  const S J = det3(Fe);
  if (!(value_of(J) > 0.0)) {
    std::ostringstream os;
    os << "non-positive Jacobian det(Fe) = " << value_of(J);
    throw InversionError(os.str());
  }
  return log(J);
}

} // namespace detail

template <class S>
S strain_energy(const Matrix3<S>& Fe, const MaterialParams& p) {
  const S lnJ = detail::log_det_checked(Fe);
  const S Ie = (Fe.transpose() * Fe).trace();
  return p.E * (Ie - 3.0 - 2.0 * lnJ) / (4.0 * (1.0 + p.nu)) +
         p.E * p.nu * lnJ * lnJ / (2.0 * (1.0 + p.nu) * (1.0 - 2.0 * p.nu));
}

/// dW/dFe.
template <class S>
Matrix3<S> elastic_piola(const Matrix3<S>& Fe, const MaterialParams& p) {
  const S lnJ = detail::log_det_checked(Fe);
  const Matrix3<S> FinvT = inverse3(Fe).transpose();
  return p.shear_modulus() * (Fe - FinvT) + (p.lame_lambda() * lnJ) * FinvT;
}

/// M = Fe^T . dW/dFe, which reduces to mu (Fe^T Fe - I) + lambda ln(J) I.
template <class S>
Matrix3<S> mandel_stress(const Matrix3<S>& Fe, const MaterialParams& p) {
  const S lnJ = detail::log_det_checked(Fe);
  Matrix3<S> M = p.shear_modulus() * (Fe.transpose() * Fe);
  const S diag = p.lame_lambda() * lnJ - p.shear_modulus();
  for (int i = 0; i < 3; ++i) M(i, i) += diag;
  return M;
}

template <class S>
S equivalent_stress(const Matrix3<S>& M) {
  using std::sqrt;
  const Matrix3<S> D = deviator(M);
  return sqrt(1.5 * double_contraction(D, D));
}

inline double hardening(double lambda, const MaterialParams& p) {
  return lambda > 0.0 ? p.h * std::pow(lambda, p.m) : 0.0;
}

/// Yield function value; -infinity for elastic-only materials.
inline double yield_value(const Mat3& M, double lambda, const MaterialParams& p) {
  if (p.elastic_only) return -std::numeric_limits<double>::infinity();
  return equivalent_stress(M) - p.M0 - hardening(lambda, p);
}

namespace detail {

using Unknowns = Eigen::Matrix<double, 7, 1>;

template <class S>
Matrix3<S> symmetric_from(const Eigen::Matrix<S, 7, 1>& x) {
  Matrix3<S> A;
  A << x(0), x(3), x(4), x(3), x(1), x(5), x(4), x(5), x(2);
  return A;
}

template <class S>
struct ReturnEvaluation {
  Eigen::Matrix<S, 7, 1> residual;
  Matrix3<S> P;
};

// Residual of the backward-Euler exponential-map update. Unknowns are the six
// components of the symmetric flow increment A = dlambda N(M_new), ordered
// (00, 11, 22, 01, 02, 12), and dlambda. The yield row is scaled by 1/E.
template <class S>
ReturnEvaluation<S> return_residual(const Eigen::Matrix<S, 7, 1>& x, const Matrix3<S>& Fbar,
                                    const Mat3& Fp_old_inv, double lambda_old,
                                    const MaterialParams& p, bool want_stress) {
  using std::pow;
  const Matrix3<S> A = symmetric_from(x);
  const S dlambda = x(6);
  const Matrix3<S> flow_inv = expm(Matrix3<S>(-A));
  const Matrix3<S> Fp_inv = Fp_old_inv.cast<S>() * flow_inv;
  const Matrix3<S> Fe = Fbar * Fp_inv;
  const Matrix3<S> M = mandel_stress(Fe, p);
  const Matrix3<S> D = deviator(M);
  const S seq = equivalent_stress(M);
  const Matrix3<S> N = (1.5 * D) / seq;

  ReturnEvaluation<S> out;
  const Matrix3<S> R = A - dlambda * N;
  out.residual << R(0, 0), R(1, 1), R(2, 2), R(0, 1), R(0, 2), R(1, 2), S(0.0);
  const S lam = lambda_old + dlambda;
  const S hard = value_of(lam) > 0.0 ? S(p.h * pow(lam, p.m)) : S(0.0);
  out.residual(6) = (seq - p.M0 - hard) / p.E;
  if (want_stress) out.P = elastic_piola(Fe, p) * Fp_inv.transpose();
  return out;
}

template <class S>
Matrix3<S> elastic_total_piola(const Matrix3<S>& Fbar, const Mat3& Fp_inv,
                               const MaterialParams& p) {
  const Matrix3<S> Fi = Fp_inv.cast<S>();
  return elastic_piola(Matrix3<S>(Fbar * Fi), p) * Fi.transpose();
}

// The flow increment is coaxial with the trial elastic right Cauchy-Green
// tensor Ce_tr = V diag(c) V^T, so A = V diag(a) V^T and the return reduces
// to the principal values a and dlambda. The deviatoric Mandel stress only
// depends on the principal stretches: dev M = mu dev(diag(c_tr exp(-2a))).
template <class S>
Eigen::Matrix<S, 4, 1> principal_residual(const Eigen::Matrix<S, 4, 1>& x,
                                          const Eigen::Vector3d& c_trial, double lambda_old,
                                          const MaterialParams& p) {
  using std::exp;
  using std::pow;
  using std::sqrt;
  const double mu = p.shear_modulus();
  S c[3];
  for (int i = 0; i < 3; ++i) c[i] = c_trial(i) * exp(-2.0 * x(i));
  const S mean = (c[0] + c[1] + c[2]) / 3.0;
  S d[3];
  for (int i = 0; i < 3; ++i) d[i] = mu * (c[i] - mean);
  const S seq = sqrt(1.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
  Eigen::Matrix<S, 4, 1> r;
  for (int i = 0; i < 3; ++i) r(i) = x(i) - x(3) * (1.5 * d[i] / seq);
  const S lam = lambda_old + x(3);
  const S hard = value_of(lam) > 0.0 ? S(p.h * pow(lam, p.m)) : S(0.0);
  r(3) = (seq - p.M0 - hard) / p.E;
  return r;
}

struct PrincipalReturn {
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  double dlambda = 0.0;
  int iterations = 0;
  bool converged = false;
  double flow_residual = 0.0;
  double yield_residual = 0.0;
};

inline PrincipalReturn principal_return(const Eigen::Vector3d& c_trial, double lambda_old,
                                        const MaterialParams& p, int max_iterations) {
  using Vec4 = Eigen::Matrix<double, 4, 1>;
  using D4 = Eigen::Matrix<Dual<4>, 4, 1>;
  const double mu = p.shear_modulus();
  const Eigen::Vector3d d_trial = mu * (c_trial.array() - c_trial.mean()).matrix();
  const Eigen::Vector3d n_trial = 1.5 * d_trial / std::sqrt(1.5 * d_trial.squaredNorm());

  // Predictor: scalar Newton on dlambda along the frozen trial direction.
  // g(0) > 0 and g decreases until the deviator along n_trial is relaxed, so
  // Newton from the left is monotone; points where g is negative or already
  // increasing bound the root from above.
  auto g = [&](double dl, double& slope) {
    D4 x;
    const Dual<4> d(dl, 4, 3);
    for (int i = 0; i < 3; ++i) x(i) = n_trial(i) * d;
    x(3) = d;
    const Dual<4> r = principal_residual(x, c_trial, lambda_old, p)(3);
    slope = r.derivatives()(3);
    return r.value();
  };
  double lo = 0.0, hi = std::numeric_limits<double>::infinity(), dl = 0.0;
  for (int it = 0; it < 200; ++it) {
    double slope = 0.0;
    const double v = g(dl, slope);
    if (std::abs(v) <= 1e-14) break;
    if (v > 0.0 && slope < 0.0)
      lo = dl;
    else
      hi = dl;
    double next = (v > 0.0 && slope >= 0.0) ? -1.0 : dl - v / slope;
    if (!(next > lo && next < hi)) next = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * dl + 1e-12;
    if (std::isfinite(hi) && hi - lo <= 1e-15 * hi) break;
    dl = next;
  }

  PrincipalReturn out;
  Vec4 x;
  x << dl * n_trial, dl;
  const double tol_flow = 1e-14;
  const double tol_y = 1e-3 * p.yield_tolerance() / p.E;
  Vec4 r = Vec4::Zero();
  Eigen::Matrix4d J;
  for (int it = 0; it < max_iterations; ++it) {
    D4 xd;
    for (int i = 0; i < 4; ++i) xd(i) = Dual<4>(x(i), 4, i);
    const D4 rd = principal_residual(xd, c_trial, lambda_old, p);
    for (int i = 0; i < 4; ++i) {
      r(i) = rd(i).value();
      J.row(i) = rd(i).derivatives().transpose();
    }
    out.iterations = it;
    if (r.head<3>().cwiseAbs().maxCoeff() <= tol_flow && std::abs(r(3)) <= tol_y) {
      out.converged = true;
      break;
    }
    const Vec4 dx = -J.partialPivLu().solve(r);
    double t = 1.0;
    if (x(3) + dx(3) <= 0.0) t = 0.9 * x(3) / -dx(3);
    const double rnorm = r.norm();
    for (int ls = 0; ls < 20; ++ls) {
      const double rn = principal_residual<double>(x + t * dx, c_trial, lambda_old, p).norm();
      if (std::isfinite(rn) && rn < rnorm) break;
      t *= 0.5;
    }
    x += t * dx;
  }
  out.a = x.head<3>();
  out.dlambda = x(3);
  out.flow_residual = r.head<3>().cwiseAbs().maxCoeff();
  out.yield_residual = r(3);
  return out;
}

} // namespace detail

StressResult stress_update(const Mat3& F_bar, const QuadPointState& state_old,
                           const MaterialParams& p, const MaterialOptions& opt = {});

namespace detail {

inline Tensor4 fd_tangent(const Mat3& F_bar, const QuadPointState& state_old,
                          const MaterialParams& p, double step) {
  MaterialOptions plain;
  plain.compute_tangent = false;
  Tensor4 T;
  for (int c = 0; c < 9; ++c) {
    Mat3 Fp = F_bar, Fm = F_bar;
    Fp(c / 3, c % 3) += step;
    Fm(c / 3, c % 3) -= step;
    const Mat3 dP = (stress_update(Fp, state_old, p, plain).P -
                     stress_update(Fm, state_old, p, plain).P) /
                    (2.0 * step);
    T.col(c) = flatten(dP);
  }
  return T;
}

} // namespace detail

/// Implicit stress update at one quadrature point. The state is not mutated;
/// the updated history is returned in StressResult::state_new.
inline StressResult stress_update(const Mat3& F_bar, const QuadPointState& state_old,
                                  const MaterialParams& p, const MaterialOptions& opt) {
  ++counters().stress_updates;
  if (!(det3(F_bar) > 0.0)) {
    std::ostringstream os;
    os << "non-positive Jacobian det(F_bar) = " << det3(F_bar);
    throw InversionError(os.str());
  }
  const Mat3 Fp_old_inv = inverse3(state_old.Fp);
  const Mat3 Fe_trial = F_bar * Fp_old_inv;
  const Mat3 M_trial = mandel_stress(Fe_trial, p);
  const double y_trial = yield_value(M_trial, state_old.lambda, p);
  const double tol_yield = p.yield_tolerance();

  StressResult res;
  res.state_new = state_old;

  if (p.elastic_only || y_trial <= tol_yield) {
    if (opt.compute_tangent && !opt.fd_tangent) {
      const Matrix3<Dual<9>> P = detail::elastic_total_piola(seed_matrix<9>(F_bar, 0), Fp_old_inv, p);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          res.P(i, j) = P(i, j).value();
          res.tangent.row(3 * i + j) = P(i, j).derivatives().transpose();
        }
    } else {
      res.P = detail::elastic_total_piola(F_bar, Fp_old_inv, p);
    }
    if (opt.compute_tangent && opt.fd_tangent)
      res.tangent = detail::fd_tangent(F_bar, state_old, p, opt.fd_step);
    return res;
  }

  // Plastic corrector in the principal frame of Ce_trial.
  Eigen::SelfAdjointEigenSolver<Mat3> eig(Fe_trial.transpose() * Fe_trial);
  const Eigen::Vector3d c_trial = eig.eigenvalues();
  const Mat3 V = eig.eigenvectors();
  const detail::PrincipalReturn pr =
      detail::principal_return(c_trial, state_old.lambda, p, opt.max_iterations);
  if (!pr.converged) {
    std::ostringstream os;
    os << "return mapping did not converge in " << opt.max_iterations
       << " iterations: |r_flow| = " << pr.flow_residual << ", y/E = " << pr.yield_residual
       << ", dlambda = " << pr.dlambda;
    throw NonConvergenceError(os.str());
  }
  const Mat3 A = V * pr.a.asDiagonal() * V.transpose();
  detail::Unknowns x;
  x << A(0, 0), A(1, 1), A(2, 2), A(0, 1), A(0, 2), A(1, 2), pr.dlambda;
  const int it = pr.iterations;
  const Mat3 flow = V * pr.a.array().exp().matrix().asDiagonal() * V.transpose();

  res.plastic = true;
  res.iterations = it;
  res.delta_lambda = x(6);
  res.state_new.lambda = state_old.lambda + x(6);
  res.state_new.Fp = flow * state_old.Fp;

  if (opt.compute_tangent && !opt.fd_tangent) {
    // Implicit function theorem on R(x, F) = 0:
    //   dP/dF = P_F - P_x J_x^{-1} R_F.
    Eigen::Matrix<Dual<16>, 7, 1> xd;
    for (int i = 0; i < 7; ++i) xd(i) = Dual<16>(x(i), 16, i);
    const auto ev = detail::return_residual(xd, seed_matrix<16>(F_bar, 7), Fp_old_inv,
                                            state_old.lambda, p, true);
    Eigen::Matrix<double, 7, 7> Rx;
    Eigen::Matrix<double, 7, 9> RF;
    for (int i = 0; i < 7; ++i) {
      Rx.row(i) = ev.residual(i).derivatives().head<7>().transpose();
      RF.row(i) = ev.residual(i).derivatives().tail<9>().transpose();
    }
    Eigen::Matrix<double, 9, 7> Px;
    Tensor4 PF;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        res.P(i, j) = ev.P(i, j).value();
        Px.row(3 * i + j) = ev.P(i, j).derivatives().head<7>().transpose();
        PF.row(3 * i + j) = ev.P(i, j).derivatives().tail<9>().transpose();
      }
    res.tangent = PF - Px * Rx.partialPivLu().solve(RF);
  } else {
    res.P = detail::return_residual<double>(x, F_bar, Fp_old_inv, state_old.lambda, p, true).P;
    if (opt.compute_tangent) res.tangent = detail::fd_tangent(F_bar, state_old, p, opt.fd_step);
  }
  return res;
}

/// Max over components of |tangent - FD(P)| / max(1, |tangent|), central
/// differences of the full update with the given step.
inline double tangent_check(const Mat3& F_bar, const QuadPointState& state_old,
                            const MaterialParams& p, double step = 1e-6) {
  const StressResult ref = stress_update(F_bar, state_old, p);
  const Tensor4 fd = detail::fd_tangent(F_bar, state_old, p, step);
  double worst = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      const double t = ref.tangent(i, j);
      worst = std::max(worst, std::abs(t - fd(i, j)) / std::max(1.0, std::abs(t)));
    }
  return worst;
}

} // namespace rvemor
