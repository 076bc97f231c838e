#pragma once

// Test-only reference integrator for the flow rule: forward-Euler plastic
// flow with the direction frozen at the elastic predictor of each
// sub-increment and the multiplier fixed by scalar bisection on the yield
// condition. Shares nothing with the library's return mapping.

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

struct Material {
  double E, nu, M0, h, m;
  double mu() const { return E / (2 * (1 + nu)); }
  double lame() const { return E * nu / ((1 + nu) * (1 - 2 * nu)); }
};

inline Eigen::Matrix3d mandel(const Eigen::Matrix3d& Fe, const Material& mat) {
  const double J = Fe.determinant();
  return mat.mu() * (Fe.transpose() * Fe - Eigen::Matrix3d::Identity()) +
         mat.lame() * std::log(J) * Eigen::Matrix3d::Identity();
}

inline double von_mises(const Eigen::Matrix3d& M) {
  const Eigen::Matrix3d D = M - M.trace() / 3.0 * Eigen::Matrix3d::Identity();
  return std::sqrt(1.5 * (D.array() * D.array()).sum());
}

inline double yield(const Eigen::Matrix3d& F, const Eigen::Matrix3d& Fp, double lam,
                    const Material& mat) {
  const double hard = lam > 0 ? mat.h * std::pow(lam, mat.m) : 0.0;
  return von_mises(mandel(F * Fp.inverse(), mat)) - mat.M0 - hard;
}

struct State {
  Eigen::Matrix3d Fp = Eigen::Matrix3d::Identity();
  double lambda = 0.0;
};

/// Advances the state along the straight segment F0 -> F1 in `substeps` steps.
inline void integrate(State& s, const Eigen::Matrix3d& F0, const Eigen::Matrix3d& F1,
                      int substeps, const Material& mat) {
  for (int k = 1; k <= substeps; ++k) {
    const Eigen::Matrix3d F = F0 + (F1 - F0) * (double(k) / substeps);
    if (yield(F, s.Fp, s.lambda, mat) <= 0.0) continue;
    const Eigen::Matrix3d M = mandel(F * s.Fp.inverse(), mat);
    const Eigen::Matrix3d D = M - M.trace() / 3.0 * Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d N = 1.5 * D / von_mises(M);
    auto g = [&](double dl) {
      Eigen::Matrix3d Fp = (Eigen::Matrix3d::Identity() + dl * N) * s.Fp;
      return yield(F, Fp, s.lambda + dl, mat);
    };
    double lo = 0.0, hi = 1e-6;
    while (g(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-18; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g(mid) > 0.0 ? lo : hi) = mid;
    }
    const double dl = 0.5 * (lo + hi);
    s.Fp = (Eigen::Matrix3d::Identity() + dl * N) * s.Fp;
    s.Fp /= std::cbrt(s.Fp.determinant());
    s.lambda += dl;
  }
}

} // namespace oracle
