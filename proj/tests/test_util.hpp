#pragma once

#include "rvemor/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace testutil {

inline rvemor::Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// I + amplitude * U(-1, 1) entries, re-drawn until the determinant is positive.
inline rvemor::Mat3 random_gradient(std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    rvemor::Mat3 F = rvemor::Mat3::Identity();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) F(i, j) += amplitude * u(rng);
    if (F.determinant() > 0.2) return F;
  }
}

/// In-plane gradient with F33 = 1 and zero out-of-plane shear.
inline rvemor::Mat3 random_plane_gradient(std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    rvemor::Mat3 F = rvemor::Mat3::Identity();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) F(i, j) += amplitude * u(rng);
    if (F.determinant() > 0.2) return F;
  }
}

inline double max_abs(const Eigen::MatrixXd& A) { return A.cwiseAbs().maxCoeff(); }

} // namespace testutil
