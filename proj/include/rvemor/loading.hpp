#pragma once

// Isochoric macroscale stretch paths and the homogeneous displacement
// interpolator u_hom = Psi * omega.

#include "rvemor/errors.hpp"
#include "rvemor/mesh.hpp"
#include "rvemor/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rvemor {

/// Symmetric in-plane right stretch U^M with det(U^M) = 1.
struct MacroStretch {
  double U11 = 1.0;
  double U22 = 1.0;
  double U12 = 0.0;

  static constexpr double lower = 0.75;
  static constexpr double upper = 1.25;
  static constexpr double shear_bound = 0.75;

  /// Full 3x3 stretch tensor, plane strain (U33 = 1).
  Mat3 tensor() const {
    Mat3 U = Mat3::Identity();
    U(0, 0) = U11;
    U(1, 1) = U22;
    U(0, 1) = U(1, 0) = U12;
    return U;
  }
  /// (U11 - 1, U22 - 1, U12).
  Eigen::Vector3d omega() const { return {U11 - 1.0, U22 - 1.0, U12}; }
  double det() const { return U11 * U22 - U12 * U12; }

  bool within_bounds(double slack = 1e-12) const {
    return U11 >= lower - slack && U11 <= upper + slack && U22 >= lower - slack &&
           U22 <= upper + slack && std::abs(U12) <= shear_bound + slack;
  }
  bool strictly_inside() const {
    return U11 > lower && U11 < upper && U22 > lower && U22 < upper && std::abs(U12) < shear_bound;
  }
  bool operator==(const MacroStretch&) const = default;
};

enum class PathKind { cyclic, random };

inline const char* to_string(PathKind k) { return k == PathKind::cyclic ? "cyclic" : "random"; }

struct LoadPath {
  PathKind kind = PathKind::cyclic;
  std::vector<MacroStretch> increments;
  std::uint64_t seed = 0;

  std::size_t size() const { return increments.size(); }
};

/// U22 from det(U^M) = 1.
inline MacroStretch complete_stretch(double U11, double U12) {
  if (!(U11 > 0.0)) throw ConfigError("U11 must be positive");
  const MacroStretch U{U11, (1.0 + U12 * U12) / U11, U12};
  if (!U.within_bounds()) {
    std::ostringstream os;
    os << "macro stretch out of bounds: U11 = " << U.U11 << ", U22 = " << U.U22
       << ", U12 = " << U.U12;
    throw ConfigError(os.str());
  }
  return U;
}

/// Linear ramp from identity to the target over n_inc/2 increments and back.
inline LoadPath cyclic_path(double target_U11, double target_U12, int n_inc) {
  if (n_inc < 2 || n_inc % 2 != 0) throw ConfigError("cyclic path needs an even, positive n_inc");
  complete_stretch(target_U11, target_U12);
  LoadPath path;
  path.kind = PathKind::cyclic;
  const int half = n_inc / 2;
  for (int k = 1; k <= n_inc; ++k) {
    const int level = k <= half ? k : n_inc - k;
    const double t = double(level) / half;
    path.increments.push_back(complete_stretch(1.0 + t * (target_U11 - 1.0), t * target_U12));
  }
  return path;
}

/// Cyclic targets on a fan of `count` rays from identity at angles
/// phase + 2 pi i / count in the (U11, U12) plane. Rays whose end point
/// leaves the admissible region are shortened until it fits.
inline std::vector<std::pair<double, double>> cyclic_fan(int count, double amplitude, double phase = 0.0) {
  if (count < 0) throw ConfigError("cyclic fan needs a non-negative count");
  if (!(amplitude > 0.0)) throw ConfigError("cyclic fan amplitude must be positive");
  std::vector<std::pair<double, double>> targets;
  for (int i = 0; i < count; ++i) {
    const double th = phase + 2.0 * M_PI * i / count;
    double a = amplitude;
    for (;;) {
      const double u11 = 1.0 + a * std::cos(th), u12 = a * std::sin(th);
      if (u11 > 0.0 && MacroStretch{u11, (1.0 + u12 * u12) / u11, u12}.strictly_inside()) {
        targets.emplace_back(u11, u12);
        break;
      }
      a *= 0.95;
    }
  }
  return targets;
}

/// Fixed-length random walk in the (U11, U12) plane starting at identity.
/// Steps leaving the admissible region are re-drawn; after 100 rejected
/// draws the step points back towards identity.
inline LoadPath random_path(double step, int n_inc, std::uint64_t seed) {
  if (!(step >= 0.0)) throw ConfigError("random path step must be non-negative");
  if (n_inc < 1) throw ConfigError("random path needs n_inc >= 1");
  LoadPath path;
  path.kind = PathKind::random;
  path.seed = seed;
  std::mt19937_64 rng(seed);
  auto angle = [&rng] { return 2.0 * M_PI * double(rng() >> 11) * 0x1.0p-53; };
  double u11 = 1.0, u12 = 0.0;
  for (int k = 0; k < n_inc; ++k) {
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      const double th = angle();
      const double c11 = u11 + step * std::cos(th), c12 = u12 + step * std::sin(th);
      const MacroStretch cand{c11, (1.0 + c12 * c12) / c11, c12};
      if (c11 > 0.0 && cand.strictly_inside()) {
        u11 = c11;
        u12 = c12;
        accepted = true;
      }
    }
    if (!accepted) {
      const Vec2 inward = Vec2(1.0 - u11, -u12).normalized();
      u11 += step * inward(0);
      u12 += step * inward(1);
    }
    path.increments.push_back(MacroStretch{u11, (1.0 + u12 * u12) / u11, u12});
  }
  return path;
}

/// Psi: n_u x 3 with columns X1 e1, X2 e2 and X2 e1 + X1 e2, so that
/// Psi * omega(U) holds the nodal values of (U - I) . X.
inline Eigen::MatrixXd homogeneous_interpolator(const PeriodicMesh& mesh) {
  Eigen::MatrixXd Psi = Eigen::MatrixXd::Zero(mesh.n_dofs(), 3);
  for (int a = 0; a < mesh.n_nodes(); ++a) {
    const Vec2& X = mesh.nodes[a];
    Psi(2 * a, 0) = X(0);
    Psi(2 * a, 2) = X(1);
    Psi(2 * a + 1, 1) = X(1);
    Psi(2 * a + 1, 2) = X(0);
  }
  return Psi;
}

struct HomogeneousField {
  Eigen::MatrixXd Psi;
  Eigen::Vector3d omega;
};

inline HomogeneousField homogeneous_field(const MacroStretch& U, const PeriodicMesh& mesh) {
  return {homogeneous_interpolator(mesh), U.omega()};
}

} // namespace rvemor
