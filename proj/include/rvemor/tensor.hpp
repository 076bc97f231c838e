#pragma once

// Small second-order tensor helpers shared by the constitutive model and the
// element kernels. Everything is templated on the scalar so the same code path
// serves plain doubles and forward-mode dual numbers.

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <type_traits>

namespace rvemor {

using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;

/// 9x9 matrix representing a fourth-order tensor A_ijkl stored at
/// (3*i + j, 3*k + l).
using Tensor4 = Eigen::Matrix<double, 9, 9>;

template <class S>
using Matrix3 = Eigen::Matrix<S, 3, 3>;

/// Forward-mode dual number with N derivative directions.
template <int N>
using Dual = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

template <class T>
struct is_dual : std::false_type {};
template <class D>
struct is_dual<Eigen::AutoDiffScalar<D>> : std::true_type {};

inline double value_of(double x) { return x; }
template <class D>
double value_of(const Eigen::AutoDiffScalar<D>& x) {
  return x.value();
}

template <class S>
Matrix3<double> value_of(const Matrix3<S>& A) {
  Matrix3<double> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = value_of(A(i, j));
  return out;
}

template <class S>
S det3(const Matrix3<S>& A) {
  return A(0, 0) * (A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1)) -
         A(0, 1) * (A(1, 0) * A(2, 2) - A(1, 2) * A(2, 0)) +
         A(0, 2) * (A(1, 0) * A(2, 1) - A(1, 1) * A(2, 0));
}

/// Cofactor inverse; the caller guarantees a non-zero determinant.
template <class S>
Matrix3<S> inverse3(const Matrix3<S>& A) {
  Matrix3<S> C;
  C(0, 0) = A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1);
  C(0, 1) = A(0, 2) * A(2, 1) - A(0, 1) * A(2, 2);
  C(0, 2) = A(0, 1) * A(1, 2) - A(0, 2) * A(1, 1);
  C(1, 0) = A(1, 2) * A(2, 0) - A(1, 0) * A(2, 2);
  C(1, 1) = A(0, 0) * A(2, 2) - A(0, 2) * A(2, 0);
  C(1, 2) = A(0, 2) * A(1, 0) - A(0, 0) * A(1, 2);
  C(2, 0) = A(1, 0) * A(2, 1) - A(1, 1) * A(2, 0);
  C(2, 1) = A(0, 1) * A(2, 0) - A(0, 0) * A(2, 1);
  C(2, 2) = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  const S d = A(0, 0) * C(0, 0) + A(0, 1) * C(1, 0) + A(0, 2) * C(2, 0);
  return C / d;
}

template <class S>
Matrix3<S> deviator(const Matrix3<S>& A) {
  Matrix3<S> D = A;
  const S p = A.trace() / 3.0;
  for (int i = 0; i < 3; ++i) D(i, i) -= p;
  return D;
}

template <class S>
S double_contraction(const Matrix3<S>& A, const Matrix3<S>& B) {
  return A.cwiseProduct(B).sum();
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
/// The truncation order adapts to the scaled norm so the remainder stays
/// below 1e-17 relative; derivatives of dual inputs propagate exactly through
/// the same arithmetic.
template <class S>
Matrix3<S> expm(const Matrix3<S>& A) {
  const double norm = value_of(A).norm();
  int squarings = 0;
  double scaled = norm;
  while (scaled > 0.25) {
    scaled *= 0.5;
    ++squarings;
  }
  int order = 1;
  {
    double term = scaled;
    while (term > 1e-17 && order < 18) {
      ++order;
      term *= scaled / order;
    }
  }
  const Matrix3<S> X = A * S(std::ldexp(1.0, -squarings));
  Matrix3<S> E = Matrix3<S>::Identity();
  for (int k = order; k >= 1; --k) {
    E = (X * E) / S(double(k));
    for (int i = 0; i < 3; ++i) E(i, i) += 1.0;
  }
  for (int s = 0; s < squarings; ++s) E = (E * E).eval();
  return E;
}

inline Eigen::Matrix<double, 9, 1> flatten(const Mat3& A) {
  Eigen::Matrix<double, 9, 1> v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v(3 * i + j) = A(i, j);
  return v;
}

inline Mat3 unflatten(const Eigen::Matrix<double, 9, 1>& v) {
  Mat3 A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = v(3 * i + j);
  return A;
}

/// Seeds a dual-valued copy of A whose entry (i, j) carries derivative
/// direction offset + 3*i + j.
template <int N>
Matrix3<Dual<N>> seed_matrix(const Mat3& A, int offset) {
  Matrix3<Dual<N>> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out(i, j) = Dual<N>(A(i, j), N, offset + 3 * i + j);
  return out;
}

template <int N>
Matrix3<Dual<N>> constant_matrix(const Mat3& A) {
  Matrix3<Dual<N>> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out(i, j) = Dual<N>(A(i, j), Eigen::Matrix<double, N, 1>::Zero());
  return out;
}

} // namespace rvemor
