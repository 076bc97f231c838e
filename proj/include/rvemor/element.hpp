#pragma once

// Bilinear quadrilateral with the F-bar modification in plane strain.
//
// Per quadrature point the in-plane block of F is scaled by
// s = (det2 F_c / det2 F)^(1/2), F_c being the gradient at the element
// centre. With beta_k = tr(F^-1 dF_k) and alpha_k = beta^c_k - beta_k for the
// element dof k,
//   dFbar_k    = s/2 alpha_k F + s dF_k
//   d2Fbar_kl  = d2s_kl F + ds_k dF_l + ds_l dF_k
//   d2s_kl     = s/4 alpha_k alpha_l
//                + s/2 (tr(F^-1 dF_l F^-1 dF_k) - tr(Fc^-1 dFc_l Fc^-1 dFc_k))
// which gives the exact element stiffness including the F-bar cross terms.

#include "rvemor/errors.hpp"
#include "rvemor/material.hpp"
#include "rvemor/mesh.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace rvemor {

using ElementVector = Eigen::Matrix<double, 8, 1>;
using ElementMatrix = Eigen::Matrix<double, 8, 8>;
using ShapeGradients = Eigen::Matrix<double, 4, 2>;

/// Reference-configuration data of one element.
struct ElementGeometry {
  /// Row a holds dN_a/dX at quadrature point q.
  std::array<ShapeGradients, QuadRule::size> grad;
  /// Gauss weight times reference Jacobian determinant.
  std::array<double, QuadRule::size> dvol{};
  ShapeGradients grad_center;
};

inline ShapeGradients reference_gradients(double xi, double eta) {
  ShapeGradients d;
  d << -(1 - eta), -(1 - xi), (1 - eta), -(1 + xi), (1 + eta), (1 + xi), -(1 + eta), (1 - xi);
  return 0.25 * d;
}

inline ElementGeometry element_geometry(const PeriodicMesh& mesh, int e) {
  Eigen::Matrix<double, 4, 2> X;
  for (int a = 0; a < 4; ++a) X.row(a) = mesh.nodes[mesh.elements[e][a]].transpose();
  auto physical = [&](double xi, double eta, double& detJ) {
    const ShapeGradients dref = reference_gradients(xi, eta);
    const Eigen::Matrix2d J = X.transpose() * dref; // dX/dxi
    detJ = J.determinant();
    if (!(detJ > 0.0)) {
      std::ostringstream os;
      os << "element " << e << " has non-positive reference Jacobian " << detJ;
      throw ConfigError(os.str());
    }
    return ShapeGradients(dref * J.inverse());
  };
  ElementGeometry geo;
  for (int q = 0; q < QuadRule::size; ++q) {
    double detJ = 0.0;
    geo.grad[q] = physical(QuadRule::points[q][0], QuadRule::points[q][1], detJ);
    geo.dvol[q] = QuadRule::weights[q] * detJ;
  }
  double detJc = 0.0;
  geo.grad_center = physical(0.0, 0.0, detJc);
  return geo;
}

/// In-plane gradient I + sum_a u_a (x) G_a.
inline Eigen::Matrix2d in_plane_gradient(const ShapeGradients& G, const ElementVector& ue) {
  Eigen::Matrix2d F = Eigen::Matrix2d::Identity();
  for (int a = 0; a < 4; ++a) F += ue.segment<2>(2 * a) * G.row(a);
  return F;
}

inline Mat3 embed_plane(const Eigen::Matrix2d& F2) {
  Mat3 F = Mat3::Identity();
  F.topLeftCorner<2, 2>() = F2;
  return F;
}

/// F-bar gradient: in-plane block of F_q scaled by (det2 F_c / det2 F_q)^(1/2);
/// the out-of-plane row and column are kept.
inline Mat3 fbar_deformation(const Mat3& F_q, const Mat3& F_c) {
  const double Jq = F_q.topLeftCorner<2, 2>().determinant();
  const double Jc = F_c.topLeftCorner<2, 2>().determinant();
  if (!(Jq > 0.0) || !(Jc > 0.0)) {
    std::ostringstream os;
    os << "element inversion: det2(F_q) = " << Jq << ", det2(F_c) = " << Jc;
    throw InversionError(os.str());
  }
  Mat3 Fbar = F_q;
  Fbar.topLeftCorner<2, 2>() *= std::sqrt(Jc / Jq);
  return Fbar;
}

struct ElementResponse {
  ElementVector f = ElementVector::Zero();
  ElementMatrix K = ElementMatrix::Zero();
  std::array<QuadPointState, QuadRule::size> states;
  std::array<Mat3, QuadRule::size> P;
};

/// Internal force and (optionally) stiffness of one element. The history in
/// `states` is read only; updated trial states are returned.
inline ElementResponse element_response(const ElementGeometry& geo, const ElementVector& ue,
                                        const QuadPointState* states, const MaterialParams& mat,
                                        bool stiffness, MaterialOptions opt = {}) {
  opt.compute_tangent = stiffness;
  ElementResponse out;
  const Eigen::Matrix2d Fc = in_plane_gradient(geo.grad_center, ue);
  const double Jc = Fc.determinant();
  if (!(Jc > 0.0)) {
    std::ostringstream os;
    os << "element inversion at centre: det2 = " << Jc;
    throw InversionError(os.str());
  }
  const Eigen::Matrix2d Fc_inv = Fc.inverse();
  // beta^c(a, i) = G^c_a . Fc^-1 e_i
  const Eigen::Matrix<double, 4, 2> beta_c = geo.grad_center * Fc_inv;

  for (int q = 0; q < QuadRule::size; ++q) {
    const ShapeGradients& G = geo.grad[q];
    const Eigen::Matrix2d F = in_plane_gradient(G, ue);
    const double J = F.determinant();
    if (!(J > 0.0)) {
      std::ostringstream os;
      os << "element inversion at quadrature point " << q << ": det2 = " << J;
      throw InversionError(os.str());
    }
    const double s = std::sqrt(Jc / J);
    const Eigen::Matrix<double, 4, 2> beta = G * F.inverse();

    Mat3 Fbar = Mat3::Identity();
    Fbar.topLeftCorner<2, 2>() = s * F;
    const StressResult sr = stress_update(Fbar, states[q], mat, opt);
    out.states[q] = sr.state_new;
    out.P[q] = sr.P;
    const Eigen::Matrix2d P2 = sr.P.topLeftCorner<2, 2>();
    const double dv = geo.dvol[q];

    ElementVector alpha, ds, pi;
    Eigen::Matrix<double, 9, 8> B = Eigen::Matrix<double, 9, 8>::Zero();
    for (int a = 0; a < 4; ++a)
      for (int i = 0; i < 2; ++i) {
        const int k = 2 * a + i;
        alpha(k) = beta_c(a, i) - beta(a, i);
        ds(k) = 0.5 * s * alpha(k);
        // P : dF_k with dF_k = e_i (x) G_a
        pi(k) = P2.row(i).dot(G.row(a));
        Eigen::Matrix2d dFbar = ds(k) * F;
        dFbar.row(i) += s * G.row(a);
        B(0, k) = dFbar(0, 0);
        B(1, k) = dFbar(0, 1);
        B(3, k) = dFbar(1, 0);
        B(4, k) = dFbar(1, 1);
      }
    out.f.noalias() += dv * (B.transpose() * flatten(sr.P));

    if (!stiffness) continue;
    out.K.noalias() += dv * (B.transpose() * sr.tangent * B);
    const double phi = P2.cwiseProduct(F).sum();
    for (int a = 0; a < 4; ++a)
      for (int i = 0; i < 2; ++i) {
        const int k = 2 * a + i;
        for (int b = 0; b < 4; ++b)
          for (int j = 0; j < 2; ++j) {
            const int l = 2 * b + j;
            const double d2s =
                0.25 * s * alpha(k) * alpha(l) +
                0.5 * s * (beta(a, j) * beta(b, i) - beta_c(a, j) * beta_c(b, i));
            out.K(k, l) += dv * (d2s * phi + ds(k) * pi(l) + ds(l) * pi(k));
          }
      }
  }
  return out;
}

} // namespace rvemor
