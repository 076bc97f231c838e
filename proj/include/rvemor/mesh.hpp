#pragma once

// Structured periodic quadrilateral mesh of a square unit cell with circular
// inclusions.

#include "rvemor/errors.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

namespace rvemor {

struct Particle {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};

struct GeometryConfig {
  double size = 1.0;
  int n = 16;
  std::vector<Particle> particles;

  /// Three equal particles totalling about 20% volume fraction of the unit cell.
  static GeometryConfig desk_default() {
    GeometryConfig g;
    const double r = std::sqrt(0.2 / (3.0 * M_PI));
    g.particles = {{Vec2(0.30, 0.30), r}, {Vec2(0.72, 0.45), r}, {Vec2(0.40, 0.75), r}};
    return g;
  }
};

enum class Phase : std::uint8_t { matrix = 0, particle = 1 };

struct Pairing {
  int slave = 0;
  int master = 0;
  /// X_slave - X_master, one lattice vector of the cell.
  Vec2 offset = Vec2::Zero();
};

/// 2x2 Gauss rule on the reference square [-1, 1]^2.
struct QuadRule {
  static constexpr int size = 4;
  static constexpr double g = 0.57735026918962576451;
  static constexpr std::array<std::array<double, 2>, 4> points{
      {{-g, -g}, {g, -g}, {g, g}, {-g, g}}};
  static constexpr std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
};

struct PeriodicMesh {
  double size = 1.0;
  int n = 0;
  std::vector<Vec2> nodes;
  /// Counter-clockwise node ids.
  std::vector<std::array<int, 4>> elements;
  std::vector<Phase> phase;
  std::vector<Pairing> pairings;
  std::array<int, 4> corners{};

  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_dofs() const { return 2 * n_nodes(); }
  int n_elements() const { return static_cast<int>(elements.size()); }
  int n_quad_points() const { return QuadRule::size * n_elements(); }
  int n_constraints() const { return 2 * static_cast<int>(pairings.size()); }
};

namespace detail {

inline double periodic_distance(const Vec2& a, const Vec2& b, double size) {
  Vec2 d = a - b;
  for (int i = 0; i < 2; ++i) d(i) -= size * std::round(d(i) / size);
  return d.norm();
}

} // namespace detail

inline PeriodicMesh build_rve_mesh(const GeometryConfig& cfg) {
  if (cfg.n < 2) throw ConfigError("geometry.n must be at least 2");
  if (!(cfg.size > 0.0)) throw ConfigError("geometry.size must be positive");
  const double L = cfg.size;
  for (std::size_t i = 0; i < cfg.particles.size(); ++i) {
    const Particle& p = cfg.particles[i];
    if (!(p.radius > 0.0) || p.radius >= 0.5 * L) {
      std::ostringstream os;
      os << "particle " << i << " radius must lie in (0, size/2)";
      throw ConfigError(os.str());
    }
    // All four corners are periodic images of the origin.
    if (detail::periodic_distance(p.center, Vec2::Zero(), L) <= p.radius) {
      std::ostringstream os;
      os << "particle " << i << " covers the corner nodes, which carry Dirichlet conditions";
      throw ConfigError(os.str());
    }
    for (std::size_t j = 0; j < i; ++j) {
      const Particle& q = cfg.particles[j];
      if (detail::periodic_distance(p.center, q.center, L) < p.radius + q.radius) {
        std::ostringstream os;
        os << "particles " << j << " and " << i << " overlap";
        throw ConfigError(os.str());
      }
    }
  }

  PeriodicMesh mesh;
  mesh.size = L;
  mesh.n = cfg.n;
  const int n = cfg.n;
  const double hgrid = L / n;
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  mesh.nodes.reserve((n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) mesh.nodes.emplace_back(i * hgrid, j * hgrid);

  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      mesh.elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)});
      const Vec2 centroid((i + 0.5) * hgrid, (j + 0.5) * hgrid);
      Phase ph = Phase::matrix;
      for (const Particle& p : cfg.particles)
        if (detail::periodic_distance(centroid, p.center, L) < p.radius) ph = Phase::particle;
      mesh.phase.push_back(ph);
    }

  for (int j = 1; j < n; ++j) mesh.pairings.push_back({id(n, j), id(0, j), Vec2(L, 0.0)});
  for (int i = 1; i < n; ++i) mesh.pairings.push_back({id(i, n), id(i, 0), Vec2(0.0, L)});
  mesh.corners = {id(0, 0), id(n, 0), id(n, n), id(0, n)};
  return mesh;
}

/// Content hash of node coordinates, connectivity and phases.
inline std::uint64_t fingerprint(const PeriodicMesh& mesh) {
  Fnv1a h;
  h.add("RVEMESH");
  for (const Vec2& x : mesh.nodes) {
    h.add_value(x(0));
    h.add_value(x(1));
  }
  for (const auto& e : mesh.elements)
    for (int v : e) h.add_value(static_cast<std::int64_t>(v));
  for (Phase p : mesh.phase) h.add_value(static_cast<std::uint8_t>(p));
  return h.digest();
}

} // namespace rvemor
