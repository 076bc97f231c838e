#pragma once

// Run configuration: one key = value file with dotted keys. A "[section]"
// line prefixes the keys that follow it. Unknown keys are errors.
//
//   geometry.n = 16
//   [solver]
//   tol_newton = 1e-9
//
// Every setting has a default; `canonical()` lists all effective values and
// is what gets hashed into the manifest.

#include "rvemor/errors.hpp"
#include "rvemor/fem.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/loading.hpp"
#include "rvemor/mesh.hpp"
#include "rvemor/rnn.hpp"
#include "rvemor/surrogate.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rvemor {

struct LoadingConfig {
  int increments = 1000;
  int cyclic_train = 12;
  int random_train = 20;
  int cyclic_val = 2;
  int random_val = 2;
  double cyclic_amplitude = 0.2;
  /// Explicit cyclic training targets (U11, U12); replace the fan when given.
  std::vector<std::pair<double, double>> targets;
  double random_step = 0.002;
  std::uint64_t seed = 1;
};

struct PodConfig {
  int n_b = 20;
  int stride = 1;
};

struct SweepConfig {
  std::vector<int> d_in{16, 32};
  std::vector<int> d_h{8, 32, 64};
  std::vector<int> d_out{32};
  int epochs = 2000;
};

struct RunConfig {
  GeometryConfig geometry = GeometryConfig::desk_default();
  Materials materials;
  SolverConfig solver;
  LoadingConfig loading;
  PodConfig pod;
  RnnDims rnn;
  TrainConfig train;
  SweepConfig sweep;
  /// Increments whose lambda fields are written; empty = quarter points.
  std::vector<int> lambda_increments;
  std::string data_dir = "rvemor-data";

  void validate() const {
    if (!(geometry.size > 0.0)) throw ConfigError("geometry.size must be positive");
    if (geometry.n < 2) throw ConfigError("geometry.n must be at least 2");
    materials.matrix.validate();
    materials.particle.validate();
    solver.validate();
    const LoadingConfig& l = loading;
    if (l.increments < 2 || l.increments % 2 != 0) throw ConfigError("loading.increments must be even and >= 2");
    if (l.cyclic_train < 0 || l.random_train < 0 || l.cyclic_val < 0 || l.random_val < 0)
      throw ConfigError("loading counts must be non-negative");
    if (!(l.cyclic_amplitude > 0.0)) throw ConfigError("loading.cyclic_amplitude must be positive");
    if (!(l.random_step >= 0.0)) throw ConfigError("loading.random_step must be non-negative");
    for (auto [a, b] : l.targets) complete_stretch(a, b);
    if (pod.n_b < 1) throw ConfigError("pod.n_b must be at least 1");
    if (pod.stride < 1) throw ConfigError("pod.stride must be at least 1");
    RnnDims d = rnn;
    d.n_b = pod.n_b;
    d.validate();
    train.validate();
    if (sweep.d_in.empty() || sweep.d_h.empty() || sweep.d_out.empty()) throw ConfigError("sweep grid lists must be non-empty");
    for (int v : sweep.d_in) if (v < 1) throw ConfigError("sweep.d_in entries must be positive");
    for (int v : sweep.d_h) if (v < 1) throw ConfigError("sweep.d_h entries must be positive");
    for (int v : sweep.d_out) if (v < 1) throw ConfigError("sweep.d_out entries must be positive");
    if (sweep.epochs < 1) throw ConfigError("sweep.epochs must be positive");
    for (int k : lambda_increments)
      if (k < 1 || k > l.increments) throw ConfigError("output.lambda_increments must lie in 1..loading.increments");
    build_rve_mesh(geometry); // geometric checks
  }

  RnnDims model_dims() const {
    RnnDims d = rnn;
    d.n_b = pod.n_b;
    return d;
  }

  /// Lambda output increments for a path of n_inc increments (default: the
  /// configured path length); explicit entries beyond the path are dropped.
  std::vector<int> lambda_at(int n_inc = 0) const {
    if (n_inc <= 0) n_inc = loading.increments;
    if (lambda_increments.empty()) return default_lambda_increments(n_inc);
    std::vector<int> out;
    for (int k : lambda_increments)
      if (k <= n_inc) out.push_back(k);
    return out;
  }

  std::string canonical() const;
  std::uint64_t hash() const {
    Fnv1a h;
    h.add(canonical());
    return h.digest();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline long long to_integer(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

inline std::vector<std::string> words(const std::string& v, char sep = ' ') {
  std::vector<std::string> out;
  std::istringstream is(v);
  for (std::string w; std::getline(is, w, sep);) {
    w = trim(w);
    if (!w.empty()) out.push_back(w);
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Name -> (setter, getter) for every configuration key.
struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    auto real = [&t](const std::string& key, auto member) {
      t[key] = {[key, member](RunConfig& c, const std::string& v) { member(c) = to_double(key, v); },
                [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
    };
    auto integer = [&t](const std::string& key, auto member) {
      t[key] = {[key, member](RunConfig& c, const std::string& v) {
                  using T = std::decay_t<decltype(member(c))>;
                  const long long x = to_integer(key, v);
                  if constexpr (std::is_unsigned_v<T>) {
                    if (x < 0) throw ConfigError(key + ": must be non-negative");
                  }
                  member(c) = static_cast<T>(x);
                },
                [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
    };
    auto int_list = [&t](const std::string& key, auto member) {
      t[key] = {[key, member](RunConfig& c, const std::string& v) {
                  std::vector<int> out;
                  for (const auto& w : words(v)) out.push_back(static_cast<int>(to_integer(key, w)));
                  member(c) = out;
                },
                [member](const RunConfig& c) {
                  std::string s;
                  for (int x : member(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : " ") + std::to_string(x);
                  return s;
                }};
    };

    real("geometry.size", [](RunConfig& c) -> double& { return c.geometry.size; });
    integer("geometry.n", [](RunConfig& c) -> int& { return c.geometry.n; });
    t["geometry.particles"] = {
        [](RunConfig& c, const std::string& v) {
          c.geometry.particles.clear();
          for (const auto& p : words(v, ';')) {
            const auto xs = words(p);
            if (xs.size() != 3) throw ConfigError("geometry.particles: each particle is 'x y r'");
            c.geometry.particles.push_back(
                {Vec2(to_double("geometry.particles", xs[0]), to_double("geometry.particles", xs[1])),
                 to_double("geometry.particles", xs[2])});
          }
        },
        [](const RunConfig& c) {
          std::string s;
          for (const auto& p : c.geometry.particles)
            s += (s.empty() ? "" : "; ") + fmt(p.center(0)) + " " + fmt(p.center(1)) + " " + fmt(p.radius);
          return s;
        }};

    real("matrix.E", [](RunConfig& c) -> double& { return c.materials.matrix.E; });
    real("matrix.nu", [](RunConfig& c) -> double& { return c.materials.matrix.nu; });
    real("matrix.M0", [](RunConfig& c) -> double& { return c.materials.matrix.M0; });
    real("matrix.h", [](RunConfig& c) -> double& { return c.materials.matrix.h; });
    real("matrix.m", [](RunConfig& c) -> double& { return c.materials.matrix.m; });
    real("particle.E", [](RunConfig& c) -> double& { return c.materials.particle.E; });
    real("particle.nu", [](RunConfig& c) -> double& { return c.materials.particle.nu; });

    real("solver.tol_newton", [](RunConfig& c) -> double& { return c.solver.tol_newton; });
    integer("solver.max_iter", [](RunConfig& c) -> int& { return c.solver.max_iter; });
    integer("solver.max_bisections", [](RunConfig& c) -> int& { return c.solver.max_bisections; });
    real("solver.min_step", [](RunConfig& c) -> double& { return c.solver.min_step; });

    integer("loading.increments", [](RunConfig& c) -> int& { return c.loading.increments; });
    integer("loading.cyclic_train", [](RunConfig& c) -> int& { return c.loading.cyclic_train; });
    integer("loading.random_train", [](RunConfig& c) -> int& { return c.loading.random_train; });
    integer("loading.cyclic_val", [](RunConfig& c) -> int& { return c.loading.cyclic_val; });
    integer("loading.random_val", [](RunConfig& c) -> int& { return c.loading.random_val; });
    real("loading.cyclic_amplitude", [](RunConfig& c) -> double& { return c.loading.cyclic_amplitude; });
    real("loading.random_step", [](RunConfig& c) -> double& { return c.loading.random_step; });
    integer("loading.seed", [](RunConfig& c) -> std::uint64_t& { return c.loading.seed; });
    t["loading.targets"] = {
        [](RunConfig& c, const std::string& v) {
          c.loading.targets.clear();
          for (const auto& p : words(v, ';')) {
            const auto xs = words(p);
            if (xs.size() != 2) throw ConfigError("loading.targets: each target is 'U11 U12'");
            c.loading.targets.emplace_back(to_double("loading.targets", xs[0]), to_double("loading.targets", xs[1]));
          }
        },
        [](const RunConfig& c) {
          std::string s;
          for (auto [a, b] : c.loading.targets) s += (s.empty() ? "" : "; ") + fmt(a) + " " + fmt(b);
          return s;
        }};

    integer("pod.n_b", [](RunConfig& c) -> int& { return c.pod.n_b; });
    integer("pod.stride", [](RunConfig& c) -> int& { return c.pod.stride; });

    integer("rnn.d_in", [](RunConfig& c) -> int& { return c.rnn.d_in; });
    integer("rnn.d_h", [](RunConfig& c) -> int& { return c.rnn.d_h; });
    integer("rnn.d_out", [](RunConfig& c) -> int& { return c.rnn.d_out; });

    integer("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    real("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("train.lr_final", [](RunConfig& c) -> double& { return c.train.lr_final; });
    real("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
    real("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
    real("train.eps", [](RunConfig& c) -> double& { return c.train.eps; });
    integer("train.switch_every", [](RunConfig& c) -> int& { return c.train.switch_every; });
    real("train.hidden_init", [](RunConfig& c) -> double& { return c.train.hidden_init; });
    real("train.leaky_slope", [](RunConfig& c) -> double& { return c.train.leaky_slope; });
    real("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; });
    integer("train.log_every", [](RunConfig& c) -> int& { return c.train.log_every; });
    real("train.stop_below", [](RunConfig& c) -> double& { return c.train.stop_below; });
    integer("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    t["train.loss_space"] = {
        [](RunConfig& c, const std::string& v) {
          if (v == "normalized") c.train.loss_space = LossSpace::normalized;
          else if (v == "raw") c.train.loss_space = LossSpace::raw;
          else throw ConfigError("train.loss_space: expected 'normalized' or 'raw'");
        },
        [](const RunConfig& c) { return std::string(c.train.loss_space == LossSpace::raw ? "raw" : "normalized"); }};

    int_list("sweep.d_in", [](RunConfig& c) -> std::vector<int>& { return c.sweep.d_in; });
    int_list("sweep.d_h", [](RunConfig& c) -> std::vector<int>& { return c.sweep.d_h; });
    int_list("sweep.d_out", [](RunConfig& c) -> std::vector<int>& { return c.sweep.d_out; });
    integer("sweep.epochs", [](RunConfig& c) -> int& { return c.sweep.epochs; });

    int_list("output.lambda_increments", [](RunConfig& c) -> std::vector<int>& { return c.lambda_increments; });
    t["paths.data"] = {[](RunConfig& c, const std::string& v) { c.data_dir = v; },
                       [](const RunConfig& c) { return c.data_dir; }};
    return t;
  }();
  return table;
}

} // namespace detail

inline std::string RunConfig::canonical() const {
  std::string s;
  for (const auto& [key, b] : detail::bindings())
    if (key != "paths.data") s += key + " = " + b.get(*this) + "\n";
  return s;
}

/// Applies one setting.
inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& table = detail::bindings();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(c, detail::trim(value));
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig c;
  std::string section, line;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source + ":" + std::to_string(no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set_option(c, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open configuration file " + file);
  return parse_config(in, file);
}

} // namespace rvemor
