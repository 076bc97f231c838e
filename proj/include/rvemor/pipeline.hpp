#pragma once

// The offline/online pipeline behind the command-line tool. Every command
// reads its inputs from and writes its outputs to one data directory:
//
//   manifest.json, config.txt, dataset.csv
//   dns/<run>/      path.csv stress.csv fields.bin(+.meta.csv) lambda_<inc>.csv timing.csv
//   snapshots.bin   (+ .meta.csv)  training fluctuations, merged
//   basis.bin, singular_values.csv
//   pod/<run>/      stress.csv coefficients.csv lambda_<inc>.csv timing.csv
//   model.bin, loss.csv
//   rnn/<run>/      stress.csv coefficients.csv residual.csv lambda_<inc>.csv timing.csv
//   compare/        errors.csv timing.csv coefficient_mse_<run>.csv lambda_diff_*.csv report.txt
//   sweep.csv

#include "rvemor/config.hpp"
#include "rvemor/errors.hpp"
#include "rvemor/fem.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/instrumentation.hpp"
#include "rvemor/io.hpp"
#include "rvemor/loading.hpp"
#include "rvemor/pod.hpp"
#include "rvemor/rnn.hpp"
#include "rvemor/surrogate.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace rvemor::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset

enum class Set { train, validation, all };

inline Set parse_set(const std::string& s) {
  if (s == "train") return Set::train;
  if (s == "validation") return Set::validation;
  if (s == "all") return Set::all;
  throw ConfigError("unknown simulation set '" + s + "' (train, validation, all)");
}

struct Simulation {
  int id = 0;
  std::string name;
  bool training = true;
  PathKind kind = PathKind::cyclic;
  double target_U11 = 1.0, target_U12 = 0.0;
  std::uint64_t seed = 0;
  LoadPath path;
};

/// Training and validation simulations of a configuration. Validation rays
/// lie between training rays; validation walks use their own seed range.
inline std::vector<Simulation> dataset(const RunConfig& cfg) {
  const LoadingConfig& l = cfg.loading;
  std::vector<Simulation> sims;
  auto cyclic = [&](bool training, int index, std::pair<double, double> t) {
    Simulation s;
    s.id = static_cast<int>(sims.size());
    s.training = training;
    s.kind = PathKind::cyclic;
    s.target_U11 = t.first;
    s.target_U12 = t.second;
    s.path = cyclic_path(t.first, t.second, l.increments);
    std::ostringstream os;
    os << (training ? "train" : "val") << "-cyclic-" << std::setw(3) << std::setfill('0') << index;
    s.name = os.str();
    sims.push_back(std::move(s));
  };
  auto random = [&](bool training, int index) {
    Simulation s;
    s.id = static_cast<int>(sims.size());
    s.training = training;
    s.kind = PathKind::random;
    s.seed = l.seed + (training ? 0u : 1000000u) + static_cast<std::uint64_t>(index);
    s.path = random_path(l.random_step, l.increments, s.seed);
    std::ostringstream os;
    os << (training ? "train" : "val") << "-random-" << std::setw(3) << std::setfill('0') << index;
    s.name = os.str();
    sims.push_back(std::move(s));
  };
  const auto train_targets = l.targets.empty() ? cyclic_fan(l.cyclic_train, l.cyclic_amplitude) : l.targets;
  for (std::size_t i = 0; i < train_targets.size(); ++i) cyclic(true, static_cast<int>(i), train_targets[i]);
  for (int i = 0; i < l.random_train; ++i) random(true, i);
  const int n_rays = std::max<int>(1, static_cast<int>(train_targets.size()));
  const auto val_targets = cyclic_fan(l.cyclic_val, l.cyclic_amplitude, std::numbers::pi / n_rays);
  for (std::size_t i = 0; i < val_targets.size(); ++i) cyclic(false, static_cast<int>(i), val_targets[i]);
  for (int i = 0; i < l.random_val; ++i) random(false, i);
  return sims;
}

inline std::vector<Simulation> select(const std::vector<Simulation>& sims, Set set) {
  std::vector<Simulation> out;
  for (const auto& s : sims)
    if (set == Set::all || (set == Set::train) == s.training) out.push_back(s);
  return out;
}

/// A single user-supplied path (CSV) run under its own name.
inline Simulation custom_simulation(const fs::path& csv, const std::string& name) {
  Simulation s;
  s.id = 0;
  s.training = false;
  s.path = io::read_path_csv(csv);
  s.name = name.empty() ? csv.stem().string() : name;
  if (s.path.size() == 0) throw ConfigError(csv.string() + ": empty load path");
  return s;
}

// ---------------------------------------------------------------------------
// Manifest: every written file with its content hash, the command that wrote
// it, the configuration hash and the hashes of the files it was built from.
// Timing files are recorded without a hash (wall-clock values vary).

class Manifest {
public:
  explicit Manifest(fs::path root) : root_(std::move(root)) {
    const fs::path f = root_ / "manifest.json";
    if (fs::exists(f)) {
      std::ifstream in(f);
      try {
        doc_ = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw DataMismatchError(f.string() + ": " + e.what());
      }
    }
    if (!doc_.is_object() || !doc_.contains("artifacts")) doc_ = {{"format", "rvemor-manifest-1"}, {"artifacts", nlohmann::json::object()}};
  }

  std::string rel(const fs::path& p) const { return fs::relative(p, root_).generic_string(); }

  void record(const fs::path& file, const std::string& kind, const std::string& command, std::uint64_t config_hash,
              const std::vector<fs::path>& inputs = {}, bool is_volatile = false) {
    nlohmann::json e;
    e["kind"] = kind;
    e["command"] = command;
    e["config"] = hex64(config_hash);
    if (is_volatile)
      e["volatile"] = true;
    else
      e["hash"] = hex64(io::file_digest(file));
    std::lock_guard lock(mutex_);
    nlohmann::json in = nlohmann::json::object();
    for (const auto& p : inputs) in[rel(p)] = hash_of(p);
    e["inputs"] = in;
    doc_["artifacts"][rel(file)] = e;
  }

  const nlohmann::json& document() const { return doc_; }

  void save() const {
    fs::create_directories(root_);
    std::ofstream out(root_ / "manifest.json");
    out << doc_.dump(1) << '\n';
    if (!out) throw ConfigError("cannot write " + (root_ / "manifest.json").string());
  }

private:
  /// Hash recorded for an artifact, or the file's current digest.
  std::string hash_of(const fs::path& p) const {
    const std::string r = rel(p);
    const auto& a = doc_["artifacts"];
    if (a.contains(r) && a[r].contains("hash")) return a[r]["hash"];
    return hex64(io::file_digest(p));
  }

  fs::path root_;
  nlohmann::json doc_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Helpers

struct Context {
  RunConfig cfg;
  fs::path out;
  int threads = 1;
  std::ostream* log = &std::clog;

  Context(RunConfig c, fs::path o, int t = 1) : cfg(std::move(c)), out(std::move(o)), threads(std::max(1, t)) {
    cfg.validate();
  }
  Discretization discretization() const { return Discretization(build_rve_mesh(cfg.geometry)); }
  void say(const std::string& msg) const {
    if (log) *log << msg << '\n';
  }
};

inline fs::path run_dir(const Context& ctx, const std::string& method, const Simulation& s) {
  return ctx.out / method / s.name;
}

/// Runs task(i) for i in [0, n) on up to `threads` workers; the first error
/// per task is returned, not thrown.
inline std::vector<std::exception_ptr> parallel_for(int n, int threads, const std::function<void(int)>& task) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i; (i = next++) < n;) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int k = std::min(threads, n);
  if (k <= 1) {
    worker();
    return errors;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return errors;
}

inline std::string message_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

struct Timing {
  std::string method;
  std::string run;
  int increments = 0;
  double seconds = 0.0;
  Counters work;

  double per_increment() const { return increments > 0 ? seconds / increments : 0.0; }
};

inline void write_timing(const fs::path& file, const std::vector<Timing>& rows) {
  io::Csv csv(file, {"method", "run", "increments", "seconds", "seconds_per_increment", "linear_solves",
                     "stress_updates", "assemblies"});
  for (const auto& t : rows)
    csv.row(t.method, t.run, t.increments, t.seconds, t.per_increment(), t.work.linear_solves, t.work.stress_updates,
            t.work.assemblies);
  csv.close();
}

inline Timing read_timing(const fs::path& file) {
  const auto lines = io::detail::read_lines(file);
  if (lines.size() != 2) throw DataMismatchError(file.string() + ": expected one timing row");
  const auto c = io::split(lines[1]);
  if (c.size() != 8) throw DataMismatchError(file.string() + ": bad timing row");
  Timing t;
  t.method = std::string(c[0]);
  t.run = std::string(c[1]);
  t.increments = static_cast<int>(io::parse_double(c[2]));
  t.seconds = io::parse_double(c[3]);
  t.work.linear_solves = static_cast<std::uint64_t>(io::parse_double(c[5]));
  t.work.stress_updates = static_cast<std::uint64_t>(io::parse_double(c[6]));
  t.work.assemblies = static_cast<std::uint64_t>(io::parse_double(c[7]));
  return t;
}

inline std::string quoted(std::string s) {
  for (char& ch : s)
    if (ch == '"' || ch == '\n') ch = '\'';
  return "\"" + s + "\"";
}

inline fs::path lambda_file(const fs::path& dir, int inc) { return dir / ("lambda_" + std::to_string(inc) + ".csv"); }

inline void write_common_files(Context& ctx, Manifest& man, const std::string& command) {
  fs::create_directories(ctx.out);
  {
    std::ofstream out(ctx.out / "config.txt");
    out << ctx.cfg.canonical();
  }
  {
    io::Csv csv(ctx.out / "dataset.csv",
                {"id", "name", "set", "kind", "target_U11", "target_U12", "seed", "increments"});
    for (const auto& s : dataset(ctx.cfg))
      csv.row(s.id, s.name, std::string(s.training ? "train" : "validation"), std::string(to_string(s.kind)),
              s.target_U11, s.target_U12, s.seed, static_cast<int>(s.path.size()));
    csv.close();
  }
  man.record(ctx.out / "config.txt", "config", command, ctx.cfg.hash());
  man.record(ctx.out / "dataset.csv", "dataset", command, ctx.cfg.hash(), {ctx.out / "config.txt"});
}

/// The part of a canonical configuration that determines the dns data:
/// geometry, materials, solver and loading. Later stages may change freely.
inline std::string data_settings(const std::string& canonical) {
  static const char* prefixes[] = {"geometry.", "matrix.", "particle.", "solver.", "loading."};
  std::istringstream in(canonical);
  std::string line, kept;
  while (std::getline(in, line))
    for (const char* p : prefixes)
      if (line.rfind(p, 0) == 0) {
        kept += line + '\n';
        break;
      }
  return kept;
}

/// Check the configuration matches the one the data directory was built with.
inline void require_same_config(const Context& ctx) {
  const fs::path f = ctx.out / "config.txt";
  if (!fs::exists(f)) throw ConfigError("no config.txt in " + ctx.out.string() + "; run 'dns' first");
  std::ifstream in(f);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string have = data_settings(ss.str()), want = data_settings(ctx.cfg.canonical());
  if (have == want) return;
  std::istringstream a(have), b(want);
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb) && la == lb) {
  }
  throw DataMismatchError("configuration differs from the one that produced " + ctx.out.string() + " (data has '" +
                          la + "', configured '" + lb + "')");
}

inline void require_file(const fs::path& f, const std::string& hint) {
  if (!fs::exists(f)) throw ConfigError("missing " + f.string() + " (" + hint + ")");
}

// ---------------------------------------------------------------------------
// dns

struct RunStatus {
  std::string name;
  bool ok = false;
  std::string message;
  Timing timing;
};

struct DnsSummary {
  std::vector<RunStatus> runs;
  int failures() const {
    int n = 0;
    for (const auto& r : runs) n += !r.ok;
    return n;
  }
};

inline DnsSummary cmd_dns(Context& ctx, Set set = Set::all, const std::optional<Simulation>& custom = {}) {
  Manifest man(ctx.out);
  write_common_files(ctx, man, "dns");
  const Discretization disc = ctx.discretization();
  const std::vector<Simulation> sims = custom ? std::vector<Simulation>{*custom} : select(dataset(ctx.cfg), set);
  SolverConfig scfg = ctx.cfg.solver;
  scfg.keep_states_at = ctx.cfg.lambda_at(custom ? static_cast<int>(custom->path.size()) : 0);

  DnsSummary summary;
  summary.runs.resize(sims.size());
  std::vector<SnapshotSet> train_snaps(sims.size());
  std::mutex log_mutex;
  const auto errors = parallel_for(static_cast<int>(sims.size()), ctx.threads, [&](int i) {
    const Simulation& s = sims[i];
    RunStatus& st = summary.runs[i];
    st.name = s.name;
    const fs::path dir = run_dir(ctx, "dns", s);
    fs::create_directories(dir);
    io::write_path_csv(dir / "path.csv", s.path);
    const Counters before = counters();
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = solve_dns(s.path, disc, ctx.cfg.materials, scfg);
    st.timing = {"dns", s.name, static_cast<int>(run.size()),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), counters() - before};
    std::vector<Mat3> P;
    for (const auto& r : run) P.push_back(r.P_macro);
    io::write_stress_csv(dir / "stress.csv", s.path, P);
    SnapshotSet fields = collect_snapshots(run, s.path, disc, s.id, 1);
    io::save_snapshots(dir / "fields.bin", fields);
    for (int inc : scfg.keep_states_at) io::write_lambda_csv(lambda_file(dir, inc), lambda_field(run[inc - 1].states));
    write_timing(dir / "timing.csv", {st.timing});
    if (s.training && !custom) train_snaps[i] = std::move(fields);
    const std::vector<fs::path> in{ctx.out / "config.txt", dir / "path.csv"};
    man.record(dir / "path.csv", "load-path", "dns", ctx.cfg.hash(), {ctx.out / "config.txt"});
    man.record(dir / "stress.csv", "stress", "dns", ctx.cfg.hash(), in);
    man.record(dir / "fields.bin", "fields", "dns", ctx.cfg.hash(), in);
    man.record(io::snapshot_sidecar(dir / "fields.bin"), "fields-meta", "dns", ctx.cfg.hash(), in);
    for (int inc : scfg.keep_states_at) man.record(lambda_file(dir, inc), "lambda", "dns", ctx.cfg.hash(), in);
    man.record(dir / "timing.csv", "timing", "dns", ctx.cfg.hash(), in, true);
    st.ok = true;
    std::lock_guard lock(log_mutex);
    ctx.say("dns " + s.name + ": " + std::to_string(run.size()) + " increments in " +
            io::format_double(std::round(st.timing.seconds * 100) / 100) + " s");
  });
  for (std::size_t i = 0; i < sims.size(); ++i)
    if (errors[i]) {
      summary.runs[i].name = sims[i].name;
      summary.runs[i].ok = false;
      summary.runs[i].message = message_of(errors[i]);
      ctx.say("dns " + sims[i].name + " FAILED: " + summary.runs[i].message);
    }
  {
    io::Csv csv(ctx.out / "dns" / "status.csv", {"run", "ok", "message"});
    for (const auto& r : summary.runs) csv.row(r.name, r.ok ? 1 : 0, quoted(r.message));
    csv.close();
    man.record(ctx.out / "dns" / "status.csv", "status", "dns", ctx.cfg.hash());
  }
  if (!custom && set != Set::validation) {
    std::vector<SnapshotSet> ok;
    for (std::size_t i = 0; i < sims.size(); ++i)
      if (sims[i].training && summary.runs[i].ok) ok.push_back(std::move(train_snaps[i]));
    SnapshotSet merged;
    if (ok.empty()) {
      merged.U.resize(disc.n_dofs(), 0);
      merged.mesh_fingerprint = fingerprint(disc.mesh());
    } else {
      merged = merge_snapshots(ok);
    }
    io::save_snapshots(ctx.out / "snapshots.bin", merged);
    std::vector<fs::path> in{ctx.out / "config.txt"};
    for (std::size_t i = 0; i < sims.size(); ++i)
      if (sims[i].training && summary.runs[i].ok) in.push_back(run_dir(ctx, "dns", sims[i]) / "fields.bin");
    man.record(ctx.out / "snapshots.bin", "snapshots", "dns", ctx.cfg.hash(), in);
    man.record(io::snapshot_sidecar(ctx.out / "snapshots.bin"), "snapshots-meta", "dns", ctx.cfg.hash(), in);
    ctx.say("snapshots: " + std::to_string(merged.n_t()) + " columns of length " + std::to_string(merged.n_u()));
  }
  man.save();
  return summary;
}

// ---------------------------------------------------------------------------
// pod-build

/// Columns whose 1-based increment is a multiple of the stride.
inline SnapshotSet every_nth_increment(const SnapshotSet& s, int stride) {
  if (stride == 1) return s;
  std::vector<Eigen::Index> keep;
  for (std::size_t j = 0; j < s.meta.size(); ++j)
    if (s.meta[j].increment % stride == 0) keep.push_back(static_cast<Eigen::Index>(j));
  SnapshotSet out;
  out.mesh_fingerprint = s.mesh_fingerprint;
  out.U = s.U(Eigen::all, keep);
  for (Eigen::Index j : keep) out.meta.push_back(s.meta[j]);
  return out;
}

inline ReducedBasis cmd_pod_build(Context& ctx) {
  require_same_config(ctx);
  const fs::path snap = ctx.out / "snapshots.bin";
  require_file(snap, "run 'dns' first");
  const Discretization disc = ctx.discretization();
  const SnapshotSet s = io::load_snapshots(snap);
  if (s.n_t() == 0) throw DataMismatchError("pod-build: the snapshot store is empty (no converged training runs)");
  if (s.mesh_fingerprint != fingerprint(disc.mesh()))
    throw DataMismatchError("snapshots were taken on mesh " + hex64(s.mesh_fingerprint) + ", configured mesh is " +
                            hex64(fingerprint(disc.mesh())));
  const ReducedBasis b = build_basis(every_nth_increment(s, ctx.cfg.pod.stride), ctx.cfg.pod.n_b, disc.Psi());
  io::save_basis(ctx.out / "basis.bin", b);
  {
    io::Csv csv(ctx.out / "singular_values.csv", {"index", "sigma", "captured_energy"});
    const double total = b.singular_values.squaredNorm();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b.singular_values.size(); ++i) {
      acc += b.singular_values(i) * b.singular_values(i);
      csv.row(static_cast<int>(i + 1), b.singular_values(i), total > 0 ? acc / total : 0.0);
    }
    csv.close();
  }
  Manifest man(ctx.out);
  man.record(ctx.out / "basis.bin", "basis", "pod-build", ctx.cfg.hash(), {snap});
  man.record(ctx.out / "singular_values.csv", "singular-values", "pod-build", ctx.cfg.hash(), {snap});
  man.save();
  ctx.say("basis: " + std::to_string(b.n_b()) + " modes from " + std::to_string(s.n_t()) + " snapshots, fingerprint " +
          hex64(b.fingerprint()));
  return b;
}

inline ReducedBasis load_basis(const Context& ctx, const Discretization& disc) {
  const fs::path f = ctx.out / "basis.bin";
  require_file(f, "run 'pod-build' first");
  ReducedBasis b = io::load_basis(f, disc);
  if (b.n_b() != ctx.cfg.pod.n_b)
    throw DataMismatchError("basis has " + std::to_string(b.n_b()) + " modes, configuration asks for " +
                            std::to_string(ctx.cfg.pod.n_b));
  return b;
}

// ---------------------------------------------------------------------------
// pod-run

inline std::vector<RunStatus> cmd_pod_run(Context& ctx, Set set = Set::validation,
                                          const std::optional<Simulation>& custom = {}) {
  require_same_config(ctx);
  const Discretization disc = ctx.discretization();
  const ReducedBasis basis = load_basis(ctx, disc);
  const std::vector<Simulation> sims = custom ? std::vector<Simulation>{*custom} : select(dataset(ctx.cfg), set);
  SolverConfig scfg = ctx.cfg.solver;
  scfg.keep_states_at = ctx.cfg.lambda_at(custom ? static_cast<int>(custom->path.size()) : 0);
  Manifest man(ctx.out);
  std::vector<RunStatus> status(sims.size());
  std::mutex log_mutex;
  const auto errors = parallel_for(static_cast<int>(sims.size()), ctx.threads, [&](int i) {
    const Simulation& s = sims[i];
    RunStatus& st = status[i];
    st.name = s.name;
    const fs::path dir = run_dir(ctx, "pod", s);
    fs::create_directories(dir);
    const Counters before = counters();
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = solve_reduced(s.path, basis, disc, ctx.cfg.materials, scfg);
    st.timing = {"mor", s.name, static_cast<int>(run.size()),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), counters() - before};
    const FieldTrace t = trace_of(run);
    io::write_stress_csv(dir / "stress.csv", s.path, t.P_macro);
    io::write_coefficients_csv(dir / "coefficients.csv", t.alpha);
    for (int inc : scfg.keep_states_at) io::write_lambda_csv(lambda_file(dir, inc), t.lambda.at(inc));
    write_timing(dir / "timing.csv", {st.timing});
    const std::vector<fs::path> in{ctx.out / "config.txt", ctx.out / "basis.bin"};
    man.record(dir / "stress.csv", "stress", "pod-run", ctx.cfg.hash(), in);
    man.record(dir / "coefficients.csv", "coefficients", "pod-run", ctx.cfg.hash(), in);
    for (int inc : scfg.keep_states_at) man.record(lambda_file(dir, inc), "lambda", "pod-run", ctx.cfg.hash(), in);
    man.record(dir / "timing.csv", "timing", "pod-run", ctx.cfg.hash(), in, true);
    st.ok = true;
    std::lock_guard lock(log_mutex);
    ctx.say("pod-run " + s.name + ": " + std::to_string(run.size()) + " increments, " +
            std::to_string(st.timing.work.linear_solves) + " solves");
  });
  man.save();
  for (std::size_t i = 0; i < sims.size(); ++i)
    if (errors[i]) std::rethrow_exception(errors[i]);
  return status;
}

// ---------------------------------------------------------------------------
// train / sweep

/// Sequences (U11, U12) -> alpha of the dns runs in a set, projected on the basis.
inline std::vector<SequenceSample> training_samples(const Context& ctx, const std::vector<Simulation>& sims,
                                                    const ReducedBasis& basis, std::vector<fs::path>* used = nullptr) {
  std::vector<SequenceSample> out;
  for (const auto& s : sims) {
    const fs::path f = run_dir(ctx, "dns", s) / "fields.bin";
    if (!fs::exists(f)) {
      ctx.say("skipping " + s.name + ": no dns fields");
      continue;
    }
    const SnapshotSet fields = io::load_snapshots(f);
    if (fields.n_t() != static_cast<int>(s.path.size()) || fields.n_u() != basis.n_u())
      throw DataMismatchError(f.string() + " does not match its load path or the basis");
    SequenceSample smp;
    smp.inputs = path_inputs(s.path);
    smp.targets = basis.Phi.transpose() * fields.U;
    out.push_back(std::move(smp));
    if (used) used->push_back(f);
  }
  return out;
}

struct TrainSummary {
  TrainResult result;
  std::vector<SequenceSample> train, validation;
};

inline TrainSummary cmd_train(Context& ctx) {
  require_same_config(ctx);
  const Discretization disc = ctx.discretization();
  const ReducedBasis basis = load_basis(ctx, disc);
  const auto sims = dataset(ctx.cfg);
  std::vector<fs::path> used{ctx.out / "config.txt", ctx.out / "basis.bin"};
  TrainSummary s;
  s.train = training_samples(ctx, select(sims, Set::train), basis, &used);
  s.validation = training_samples(ctx, select(sims, Set::validation), basis, &used);
  if (s.train.empty()) throw ConfigError("train: no training runs with dns fields in " + ctx.out.string());
  ctx.say("training on " + std::to_string(s.train.size()) + " sequences, validating on " +
          std::to_string(s.validation.size()));
  s.result = train(s.train, s.validation, ctx.cfg.model_dims(), ctx.cfg.train);
  s.result.model.basis_fingerprint = basis.fingerprint();
  io::save_model(ctx.out / "model.bin", s.result.model);
  io::write_loss_csv(ctx.out / "loss.csv", s.result.history);
  Manifest man(ctx.out);
  man.record(ctx.out / "model.bin", "model", "train", ctx.cfg.hash(), used);
  man.record(ctx.out / "loss.csv", "loss-history", "train", ctx.cfg.hash(), used);
  man.save();
  const auto& last = s.result.history.back();
  ctx.say("trained " + std::to_string(s.result.epochs_run) + " epochs in " +
          io::format_double(std::round(s.result.seconds * 10) / 10) + " s; train loss " + io::format_double(last.train) +
          ", validation loss " + io::format_double(last.validation));
  return s;
}

inline std::vector<SweepRow> cmd_sweep(Context& ctx) {
  require_same_config(ctx);
  const Discretization disc = ctx.discretization();
  const ReducedBasis basis = load_basis(ctx, disc);
  const auto sims = dataset(ctx.cfg);
  std::vector<fs::path> used{ctx.out / "config.txt", ctx.out / "basis.bin"};
  const auto tr = training_samples(ctx, select(sims, Set::train), basis, &used);
  const auto va = training_samples(ctx, select(sims, Set::validation), basis, &used);
  if (tr.empty()) throw ConfigError("sweep: no training runs with dns fields in " + ctx.out.string());
  TrainConfig tc = ctx.cfg.train;
  tc.epochs = ctx.cfg.sweep.epochs;
  const auto rows = hyper_sweep(ctx.cfg.sweep.d_in, ctx.cfg.sweep.d_h, ctx.cfg.sweep.d_out, tr, va, basis.n_b(), tc);
  io::Csv csv(ctx.out / "sweep.csv", {"d_in", "d_h", "d_out", "parameters", "train_loss", "val_loss", "error"});
  for (const auto& r : rows) {
    RnnDims d;
    d.d_in = r.d_in;
    d.d_h = r.d_h;
    d.d_out = r.d_out;
    d.n_b = basis.n_b();
    csv.row(r.d_in, r.d_h, r.d_out, static_cast<long long>(RnnLayout(d).size), r.train_loss, r.validation_loss,
            quoted(r.error));
  }
  csv.close();
  Manifest man(ctx.out);
  man.record(ctx.out / "sweep.csv", "sweep", "sweep", ctx.cfg.hash(), used);
  man.save();
  return rows;
}

// ---------------------------------------------------------------------------
// rnn-run

struct OnlineSummary {
  std::string name;
  OnlineResult result;
};

inline std::vector<OnlineSummary> cmd_rnn_run(Context& ctx, Set set = Set::validation,
                                              const std::optional<Simulation>& custom = {}) {
  require_same_config(ctx);
  const Discretization disc = ctx.discretization();
  const ReducedBasis basis = load_basis(ctx, disc);
  require_file(ctx.out / "model.bin", "run 'train' first");
  const RnnModel model = io::load_model(ctx.out / "model.bin");
  if (model.basis_fingerprint != basis.fingerprint())
    throw DataMismatchError("model.bin was trained on basis " + hex64(model.basis_fingerprint) + ", basis.bin is " +
                            hex64(basis.fingerprint()));
  const std::vector<Simulation> sims = custom ? std::vector<Simulation>{*custom} : select(dataset(ctx.cfg), set);
  OnlineConfig oc;
  oc.keep_states_at = ctx.cfg.lambda_at(custom ? static_cast<int>(custom->path.size()) : 0);
  Manifest man(ctx.out);
  std::vector<OnlineSummary> out;
  // sequential: online timings are the point of this command
  for (const auto& s : sims) {
    const fs::path dir = run_dir(ctx, "rnn", s);
    fs::create_directories(dir);
    OnlineSummary sum{s.name, run_online(s.path, basis, model, disc, ctx.cfg.materials, oc)};
    const OnlineResult& r = sum.result;
    const FieldTrace t = trace_of(r);
    io::write_stress_csv(dir / "stress.csv", s.path, t.P_macro);
    io::write_coefficients_csv(dir / "coefficients.csv", t.alpha);
    for (int inc : oc.keep_states_at) io::write_lambda_csv(lambda_file(dir, inc), t.lambda.at(inc));
    {
      io::Csv csv(dir / "residual.csv", {"inc", "residual", "force_scale"});
      for (std::size_t k = 0; k < r.increments.size(); ++k)
        csv.row(k + 1, r.increments[k].residual, r.increments[k].force_scale);
      csv.close();
    }
    write_timing(dir / "timing.csv", {{"rnn-mor", s.name, static_cast<int>(r.increments.size()), r.timing.total, r.work}});
    {
      io::Csv csv(dir / "stages.csv", {"stage", "seconds"});
      csv.row(std::string("predict"), r.timing.predict);
      csv.row(std::string("reconstruct"), r.timing.reconstruct);
      csv.row(std::string("stress"), r.timing.stress);
      csv.row(std::string("homogenize"), r.timing.homogenize);
      csv.row(std::string("diagnostics"), r.timing.diagnostics);
      csv.row(std::string("total"), r.timing.total);
      csv.close();
    }
    const std::vector<fs::path> in{ctx.out / "config.txt", ctx.out / "basis.bin", ctx.out / "model.bin"};
    for (const char* f : {"stress.csv", "coefficients.csv", "residual.csv"})
      man.record(dir / f, "online", "rnn-run", ctx.cfg.hash(), in);
    for (int inc : oc.keep_states_at) man.record(lambda_file(dir, inc), "lambda", "rnn-run", ctx.cfg.hash(), in);
    man.record(dir / "timing.csv", "timing", "rnn-run", ctx.cfg.hash(), in, true);
    man.record(dir / "stages.csv", "timing", "rnn-run", ctx.cfg.hash(), in, true);
    ctx.say("rnn-run " + s.name + ": " + std::to_string(r.increments.size()) + " increments, " +
            std::to_string(r.work.linear_solves) + " linear solves, " + std::to_string(r.work.stress_updates) +
            " stress updates, " + io::format_double(std::round(r.timing.total * 1000) / 1000) + " s");
    out.push_back(std::move(sum));
  }
  man.save();
  return out;
}

// ---------------------------------------------------------------------------
// compare

struct RunComparison {
  std::string name;
  PathKind kind = PathKind::cyclic;
  ErrorReport rnn_vs_dns, rnn_vs_mor, mor_vs_dns;
  ErrorDecomposition triangle;
  Timing dns, mor, rnn;
};

inline FieldTrace read_trace(const fs::path& dir, const std::string& method, const std::vector<int>& lambda_at,
                             const Eigen::MatrixXd* alpha = nullptr) {
  FieldTrace t;
  t.method = method;
  t.P_macro = io::read_stress_csv(dir / "stress.csv");
  if (alpha)
    t.alpha = *alpha;
  else if (fs::exists(dir / "coefficients.csv"))
    t.alpha = io::read_coefficients_csv(dir / "coefficients.csv");
  for (int inc : lambda_at)
    if (fs::exists(lambda_file(dir, inc))) t.lambda[inc] = io::read_lambda_csv(lambda_file(dir, inc));
  if (fs::exists(dir / "timing.csv")) {
    const Timing tm = read_timing(dir / "timing.csv");
    t.seconds = tm.seconds;
    t.work = tm.work;
  }
  return t;
}

inline std::vector<RunComparison> cmd_compare(Context& ctx, Set set = Set::validation) {
  require_same_config(ctx);
  const Discretization disc = ctx.discretization();
  const ReducedBasis basis = load_basis(ctx, disc);
  const auto lambda_at = ctx.cfg.lambda_at();
  const fs::path cdir = ctx.out / "compare";
  fs::create_directories(cdir);
  Manifest man(ctx.out);
  std::vector<RunComparison> out;
  std::vector<fs::path> inputs{ctx.out / "config.txt", ctx.out / "basis.bin"};
  for (const auto& s : select(dataset(ctx.cfg), set)) {
    const fs::path d_dns = run_dir(ctx, "dns", s), d_mor = run_dir(ctx, "pod", s), d_rnn = run_dir(ctx, "rnn", s);
    require_file(d_dns / "fields.bin", "run 'dns'");
    require_file(d_mor / "stress.csv", "run 'pod-run'");
    require_file(d_rnn / "stress.csv", "run 'rnn-run'");
    const SnapshotSet fields = io::load_snapshots(d_dns / "fields.bin");
    const Eigen::MatrixXd alpha_dns = basis.Phi.transpose() * fields.U;
    const FieldTrace dns = read_trace(d_dns, "dns", lambda_at, &alpha_dns);
    const FieldTrace mor = read_trace(d_mor, "mor", lambda_at);
    const FieldTrace rnn = read_trace(d_rnn, "rnn-mor", lambda_at);
    const std::vector<fs::path> run_inputs{d_dns / "fields.bin", d_dns / "stress.csv", d_mor / "stress.csv",
                                           d_mor / "coefficients.csv", d_rnn / "stress.csv", d_rnn / "coefficients.csv"};
    RunComparison c;
    c.name = s.name;
    c.kind = s.kind;
    c.rnn_vs_dns = compare_fields(rnn, dns);
    c.rnn_vs_mor = compare_fields(rnn, mor);
    c.mor_vs_dns = compare_fields(mor, dns);
    c.triangle = decompose_error(rnn, mor, dns);
    c.dns = read_timing(d_dns / "timing.csv");
    c.mor = read_timing(d_mor / "timing.csv");
    c.rnn = read_timing(d_rnn / "timing.csv");

    {
      io::Csv csv(cdir / ("coefficient_mse_" + s.name + ".csv"), {"inc", "rnn_vs_dns", "rnn_vs_mor", "mor_vs_dns"});
      for (std::size_t k = 0; k < c.rnn_vs_dns.coefficient_mse.size(); ++k)
        csv.row(k + 1, c.rnn_vs_dns.coefficient_mse[k], c.rnn_vs_mor.coefficient_mse[k], c.mor_vs_dns.coefficient_mse[k]);
      csv.close();
      man.record(cdir / ("coefficient_mse_" + s.name + ".csv"), "comparison", "compare", ctx.cfg.hash(), run_inputs);
    }
    for (const auto& [label, rep] : {std::pair{"rnn_dns", &c.rnn_vs_dns}, {"mor_dns", &c.mor_vs_dns}})
      for (const auto& [inc, diff] : rep->lambda_difference) {
        const fs::path f = cdir / ("lambda_diff_" + std::string(label) + "_" + s.name + "_" + std::to_string(inc) + ".csv");
        io::write_lambda_csv(f, diff);
        man.record(f, "lambda-difference", "compare", ctx.cfg.hash(), run_inputs);
      }
    inputs.insert(inputs.end(), run_inputs.begin(), run_inputs.end());
    out.push_back(std::move(c));
  }
  if (out.empty()) throw ConfigError("compare: no simulations in the selected set");

  {
    io::Csv csv(cdir / "errors.csv", {"run", "kind", "a", "b", "coefficient_error", "stress_error", "lambda_max_difference"});
    for (const auto& c : out)
      for (const ErrorReport* r : {&c.rnn_vs_dns, &c.rnn_vs_mor, &c.mor_vs_dns}) {
        double lmax = 0.0;
        for (const auto& [inc, v] : r->lambda_max_difference) lmax = std::max(lmax, v);
        csv.row(c.name, std::string(to_string(c.kind)), r->a, r->b, r->coefficient_error, r->stress_error, lmax);
      }
    csv.close();
    man.record(cdir / "errors.csv", "comparison", "compare", ctx.cfg.hash(), inputs);
  }
  {
    std::vector<Timing> rows;
    for (const auto& c : out) rows.insert(rows.end(), {c.dns, c.mor, c.rnn});
    write_timing(cdir / "timing.csv", rows);
    man.record(cdir / "timing.csv", "timing", "compare", ctx.cfg.hash(), inputs, true);
  }
  {
    std::ofstream rep(cdir / "report.txt");
    rep << "reference coefficient error at full scale: cyclic " << reference_cyclic_coefficient_error << ", random "
        << reference_random_coefficient_error << " (not desk-scale targets)\n\n";
    rep << "run                 rnn-vs-dns  rnn-vs-mor  mor-vs-dns  stress error (relative L2)   triangle\n";
    for (const auto& c : out) {
      char line[256];
      std::snprintf(line, sizeof line, "%-18s  %10.3e  %10.3e  %10.3e                              %s\n", c.name.c_str(),
                    c.rnn_vs_dns.stress_error, c.rnn_vs_mor.stress_error, c.mor_vs_dns.stress_error,
                    c.triangle.consistent ? "ok" : "VIOLATED");
      rep << line;
    }
    rep << "\nrun                 coefficient error (mean ||a - b||^2 per increment)\n";
    for (const auto& c : out) {
      char line[256];
      std::snprintf(line, sizeof line, "%-18s  rnn-vs-dns %10.3e  rnn-vs-mor %10.3e  mor-vs-dns %10.3e\n",
                    c.name.c_str(), c.rnn_vs_dns.coefficient_error, c.rnn_vs_mor.coefficient_error,
                    c.mor_vs_dns.coefficient_error);
      rep << line;
    }
    rep << "\nmethod   run                 s/increment   linear solves   stress updates\n";
    for (const auto& c : out)
      for (const Timing* t : {&c.dns, &c.mor, &c.rnn}) {
        char line[256];
        std::snprintf(line, sizeof line, "%-8s %-18s  %11.4e   %13llu   %14llu\n", t->method.c_str(), c.name.c_str(),
                      t->per_increment(), static_cast<unsigned long long>(t->work.linear_solves),
                      static_cast<unsigned long long>(t->work.stress_updates));
        rep << line;
      }
    rep.close();
    man.record(cdir / "report.txt", "report", "compare", ctx.cfg.hash(), inputs, true);
  }
  man.save();
  return out;
}

} // namespace rvemor::pipeline
