#pragma once

// Binary artifacts (snapshots, basis, model), CSV outputs and file digests.
// Binary payloads are 64-bit little-endian; CSV numbers use the shortest
// representation that round-trips.

#include "rvemor/errors.hpp"
#include "rvemor/fem.hpp"
#include "rvemor/hash.hpp"
#include "rvemor/loading.hpp"
#include "rvemor/pod.hpp"
#include "rvemor/rnn.hpp"

#include <Eigen/Dense>

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rvemor::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;

inline constexpr char snapshot_magic[] = "RVESNAP1";
inline constexpr char basis_magic[] = "RVEBAS01";
inline constexpr char model_magic[] = "RVERNN01";

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw DataMismatchError("not a number: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = line.find(sep, start);
    out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

/// FNV-1a digest of a file's bytes.
inline std::uint64_t file_digest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.add(std::as_bytes(std::span(buf, static_cast<std::size_t>(in.gcount()))));
  }
  return h.digest();
}

namespace detail {

inline std::ofstream open_out(const fs::path& file, bool binary) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ConfigError("cannot write " + file.string());
  return out;
}

inline std::ifstream open_in(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  return in;
}

class Writer {
public:
  explicit Writer(const fs::path& file) : file_(file), out_(open_out(file, true)) {}
  void magic(const char* m) { out_.write(m, 8); }
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
  template <class Derived>
  void block(const Eigen::DenseBase<Derived>& m) {
    const Eigen::MatrixXd tmp = m; // column-major
    out_.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(8 * tmp.size()));
  }
  void close() {
    out_.close();
    if (!out_) throw ConfigError("failed writing " + file_.string());
  }

private:
  fs::path file_;
  std::ofstream out_;
};

class Reader {
public:
  explicit Reader(const fs::path& file) : file_(file), in_(open_in(file)) {}
  void magic(const char* m) {
    char buf[8];
    raw(buf, 8);
    if (std::string_view(buf, 8) != std::string_view(m, 8))
      throw DataMismatchError(file_.string() + ": not a " + std::string(m, 8) + " file");
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  Eigen::MatrixXd block(std::uint64_t rows, std::uint64_t cols) {
    if (rows * cols > (std::uint64_t(1) << 34)) throw DataMismatchError(file_.string() + ": implausible block size");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    raw(m.data(), 8 * rows * cols);
    return m;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw DataMismatchError(file_.string() + ": trailing bytes");
  }

private:
  void raw(void* p, std::uint64_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) throw DataMismatchError(file_.string() + ": truncated");
  }
  fs::path file_;
  std::ifstream in_;
};

inline std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in = open_in(file);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    if (!l.empty()) lines.push_back(std::move(l));
  }
  return lines;
}

} // namespace detail

/// Simple CSV writer; numbers in round-trip precision.
class Csv {
public:
  Csv(const fs::path& file, std::initializer_list<std::string_view> header)
      : file_(file), out_(detail::open_out(file, false)) {
    row_strings(header);
  }
  Csv(const fs::path& file, const std::vector<std::string>& header) : file_(file), out_(detail::open_out(file, false)) {
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  template <class... T>
  void row(const T&... v) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(v), first = false), ...);
    out_ << '\n';
  }
  void row_values(const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << format_double(v[i]);
    out_ << '\n';
  }
  void close() {
    out_.close();
    if (!out_) throw ConfigError("failed writing " + file_.string());
  }

private:
  void row_strings(std::initializer_list<std::string_view> v) {
    bool first = true;
    for (auto s : v) {
      out_ << (first ? "" : ",") << s;
      first = false;
    }
    out_ << '\n';
  }
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(float v) { return format_double(v); }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) { return std::to_string(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }

  fs::path file_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Snapshots: magic, n_u, n_t, column-major block; metadata in a CSV sidecar
// whose first line carries the mesh fingerprint.

inline fs::path snapshot_sidecar(const fs::path& file) { return fs::path(file.string() + ".meta.csv"); }

inline void save_snapshots(const fs::path& file, const SnapshotSet& s) {
  if (static_cast<int>(s.meta.size()) != s.n_t()) throw DataMismatchError("snapshot metadata count differs from columns");
  detail::Writer w(file);
  w.magic(snapshot_magic);
  w.u64(static_cast<std::uint64_t>(s.n_u()));
  w.u64(static_cast<std::uint64_t>(s.n_t()));
  w.block(s.U);
  w.close();
  std::ofstream out = detail::open_out(snapshot_sidecar(file), false);
  out << "# mesh_fingerprint " << hex64(s.mesh_fingerprint) << '\n';
  out << "column,simulation,increment,U11,U22,U12\n";
  for (int j = 0; j < s.n_t(); ++j) {
    const SnapshotMeta& m = s.meta[j];
    out << j << ',' << m.simulation << ',' << m.increment << ',' << format_double(m.U.U11) << ','
        << format_double(m.U.U22) << ',' << format_double(m.U.U12) << '\n';
  }
  out.close();
  if (!out) throw ConfigError("failed writing " + snapshot_sidecar(file).string());
}

inline SnapshotSet load_snapshots(const fs::path& file) {
  detail::Reader r(file);
  r.magic(snapshot_magic);
  const std::uint64_t n_u = r.u64(), n_t = r.u64();
  SnapshotSet s;
  s.U = r.block(n_u, n_t);
  r.expect_end();
  const auto lines = detail::read_lines(snapshot_sidecar(file));
  const std::string tag = "# mesh_fingerprint ";
  if (lines.size() != n_t + 2 || lines[0].rfind(tag, 0) != 0)
    throw DataMismatchError(snapshot_sidecar(file).string() + ": metadata does not match the snapshot file");
  s.mesh_fingerprint = std::stoull(lines[0].substr(tag.size()), nullptr, 16);
  for (std::uint64_t j = 0; j < n_t; ++j) {
    const auto c = split(lines[j + 2]);
    if (c.size() != 6) throw DataMismatchError(snapshot_sidecar(file).string() + ": bad row");
    SnapshotMeta m;
    m.simulation = static_cast<int>(parse_double(c[1]));
    m.increment = static_cast<int>(parse_double(c[2]));
    m.U = MacroStretch{parse_double(c[3]), parse_double(c[4]), parse_double(c[5])};
    s.meta.push_back(m);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Basis: magic, n_u, n_b, n_sv, singular values, Phi (column-major), mesh
// fingerprint. Psi is rebuilt from the mesh.

inline void save_basis(const fs::path& file, const ReducedBasis& b) {
  detail::Writer w(file);
  w.magic(basis_magic);
  w.u64(static_cast<std::uint64_t>(b.n_u()));
  w.u64(static_cast<std::uint64_t>(b.n_b()));
  w.u64(static_cast<std::uint64_t>(b.singular_values.size()));
  w.block(b.singular_values);
  w.block(b.Phi);
  w.u64(b.mesh_fingerprint);
  w.close();
}

inline ReducedBasis load_basis(const fs::path& file, const Discretization& disc) {
  detail::Reader r(file);
  r.magic(basis_magic);
  const std::uint64_t n_u = r.u64(), n_b = r.u64(), n_sv = r.u64();
  ReducedBasis b;
  b.singular_values = r.block(n_sv, 1);
  b.Phi = r.block(n_u, n_b);
  b.mesh_fingerprint = r.u64();
  r.expect_end();
  const std::uint64_t mesh = fingerprint(disc.mesh());
  if (b.mesh_fingerprint != mesh || b.n_u() != disc.n_dofs())
    throw DataMismatchError("basis " + file.string() + " was built on mesh " + hex64(b.mesh_fingerprint) +
                            ", configured mesh is " + hex64(mesh));
  b.Psi = disc.Psi();
  return b;
}

// ---------------------------------------------------------------------------
// Model: magic, n_in, d_in, d_h, d_out, n_b, basis fingerprint, leaky slope,
// hidden init, normalization (in_mean, in_scale, out_mean, out_scale), then
// the parameter blocks W_i, b_i, W_g, R_zr, R_c, b_g, W_1, b_1, W_2, b_2.

inline void save_model(const fs::path& file, const RnnModel& m) {
  m.validate();
  detail::Writer w(file);
  w.magic(model_magic);
  for (int d : {m.dims.n_in, m.dims.d_in, m.dims.d_h, m.dims.d_out, m.dims.n_b}) w.u64(static_cast<std::uint64_t>(d));
  w.u64(m.basis_fingerprint);
  w.f64(m.leaky_slope);
  w.f64(m.hidden_init);
  w.block(m.norm.in_mean);
  w.block(m.norm.in_scale);
  w.block(m.norm.out_mean);
  w.block(m.norm.out_scale);
  w.block(m.theta);
  w.close();
}

inline RnnModel load_model(const fs::path& file) {
  detail::Reader r(file);
  r.magic(model_magic);
  RnnModel m;
  int* dims[] = {&m.dims.n_in, &m.dims.d_in, &m.dims.d_h, &m.dims.d_out, &m.dims.n_b};
  for (int* d : dims) {
    const std::uint64_t v = r.u64();
    if (v == 0 || v > (1u << 20)) throw DataMismatchError(file.string() + ": implausible model dimension");
    *d = static_cast<int>(v);
  }
  m.basis_fingerprint = r.u64();
  m.leaky_slope = r.f64();
  m.hidden_init = r.f64();
  m.norm.in_mean = r.block(m.dims.n_in, 1);
  m.norm.in_scale = r.block(m.dims.n_in, 1);
  m.norm.out_mean = r.block(m.dims.n_b, 1);
  m.norm.out_scale = r.block(m.dims.n_b, 1);
  m.theta = r.block(m.layout().size, 1);
  r.expect_end();
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// CSV outputs

inline void write_path_csv(const fs::path& file, const LoadPath& p) {
  Csv csv(file, {"inc", "U11", "U22", "U12"});
  for (std::size_t k = 0; k < p.size(); ++k) {
    const MacroStretch& U = p.increments[k];
    csv.row(k + 1, U.U11, U.U22, U.U12);
  }
  csv.close();
}

inline LoadPath read_path_csv(const fs::path& file) {
  const auto lines = detail::read_lines(file);
  if (lines.empty() || lines[0] != "inc,U11,U22,U12") throw DataMismatchError(file.string() + ": not a load-path CSV");
  LoadPath p;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i]);
    if (c.size() != 4 || parse_double(c[0]) != double(i)) throw DataMismatchError(file.string() + ": bad row " + std::to_string(i));
    const MacroStretch U{parse_double(c[1]), parse_double(c[2]), parse_double(c[3])};
    if (!U.within_bounds() || std::abs(U.det() - 1.0) > 1e-12)
      throw ConfigError(file.string() + ": row " + std::to_string(i) + " is not an admissible macro stretch");
    p.increments.push_back(U);
  }
  return p;
}

inline void write_stress_csv(const fs::path& file, const LoadPath& p, const std::vector<Mat3>& P) {
  if (P.size() != p.size()) throw DataMismatchError("stress history and path lengths differ");
  Csv csv(file, {"inc", "U11", "U22", "U12", "P11", "P22", "P12", "P21"});
  for (std::size_t k = 0; k < p.size(); ++k) {
    const MacroStretch& U = p.increments[k];
    csv.row(k + 1, U.U11, U.U22, U.U12, P[k](0, 0), P[k](1, 1), P[k](0, 1), P[k](1, 0));
  }
  csv.close();
}

inline std::vector<Mat3> read_stress_csv(const fs::path& file) {
  const auto lines = detail::read_lines(file);
  if (lines.empty() || lines[0] != "inc,U11,U22,U12,P11,P22,P12,P21")
    throw DataMismatchError(file.string() + ": not a stress CSV");
  std::vector<Mat3> P;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i]);
    if (c.size() != 8) throw DataMismatchError(file.string() + ": bad row " + std::to_string(i));
    Mat3 m = Mat3::Zero();
    m(0, 0) = parse_double(c[4]);
    m(1, 1) = parse_double(c[5]);
    m(0, 1) = parse_double(c[6]);
    m(1, 0) = parse_double(c[7]);
    P.push_back(m);
  }
  return P;
}

inline void write_lambda_csv(const fs::path& file, const Eigen::VectorXd& lambda) {
  Csv csv(file, {"element", "gp", "lambda"});
  for (Eigen::Index i = 0; i < lambda.size(); ++i) csv.row(i / QuadRule::size, i % QuadRule::size, lambda(i));
  csv.close();
}

inline Eigen::VectorXd read_lambda_csv(const fs::path& file) {
  const auto lines = detail::read_lines(file);
  if (lines.empty() || lines[0] != "element,gp,lambda") throw DataMismatchError(file.string() + ": not a lambda CSV");
  Eigen::VectorXd l(static_cast<Eigen::Index>(lines.size() - 1));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i]);
    if (c.size() != 3) throw DataMismatchError(file.string() + ": bad row " + std::to_string(i));
    l(static_cast<Eigen::Index>(i - 1)) = parse_double(c[2]);
  }
  return l;
}

/// Columns inc, a1..a_nb.
inline void write_coefficients_csv(const fs::path& file, const Eigen::MatrixXd& alpha) {
  std::vector<std::string> header{"inc"};
  for (Eigen::Index j = 0; j < alpha.rows(); ++j) header.push_back("a" + std::to_string(j + 1));
  Csv csv(file, header);
  for (Eigen::Index k = 0; k < alpha.cols(); ++k) {
    std::vector<double> row{double(k + 1)};
    for (Eigen::Index j = 0; j < alpha.rows(); ++j) row.push_back(alpha(j, k));
    csv.row_values(row);
  }
  csv.close();
}

inline Eigen::MatrixXd read_coefficients_csv(const fs::path& file) {
  const auto lines = detail::read_lines(file);
  if (lines.empty() || lines[0].rfind("inc", 0) != 0) throw DataMismatchError(file.string() + ": not a coefficient CSV");
  const std::size_t nb = split(lines[0]).size() - 1;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(lines.size() - 1));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i]);
    if (c.size() != nb + 1) throw DataMismatchError(file.string() + ": bad row " + std::to_string(i));
    for (std::size_t j = 0; j < nb; ++j) a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i - 1)) = parse_double(c[j + 1]);
  }
  return a;
}

inline void write_loss_csv(const fs::path& file, const std::vector<LossRecord>& history) {
  Csv csv(file, {"epoch", "train_loss", "val_loss"});
  for (const auto& h : history) csv.row(h.epoch, h.train, h.validation);
  csv.close();
}

} // namespace rvemor::io
