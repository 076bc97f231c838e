#include "rvemor/config.hpp"
#include "rvemor/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace rvemor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("rvemor-io-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void truncate_file(const fs::path& f, std::uintmax_t drop) { fs::resize_file(f, fs::file_size(f) - drop); }

void corrupt_magic(const fs::path& f) {
  std::fstream io(f, std::ios::in | std::ios::out | std::ios::binary);
  io.seekp(0);
  io.put('X');
}

Discretization small_disc(int n = 4) {
  GeometryConfig g = GeometryConfig::desk_default();
  g.n = n;
  g.particles.clear();
  return Discretization(build_rve_mesh(g));
}

} // namespace

TEST(Io, DoublesRoundTripExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, 40.0 * u(rng));
    EXPECT_EQ(io::parse_double(io::format_double(x)), x);
  }
  EXPECT_EQ(io::parse_double(io::format_double(0.1)), 0.1);
  EXPECT_THROW(io::parse_double("1.0x"), DataMismatchError);
  EXPECT_THROW(io::parse_double(""), DataMismatchError);
}

TEST(Io, SnapshotRoundTrip) {
  const fs::path d = scratch("snap");
  SnapshotSet s;
  s.U = random_matrix(7, 5, 1);
  s.mesh_fingerprint = 0xdeadbeef01234567ull;
  for (int j = 0; j < 5; ++j) s.meta.push_back({j % 2, j + 1, complete_stretch(1.0 + 0.01 * j, 0.02 * j)});
  io::save_snapshots(d / "s.bin", s);
  const SnapshotSet t = io::load_snapshots(d / "s.bin");
  EXPECT_EQ(t.U, s.U);
  EXPECT_EQ(t.mesh_fingerprint, s.mesh_fingerprint);
  ASSERT_EQ(t.meta.size(), 5u);
  for (int j = 0; j < 5; ++j) {
    EXPECT_EQ(t.meta[j].simulation, s.meta[j].simulation);
    EXPECT_EQ(t.meta[j].increment, s.meta[j].increment);
    EXPECT_EQ(t.meta[j].U.U22, s.meta[j].U.U22);
  }
}

TEST(Io, EmptySnapshotStoreRoundTrips) {
  const fs::path d = scratch("snap-empty");
  SnapshotSet s;
  s.U.resize(12, 0);
  io::save_snapshots(d / "s.bin", s);
  EXPECT_EQ(io::load_snapshots(d / "s.bin").n_t(), 0);
}

TEST(Io, CorruptBinaryFilesAreRejected) {
  const fs::path d = scratch("corrupt");
  SnapshotSet s;
  s.U = random_matrix(6, 3, 2);
  for (int j = 0; j < 3; ++j) s.meta.push_back({0, j + 1, MacroStretch{}});
  io::save_snapshots(d / "a.bin", s);
  io::save_snapshots(d / "b.bin", s);
  truncate_file(d / "a.bin", 8);
  EXPECT_THROW(io::load_snapshots(d / "a.bin"), DataMismatchError);
  corrupt_magic(d / "b.bin");
  EXPECT_THROW(io::load_snapshots(d / "b.bin"), DataMismatchError);
  {
    std::ofstream out(d / "b.bin", std::ios::app | std::ios::binary);
    out << "tail";
  }
  EXPECT_THROW(io::load_snapshots(d / "b.bin"), DataMismatchError);
  EXPECT_THROW(io::load_snapshots(d / "missing.bin"), ConfigError);
}

TEST(Io, BasisRoundTripAndMeshCheck) {
  const fs::path d = scratch("basis");
  const Discretization disc = small_disc();
  SnapshotSet s;
  s.U = random_matrix(disc.n_dofs(), 6, 3);
  s.mesh_fingerprint = fingerprint(disc.mesh());
  for (int j = 0; j < 6; ++j) s.meta.push_back({0, j + 1, MacroStretch{}});
  const ReducedBasis b = build_basis(s, 4, disc.Psi());
  io::save_basis(d / "b.bin", b);
  const ReducedBasis c = io::load_basis(d / "b.bin", disc);
  EXPECT_EQ(c.Phi, b.Phi);
  EXPECT_EQ(c.singular_values, b.singular_values);
  EXPECT_EQ(c.fingerprint(), b.fingerprint());
  EXPECT_EQ(c.Psi, disc.Psi());
  EXPECT_THROW(io::load_basis(d / "b.bin", small_disc(5)), DataMismatchError);
  truncate_file(d / "b.bin", 1);
  EXPECT_THROW(io::load_basis(d / "b.bin", disc), DataMismatchError);
}

TEST(Io, ModelRoundTripPredictsIdentically) {
  const fs::path d = scratch("model");
  RnnDims dims;
  dims.d_in = 3;
  dims.d_h = 4;
  dims.d_out = 5;
  dims.n_b = 6;
  RnnModel m = init_model(dims, 11);
  m.norm.in_mean = Eigen::Vector2d(1.01, 0.02);
  m.norm.out_scale = Eigen::VectorXd::LinSpaced(6, 0.1, 0.6);
  m.basis_fingerprint = 0x1234;
  m.hidden_init = -0.5;
  io::save_model(d / "m.bin", m);
  const RnnModel r = io::load_model(d / "m.bin");
  EXPECT_EQ(r.dims, m.dims);
  EXPECT_EQ(r.theta, m.theta);
  EXPECT_EQ(r.basis_fingerprint, m.basis_fingerprint);
  EXPECT_EQ(r.hidden_init, m.hidden_init);
  const Eigen::MatrixXd x = random_matrix(2, 9, 4);
  EXPECT_EQ(forward_sequence(x, r).alpha, forward_sequence(x, m).alpha);
  corrupt_magic(d / "m.bin");
  EXPECT_THROW(io::load_model(d / "m.bin"), DataMismatchError);
}

TEST(Io, CsvRoundTrips) {
  const fs::path d = scratch("csv");
  const LoadPath p = cyclic_path(1.1, 0.05, 6);
  io::write_path_csv(d / "path.csv", p);
  const LoadPath q = io::read_path_csv(d / "path.csv");
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_EQ(q.increments[k].U11, p.increments[k].U11);
    EXPECT_EQ(q.increments[k].U12, p.increments[k].U12);
  }
  std::vector<Mat3> P;
  for (std::size_t k = 0; k < p.size(); ++k) {
    Mat3 m = Mat3::Zero();
    m.topLeftCorner<2, 2>() = random_matrix(2, 2, k);
    P.push_back(m);
  }
  io::write_stress_csv(d / "stress.csv", p, P);
  const auto R = io::read_stress_csv(d / "stress.csv");
  ASSERT_EQ(R.size(), P.size());
  for (std::size_t k = 0; k < P.size(); ++k) EXPECT_EQ(R[k], P[k]);

  const Eigen::MatrixXd a = random_matrix(3, 6, 9);
  io::write_coefficients_csv(d / "c.csv", a);
  EXPECT_EQ(io::read_coefficients_csv(d / "c.csv"), a);
  const Eigen::VectorXd l = random_matrix(8, 1, 10).cwiseAbs();
  io::write_lambda_csv(d / "l.csv", l);
  EXPECT_EQ(io::read_lambda_csv(d / "l.csv"), l);
  EXPECT_THROW(io::read_stress_csv(d / "l.csv"), DataMismatchError);
}

TEST(Io, PathCsvRejectsInadmissibleStretch) {
  const fs::path d = scratch("badpath");
  {
    std::ofstream out(d / "p.csv");
    out << "inc,U11,U22,U12\n1,1.0,1.0,0.0\n2,1.3,0.7692307692307692,0.0\n";
  }
  EXPECT_THROW(io::read_path_csv(d / "p.csv"), ConfigError);
  {
    std::ofstream out(d / "q.csv");
    out << "inc,U11,U22,U12\n1,1.1,1.1,0.0\n";
  }
  EXPECT_THROW(io::read_path_csv(d / "q.csv"), ConfigError);
  {
    std::ofstream out(d / "r.csv");
    out << "inc,U11,U12\n1,1.0,0.0\n";
  }
  EXPECT_THROW(io::read_path_csv(d / "r.csv"), DataMismatchError);
}

TEST(Config, DefaultsValidateAndCanonicalListsEveryKey) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  const std::string s = c.canonical();
  for (const char* key : {"geometry.n = 16", "pod.n_b = 20", "rnn.d_h = 128", "train.learning_rate = 0.001",
                          "train.beta2 = 0.999", "train.hidden_init = -1", "matrix.M0 = 0.01", "particle.E = 20"})
    EXPECT_NE(s.find(key), std::string::npos) << key;
  EXPECT_EQ(c.model_dims().n_b, 20);
}

TEST(Config, SectionsCommentsAndOverrides) {
  std::istringstream in("# comment\n"
                        "geometry.n = 8   # trailing\n"
                        "[loading]\n"
                        "increments = 40\n"
                        "targets = 1.1 0.0; 1.0 0.1\n"
                        "[train]\n"
                        "loss_space = normalized\n"
                        "[]\n"
                        "pod.n_b = 7\n"
                        "geometry.particles = 0.5 0.5 0.2\n");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.geometry.n, 8);
  EXPECT_EQ(c.loading.increments, 40);
  ASSERT_EQ(c.loading.targets.size(), 2u);
  EXPECT_EQ(c.loading.targets[1].second, 0.1);
  EXPECT_EQ(c.train.loss_space, LossSpace::normalized);
  EXPECT_EQ(c.pod.n_b, 7);
  ASSERT_EQ(c.geometry.particles.size(), 1u);
  EXPECT_EQ(c.geometry.particles[0].radius, 0.2);
  EXPECT_EQ(c.lambda_at(), (std::vector<int>{10, 20, 30, 40}));

  // canonical text parses back to the same configuration
  std::istringstream again(c.canonical());
  EXPECT_EQ(parse_config(again).hash(), c.hash());
}

TEST(Config, ErrorsNameTheLine) {
  auto fails_at = [](const std::string& text, const std::string& where) {
    std::istringstream in(text);
    try {
      parse_config(in, "run.cfg");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  fails_at("geometry.n = 8\nnot.a.key = 1\n", "run.cfg:2");
  fails_at("geometry.n = eight\n", "run.cfg:1");
  fails_at("\n\ngeometry.n\n", "run.cfg:3");
  fails_at("[loading\n", "run.cfg:1");
  fails_at("train.loss_space = l1\n", "run.cfg:1");
  fails_at("loading.targets = 1.0\n", "run.cfg:1");

  std::istringstream bad("loading.increments = 7\n");
  EXPECT_THROW(parse_config(bad), ConfigError);
  std::istringstream neg("train.learning_rate = -1\n");
  EXPECT_THROW(parse_config(neg), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, HashTracksEveryChange) {
  RunConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  set_option(b, "train.seed", "2");
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  set_option(b, "paths.data", "elsewhere");
  EXPECT_EQ(a.hash(), b.hash()); // output location is not part of the experiment
  EXPECT_THROW(set_option(b, "pod.nb", "3"), ConfigError);
}
