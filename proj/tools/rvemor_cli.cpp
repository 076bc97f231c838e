// rvemor: offline/online pipeline for POD + RNN reduced RVE simulations.
//
//   rvemor dns       [--set train|validation|all] [--path file.csv [--name n]]
//   rvemor pod-build
//   rvemor pod-run   [--set ...] [--path ...]
//   rvemor train
//   rvemor rnn-run   [--set ...] [--path ...]
//   rvemor compare   [--set ...]
//   rvemor sweep
//
// Common flags: --config <file> --seed <u64> --out <dir> --threads <n>.
// Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
// 4 data mismatch.

#include "rvemor/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace rvemor;
using pipeline::Context;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  std::string set;
  std::string path;
  std::string name;
};

Context make_context(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) {
    cfg.loading.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.threads < 1) throw ConfigError("--threads must be at least 1");
  return Context(cfg, o.out.empty() ? cfg.data_dir : o.out, o.threads);
}

std::optional<pipeline::Simulation> custom(const Options& o) {
  if (o.path.empty()) return std::nullopt;
  if (!o.set.empty()) throw ConfigError("--set and --path are mutually exclusive");
  return pipeline::custom_simulation(o.path, o.name);
}

pipeline::Set set_or(const Options& o, pipeline::Set fallback) {
  return o.set.empty() ? fallback : pipeline::parse_set(o.set);
}

int run(const std::string& command, const Options& o) {
  Context ctx = make_context(o);
  if (command == "dns") {
    const auto summary = pipeline::cmd_dns(ctx, set_or(o, pipeline::Set::all), custom(o));
    if (summary.failures() > 0) {
      std::cerr << summary.failures() << " of " << summary.runs.size() << " simulations failed\n";
      return 3;
    }
  } else if (command == "pod-build") {
    pipeline::cmd_pod_build(ctx);
  } else if (command == "pod-run") {
    pipeline::cmd_pod_run(ctx, set_or(o, pipeline::Set::validation), custom(o));
  } else if (command == "train") {
    pipeline::cmd_train(ctx);
  } else if (command == "rnn-run") {
    pipeline::cmd_rnn_run(ctx, set_or(o, pipeline::Set::validation), custom(o));
  } else if (command == "compare") {
    const auto rows = pipeline::cmd_compare(ctx, set_or(o, pipeline::Set::validation));
    std::ifstream rep(ctx.out / "compare" / "report.txt");
    std::cout << rep.rdbuf();
  } else if (command == "sweep") {
    pipeline::cmd_sweep(ctx);
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"POD and RNN reduced-order simulation of elastoplastic RVEs"};
  app.require_subcommand(1, 1);
  Options o;
  app.add_option("--config", o.config, "key = value configuration file");
  app.add_option("--seed", o.seed, "seed for random load paths and network initialization");
  app.add_option("--out", o.out, "data directory (default: paths.data)");
  app.add_option("--threads", o.threads, "worker threads for batch simulations");

  auto sub = [&](const std::string& name, const std::string& help, bool sets, bool paths) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    if (sets) s->add_option("--set", o.set, "train, validation or all");
    if (paths) {
      s->add_option("--path", o.path, "run a single load path from a CSV (inc,U11,U22,U12)");
      s->add_option("--name", o.name, "output name for --path (default: file stem)");
    }
    return s;
  };
  sub("dns", "full-order simulations; writes fields, stresses and the snapshot store", true, true);
  sub("pod-build", "POD basis from the snapshot store", false, false);
  sub("pod-run", "conventional reduced simulations", true, true);
  sub("train", "train the recurrent surrogate on projected dns coefficients", false, false);
  sub("rnn-run", "equation-free online simulations with the trained surrogate", true, true);
  sub("compare", "error report and timing table for dns, MOR and RNN-MOR", true, false);
  sub("sweep", "hyper-parameter sweep over network sizes", false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const NonConvergenceError& e) {
    std::cerr << "not converged: " << e.what() << '\n';
    return 3;
  } catch (const InversionError& e) {
    std::cerr << "not converged: " << e.what() << '\n';
    return 3;
  } catch (const DataMismatchError& e) {
    std::cerr << "data mismatch: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
