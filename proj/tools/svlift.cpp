// svlift: command-line front end for the lifted Volterra experiments.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "svlift/svlift.hpp"

namespace fs = std::filesystem;
using namespace svlift;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config '" + path + "': " + e.what());
  }
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << s;
}

int run(Experiment ex, const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  json doc = o.config.empty() ? json::object() : load_json(o.config);
  if (!doc.is_object()) throw InvalidArgument("config: expected a JSON object");
  if (doc.contains("experiment") && doc["experiment"] != to_string(ex))
    throw InvalidArgument("config: 'experiment' is '" + doc["experiment"].get<std::string>() +
                          "' but the subcommand is '" + to_string(ex) + "'");
  doc["experiment"] = to_string(ex);
  if (o.seed) doc["sim"]["seed"] = *o.seed;
  if (o.paths) doc["sim"]["n_paths"] = *o.paths;
  RunConfig cfg = parse_config(doc);
  if (o.threads) cfg.sim.threads = *o.threads;

  const auto res = run_experiment(cfg);
  const std::string hash = config_hash(doc);
  const fs::path dir = fs::path(o.out) / to_string(ex) / hash;
  fs::create_directories(dir);
  const std::string report = res.report.dump(2) + "\n";
  write_file(dir / "data.csv", res.csv);
  write_file(dir / "report.json", report);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest = {{"config_hash", hash},
                   {"tool_version", kToolVersion},
                   {"seed", cfg.sim.seed},
                   {"wall_time_s", wall},
                   {"config", doc},
                   {"outputs", {{"data.csv", hex64(fnv1a(res.csv))}, {"report.json", hex64(fnv1a(report))}}}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  if (!o.quiet) {
    std::cout << dir.string() << "\n";
    if (res.report.contains("pass")) std::cout << "pass: " << (res.report["pass"].get<bool>() ? "true" : "false") << "\n";
  }
  return res.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and checks for stochastic Volterra equations via Markovian lifts"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON configuration file");
  app.add_option("--out", o.out, "output root directory");
  app.add_option("--seed", o.seed, "override sim.seed");
  app.add_option("--paths", o.paths, "override sim.n_paths")->check(CLI::PositiveNumber);
  app.add_option("--threads", o.threads, "worker threads (0: hardware concurrency)");
  app.add_flag("--quiet", o.quiet, "print nothing on success");
  app.fallthrough();

  std::optional<Experiment> chosen;
  for (auto ex : {Experiment::simulate, Experiment::equivalence, Experiment::gauss, Experiment::couple,
                  Experiment::harnack, Experiment::validate}) {
    auto* sub = app.add_subcommand(to_string(ex));
    sub->callback([&chosen, ex] { chosen = ex; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    return run(*chosen, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
