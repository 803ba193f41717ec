// ortha: train, merge and analyse orthogonal low-rank adapters from one JSON config.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ortha/commands.h"
#include "ortha/error.h"

namespace {

std::size_t thread_count(std::optional<std::size_t> flag) {
  if (flag) return *flag == 0 ? 1 : *flag;
  if (const char* env = std::getenv("ORTHA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ortha::ValidationError(std::string("ORTHA_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal low-rank adapters: train, merge, analyse."};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::string> concept_id;
  std::optional<double> lambda;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> adapter_paths;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (default: config output_dir)");
    sub->add_option("--seed", seed, "override the config root seed");
    sub->add_option("--threads", threads, "worker threads (fallback: ORTHA_THREADS)");
  };
  auto* gen = app.add_subcommand("gen-basis", "write the shared basis descriptor");
  common(gen);
  auto* train = app.add_subcommand("train", "train adapters for every (or one) concept");
  common(train);
  train->add_option("--concept", concept_id, "retrain only this concept");
  auto* merge = app.add_subcommand("merge", "FedAvg-merge adapter files into dense layers");
  common(merge);
  merge->add_option("--lambda", lambda, "merge weight for every adapter (overrides config)");
  merge->add_option("adapters", adapter_paths, "adapter files; none merges nothing (base weights)");
  auto* analyze = app.add_subcommand("analyze", "crosstalk, preservation and basis Monte Carlo reports");
  common(analyze);
  analyze->add_option("--trials", trials, "trial count for every Monte Carlo study");
  analyze->add_option("--lambda", lambda, "merge weight used for the merged-lambda preservation report");
  auto* ablate = app.add_subcommand("ablate", "overlap ablation and concept-count sweep");
  common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto cfg = ortha::load_config(config_path, seed);
    const std::filesystem::path out = out_dir.value_or(cfg.output_dir);
    const std::size_t n_threads = thread_count(threads);
    if (gen->parsed()) {
      ortha::cmd_gen_basis(cfg, out, std::cout);
    } else if (train->parsed()) {
      ortha::cmd_train(cfg, out, concept_id, n_threads, std::cout);
    } else if (merge->parsed()) {
      std::vector<std::filesystem::path> paths(adapter_paths.begin(), adapter_paths.end());
      ortha::cmd_merge(cfg, out, paths, lambda, std::cout);
    } else if (analyze->parsed()) {
      ortha::cmd_analyze(cfg, out, trials, lambda, n_threads, std::cout);
    } else if (ablate->parsed()) {
      ortha::cmd_ablate(cfg, out, n_threads, std::cout);
    }
  } catch (const ortha::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ortha::ErrorKind::io);
  }
  return 0;
}
