#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qwrlab/errors.hpp"
#include "qwrlab/harness.hpp"
#include "qwrlab/theory.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw qwrlab::ConfigError("config", "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw qwrlab::ConfigError("config", std::string("parse error: ") + e.what());
  }
}

int cmd_run(const std::string& config_path, const std::string& out,
            const std::string& algorithm, const std::string& offline_dataset,
            bool seed_given, std::uint64_t seed) {
  nlohmann::json config = load_json_file(config_path);
  if (!algorithm.empty()) config["algorithm"] = algorithm;
  if (!out.empty()) config["out"] = out;
  if (!offline_dataset.empty()) {
    config["dataset"] = offline_dataset;
    config["trainer"]["offline"] = true;
  }
  if (seed_given) config["seeds"] = std::vector<std::uint64_t>{seed};

  qwrlab::ExperimentSpec spec = qwrlab::ExperimentSpec::from_json(config);
  auto summaries = qwrlab::run_experiment(spec);
  for (const auto& run : summaries)
    std::printf("seed %llu: final eval return %.4f (%s)\n",
                static_cast<unsigned long long>(run.seed), run.final_eval_mean,
                run.dir.string().c_str());
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out) {
  qwrlab::SweepSpec sweep;
  if (!config_path.empty()) {
    nlohmann::json config = load_json_file(config_path);
    for (const auto& [key, value] : config.items()) {
      if (key != "n_values" && key != "seeds" && key != "algorithms" &&
          key != "trainer")
        throw qwrlab::ConfigError(key, "unknown field");
    }
    if (config.contains("n_values"))
      sweep.n_values = config.at("n_values").get<std::vector<int>>();
    if (config.contains("seeds"))
      sweep.seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
    if (config.contains("algorithms"))
      sweep.algorithms =
          config.at("algorithms").get<std::vector<std::string>>();
    if (config.contains("trainer"))
      sweep.trainer = qwrlab::trainer_config_from_json(
          config.at("trainer"), qwrlab::bitflip_protocol_config());
  }
  sweep.out_dir = out;
  auto rows = qwrlab::run_bitflip_figure(sweep);
  std::printf("wrote %zu rows to %s\n", rows.size(),
              (sweep.out_dir / "summary.csv").string().c_str());
  return kExitOk;
}

int cmd_verify_theorems(std::uint64_t seed, const std::string& out) {
  nlohmann::json report = qwrlab::run_theorem_report(seed);
  std::string text = report.dump(2);
  std::puts(text.c_str());
  if (!out.empty()) {
    std::ofstream file(out);
    file << text << '\n';
  }
  return report.at("pass").get<bool>() ? kExitOk : kExitFailure;
}

int cmd_summarize(const std::vector<std::string>& dirs,
                  const std::string& out) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  qwrlab::summarize(paths, out);
  std::printf("wrote %s\n", out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QWR/AWR training lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::string algorithm;
  std::string offline_dataset;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto* run = app.add_subcommand("run", "run one experiment per seed");
  run->add_option("--config", config_path, "experiment config JSON")
      ->required();
  run->add_option("--out", out, "output directory (overrides config)");
  run->add_option("--algorithm", algorithm, "qwr or awr")
      ->check(CLI::IsMember({"qwr", "awr"}));
  run->add_option("--offline", offline_dataset,
                  "dataset JSONL; switches the run to offline training");
  run->add_option("--seed", seed, "single seed (overrides config seeds)")
      ->each([&](const std::string&) { seed_given = true; });

  auto* sweep = app.add_subcommand(
      "sweep-bitflip", "BitFlip benchmark sweep over (algorithm, N, seed)");
  sweep->add_option("--config", config_path, "sweep overrides JSON");
  sweep->add_option("--out", out, "output directory")->required();

  std::uint64_t theorem_seed = 0;
  std::string theorem_out;
  auto* verify = app.add_subcommand(
      "verify-theorems", "closed-form and brute-force checks of the "
                         "behavior-cloning and policy-improvement claims");
  verify->add_option("--seed", theorem_seed, "instance seed");
  verify->add_option("--out", theorem_out, "write the JSON report here");

  std::vector<std::string> summarize_dirs;
  auto* agg = app.add_subcommand("summarize",
                                 "aggregate per-iteration medians across runs");
  agg->add_option("--out", out, "output CSV path")->required();
  agg->add_option("dirs", summarize_dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, out, algorithm, offline_dataset, seed_given,
                     seed);
    if (sweep->parsed()) return cmd_sweep(config_path, out);
    if (verify->parsed()) return cmd_verify_theorems(theorem_seed, theorem_out);
    if (agg->parsed()) return cmd_summarize(summarize_dirs, out);
  } catch (const qwrlab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const qwrlab::DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitOk;
}
