#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qwrlab/trainer.hpp"

namespace qwrlab {

// A resolved experiment: algorithm, environment, seeds, trainer settings.
struct ExperimentSpec {
  std::string algorithm = "qwr";  // "qwr" or "awr"
  nlohmann::json env;             // {"env":"bitflip","n":16} etc.
  std::optional<std::filesystem::path> dataset;  // offline runs only
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path out_dir;
  TrainerConfig trainer;

  static ExperimentSpec from_json(const nlohmann::json& config);
  nlohmann::json to_json() const;  // every field materialized
  void validate() const;
};

TrainerConfig trainer_config_from_json(const nlohmann::json& config,
                                       TrainerConfig base = {});
nlohmann::json trainer_config_to_json(const TrainerConfig& config);

struct RunSummary {
  std::uint64_t seed = 0;
  double final_eval_mean = 0.0;
  std::filesystem::path dir;
};

// Runs every seed of the spec. Each run gets its own directory with
// metrics.jsonl, resolved-config.json and a final checkpoint; seeds run in
// parallel up to the QWRLAB_THREADS cap.
std::vector<RunSummary> run_experiment(const ExperimentSpec& spec);

// The 300/300-step, mean-backup protocol used for the BitFlip benchmark.
TrainerConfig bitflip_protocol_config();

struct SweepSpec {
  std::vector<int> n_values = {4, 8, 12, 16, 20, 24, 30};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> algorithms = {"qwr", "awr"};
  TrainerConfig trainer = bitflip_protocol_config();
  std::filesystem::path out_dir;
};

struct SweepRow {
  std::string algorithm;
  int n = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
};

// BitFlip sweep over (algorithm, N, seed); writes summary.csv in out_dir and
// returns the rows.
std::vector<SweepRow> run_bitflip_figure(const SweepSpec& spec);

// Per-iteration median and interquartile range of the evaluation return
// across runs. Columns: iteration,n_runs,median,q1,q3,iqr,iqr_half.
void summarize(const std::vector<std::filesystem::path>& run_dirs,
               const std::filesystem::path& out_csv);

// Linear-interpolation quantile of a sample.
double quantile(std::vector<double> values, double p);

// Worker cap: QWRLAB_THREADS if set, hardware concurrency otherwise.
int sweep_threads();

// Runs fn(0..n_jobs-1) on up to n_threads workers; rethrows the first
// failure after all workers finish.
void parallel_for_jobs(std::size_t n_jobs, int n_threads,
                       const std::function<void(std::size_t)>& fn);

nlohmann::ordered_json metrics_to_json(const IterationMetrics& row);

}  // namespace qwrlab
