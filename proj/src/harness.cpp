#include "qwrlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "qwrlab/awr.hpp"
#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

namespace fs = std::filesystem;

const char* scale_name(BackupOperator::Scale scale) {
  return scale == BackupOperator::Scale::mean_abs_dev ? "mad" : "std";
}

BackupOperator::Scale scale_from_name(const std::string& name) {
  if (name == "mad") return BackupOperator::Scale::mean_abs_dev;
  if (name == "std") return BackupOperator::Scale::std_dev;
  throw ConfigError("scale", "expected 'mad' or 'std'");
}

template <typename T>
T get_field(const nlohmann::json& config, const std::string& key, T fallback) {
  if (!config.contains(key)) return fallback;
  try {
    return config.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key, "has the wrong type");
  }
}

void write_metrics_file(const fs::path& path,
                        const std::vector<IterationMetrics>& metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& row : metrics) out << metrics_to_json(row).dump() << '\n';
}

void write_checkpoints_qwr(const fs::path& dir, const QwrTrainer& trainer) {
  fs::create_directories(dir);
  save_net(dir / "actor.net", trainer.actor().net);
  save_net(dir / "critic_tower.net", trainer.critic().tower());
  save_net(dir / "critic_embed.net", trainer.critic().embed());
  save_net(dir / "critic_head.net", trainer.critic().head());
}

void write_checkpoints_awr(const fs::path& dir, const AwrTrainer& trainer) {
  fs::create_directories(dir);
  save_net(dir / "actor.net", trainer.actor().net);
  save_net(dir / "value.net", trainer.value_net());
}

RunSummary run_one_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  fs::path dir = spec.out_dir / std::to_string(seed);
  fs::create_directories(dir);

  ExperimentSpec resolved = spec;
  resolved.seeds = {seed};
  {
    std::ofstream out(dir / "resolved-config.json", std::ios::binary);
    out << resolved.to_json().dump(2) << '\n';
  }

  TrainerConfig cfg = spec.trainer;
  cfg.seed = seed;

  std::unique_ptr<Environment> collect_env =
      cfg.offline ? nullptr : make_env(spec.env);
  std::unique_ptr<Environment> eval_env = make_env(spec.env);
  ActionSpace space = eval_env->action_space();

  std::vector<std::vector<Transition>> dataset;
  if (cfg.offline)
    dataset = dataset_to_transitions(read_dataset(*spec.dataset), space,
                                     cfg.gaussian_std,
                                     cfg.offline_smoothing_eps);

  std::vector<IterationMetrics> metrics;
  if (spec.algorithm == "qwr") {
    QwrTrainer trainer(cfg, std::move(collect_env), std::move(eval_env));
    if (cfg.offline) trainer.preload(dataset);
    metrics = trainer.train();
    write_checkpoints_qwr(dir / "checkpoint", trainer);
  } else {
    AwrTrainer trainer(cfg, std::move(collect_env), std::move(eval_env));
    if (cfg.offline) trainer.preload(dataset);
    metrics = trainer.train();
    write_checkpoints_awr(dir / "checkpoint", trainer);
  }
  write_metrics_file(dir / "metrics.jsonl", metrics);

  RunSummary summary;
  summary.seed = seed;
  summary.final_eval_mean =
      metrics.empty() ? std::numeric_limits<double>::quiet_NaN()
                      : metrics.back().eval_return_mean;
  summary.dir = dir;
  return summary;
}

std::vector<double> read_metric_column(const fs::path& metrics_file) {
  std::ifstream in(metrics_file);
  if (!in)
    throw std::runtime_error("cannot open " + metrics_file.string());
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    values.push_back(row.at("eval_return_mean").get<double>());
  }
  return values;
}

}  // namespace

nlohmann::ordered_json metrics_to_json(const IterationMetrics& row) {
  // wall_time is intentionally not written: the metrics file is byte-stable
  // across repeated runs of the same seed and config.
  nlohmann::ordered_json json;
  json["iteration"] = row.iteration;
  json["env_steps_total"] = row.env_steps_total;
  json["eval_return_mean"] = row.eval_return_mean;
  json["eval_return_median"] = row.eval_return_median;
  json["critic_loss_mean"] = row.critic_loss_mean;
  json["actor_loss_mean"] = row.actor_loss_mean;
  json["advantage_std"] = row.advantage_std;
  json["norm_skipped"] = row.norm_skipped;
  json["xi_clipped"] = row.xi_clipped;
  return json;
}

TrainerConfig trainer_config_from_json(const nlohmann::json& config,
                                       TrainerConfig base) {
  static const std::vector<std::string> known = {
      "k", "margin", "beta", "gamma", "lambda", "actor_lr", "critic_lr",
      "batch_size", "buffer_capacity", "n_actor_steps", "n_critic_steps",
      "update_frequency", "interactions_per_iteration", "n_iterations",
      "backup", "tau", "scale", "offline", "hidden_widths",
      "lambda_weighting", "awr_returns", "gaussian_std",
      "offline_smoothing_eps", "xi_clip", "n_eval_episodes"};
  for (const auto& [key, value] : config.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("trainer." + key, "unknown field");

  TrainerConfig cfg = base;
  cfg.k = get_field(config, "k", cfg.k);
  cfg.margin = get_field(config, "margin", cfg.margin);
  cfg.beta = get_field(config, "beta", cfg.beta);
  cfg.gamma = get_field(config, "gamma", cfg.gamma);
  cfg.lambda = get_field(config, "lambda", cfg.lambda);
  cfg.actor_lr = get_field(config, "actor_lr", cfg.actor_lr);
  cfg.critic_lr = get_field(config, "critic_lr", cfg.critic_lr);
  cfg.batch_size = get_field(config, "batch_size", cfg.batch_size);
  cfg.buffer_capacity =
      get_field(config, "buffer_capacity", cfg.buffer_capacity);
  cfg.n_actor_steps = get_field(config, "n_actor_steps", cfg.n_actor_steps);
  cfg.n_critic_steps = get_field(config, "n_critic_steps", cfg.n_critic_steps);
  cfg.update_frequency =
      get_field(config, "update_frequency", cfg.update_frequency);
  cfg.interactions_per_iteration = get_field(
      config, "interactions_per_iteration", cfg.interactions_per_iteration);
  cfg.n_iterations = get_field(config, "n_iterations", cfg.n_iterations);
  cfg.offline = get_field(config, "offline", cfg.offline);
  cfg.hidden_widths = get_field(config, "hidden_widths", cfg.hidden_widths);
  cfg.gaussian_std = get_field(config, "gaussian_std", cfg.gaussian_std);
  cfg.offline_smoothing_eps =
      get_field(config, "offline_smoothing_eps", cfg.offline_smoothing_eps);
  cfg.xi_clip = get_field(config, "xi_clip", cfg.xi_clip);
  cfg.n_eval_episodes =
      get_field(config, "n_eval_episodes", cfg.n_eval_episodes);

  if (config.contains("backup")) {
    std::string kind = get_field<std::string>(config, "backup", "lse");
    if (kind == "mean")
      cfg.backup.kind = BackupOperator::Kind::mean;
    else if (kind == "max")
      cfg.backup.kind = BackupOperator::Kind::max;
    else if (kind == "lse")
      cfg.backup.kind = BackupOperator::Kind::lse;
    else
      throw ConfigError("backup", "expected 'mean', 'max' or 'lse'");
  }
  cfg.backup.tau = get_field(config, "tau", cfg.backup.tau);
  if (config.contains("scale"))
    cfg.backup.scale =
        scale_from_name(get_field<std::string>(config, "scale", "mad"));

  if (config.contains("lambda_weighting")) {
    std::string mode =
        get_field<std::string>(config, "lambda_weighting", "normalized");
    if (mode == "normalized")
      cfg.lambda_weighting = LambdaWeighting::normalized;
    else if (mode == "literal")
      cfg.lambda_weighting = LambdaWeighting::literal;
    else
      throw ConfigError("lambda_weighting", "expected 'normalized' or 'literal'");
  }
  if (config.contains("awr_returns")) {
    std::string mode =
        get_field<std::string>(config, "awr_returns", "td_lambda");
    if (mode == "td_lambda")
      cfg.awr_returns = AwrReturns::td_lambda;
    else if (mode == "monte_carlo")
      cfg.awr_returns = AwrReturns::monte_carlo;
    else
      throw ConfigError("awr_returns", "expected 'td_lambda' or 'monte_carlo'");
  }
  cfg.validate();
  return cfg;
}

nlohmann::json trainer_config_to_json(const TrainerConfig& cfg) {
  nlohmann::ordered_json json;
  json["k"] = cfg.k;
  json["margin"] = cfg.margin;
  json["beta"] = cfg.beta;
  json["gamma"] = cfg.gamma;
  json["lambda"] = cfg.lambda;
  json["actor_lr"] = cfg.actor_lr;
  json["critic_lr"] = cfg.critic_lr;
  json["batch_size"] = cfg.batch_size;
  json["buffer_capacity"] = cfg.buffer_capacity;
  json["n_actor_steps"] = cfg.n_actor_steps;
  json["n_critic_steps"] = cfg.n_critic_steps;
  json["update_frequency"] = cfg.update_frequency;
  json["interactions_per_iteration"] = cfg.interactions_per_iteration;
  json["n_iterations"] = cfg.n_iterations;
  switch (cfg.backup.kind) {
    case BackupOperator::Kind::mean:
      json["backup"] = "mean";
      break;
    case BackupOperator::Kind::max:
      json["backup"] = "max";
      break;
    case BackupOperator::Kind::lse:
      json["backup"] = "lse";
      break;
  }
  json["tau"] = cfg.backup.tau;
  json["scale"] = scale_name(cfg.backup.scale);
  json["offline"] = cfg.offline;
  json["hidden_widths"] = cfg.hidden_widths;
  json["lambda_weighting"] =
      cfg.lambda_weighting == LambdaWeighting::normalized ? "normalized"
                                                          : "literal";
  json["awr_returns"] =
      cfg.awr_returns == AwrReturns::td_lambda ? "td_lambda" : "monte_carlo";
  json["gaussian_std"] = cfg.gaussian_std;
  json["offline_smoothing_eps"] = cfg.offline_smoothing_eps;
  json["xi_clip"] = cfg.xi_clip;
  json["n_eval_episodes"] = cfg.n_eval_episodes;
  return json;
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& config) {
  static const std::vector<std::string> known = {"algorithm", "env", "dataset",
                                                 "seeds", "out", "trainer"};
  for (const auto& [key, value] : config.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(key, "unknown field");

  ExperimentSpec spec;
  spec.algorithm = get_field<std::string>(config, "algorithm", "qwr");
  if (!config.contains("env")) throw ConfigError("env", "missing");
  spec.env = config.at("env");
  if (config.contains("dataset"))
    spec.dataset = fs::path(get_field<std::string>(config, "dataset", ""));
  spec.seeds = get_field(config, "seeds", std::vector<std::uint64_t>{0});
  if (config.contains("out"))
    spec.out_dir = fs::path(get_field<std::string>(config, "out", ""));
  spec.trainer = trainer_config_from_json(config.value("trainer",
                                                       nlohmann::json::object()));
  spec.validate();
  return spec;
}

void ExperimentSpec::validate() const {
  if (algorithm != "qwr" && algorithm != "awr")
    throw ConfigError("algorithm", "expected 'qwr' or 'awr'");
  make_env(env);  // throws ConfigError on a bad env block
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  if (trainer.offline && !dataset)
    throw ConfigError("dataset", "offline mode needs a dataset path");
  if (!trainer.offline && dataset)
    throw ConfigError("dataset",
                      "dataset given but trainer.offline is false");
  trainer.validate();
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::ordered_json json;
  json["algorithm"] = algorithm;
  json["env"] = env;
  if (dataset) json["dataset"] = dataset->string();
  json["seeds"] = seeds;
  json["out"] = out_dir.string();
  json["trainer"] = trainer_config_to_json(trainer);
  return json;
}

int sweep_threads() {
  if (const char* env = std::getenv("QWRLAB_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for_jobs(std::size_t n_jobs, int n_threads,
                       const std::function<void(std::size_t)>& fn) {
  if (n_jobs == 0) return;
  int workers = static_cast<int>(std::min(
      static_cast<std::size_t>(std::max(1, n_threads)), n_jobs));
  if (workers == 1) {
    for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= n_jobs) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard guard(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<RunSummary> run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.out_dir.empty()) throw ConfigError("out", "missing output directory");
  fs::create_directories(spec.out_dir);

  std::vector<RunSummary> summaries(spec.seeds.size());
  parallel_for_jobs(spec.seeds.size(), sweep_threads(), [&](std::size_t i) {
    summaries[i] = run_one_seed(spec, spec.seeds[i]);
  });
  return summaries;
}

TrainerConfig bitflip_protocol_config() {
  TrainerConfig cfg;
  cfg.n_actor_steps = 300;
  cfg.n_critic_steps = 300;
  cfg.backup = BackupOperator::mean();
  cfg.n_iterations = 10;
  cfg.interactions_per_iteration = 1000;
  cfg.hidden_widths = {64, 64};
  return cfg;
}

std::vector<SweepRow> run_bitflip_figure(const SweepSpec& spec) {
  if (spec.n_values.empty()) throw ConfigError("n_values", "empty sweep axis");
  if (spec.out_dir.empty()) throw ConfigError("out", "missing output directory");
  fs::create_directories(spec.out_dir);

  struct Job {
    std::string algorithm;
    int n;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& algorithm : spec.algorithms)
    for (int n : spec.n_values)
      for (auto seed : spec.seeds) jobs.push_back({algorithm, n, seed});

  std::vector<SweepRow> rows(jobs.size());
  parallel_for_jobs(jobs.size(), sweep_threads(), [&](std::size_t i) {
    const Job& job = jobs[i];
    ExperimentSpec run;
    run.algorithm = job.algorithm;
    run.env = {{"env", "bitflip"}, {"n", job.n}};
    run.seeds = {job.seed};
    run.out_dir = spec.out_dir /
                  (job.algorithm + "-n" + std::to_string(job.n));
    run.trainer = spec.trainer;
    RunSummary summary = run_one_seed(run, job.seed);
    rows[i] = {job.algorithm, job.n, job.seed, summary.final_eval_mean};
  });

  std::ofstream csv(spec.out_dir / "summary.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write summary.csv");
  csv << "algorithm,n,seed,mean_return\n";
  for (const auto& row : rows)
    csv << row.algorithm << ',' << row.n << ',' << row.seed << ','
        << row.mean_return << '\n';
  return rows;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  double position = p * static_cast<double>(values.size() - 1);
  std::size_t low = static_cast<std::size_t>(position);
  double fraction = position - static_cast<double>(low);
  if (low + 1 >= values.size()) return values.back();
  return values[low] + fraction * (values[low + 1] - values[low]);
}

void summarize(const std::vector<fs::path>& run_dirs,
               const fs::path& out_csv) {
  if (run_dirs.empty())
    throw std::invalid_argument("summarize needs at least one run directory");
  std::vector<std::vector<double>> per_run;
  per_run.reserve(run_dirs.size());
  for (const auto& dir : run_dirs)
    per_run.push_back(read_metric_column(dir / "metrics.jsonl"));
  for (std::size_t r = 1; r < per_run.size(); ++r)
    if (per_run[r].size() != per_run[0].size())
      throw std::runtime_error("run " + run_dirs[r].string() + " has " +
                               std::to_string(per_run[r].size()) +
                               " iterations, expected " +
                               std::to_string(per_run[0].size()));

  std::ofstream csv(out_csv, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + out_csv.string());
  csv << "iteration,n_runs,median,q1,q3,iqr,iqr_half\n";
  for (std::size_t it = 0; it < per_run[0].size(); ++it) {
    std::vector<double> values;
    values.reserve(per_run.size());
    for (const auto& run : per_run) values.push_back(run[it]);
    double median = quantile(values, 0.5);
    double q1 = quantile(values, 0.25);
    double q3 = quantile(values, 0.75);
    csv << it << ',' << values.size() << ',' << median << ',' << q1 << ','
        << q3 << ',' << (q3 - q1) << ',' << 0.5 * (q3 - q1) << '\n';
  }
}

}  // namespace qwrlab
