#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qwrlab/errors.hpp"
#include "qwrlab/harness.hpp"

using namespace qwrlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "qwrlab-harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json tiny_run_config(const fs::path& out) {
  return {
      {"algorithm", "qwr"},
      {"env", {{"env", "bitflip"}, {"n", 5}}},
      {"seeds", {0}},
      {"out", out.string()},
      {"trainer",
       {{"hidden_widths", {8, 8}},
        {"batch_size", 8},
        {"n_actor_steps", 3},
        {"n_critic_steps", 3},
        {"interactions_per_iteration", 25},
        {"n_iterations", 2},
        {"n_eval_episodes", 2},
        {"backup", "mean"}}},
  };
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_fake_run(const fs::path& dir, const std::vector<double>& values) {
  fs::create_directories(dir);
  std::ofstream out(dir / "metrics.jsonl");
  for (std::size_t i = 0; i < values.size(); ++i) {
    IterationMetrics row;
    row.iteration = static_cast<int>(i);
    row.eval_return_mean = values[i];
    out << metrics_to_json(row).dump() << '\n';
  }
}

}  // namespace

TEST_CASE("zero-iteration experiments produce a valid, empty output tree") {
  fs::path out = fresh_dir("empty");
  nlohmann::json config = tiny_run_config(out);
  config["trainer"]["n_iterations"] = 0;
  auto summaries = run_experiment(ExperimentSpec::from_json(config));
  REQUIRE(summaries.size() == 1);
  CHECK(fs::exists(out / "0" / "metrics.jsonl"));
  CHECK(fs::exists(out / "0" / "resolved-config.json"));
  CHECK(fs::file_size(out / "0" / "metrics.jsonl") == 0);
}

TEST_CASE("repeated runs are byte-identical") {
  fs::path out_a = fresh_dir("repeat-a");
  fs::path out_b = fresh_dir("repeat-b");
  run_experiment(ExperimentSpec::from_json(tiny_run_config(out_a)));
  run_experiment(ExperimentSpec::from_json(tiny_run_config(out_b)));
  std::string metrics_a = read_file(out_a / "0" / "metrics.jsonl");
  CHECK(!metrics_a.empty());
  CHECK(metrics_a == read_file(out_b / "0" / "metrics.jsonl"));
}

TEST_CASE("rerunning from the resolved config reproduces the metrics") {
  fs::path out = fresh_dir("resolved");
  run_experiment(ExperimentSpec::from_json(tiny_run_config(out)));
  std::string first = read_file(out / "0" / "metrics.jsonl");

  nlohmann::json resolved =
      nlohmann::json::parse(read_file(out / "0" / "resolved-config.json"));
  run_experiment(ExperimentSpec::from_json(resolved));
  CHECK(read_file(out / "0" / "metrics.jsonl") == first);
}

TEST_CASE("config validation reports field-level errors") {
  fs::path out = fresh_dir("validation");
  nlohmann::json config = tiny_run_config(out);

  SUBCASE("offline without a dataset") {
    config["trainer"]["offline"] = true;
    try {
      ExperimentSpec::from_json(config);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "dataset");
    }
  }
  SUBCASE("dataset without offline") {
    config["dataset"] = "whatever.jsonl";
    CHECK_THROWS_AS(ExperimentSpec::from_json(config), ConfigError);
  }
  SUBCASE("unknown trainer field") {
    config["trainer"]["learning_rate"] = 0.1;
    try {
      ExperimentSpec::from_json(config);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "trainer.learning_rate");
    }
  }
  SUBCASE("bad algorithm") {
    config["algorithm"] = "ppo";
    CHECK_THROWS_AS(ExperimentSpec::from_json(config), ConfigError);
  }
  SUBCASE("bad backup name") {
    config["trainer"]["backup"] = "softmax";
    CHECK_THROWS_AS(ExperimentSpec::from_json(config), ConfigError);
  }
}

TEST_CASE("trainer config json round-trips") {
  TrainerConfig cfg = bitflip_protocol_config();
  cfg.backup = BackupOperator::lse(0.3);
  cfg.lambda_weighting = LambdaWeighting::literal;
  nlohmann::json json = trainer_config_to_json(cfg);
  TrainerConfig back = trainer_config_from_json(json);
  CHECK(back.n_actor_steps == 300);
  CHECK(back.backup.kind == BackupOperator::Kind::lse);
  CHECK(back.backup.tau == 0.3);
  CHECK(back.lambda_weighting == LambdaWeighting::literal);
  CHECK(back.hidden_widths == cfg.hidden_widths);
}

TEST_CASE("quantiles use linear interpolation") {
  CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.75) == 4.0);
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({7}, 0.25) == 7.0);
}

TEST_CASE("summarize aggregates per-iteration medians and IQRs") {
  fs::path base = fresh_dir("summarize");

  SUBCASE("a single run is its own median with zero IQR") {
    write_fake_run(base / "r0", {1.5, 2.5});
    summarize({base / "r0"}, base / "agg.csv");
    std::string csv = read_file(base / "agg.csv");
    CHECK(csv ==
          "iteration,n_runs,median,q1,q3,iqr,iqr_half\n"
          "0,1,1.5,1.5,1.5,0,0\n"
          "1,1,2.5,2.5,2.5,0,0\n");
  }

  SUBCASE("five runs: median 3, IQR 2") {
    std::vector<fs::path> dirs;
    for (int i = 0; i < 5; ++i) {
      dirs.push_back(base / ("run" + std::to_string(i)));
      write_fake_run(dirs.back(), {static_cast<double>(i + 1)});
    }
    summarize(dirs, base / "agg.csv");
    CHECK(read_file(base / "agg.csv") ==
          "iteration,n_runs,median,q1,q3,iqr,iqr_half\n"
          "0,5,3,2,4,2,1\n");
  }

  SUBCASE("mismatched iteration counts name the offending run") {
    write_fake_run(base / "good", {1.0, 2.0});
    write_fake_run(base / "short", {1.0});
    try {
      summarize({base / "good", base / "short"}, base / "agg.csv");
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("short") != std::string::npos);
    }
  }
}

TEST_CASE("summarize of seeded runs matches an independent recomputation") {
  fs::path base = fresh_dir("summarize-seeded");
  Rng rng(3);
  std::vector<fs::path> dirs;
  std::vector<std::vector<double>> columns(3);  // per iteration
  for (int run = 0; run < 5; ++run) {
    std::vector<double> values;
    for (int it = 0; it < 3; ++it) {
      values.push_back(rng.uniform(-5, 5));
      columns[static_cast<std::size_t>(it)].push_back(values.back());
    }
    dirs.push_back(base / ("run" + std::to_string(run)));
    write_fake_run(dirs.back(), values);
  }
  summarize(dirs, base / "agg.csv");

  std::ifstream csv(base / "agg.csv");
  std::string header;
  std::getline(csv, header);
  for (int it = 0; it < 3; ++it) {
    std::string line;
    REQUIRE(std::getline(csv, line));
    // Independent recomputation: sort and interpolate by hand.
    auto sorted = columns[static_cast<std::size_t>(it)];
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[2];
    double q1 = sorted[1];
    double q3 = sorted[3];
    std::ostringstream expected;
    expected << it << ",5," << median << ',' << q1 << ',' << q3 << ','
             << (q3 - q1) << ',' << 0.5 * (q3 - q1);
    CHECK(line == expected.str());
  }
}

TEST_CASE("the bitflip sweep writes one row per (algorithm, n, seed)") {
  fs::path out = fresh_dir("sweep");
  SweepSpec sweep;
  sweep.n_values = {5};
  sweep.seeds = {0, 1};
  sweep.trainer.hidden_widths = {8, 8};
  sweep.trainer.batch_size = 8;
  sweep.trainer.n_actor_steps = 2;
  sweep.trainer.n_critic_steps = 2;
  sweep.trainer.interactions_per_iteration = 25;
  sweep.trainer.n_iterations = 1;
  sweep.trainer.n_eval_episodes = 2;
  sweep.out_dir = out;
  auto rows = run_bitflip_figure(sweep);
  CHECK(rows.size() == 4);  // 2 algorithms x 1 n x 2 seeds
  std::string csv = read_file(out / "summary.csv");
  CHECK(csv.find("algorithm,n,seed,mean_return") == 0);
  CHECK(csv.find("qwr,5,0,") != std::string::npos);
  CHECK(csv.find("awr,5,1,") != std::string::npos);
  CHECK(fs::exists(out / "qwr-n5" / "0" / "metrics.jsonl"));
  CHECK(fs::exists(out / "awr-n5" / "1" / "checkpoint" / "value.net"));
}

TEST_CASE("offline experiments run from a dataset file") {
  fs::path out = fresh_dir("offline");
  // A small point-env dataset from a scripted policy.
  std::vector<RawTrajectory> raw;
  Rng rng(5);
  for (int traj = 0; traj < 5; ++traj) {
    RawTrajectory r;
    PointState state = point_reset(rng);
    r.states.push_back(point_observe(state));
    for (int t = 0; t < kPointHorizon; ++t) {
      double action = rng.uniform(-1, 1);
      StepResult result = point_step(state, action);
      r.actions.push_back(box_action(action));
      r.rewards.push_back(result.reward);
      r.states.push_back(result.next_obs);
    }
    raw.push_back(std::move(r));
  }
  fs::path dataset = out / "data.jsonl";
  write_dataset(dataset, raw);

  nlohmann::json config = {
      {"algorithm", "qwr"},
      {"env", {{"env", "point"}}},
      {"dataset", dataset.string()},
      {"seeds", {0}},
      {"out", (out / "run").string()},
      {"trainer",
       {{"offline", true},
        {"hidden_widths", {8, 8}},
        {"batch_size", 8},
        {"n_actor_steps", 3},
        {"n_critic_steps", 3},
        {"n_iterations", 2},
        {"n_eval_episodes", 2},
        {"k", 2}}},
  };
  auto summaries = run_experiment(ExperimentSpec::from_json(config));
  REQUIRE(summaries.size() == 1);
  CHECK(std::isfinite(summaries[0].final_eval_mean));
  CHECK(fs::exists(out / "run" / "0" / "checkpoint" / "critic_embed.net"));
}

TEST_CASE("the CLI returns the documented exit codes") {
  const char* cli = std::getenv("QWRLAB_CLI");
  if (!cli) return;  // only run when ctest provides the binary
  fs::path base = fresh_dir("cli");

  auto run_cli = [&](const std::string& args) {
    std::string command = std::string(cli) + " " + args + " > " +
                          (base / "stdout.txt").string() + " 2>&1";
    int status = std::system(command.c_str());
    return WEXITSTATUS(status);
  };

  // Valid tiny run.
  {
    std::ofstream out(base / "config.json");
    out << tiny_run_config(base / "run").dump();
  }
  CHECK(run_cli("run --config " + (base / "config.json").string()) == 0);
  CHECK(fs::exists(base / "run" / "0" / "metrics.jsonl"));

  // Config error: malformed field.
  {
    nlohmann::json bad = tiny_run_config(base / "run2");
    bad["algorithm"] = "ppo";
    std::ofstream out(base / "bad.json");
    out << bad.dump();
  }
  CHECK(run_cli("run --config " + (base / "bad.json").string()) == 2);
  CHECK(run_cli("run --config " + (base / "missing.json").string()) == 2);

  // summarize over the run we just made.
  CHECK(run_cli("summarize --out " + (base / "agg.csv").string() + " " +
                (base / "run" / "0").string()) == 0);
  CHECK(fs::exists(base / "agg.csv"));
}
