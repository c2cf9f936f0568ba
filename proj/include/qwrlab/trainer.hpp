#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "qwrlab/backup.hpp"
#include "qwrlab/envs.hpp"
#include "qwrlab/policy.hpp"
#include "qwrlab/replay.hpp"

namespace qwrlab {

enum class AwrReturns { td_lambda, monte_carlo };

struct TrainerConfig {
  int k = 4;                  // action samples per state
  int margin = 3;             // multi-step target horizon T
  double beta = 1.0;          // actor temperature
  double gamma = 0.99;
  double lambda = 0.95;
  double actor_lr = 1e-4;
  double critic_lr = 5e-4;
  int batch_size = 256;
  std::size_t buffer_capacity = 50000;
  int n_actor_steps = 1000;
  int n_critic_steps = 1000;
  int update_frequency = 100;
  int interactions_per_iteration = 1000;
  int n_iterations = 10;
  BackupOperator backup;  // lse, tau 0.3, mean absolute deviation
  bool offline = false;
  std::uint64_t seed = 0;

  std::vector<int> hidden_widths = {256, 256};
  LambdaWeighting lambda_weighting = LambdaWeighting::normalized;
  AwrReturns awr_returns = AwrReturns::td_lambda;
  double gaussian_std = kDefaultGaussianStd;
  double offline_smoothing_eps = 0.05;
  double xi_clip = 20.0;  // cap on the normalized-advantage exponent
  int n_eval_episodes = 10;

  void validate() const;  // throws ConfigError naming the field
};

struct IterationMetrics {
  int iteration = 0;
  long env_steps_total = 0;
  double eval_return_mean = 0.0;
  double eval_return_median = 0.0;
  double critic_loss_mean = 0.0;
  double actor_loss_mean = 0.0;
  double advantage_std = 0.0;  // raw batch std before normalization
  long norm_skipped = 0;       // degenerate batches this iteration
  long xi_clipped = 0;         // clipped exponents this iteration
  double wall_time_s = 0.0;    // not part of the metrics file
};

// Batch-normalized exponentiated advantage weights xi = exp(A'/beta) with
// A' = (A - mean(A)) / std(A) over every entry (population std).
// Normalization is skipped for a degenerate batch; exponents above `clip`
// saturate.
struct AdvantageWeights {
  Eigen::ArrayXXd xi;
  double raw_std = 0.0;
  bool norm_skipped = false;
  long clipped = 0;
};

AdvantageWeights exponentiated_weights(const Eigen::ArrayXXd& advantages,
                                       double beta, double clip);

// One actor regression step, computed but not applied: the loss (negated
// weighted log-likelihood) and its parameter gradient.
struct ActorUpdate {
  double loss = 0.0;
  Eigen::VectorXd param_grad;
  double raw_advantage_std = 0.0;
  bool norm_skipped = false;
  long xi_clipped = 0;
};

// The weighted-regression actor update with a Q critic: advantages against
// the sampled-action (or exact categorical) baseline, batch-normalized,
// exponentiated, and regressed through log pi. `rng` is only consumed for
// box action spaces.
ActorUpdate qwr_actor_update(const ActorNet& actor, const QNet& critic,
                             const std::vector<const Transition*>& batch,
                             const TrainerConfig& cfg, Rng& rng);

// Rolls whole episodes with actions sampled from the actor, storing the
// actor's per-state params as the sampling policy, until at least
// n_interactions steps have been collected. Returns the trajectory count.
int collect_trajectories(Environment& env, const ActorNet& actor,
                         int n_interactions, ReplayBuffer& buffer, Rng& rng,
                         long& traj_counter, long& env_steps);

// Deterministic-policy evaluation returns (argmax logits / Gaussian mean).
std::vector<double> evaluate_policy(Environment& env, const ActorNet& actor,
                                    int n_episodes, Rng& rng);

double mean_of(const std::vector<double>& values);
double median_of(std::vector<double> values);

class QwrTrainer {
 public:
  // `env` collects data and may be null for offline training; `eval_env`
  // plays the evaluation episodes.
  QwrTrainer(TrainerConfig config, std::unique_ptr<Environment> env,
             std::unique_ptr<Environment> eval_env);

  // Loads a fixed dataset into the replay buffer (offline mode).
  void preload(const std::vector<std::vector<Transition>>& trajectories);

  int collect(int n_interactions);
  void begin_critic_loop();  // copies the live critic into the target
  double critic_step();
  double actor_step();
  std::vector<double> evaluate(int n_episodes);
  std::vector<IterationMetrics> train();

  const ActorNet& actor() const { return actor_; }
  ActorNet& actor() { return actor_; }
  const QNet& critic() const { return qnet_; }
  QNet& critic() { return qnet_; }
  const QNet& critic_target() const { return qnet_target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const TrainerConfig& config() const { return cfg_; }
  long sync_count() const { return sync_count_; }
  long env_steps_total() const { return env_steps_; }
  long norm_skipped() const { return norm_skipped_; }
  long xi_clipped() const { return xi_clipped_; }

 private:
  TrainerConfig cfg_;
  std::unique_ptr<Environment> env_;
  std::unique_ptr<Environment> eval_env_;
  ActionSpace space_;
  ActorNet actor_;
  QNet qnet_;
  QNet qnet_target_;
  AdamState actor_adam_;
  AdamState critic_adam_;
  ReplayBuffer buffer_;
  Rng rng_collect_;
  Rng rng_critic_;
  Rng rng_actor_;
  Rng rng_eval_;
  long traj_counter_ = 0;
  long env_steps_ = 0;
  long critic_loop_index_ = 0;
  long critic_steps_total_ = 0;
  long actor_steps_total_ = 0;
  long sync_count_ = 0;
  long norm_skipped_ = 0;
  long xi_clipped_ = 0;
  double last_advantage_std_ = 0.0;
};

}  // namespace qwrlab
