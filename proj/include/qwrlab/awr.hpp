#pragma once

#include <memory>
#include <unordered_map>
#include <vector>

#include "qwrlab/trainer.hpp"

namespace qwrlab {

// TD(lambda) return estimates for every step of a complete trajectory,
// bootstrapping with the current value net and with 0 past a terminal step.
// lambda = 1 recovers the discounted Monte Carlo return, lambda = 0 the
// one-step target r + gamma * V(s').
std::vector<double> td_lambda_returns(const std::vector<Transition>& trajectory,
                                      const Net& vnet, double gamma,
                                      double lambda);

// The weighted-regression actor update with a V critic: one stored action
// per state, weight exp(normalized (R - V(s)) / beta).
ActorUpdate awr_actor_update(const ActorNet& actor, const Net& vnet,
                             const Eigen::VectorXd& returns,
                             const std::vector<const Transition*>& batch,
                             const TrainerConfig& cfg);

// The comparison baseline: a state-value critic regressed to return
// estimates and an actor regressed to the single stored action per state,
// weighted by exp(normalized advantage / beta).
class AwrTrainer {
 public:
  AwrTrainer(TrainerConfig config, std::unique_ptr<Environment> env,
             std::unique_ptr<Environment> eval_env);

  void preload(const std::vector<std::vector<Transition>>& trajectories);

  int collect(int n_interactions);
  double critic_step();
  double actor_step();
  std::vector<double> evaluate(int n_episodes);
  std::vector<IterationMetrics> train();

  const ActorNet& actor() const { return actor_; }
  ActorNet& actor() { return actor_; }
  const Net& value_net() const { return vnet_; }
  Net& value_net() { return vnet_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const TrainerConfig& config() const { return cfg_; }
  long env_steps_total() const { return env_steps_; }
  long norm_skipped() const { return norm_skipped_; }

 private:
  // Return estimates for each batch entry, computed per unique trajectory.
  Eigen::VectorXd batch_returns(const std::vector<const Transition*>& batch);

  TrainerConfig cfg_;
  std::unique_ptr<Environment> env_;
  std::unique_ptr<Environment> eval_env_;
  ActionSpace space_;
  ActorNet actor_;
  Net vnet_;
  AdamState actor_adam_;
  AdamState critic_adam_;
  ReplayBuffer buffer_;
  Rng rng_collect_;
  Rng rng_critic_;
  Rng rng_actor_;
  Rng rng_eval_;
  long traj_counter_ = 0;
  long env_steps_ = 0;
  long critic_steps_total_ = 0;
  long actor_steps_total_ = 0;
  long norm_skipped_ = 0;
  long xi_clipped_ = 0;
  double last_advantage_std_ = 0.0;
};

}  // namespace qwrlab
