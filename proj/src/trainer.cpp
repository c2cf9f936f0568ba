#include "qwrlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

std::vector<LayerSpec> actor_layers(int obs_dim, const std::vector<int>& hidden,
                                    const ActionSpace& space) {
  std::vector<LayerSpec> layers;
  int in = obs_dim;
  for (int width : hidden) {
    layers.push_back({in, width, Activation::relu});
    in = width;
  }
  layers.push_back(
      {in, space.is_discrete() ? space.n_actions : space.dim,
       Activation::identity});
  return layers;
}

Eigen::MatrixXd stack_states(const std::vector<const Transition*>& batch) {
  Eigen::MatrixXd states(batch.size(), batch.front()->state.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    states.row(static_cast<Eigen::Index>(i)) = batch[i]->state;
  return states;
}

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = logits.colwise() - row_max;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  return shifted.colwise() - lse;
}

}  // namespace

void TrainerConfig::validate() const {
  auto positive = [](const char* field, auto value) {
    if (!(value > 0)) throw ConfigError(field, "must be positive");
  };
  positive("k", k);
  positive("margin", margin);
  positive("beta", beta);
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ConfigError("gamma", "must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("lambda", "must be in [0, 1]");
  positive("actor_lr", actor_lr);
  positive("critic_lr", critic_lr);
  positive("batch_size", batch_size);
  positive("buffer_capacity", buffer_capacity);
  positive("n_actor_steps", n_actor_steps);
  positive("n_critic_steps", n_critic_steps);
  positive("update_frequency", update_frequency);
  positive("interactions_per_iteration", interactions_per_iteration);
  if (n_iterations < 0) throw ConfigError("n_iterations", "must be >= 0");
  if (backup.kind == BackupOperator::Kind::lse && !(backup.tau > 0.0))
    throw ConfigError("tau", "must be positive for the lse backup");
  if (hidden_widths.empty())
    throw ConfigError("hidden_widths", "need at least one hidden layer");
  for (int w : hidden_widths)
    if (w < 1) throw ConfigError("hidden_widths", "widths must be >= 1");
  positive("gaussian_std", gaussian_std);
  if (!(offline_smoothing_eps >= 0.0 && offline_smoothing_eps < 1.0))
    throw ConfigError("offline_smoothing_eps", "must be in [0, 1)");
  positive("xi_clip", xi_clip);
  positive("n_eval_episodes", n_eval_episodes);
}

AdvantageWeights exponentiated_weights(const Eigen::ArrayXXd& advantages,
                                       double beta, double clip) {
  AdvantageWeights out;
  double n = static_cast<double>(advantages.size());
  double mean = advantages.sum() / n;
  double variance = (advantages - mean).square().sum() / n;
  out.raw_std = std::sqrt(variance);
  Eigen::ArrayXXd normalized;
  if (out.raw_std < 1e-12) {
    out.norm_skipped = true;
    normalized = advantages - mean;
  } else {
    normalized = (advantages - mean) / out.raw_std;
  }
  Eigen::ArrayXXd exponent = normalized / beta;
  out.clipped = (exponent > clip).count();
  out.xi = exponent.min(clip).exp();
  return out;
}

int collect_trajectories(Environment& env, const ActorNet& actor,
                         int n_interactions, ReplayBuffer& buffer, Rng& rng,
                         long& traj_counter, long& env_steps) {
  int trajectories = 0;
  int steps = 0;
  while (steps < n_interactions) {
    Eigen::VectorXd obs = env.reset(rng);
    std::vector<Transition> episode;
    bool done = false;
    int step_index = 0;
    while (!done) {
      PolicyParams mu = policy_params(actor, obs);
      Action action = sample(mu, rng);
      StepResult result = env.step(action);
      Transition t;
      t.state = std::move(obs);
      t.mu_params = std::move(mu);
      t.action = std::move(action);
      t.reward = result.reward;
      t.next_state = result.next_obs;
      t.done = result.done;
      t.traj_id = traj_counter;
      t.step_index = step_index++;
      episode.push_back(std::move(t));
      obs = std::move(result.next_obs);
      done = result.done;
      ++steps;
      ++env_steps;
    }
    buffer.append_trajectory(std::move(episode));
    ++traj_counter;
    ++trajectories;
  }
  return trajectories;
}

std::vector<double> evaluate_policy(Environment& env, const ActorNet& actor,
                                    int n_episodes, Rng& rng) {
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(n_episodes));
  for (int episode = 0; episode < n_episodes; ++episode) {
    Eigen::VectorXd obs = env.reset(rng);
    double total = 0.0;
    bool done = false;
    while (!done) {
      Action action = greedy_action(policy_params(actor, obs));
      StepResult result = env.step(action);
      total += result.reward;
      obs = std::move(result.next_obs);
      done = result.done;
    }
    returns.push_back(total);
  }
  return returns;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid]
                                : 0.5 * (values[mid - 1] + values[mid]);
}

QwrTrainer::QwrTrainer(TrainerConfig config, std::unique_ptr<Environment> env,
                       std::unique_ptr<Environment> eval_env)
    : cfg_(std::move(config)),
      env_(std::move(env)),
      eval_env_(std::move(eval_env)),
      space_(eval_env_->action_space()),
      actor_(actor_layers(eval_env_->observation_dim(), cfg_.hidden_widths,
                          space_),
             derive_seed(cfg_.seed, 1), space_, cfg_.gaussian_std),
      qnet_(eval_env_->observation_dim(),
            space_.is_discrete() ? space_.n_actions : space_.dim,
            cfg_.hidden_widths, derive_seed(cfg_.seed, 2)),
      qnet_target_(eval_env_->observation_dim(),
                   space_.is_discrete() ? space_.n_actions : space_.dim,
                   cfg_.hidden_widths, derive_seed(cfg_.seed, 2)),
      actor_adam_(static_cast<std::size_t>(actor_.net.params().size()),
                  cfg_.actor_lr),
      critic_adam_(qnet_.param_count(), cfg_.critic_lr),
      buffer_(cfg_.buffer_capacity),
      rng_collect_(derive_seed(cfg_.seed, 3)),
      rng_critic_(derive_seed(cfg_.seed, 4)),
      rng_actor_(derive_seed(cfg_.seed, 5)),
      rng_eval_(derive_seed(cfg_.seed, 6)) {
  cfg_.validate();
  if (!eval_env_) throw std::invalid_argument("eval env is required");
  if (!cfg_.offline && !env_)
    throw ConfigError("env", "online training needs an environment");
  sync_target(qnet_, qnet_target_);
}

void QwrTrainer::preload(
    const std::vector<std::vector<Transition>>& trajectories) {
  for (const auto& traj : trajectories) buffer_.append_trajectory(traj);
}

int QwrTrainer::collect(int n_interactions) {
  if (!env_) throw ProtocolError("collect called without an environment");
  return collect_trajectories(*env_, actor_, n_interactions, buffer_,
                              rng_collect_, traj_counter_, env_steps_);
}

void QwrTrainer::begin_critic_loop() {
  sync_target(qnet_, qnet_target_);
  ++sync_count_;
  critic_loop_index_ = 0;
}

double QwrTrainer::critic_step() {
  if (critic_loop_index_ % cfg_.update_frequency == 0) {
    sync_target(qnet_, qnet_target_);
    ++sync_count_;
  }
  auto windows = buffer_.sample_windows(cfg_.batch_size, cfg_.margin,
                                        rng_critic_);
  auto targets =
      multistep_targets(windows, qnet_target_, cfg_.backup, cfg_.k, cfg_.gamma,
                        cfg_.lambda, rng_critic_, cfg_.lambda_weighting);

  Eigen::Index batch = static_cast<Eigen::Index>(windows.size());
  Eigen::MatrixXd states(batch, qnet_.obs_dim());
  Eigen::MatrixXd encs(batch, qnet_.action_input_dim());
  Eigen::VectorXd target_values(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const Transition& head = windows[static_cast<std::size_t>(i)].steps.front();
    states.row(i) = head.state;
    encs.row(i) = encode_action(head.action, qnet_.action_input_dim());
    target_values[i] = targets[static_cast<std::size_t>(i)].value;
  }

  Eigen::VectorXd q = q_values(qnet_, states, encs);
  Eigen::VectorXd residual = q - target_values;  // targets held constant
  double loss = residual.squaredNorm() / static_cast<double>(batch);
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite critic loss", critic_steps_total_);

  Eigen::VectorXd dq = (2.0 / static_cast<double>(batch)) * residual;
  Eigen::VectorXd grad = q_backward(qnet_, states, encs, dq);
  Eigen::VectorXd params = qnet_.flat_params();
  adam_step(critic_adam_, params, grad);
  qnet_.set_flat_params(params);

  ++critic_loop_index_;
  ++critic_steps_total_;
  return loss;
}

namespace {

ActorUpdate qwr_actor_update_discrete(
    const ActorNet& actor, const QNet& critic,
    const std::vector<const Transition*>& batch, const TrainerConfig& cfg) {
  Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  int n_actions = actor.space.n_actions;
  Eigen::MatrixXd states = stack_states(batch);
  Eigen::MatrixXd mu_probs(b, n_actions);
  for (Eigen::Index i = 0; i < b; ++i)
    mu_probs.row(i) = categorical_probs(
        std::get<CategoricalParams>(batch[static_cast<std::size_t>(i)]->mu_params));

  // Exact expectation over the stored policy's support instead of k samples.
  Eigen::MatrixXd q_all = q_values_all_actions(critic, states);
  Eigen::VectorXd v_hat = (mu_probs.array() * q_all.array()).rowwise().sum();
  Eigen::ArrayXXd advantages = q_all.array().colwise() - v_hat.array();

  AdvantageWeights weights =
      exponentiated_weights(advantages, cfg.beta, cfg.xi_clip);
  Eigen::ArrayXXd regression_w = mu_probs.array() * weights.xi;

  ForwardTrace trace = forward_trace(actor.net, states);
  Eigen::MatrixXd log_pi = log_softmax_rows(trace.output());
  double scale = 1.0 / static_cast<double>(b);

  ActorUpdate update;
  update.loss = -scale * (regression_w * log_pi.array()).sum();
  update.raw_advantage_std = weights.raw_std;
  update.norm_skipped = weights.norm_skipped;
  update.xi_clipped = weights.clipped;

  // d(-loss)/d(logits) with softmax pi of the live actor.
  Eigen::MatrixXd pi = log_pi.array().exp();
  Eigen::VectorXd w_row_sum = regression_w.rowwise().sum();
  Eigen::MatrixXd dlogits =
      -scale * (regression_w.matrix() - w_row_sum.asDiagonal() * pi);
  update.param_grad = backward(actor.net, trace, dlogits).param_grad;
  return update;
}

ActorUpdate qwr_actor_update_box(const ActorNet& actor, const QNet& critic,
                                 const std::vector<const Transition*>& batch,
                                 const TrainerConfig& cfg, Rng& rng) {
  Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  int dim = actor.space.dim;
  int k = cfg.k;
  Eigen::MatrixXd states = stack_states(batch);

  // k fresh draws per state from the stored sampling policy.
  Eigen::MatrixXd rep_states(b * k, states.cols());
  Eigen::MatrixXd sampled(b * k, dim);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& mu = batch[static_cast<std::size_t>(i)]->mu_params;
    auto actions = sample(mu, rng, k);
    for (int j = 0; j < k; ++j) {
      rep_states.row(i * k + j) = states.row(i);
      sampled.row(i * k + j) =
          std::get<Eigen::VectorXd>(actions[static_cast<std::size_t>(j)]);
    }
  }

  Eigen::VectorXd q = q_values(critic, rep_states, sampled);
  Eigen::ArrayXXd advantages(b, k);
  for (Eigen::Index i = 0; i < b; ++i) {
    auto q_i = q.segment(i * k, k);
    advantages.row(i) = q_i.array() - q_i.mean();
  }

  AdvantageWeights weights =
      exponentiated_weights(advantages, cfg.beta, cfg.xi_clip);

  ForwardTrace trace = forward_trace(actor.net, states);
  const Eigen::MatrixXd& means = trace.output();
  double sigma2 = actor.gaussian_std * actor.gaussian_std;
  double log_norm = std::log(actor.gaussian_std) +
                    0.5 * std::log(2.0 * std::numbers::pi);
  double scale = 1.0 / static_cast<double>(b * k);

  ActorUpdate update;
  update.raw_advantage_std = weights.raw_std;
  update.norm_skipped = weights.norm_skipped;
  update.xi_clipped = weights.clipped;
  Eigen::MatrixXd dmean = Eigen::MatrixXd::Zero(b, dim);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) {
      double xi = weights.xi(i, j);
      Eigen::VectorXd diff =
          sampled.row(i * k + j).transpose() - means.row(i).transpose();
      update.loss -= scale * xi *
                     (-0.5 * diff.squaredNorm() / sigma2 -
                      static_cast<double>(dim) * log_norm);
      dmean.row(i) -= scale * xi * (diff / sigma2).transpose();
    }
  }
  update.param_grad = backward(actor.net, trace, dmean).param_grad;
  return update;
}

}  // namespace

ActorUpdate qwr_actor_update(const ActorNet& actor, const QNet& critic,
                             const std::vector<const Transition*>& batch,
                             const TrainerConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ProtocolError("actor update over an empty batch");
  return actor.space.is_discrete()
             ? qwr_actor_update_discrete(actor, critic, batch, cfg)
             : qwr_actor_update_box(actor, critic, batch, cfg, rng);
}

double QwrTrainer::actor_step() {
  auto batch = buffer_.sample_batch(cfg_.batch_size, rng_actor_);
  ActorUpdate update = qwr_actor_update(actor_, qnet_, batch, cfg_, rng_actor_);
  if (!std::isfinite(update.loss))
    throw DivergenceError("non-finite actor loss", actor_steps_total_);
  last_advantage_std_ = update.raw_advantage_std;
  norm_skipped_ += update.norm_skipped;
  xi_clipped_ += update.xi_clipped;
  adam_step(actor_adam_, actor_.net.params(), update.param_grad);
  ++actor_steps_total_;
  return update.loss;
}

std::vector<double> QwrTrainer::evaluate(int n_episodes) {
  return evaluate_policy(*eval_env_, actor_, n_episodes, rng_eval_);
}

std::vector<IterationMetrics> QwrTrainer::train() {
  std::vector<IterationMetrics> metrics;
  metrics.reserve(static_cast<std::size_t>(cfg_.n_iterations));
  for (int iteration = 0; iteration < cfg_.n_iterations; ++iteration) {
    auto started = std::chrono::steady_clock::now();
    if (!cfg_.offline) collect(cfg_.interactions_per_iteration);
    if (buffer_.empty())
      throw ProtocolError("offline training needs a preloaded dataset");

    long norm_skipped_before = norm_skipped_;
    long clipped_before = xi_clipped_;
    std::vector<double> critic_losses;
    critic_losses.reserve(static_cast<std::size_t>(cfg_.n_critic_steps));
    begin_critic_loop();
    for (int i = 0; i < cfg_.n_critic_steps; ++i)
      critic_losses.push_back(critic_step());

    std::vector<double> actor_losses;
    actor_losses.reserve(static_cast<std::size_t>(cfg_.n_actor_steps));
    std::vector<double> advantage_stds;
    for (int i = 0; i < cfg_.n_actor_steps; ++i) {
      actor_losses.push_back(actor_step());
      advantage_stds.push_back(last_advantage_std_);
    }

    std::vector<double> eval_returns = evaluate(cfg_.n_eval_episodes);

    IterationMetrics row;
    row.iteration = iteration;
    row.env_steps_total = env_steps_;
    row.eval_return_mean = mean_of(eval_returns);
    row.eval_return_median = median_of(eval_returns);
    row.critic_loss_mean = mean_of(critic_losses);
    row.actor_loss_mean = mean_of(actor_losses);
    row.advantage_std = mean_of(advantage_stds);
    row.norm_skipped = norm_skipped_ - norm_skipped_before;
    row.xi_clipped = xi_clipped_ - clipped_before;
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    metrics.push_back(row);
  }
  return metrics;
}

}  // namespace qwrlab
