#include "qwrlab/awr.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

std::vector<LayerSpec> value_layers(int obs_dim,
                                    const std::vector<int>& hidden) {
  std::vector<LayerSpec> layers;
  int in = obs_dim;
  for (int width : hidden) {
    layers.push_back({in, width, Activation::relu});
    in = width;
  }
  layers.push_back({in, 1, Activation::identity});
  return layers;
}

std::vector<LayerSpec> actor_layers(int obs_dim, const std::vector<int>& hidden,
                                    const ActionSpace& space) {
  std::vector<LayerSpec> layers;
  int in = obs_dim;
  for (int width : hidden) {
    layers.push_back({in, width, Activation::relu});
    in = width;
  }
  layers.push_back({in, space.is_discrete() ? space.n_actions : space.dim,
                    Activation::identity});
  return layers;
}

}  // namespace

std::vector<double> td_lambda_returns(const std::vector<Transition>& trajectory,
                                      const Net& vnet, double gamma,
                                      double lambda) {
  if (trajectory.empty()) throw std::invalid_argument("empty trajectory");
  std::size_t length = trajectory.size();

  // V at the successor of every step; 0 past a terminal.
  Eigen::MatrixXd next_states(length, trajectory.front().state.size());
  for (std::size_t t = 0; t < length; ++t)
    next_states.row(static_cast<Eigen::Index>(t)) = trajectory[t].next_state;
  Eigen::VectorXd v_next = forward(vnet, next_states).col(0);
  if (trajectory.back().done) v_next[static_cast<Eigen::Index>(length - 1)] = 0.0;

  // Backward recursion of the truncated TD(lambda) blend.
  std::vector<double> returns(length);
  double tail = trajectory.back().reward +
                gamma * v_next[static_cast<Eigen::Index>(length - 1)];
  returns[length - 1] = tail;
  for (std::size_t t = length - 1; t-- > 0;) {
    returns[t] = trajectory[t].reward +
                 gamma * ((1.0 - lambda) * v_next[static_cast<Eigen::Index>(t)] +
                          lambda * returns[t + 1]);
  }
  return returns;
}

AwrTrainer::AwrTrainer(TrainerConfig config, std::unique_ptr<Environment> env,
                       std::unique_ptr<Environment> eval_env)
    : cfg_(std::move(config)),
      env_(std::move(env)),
      eval_env_(std::move(eval_env)),
      space_(eval_env_->action_space()),
      actor_(actor_layers(eval_env_->observation_dim(), cfg_.hidden_widths,
                          space_),
             derive_seed(cfg_.seed, 1), space_, cfg_.gaussian_std),
      vnet_(value_layers(eval_env_->observation_dim(), cfg_.hidden_widths),
            derive_seed(cfg_.seed, 2)),
      actor_adam_(static_cast<std::size_t>(actor_.net.params().size()),
                  cfg_.actor_lr),
      critic_adam_(static_cast<std::size_t>(vnet_.params().size()),
                   cfg_.critic_lr),
      buffer_(cfg_.buffer_capacity),
      rng_collect_(derive_seed(cfg_.seed, 3)),
      rng_critic_(derive_seed(cfg_.seed, 4)),
      rng_actor_(derive_seed(cfg_.seed, 5)),
      rng_eval_(derive_seed(cfg_.seed, 6)) {
  cfg_.validate();
  if (!cfg_.offline && !env_)
    throw ConfigError("env", "online training needs an environment");
}

void AwrTrainer::preload(
    const std::vector<std::vector<Transition>>& trajectories) {
  for (const auto& traj : trajectories) buffer_.append_trajectory(traj);
}

int AwrTrainer::collect(int n_interactions) {
  if (!env_) throw ProtocolError("collect called without an environment");
  return collect_trajectories(*env_, actor_, n_interactions, buffer_,
                              rng_collect_, traj_counter_, env_steps_);
}

Eigen::VectorXd AwrTrainer::batch_returns(
    const std::vector<const Transition*>& batch) {
  double lambda =
      cfg_.awr_returns == AwrReturns::monte_carlo ? 1.0 : cfg_.lambda;
  std::unordered_map<long, std::vector<double>> by_trajectory;
  Eigen::VectorXd returns(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    long id = batch[i]->traj_id;
    auto it = by_trajectory.find(id);
    if (it == by_trajectory.end()) {
      const auto* traj = buffer_.find_trajectory(id);
      if (!traj) throw ProtocolError("sampled trajectory missing from buffer");
      it = by_trajectory
               .emplace(id, td_lambda_returns(*traj, vnet_, cfg_.gamma, lambda))
               .first;
    }
    std::size_t offset = static_cast<std::size_t>(
        batch[i]->step_index -
        buffer_.find_trajectory(id)->front().step_index);
    returns[static_cast<Eigen::Index>(i)] = it->second[offset];
  }
  return returns;
}

double AwrTrainer::critic_step() {
  auto batch = buffer_.sample_batch(cfg_.batch_size, rng_critic_);
  Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd states(b, eval_env_->observation_dim());
  for (Eigen::Index i = 0; i < b; ++i)
    states.row(i) = batch[static_cast<std::size_t>(i)]->state;

  Eigen::VectorXd targets = batch_returns(batch);  // constants for the step
  ForwardTrace trace = forward_trace(vnet_, states);
  Eigen::VectorXd v = trace.output().col(0);
  Eigen::VectorXd residual = v - targets;
  double loss = residual.squaredNorm() / static_cast<double>(b);
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite critic loss", critic_steps_total_);

  Eigen::MatrixXd dv = (2.0 / static_cast<double>(b)) * residual;
  BackwardResult back = backward(vnet_, trace, dv);
  adam_step(critic_adam_, vnet_.params(), back.param_grad);
  ++critic_steps_total_;
  return loss;
}

ActorUpdate awr_actor_update(const ActorNet& actor, const Net& vnet,
                             const Eigen::VectorXd& returns,
                             const std::vector<const Transition*>& batch,
                             const TrainerConfig& cfg) {
  if (batch.empty()) throw ProtocolError("actor update over an empty batch");
  Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd states(b, batch.front()->state.size());
  for (Eigen::Index i = 0; i < b; ++i)
    states.row(i) = batch[static_cast<std::size_t>(i)]->state;

  Eigen::VectorXd v = forward(vnet, states).col(0);
  Eigen::ArrayXXd advantages = (returns - v).array();

  AdvantageWeights weights =
      exponentiated_weights(advantages, cfg.beta, cfg.xi_clip);
  Eigen::VectorXd xi = weights.xi.col(0);

  ForwardTrace trace = forward_trace(actor.net, states);
  double scale = 1.0 / static_cast<double>(b);

  ActorUpdate update;
  update.raw_advantage_std = weights.raw_std;
  update.norm_skipped = weights.norm_skipped;
  update.xi_clipped = weights.clipped;
  Eigen::MatrixXd cotangent;

  if (actor.space.is_discrete()) {
    const Eigen::MatrixXd& logits = trace.output();
    Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    Eigen::MatrixXd shifted = logits.colwise() - row_max;
    Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
    Eigen::MatrixXd log_pi = shifted.colwise() - lse;
    Eigen::MatrixXd pi = log_pi.array().exp();
    cotangent = Eigen::MatrixXd::Zero(b, actor.space.n_actions);
    for (Eigen::Index i = 0; i < b; ++i) {
      int a = std::get<int>(batch[static_cast<std::size_t>(i)]->action);
      update.loss -= scale * xi[i] * log_pi(i, a);
      cotangent.row(i) = scale * xi[i] * pi.row(i);
      cotangent(i, a) -= scale * xi[i];
    }
  } else {
    const Eigen::MatrixXd& means = trace.output();
    double sigma2 = actor.gaussian_std * actor.gaussian_std;
    double log_norm = std::log(actor.gaussian_std) +
                      0.5 * std::log(2.0 * std::numbers::pi);
    cotangent = Eigen::MatrixXd::Zero(b, actor.space.dim);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& a = std::get<Eigen::VectorXd>(
          batch[static_cast<std::size_t>(i)]->action);
      Eigen::VectorXd diff = a - means.row(i).transpose();
      update.loss -= scale * xi[i] *
                     (-0.5 * diff.squaredNorm() / sigma2 -
                      static_cast<double>(actor.space.dim) * log_norm);
      cotangent.row(i) = scale * xi[i] * (-diff / sigma2).transpose();
    }
  }
  update.param_grad = backward(actor.net, trace, cotangent).param_grad;
  return update;
}

double AwrTrainer::actor_step() {
  auto batch = buffer_.sample_batch(cfg_.batch_size, rng_actor_);
  Eigen::VectorXd returns = batch_returns(batch);
  ActorUpdate update = awr_actor_update(actor_, vnet_, returns, batch, cfg_);
  if (!std::isfinite(update.loss))
    throw DivergenceError("non-finite actor loss", actor_steps_total_);
  last_advantage_std_ = update.raw_advantage_std;
  norm_skipped_ += update.norm_skipped;
  xi_clipped_ += update.xi_clipped;
  adam_step(actor_adam_, actor_.net.params(), update.param_grad);
  ++actor_steps_total_;
  return update.loss;
}

std::vector<double> AwrTrainer::evaluate(int n_episodes) {
  return evaluate_policy(*eval_env_, actor_, n_episodes, rng_eval_);
}

std::vector<IterationMetrics> AwrTrainer::train() {
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
    for (int i = 0; i < cfg_.n_critic_steps; ++i)
      critic_losses.push_back(critic_step());
    std::vector<double> actor_losses;
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
