#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "qwrlab/awr.hpp"
#include "qwrlab/errors.hpp"
#include "test_support.hpp"

using namespace qwrlab;
using testing::enumerate_td_lambda;
using testing::least_squares_slope;

namespace {

TrainerConfig small_config() {
  TrainerConfig cfg;
  cfg.hidden_widths = {16, 16};
  cfg.batch_size = 16;
  cfg.n_actor_steps = 5;
  cfg.n_critic_steps = 5;
  cfg.interactions_per_iteration = 50;
  cfg.n_iterations = 2;
  cfg.n_eval_episodes = 3;
  return cfg;
}

std::vector<Transition> synthetic_trajectory(int obs_dim, int n_actions,
                                             int length, long traj_id,
                                             Rng& rng) {
  std::vector<Eigen::VectorXd> states;
  for (int i = 0; i <= length; ++i)
    states.push_back(Eigen::VectorXd::NullaryExpr(
        obs_dim, [&](Eigen::Index) { return rng.uniform(-1, 1); }));
  std::vector<Transition> steps;
  for (int i = 0; i < length; ++i) {
    Transition t;
    t.state = states[static_cast<std::size_t>(i)];
    CategoricalParams cat;
    cat.logits = Eigen::VectorXd::Zero(n_actions);
    t.mu_params = cat;
    t.action = discrete_action(rng.uniform_int(n_actions));
    t.reward = rng.uniform(-1, 1);
    t.next_state = states[static_cast<std::size_t>(i) + 1];
    t.done = i + 1 == length;
    t.traj_id = traj_id;
    t.step_index = i;
    steps.push_back(std::move(t));
  }
  return steps;
}

}  // namespace

TEST_CASE("lambda 1 is the discounted monte carlo return") {
  Rng rng(1);
  Net vnet({{3, 8, Activation::relu}, {8, 1, Activation::identity}}, 2);
  auto traj = synthetic_trajectory(3, 2, 5, 0, rng);
  auto returns = td_lambda_returns(traj, vnet, 0.9, 1.0);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    double expected = 0.0;
    for (std::size_t d = t; d < traj.size(); ++d)
      expected += std::pow(0.9, static_cast<double>(d - t)) * traj[d].reward;
    CHECK(returns[t] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("lambda 0 is the one-step bootstrapped target") {
  Rng rng(2);
  Net vnet({{3, 8, Activation::relu}, {8, 1, Activation::identity}}, 3);
  auto traj = synthetic_trajectory(3, 2, 4, 0, rng);
  auto returns = td_lambda_returns(traj, vnet, 0.9, 0.0);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    double v_next =
        t + 1 < traj.size() ? forward(vnet, traj[t + 1].state)[0] : 0.0;
    CHECK(returns[t] ==
          doctest::Approx(traj[t].reward + 0.9 * v_next).epsilon(1e-12));
  }
}

TEST_CASE("td lambda recursion matches brute-force blend enumeration") {
  Rng rng(3);
  Net vnet({{3, 6, Activation::tanh}, {6, 1, Activation::identity}}, 4);
  for (int trial = 0; trial < 100; ++trial) {
    auto traj = synthetic_trajectory(3, 2, 1 + rng.uniform_int(6), trial, rng);
    for (double lambda : {0.0, 0.3, 0.95, 1.0}) {
      auto fast = td_lambda_returns(traj, vnet, 0.99, lambda);
      auto slow = enumerate_td_lambda(traj, vnet, 0.99, lambda);
      for (std::size_t t = 0; t < traj.size(); ++t)
        CHECK(fast[t] == doctest::Approx(slow[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("awr critic at its targets is a fixed point") {
  TrainerConfig cfg = small_config();
  cfg.offline = true;
  cfg.batch_size = 8;
  cfg.lambda = 1.0;  // pure monte carlo: no V in the target
  AwrTrainer trainer(cfg, nullptr, std::make_unique<BitFlipEnv>(6));
  Rng rng(5);
  // Zero rewards make every return 0; a zero output head predicts 0.
  std::vector<Transition> traj = synthetic_trajectory(7, 6, 5, 0, rng);
  for (auto& t : traj) t.reward = 0.0;
  trainer.preload({traj});
  Eigen::Index head = trainer.value_net().layers().back().input_width + 1;
  trainer.value_net().params().tail(head).setZero();
  Eigen::VectorXd before = trainer.value_net().params();
  double loss = trainer.critic_step();
  CHECK(loss == 0.0);
  CHECK(trainer.value_net().params() == before);
}

TEST_CASE("awr critic loss is definitional on a single transition") {
  TrainerConfig cfg = small_config();
  cfg.offline = true;
  cfg.batch_size = 4;
  AwrTrainer trainer(cfg, nullptr, std::make_unique<BitFlipEnv>(6));
  Rng rng(6);
  auto traj = synthetic_trajectory(7, 6, 1, 0, rng);
  traj[0].reward = 0.8;
  trainer.preload({traj});
  // One terminal transition: R = r exactly, so loss = (r - V(s))^2.
  double v = forward(trainer.value_net(), traj[0].state)[0];
  double loss = trainer.critic_step();
  CHECK(loss == doctest::Approx((0.8 - v) * (0.8 - v)).epsilon(1e-12));
}

TEST_CASE("awr critic loss trends down on a fixed dataset") {
  TrainerConfig cfg = small_config();
  cfg.offline = true;
  cfg.batch_size = 32;
  cfg.critic_lr = 1e-3;
  AwrTrainer trainer(cfg, nullptr, std::make_unique<BitFlipEnv>(6));
  Rng rng(7);
  std::vector<std::vector<Transition>> data;
  for (int i = 0; i < 20; ++i)
    data.push_back(synthetic_trajectory(7, 6, 5, i, rng));
  trainer.preload(data);
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(trainer.critic_step());
  CHECK(least_squares_slope(losses) < 0.0);
}

TEST_CASE("exact value estimates reduce the actor step to behavior cloning") {
  TrainerConfig cfg = small_config();
  ActorNet actor({{2, 8, Activation::relu}, {8, 3, Activation::identity}}, 1,
                 ActionSpace::discrete(3));
  Net vnet({{2, 4, Activation::relu}, {4, 1, Activation::identity}}, 2);

  Rng rng(8);
  std::vector<Transition> storage = synthetic_trajectory(2, 3, 6, 0, rng);
  std::vector<const Transition*> batch;
  for (const auto& t : storage) batch.push_back(&t);

  // Returns equal to V(s): all advantages zero, every weight 1.
  Eigen::MatrixXd states(6, 2);
  for (int i = 0; i < 6; ++i) states.row(i) = storage[static_cast<std::size_t>(i)].state;
  Eigen::VectorXd returns = forward(vnet, states).col(0);
  ActorUpdate update = awr_actor_update(actor, vnet, returns, batch, cfg);
  CHECK(update.norm_skipped);

  // Pure behavior cloning gradient toward the stored actions.
  ForwardTrace trace = forward_trace(actor.net, states);
  Eigen::MatrixXd logits = trace.output();
  Eigen::MatrixXd dlogits(6, 3);
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd shifted = logits.row(i).array() - logits.row(i).maxCoeff();
    Eigen::VectorXd pi = shifted.array().exp();
    pi /= pi.sum();
    int a = std::get<int>(storage[static_cast<std::size_t>(i)].action);
    dlogits.row(i) = pi.transpose() / 6.0;
    dlogits(i, a) -= 1.0 / 6.0;
  }
  Eigen::VectorXd bc_grad = backward(actor.net, trace, dlogits).param_grad;
  CHECK((update.param_grad - bc_grad).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("opposite advantages weight the positive action by exp(2a'/beta)") {
  for (double beta : {0.5, 1.0, 3.0}) {
    Eigen::ArrayXXd advantages(2, 1);
    advantages << 0.7, -0.7;
    AdvantageWeights w = exponentiated_weights(advantages, beta, 50.0);
    // Normalized values are +1 and -1, so the ratio is exp(2/beta).
    CHECK(w.xi(0, 0) / w.xi(1, 0) ==
          doctest::Approx(std::exp(2.0 / beta)).epsilon(1e-12));
    CHECK(w.xi(0, 0) > w.xi(1, 0));
  }
}

TEST_CASE("training a tabular softmax actor on an SDA buffer clones it") {
  // One-hot states make the single linear layer an exact tabular policy.
  const int n_states = 4;
  const int n_actions = 3;
  TrainerConfig cfg = small_config();
  cfg.actor_lr = 0.05;
  cfg.beta = 1.0;
  ActorNet actor({{n_states, n_actions, Activation::identity}}, 3,
                 ActionSpace::discrete(n_actions));
  Net vnet({{n_states, 1, Activation::identity}}, 4);
  vnet.params().setZero();

  std::vector<Transition> storage;
  Rng rng(9);
  std::vector<int> chosen(n_states);
  for (int s = 0; s < n_states; ++s) {
    Transition t;
    t.state = Eigen::VectorXd::Zero(n_states);
    t.state[s] = 1.0;
    CategoricalParams cat;
    cat.logits = Eigen::VectorXd::Zero(n_actions);
    t.mu_params = cat;
    chosen[static_cast<std::size_t>(s)] = rng.uniform_int(n_actions);
    t.action = discrete_action(chosen[static_cast<std::size_t>(s)]);
    t.reward = rng.uniform(0, 1);
    t.next_state = t.state;
    t.done = true;
    t.traj_id = s;
    t.step_index = 0;
    storage.push_back(std::move(t));
  }
  std::vector<const Transition*> batch;
  for (const auto& t : storage) batch.push_back(&t);

  AdamState adam(static_cast<std::size_t>(actor.net.params().size()),
                 cfg.actor_lr);
  Eigen::VectorXd returns(n_states);
  for (int s = 0; s < n_states; ++s) returns[s] = storage[static_cast<std::size_t>(s)].reward;
  for (int step = 0; step < 4000; ++step) {
    ActorUpdate update = awr_actor_update(actor, vnet, returns, batch, cfg);
    adam_step(adam, actor.net.params(), update.param_grad);
  }
  for (int s = 0; s < n_states; ++s) {
    Eigen::VectorXd state = Eigen::VectorXd::Zero(n_states);
    state[s] = 1.0;
    auto probs = categorical_probs(
        std::get<CategoricalParams>(policy_params(actor, state)));
    CHECK(probs[chosen[static_cast<std::size_t>(s)]] >= 0.99);
  }
}

TEST_CASE("awr and qwr actors share the network update machinery") {
  // Same batch, weights forced to 1 on both sides: gradient shapes agree and
  // both flow through the same backward pass.
  TrainerConfig cfg = small_config();
  cfg.beta = 1e18;
  cfg.k = 1;
  ActorNet actor({{3, 8, Activation::relu}, {8, 2, Activation::identity}}, 5,
                 ActionSpace::discrete(2));
  Net vnet({{3, 4, Activation::relu}, {4, 1, Activation::identity}}, 6);
  QNet qnet(3, 2, {4}, 7);
  Rng rng(10);
  auto storage = synthetic_trajectory(3, 2, 5, 0, rng);
  std::vector<const Transition*> batch;
  for (const auto& t : storage) batch.push_back(&t);
  Eigen::VectorXd returns = Eigen::VectorXd::Zero(5);
  Rng unused(0);
  ActorUpdate awr = awr_actor_update(actor, vnet, returns, batch, cfg);
  ActorUpdate qwr = qwr_actor_update(actor, qnet, batch, cfg, unused);
  CHECK(awr.param_grad.size() == qwr.param_grad.size());
  CHECK(awr.param_grad.allFinite());
  CHECK(qwr.param_grad.allFinite());
}

TEST_CASE("awr full runs are deterministic and bounded on bitflip") {
  TrainerConfig cfg = small_config();
  cfg.seed = 31;
  AwrTrainer a(cfg, std::make_unique<BitFlipEnv>(6),
               std::make_unique<BitFlipEnv>(6));
  AwrTrainer b(cfg, std::make_unique<BitFlipEnv>(6),
               std::make_unique<BitFlipEnv>(6));
  auto metrics_a = a.train();
  auto metrics_b = b.train();
  REQUIRE(metrics_a.size() == 2);
  for (std::size_t i = 0; i < metrics_a.size(); ++i) {
    CHECK(metrics_a[i].eval_return_mean == metrics_b[i].eval_return_mean);
    CHECK(metrics_a[i].eval_return_mean >= -5.0);
    CHECK(metrics_a[i].eval_return_mean <= 5.0);
  }
}

TEST_CASE("monte carlo switch changes the return estimator") {
  Rng rng(11);
  Net vnet({{3, 4, Activation::relu}, {4, 1, Activation::identity}}, 12);
  auto traj = synthetic_trajectory(3, 2, 4, 0, rng);
  auto td = td_lambda_returns(traj, vnet, 0.9, 0.95);
  auto mc = td_lambda_returns(traj, vnet, 0.9, 1.0);
  bool differs = false;
  for (std::size_t t = 0; t < traj.size(); ++t)
    differs |= std::abs(td[t] - mc[t]) > 1e-9;
  CHECK(differs);
}
