#include "qwrlab/envs.hpp"

#include <algorithm>
#include <cmath>

#include "qwrlab/errors.hpp"

namespace qwrlab {

bool actions_equal(const Action& a, const Action& b) {
  if (a.index() != b.index()) return false;
  if (std::holds_alternative<int>(a))
    return std::get<int>(a) == std::get<int>(b);
  const auto& va = std::get<Eigen::VectorXd>(a);
  const auto& vb = std::get<Eigen::VectorXd>(b);
  return va.size() == vb.size() && va == vb;
}

BitFlipState bitflip_reset(int n, Rng& rng) {
  if (n < kBitFlipMinZeros)
    throw std::invalid_argument("bitflip needs n >= 5");
  BitFlipState state;
  state.bits.resize(static_cast<std::size_t>(n));
  // Rejection-sample uniform bit vectors until at least 5 bits are zero.
  while (true) {
    int zeros = 0;
    for (auto& bit : state.bits) {
      bit = rng.bernoulli(0.5) ? 1 : 0;
      zeros += bit == 0;
    }
    if (zeros >= kBitFlipMinZeros) break;
  }
  state.step_counter = 0;
  return state;
}

StepResult bitflip_step(BitFlipState& state, int action) {
  if (state.step_counter >= kBitFlipHorizon)
    throw ProtocolError("bitflip episode is already done");
  if (action < 0 || action >= static_cast<int>(state.bits.size()))
    throw std::invalid_argument("bitflip action out of range");
  auto& bit = state.bits[static_cast<std::size_t>(action)];
  double reward = bit == 0 ? 1.0 : -1.0;
  bit ^= 1;
  state.step_counter += 1;
  return {bitflip_observe(state), reward, state.step_counter >= kBitFlipHorizon};
}

Eigen::VectorXd bitflip_observe(const BitFlipState& state) {
  Eigen::VectorXd obs(static_cast<Eigen::Index>(state.bits.size()) + 1);
  for (std::size_t i = 0; i < state.bits.size(); ++i)
    obs[static_cast<Eigen::Index>(i)] = state.bits[i];
  obs[obs.size() - 1] =
      static_cast<double>(state.step_counter) / kBitFlipHorizon;
  return obs;
}

PointState point_reset(Rng& rng) {
  return {rng.uniform(-3.0, 3.0), 0};
}

StepResult point_step(PointState& state, double action) {
  if (state.step_counter >= kPointHorizon)
    throw ProtocolError("point episode is already done");
  state.position += std::clamp(action, -1.0, 1.0);
  state.step_counter += 1;
  double reward = -std::abs(state.position - kPointGoal);
  return {point_observe(state), reward, state.step_counter >= kPointHorizon};
}

Eigen::VectorXd point_observe(const PointState& state) {
  Eigen::VectorXd obs(2);
  obs[0] = state.position;
  obs[1] = static_cast<double>(state.step_counter) / kPointHorizon;
  return obs;
}

BitFlipEnv::BitFlipEnv(int n) : n_(n) {
  if (n < kBitFlipMinZeros)
    throw std::invalid_argument("bitflip needs n >= 5");
}

Eigen::VectorXd BitFlipEnv::reset(Rng& rng) {
  state_ = bitflip_reset(n_, rng);
  live_ = true;
  return bitflip_observe(state_);
}

StepResult BitFlipEnv::step(const Action& action) {
  if (!live_) throw ProtocolError("step before reset");
  StepResult result = bitflip_step(state_, std::get<int>(action));
  if (result.done) live_ = false;
  return result;
}

Eigen::VectorXd PointEnv::reset(Rng& rng) {
  state_ = point_reset(rng);
  live_ = true;
  return point_observe(state_);
}

StepResult PointEnv::step(const Action& action) {
  if (!live_) throw ProtocolError("step before reset");
  const auto& v = std::get<Eigen::VectorXd>(action);
  if (v.size() != 1) throw std::invalid_argument("point action must be 1-D");
  StepResult result = point_step(state_, v[0]);
  if (result.done) live_ = false;
  return result;
}

std::unique_ptr<Environment> make_env(const nlohmann::json& config) {
  std::string name;
  try {
    name = config.at("env").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("env", "missing or non-string environment name");
  }
  if (name == "bitflip") {
    int n = config.value("n", 16);
    if (n < kBitFlipMinZeros)
      throw ConfigError("env.n", "bitflip needs n >= 5");
    return std::make_unique<BitFlipEnv>(n);
  }
  if (name == "point") return std::make_unique<PointEnv>();
  throw ConfigError("env", "unknown environment '" + name + "'");
}

void TabularMDP::validate() const {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("mdp needs at least one state and action");
  if (transition.rows() != static_cast<Eigen::Index>(n_states) * n_actions ||
      transition.cols() != n_states)
    throw std::invalid_argument("transition table shape mismatch");
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw std::invalid_argument("reward table shape mismatch");
  for (Eigen::Index r = 0; r < transition.rows(); ++r) {
    if (std::abs(transition.row(r).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("transition row " + std::to_string(r) +
                                  " does not sum to 1");
    if (transition.row(r).minCoeff() < 0.0)
      throw std::invalid_argument("negative transition probability");
  }
}

Eigen::VectorXd policy_value(const TabularMDP& mdp,
                             const Eigen::MatrixXd& policy) {
  mdp.validate();
  if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0))
    throw std::invalid_argument("gamma must be in (0, 1)");
  if (policy.rows() != mdp.n_states || policy.cols() != mdp.n_actions)
    throw std::invalid_argument("policy table shape mismatch");
  for (int s = 0; s < mdp.n_states; ++s)
    if (std::abs(policy.row(s).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("policy row does not sum to 1");

  // V = (I - gamma P_pi)^{-1} R_pi.
  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double p = policy(s, a);
      if (p == 0.0) continue;
      p_pi.row(s) += p * mdp.transition.row(s * mdp.n_actions + a);
      r_pi[s] += p * mdp.reward(s, a);
    }
  }
  Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi;
  return system.partialPivLu().solve(r_pi);
}

Eigen::MatrixXd tabular_q(const TabularMDP& mdp,
                          const Eigen::MatrixXd& policy) {
  Eigen::VectorXd v = policy_value(mdp, policy);
  Eigen::MatrixXd q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      q(s, a) = mdp.reward(s, a) +
                mdp.gamma * mdp.transition.row(s * mdp.n_actions + a).dot(v);

  // Bellman expectation residual must vanish.
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double backup = mdp.reward(s, a);
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        backup += mdp.gamma * mdp.transition(s * mdp.n_actions + a, s2) *
                  policy.row(s2).dot(q.row(s2));
      if (std::abs(backup - q(s, a)) > 1e-10)
        throw std::runtime_error("tabular_q residual exceeds 1e-10");
    }
  }
  return q;
}

}  // namespace qwrlab
