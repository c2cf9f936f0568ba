#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <variant>
#include <vector>

#include "json.hpp"
#include "qwrlab/rng.hpp"

namespace qwrlab {

struct ActionSpace {
  enum class Kind { discrete, box };
  Kind kind = Kind::discrete;
  int n_actions = 0;  // discrete
  int dim = 0;        // box

  static ActionSpace discrete(int n) { return {Kind::discrete, n, 0}; }
  static ActionSpace box(int dim) { return {Kind::box, 0, dim}; }
  bool is_discrete() const { return kind == Kind::discrete; }
};

using Action = std::variant<int, Eigen::VectorXd>;

inline Action discrete_action(int a) { return Action{a}; }
inline Action box_action(double a) {
  Eigen::VectorXd v(1);
  v[0] = a;
  return Action{std::move(v)};
}

bool actions_equal(const Action& a, const Action& b);

struct StepResult {
  Eigen::VectorXd next_obs;
  double reward = 0.0;
  bool done = false;
};

// --- BitFlip: N bits plus a step counter; action i toggles bit i. The
// episode runs for exactly 5 steps; reward is +1 for flipping a 0 to 1 and
// -1 for the opposite. Reset draws uniform bit vectors with >= 5 zeros.

inline constexpr int kBitFlipHorizon = 5;
inline constexpr int kBitFlipMinZeros = 5;

struct BitFlipState {
  std::vector<std::uint8_t> bits;
  int step_counter = 0;
};

BitFlipState bitflip_reset(int n, Rng& rng);
StepResult bitflip_step(BitFlipState& state, int action);
// Observation: bits as 0/1 reals, then step_counter / 5.
Eigen::VectorXd bitflip_observe(const BitFlipState& state);

// --- Point: 1-D continuous toy task. The position moves by the clamped
// action; reward is -|position - goal| with the goal at 0. Episodes last 20
// steps; starts are uniform in [-3, 3].

inline constexpr int kPointHorizon = 20;
inline constexpr double kPointGoal = 0.0;

struct PointState {
  double position = 0.0;
  int step_counter = 0;
};

PointState point_reset(Rng& rng);
StepResult point_step(PointState& state, double action);
Eigen::VectorXd point_observe(const PointState& state);

// --- Uniform environment interface for the training loops.

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int observation_dim() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual Eigen::VectorXd reset(Rng& rng) = 0;
  virtual StepResult step(const Action& action) = 0;
};

class BitFlipEnv : public Environment {
 public:
  explicit BitFlipEnv(int n);
  int observation_dim() const override { return n_ + 1; }
  ActionSpace action_space() const override { return ActionSpace::discrete(n_); }
  Eigen::VectorXd reset(Rng& rng) override;
  StepResult step(const Action& action) override;

 private:
  int n_;
  BitFlipState state_;
  bool live_ = false;
};

class PointEnv : public Environment {
 public:
  int observation_dim() const override { return 2; }
  ActionSpace action_space() const override { return ActionSpace::box(1); }
  Eigen::VectorXd reset(Rng& rng) override;
  StepResult step(const Action& action) override;

 private:
  PointState state_;
  bool live_ = false;
};

// Environment selected by name plus a JSON parameter block, e.g.
// {"env":"bitflip","n":16} or {"env":"point"}.
std::unique_ptr<Environment> make_env(const nlohmann::json& config);

// --- Tabular MDP used by the theory checks.

struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  // transition.row(s * n_actions + a) is the next-state distribution.
  Eigen::MatrixXd transition;
  Eigen::MatrixXd reward;  // n_states x n_actions
  double gamma = 0.99;

  void validate() const;
};

// Exact V of `policy` (rows are per-state action distributions) via the
// linear Bellman solve.
Eigen::VectorXd policy_value(const TabularMDP& mdp,
                             const Eigen::MatrixXd& policy);

// Exact Q of `policy`; Bellman residual is checked to 1e-10.
Eigen::MatrixXd tabular_q(const TabularMDP& mdp, const Eigen::MatrixXd& policy);

}  // namespace qwrlab
