#pragma once

#include <Eigen/Dense>
#include <deque>
#include <filesystem>
#include <optional>
#include <unordered_map>
#include <vector>

#include "qwrlab/envs.hpp"
#include "qwrlab/policy.hpp"
#include "qwrlab/rng.hpp"

namespace qwrlab {

// One environment step together with the sampling-policy parameters that
// produced it.
struct Transition {
  Eigen::VectorXd state;
  PolicyParams mu_params;
  Action action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  long traj_id = 0;
  int step_index = 0;
};

// Contiguous slice of one trajectory plus what a bootstrapped target needs
// past its end: the state after the last step and, when the trajectory
// continues, the sampling-policy parameters stored at that state.
struct MultiStepWindow {
  std::vector<Transition> steps;
  Eigen::VectorXd bootstrap_state;
  bool truncated_by_terminal = false;
  std::optional<PolicyParams> bootstrap_mu;
  long traj_id = 0;
  int start_index = 0;
};

// Trajectory store with FIFO eviction of whole trajectories.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void append_trajectory(std::vector<Transition> trajectory);

  std::size_t size() const { return total_; }
  bool empty() const { return total_ == 0; }
  std::size_t capacity() const { return capacity_; }
  std::size_t num_trajectories() const { return trajectories_.size(); }

  // Insertion-order access over all stored transitions.
  const Transition& at(std::size_t flat_index) const;
  const std::vector<Transition>* find_trajectory(long traj_id) const;

  // Uniform with replacement; seeded-deterministic. Pointers stay valid
  // until the next append.
  std::vector<const Transition*> sample_batch(int n, Rng& rng) const;
  std::vector<MultiStepWindow> sample_windows(int n, int horizon,
                                              Rng& rng) const;

  // True iff no two stored transitions share a bitwise-equal state with
  // different actions.
  bool satisfies_sda() const;

 private:
  MultiStepWindow make_window(std::size_t traj, std::size_t start,
                              int horizon) const;
  std::pair<std::size_t, std::size_t> locate(std::size_t flat_index) const;
  void rebuild_index() const;

  std::size_t capacity_;
  std::deque<std::vector<Transition>> trajectories_;
  std::size_t total_ = 0;
  mutable std::vector<std::size_t> cumulative_;  // per-trajectory end offsets
  mutable bool index_dirty_ = true;
};

// --- Offline datasets: JSONL with one trajectory per line,
// {"states":[[..],..],"actions":[..],"rewards":[..]}. States include the
// final state, so there is one more state than actions.

struct RawTrajectory {
  std::vector<Eigen::VectorXd> states;  // length n_steps + 1
  std::vector<Action> actions;
  std::vector<double> rewards;
};

void write_dataset(const std::filesystem::path& path,
                   const std::vector<RawTrajectory>& trajectories);
std::vector<RawTrajectory> read_dataset(const std::filesystem::path& path);

// Mean undiscounted return per trajectory in the file.
double dataset_behavior_mean(const std::filesystem::path& path);

// Turns raw trajectories into replay transitions, reconstructing the
// sampling policy: Gaussians centered on the performed action for continuous
// spaces, epsilon-smoothed one-hot for discrete ones.
std::vector<std::vector<Transition>> dataset_to_transitions(
    const std::vector<RawTrajectory>& raw, const ActionSpace& space,
    double gaussian_std, double smoothing_eps);

}  // namespace qwrlab
