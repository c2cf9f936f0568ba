#include "qwrlab/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"
#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

std::string state_key(const Eigen::VectorXd& state) {
  return {reinterpret_cast<const char*>(state.data()),
          static_cast<std::size_t>(state.size()) * sizeof(double)};
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("capacity must be >= 1");
}

void ReplayBuffer::append_trajectory(std::vector<Transition> trajectory) {
  if (trajectory.empty())
    throw std::invalid_argument("empty trajectory");
  if (trajectory.size() > capacity_)
    throw std::invalid_argument("trajectory longer than buffer capacity");
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (trajectory[i].step_index !=
        trajectory.front().step_index + static_cast<int>(i))
      throw std::invalid_argument("trajectory step indices not contiguous");
    if (trajectory[i].traj_id != trajectory.front().traj_id)
      throw std::invalid_argument("trajectory mixes traj_ids");
    if (trajectory[i].done && i + 1 != trajectory.size())
      throw std::invalid_argument("done before the last step");
  }
  total_ += trajectory.size();
  trajectories_.push_back(std::move(trajectory));
  while (total_ > capacity_) {
    total_ -= trajectories_.front().size();
    trajectories_.pop_front();
  }
  index_dirty_ = true;
}

void ReplayBuffer::rebuild_index() const {
  cumulative_.clear();
  cumulative_.reserve(trajectories_.size());
  std::size_t acc = 0;
  for (const auto& traj : trajectories_) {
    acc += traj.size();
    cumulative_.push_back(acc);
  }
  index_dirty_ = false;
}

std::pair<std::size_t, std::size_t> ReplayBuffer::locate(
    std::size_t flat_index) const {
  if (flat_index >= total_) throw std::out_of_range("replay index");
  if (index_dirty_) rebuild_index();
  auto it =
      std::upper_bound(cumulative_.begin(), cumulative_.end(), flat_index);
  std::size_t traj = static_cast<std::size_t>(it - cumulative_.begin());
  std::size_t before = traj == 0 ? 0 : cumulative_[traj - 1];
  return {traj, flat_index - before};
}

const Transition& ReplayBuffer::at(std::size_t flat_index) const {
  auto [traj, step] = locate(flat_index);
  return trajectories_[traj][step];
}

const std::vector<Transition>* ReplayBuffer::find_trajectory(
    long traj_id) const {
  for (const auto& traj : trajectories_)
    if (traj.front().traj_id == traj_id) return &traj;
  return nullptr;
}

std::vector<const Transition*> ReplayBuffer::sample_batch(int n,
                                                          Rng& rng) const {
  if (empty()) throw ProtocolError("sampling from an empty replay buffer");
  if (n < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<const Transition*> batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto [traj, step] = locate(
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(total_))));
    batch.push_back(&trajectories_[traj][step]);
  }
  return batch;
}

MultiStepWindow ReplayBuffer::make_window(std::size_t traj, std::size_t start,
                                          int horizon) const {
  const auto& trajectory = trajectories_[traj];
  std::size_t len = std::min(static_cast<std::size_t>(horizon),
                             trajectory.size() - start);
  MultiStepWindow window;
  window.steps.assign(trajectory.begin() + static_cast<std::ptrdiff_t>(start),
                      trajectory.begin() +
                          static_cast<std::ptrdiff_t>(start + len));
  window.bootstrap_state = window.steps.back().next_state;
  window.truncated_by_terminal = window.steps.back().done;
  if (start + len < trajectory.size())
    window.bootstrap_mu = trajectory[start + len].mu_params;
  window.traj_id = window.steps.front().traj_id;
  window.start_index = window.steps.front().step_index;
  return window;
}

std::vector<MultiStepWindow> ReplayBuffer::sample_windows(int n, int horizon,
                                                          Rng& rng) const {
  if (empty()) throw ProtocolError("sampling from an empty replay buffer");
  if (n < 1) throw std::invalid_argument("batch size must be >= 1");
  if (horizon < 1) throw std::invalid_argument("window horizon must be >= 1");
  std::vector<MultiStepWindow> windows;
  windows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto [traj, step] = locate(
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(total_))));
    windows.push_back(make_window(traj, step, horizon));
  }
  return windows;
}

bool ReplayBuffer::satisfies_sda() const {
  std::unordered_map<std::string, const Transition*> seen;
  seen.reserve(total_);
  for (const auto& traj : trajectories_) {
    for (const auto& t : traj) {
      auto [it, inserted] = seen.emplace(state_key(t.state), &t);
      if (!inserted && !actions_equal(it->second->action, t.action))
        return false;
    }
  }
  return true;
}

void write_dataset(const std::filesystem::path& path,
                   const std::vector<RawTrajectory>& trajectories) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& traj : trajectories) {
    nlohmann::ordered_json line;
    auto& states = line["states"] = nlohmann::json::array();
    for (const auto& s : traj.states)
      states.push_back(std::vector<double>(s.data(), s.data() + s.size()));
    auto& actions = line["actions"] = nlohmann::json::array();
    for (const auto& a : traj.actions) {
      if (std::holds_alternative<int>(a)) {
        actions.push_back(std::get<int>(a));
      } else {
        const auto& v = std::get<Eigen::VectorXd>(a);
        actions.push_back(std::vector<double>(v.data(), v.data() + v.size()));
      }
    }
    line["rewards"] = traj.rewards;
    out << line.dump() << '\n';
  }
}

std::vector<RawTrajectory> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DecodeError("cannot open dataset " + path.string());
  std::vector<RawTrajectory> trajectories;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DecodeError("dataset line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    RawTrajectory traj;
    try {
      for (const auto& s : row.at("states")) {
        auto values = s.get<std::vector<double>>();
        traj.states.push_back(Eigen::Map<const Eigen::VectorXd>(
            values.data(), static_cast<Eigen::Index>(values.size())));
      }
      for (const auto& a : row.at("actions")) {
        if (a.is_number_integer()) {
          traj.actions.push_back(discrete_action(a.get<int>()));
        } else if (a.is_number()) {
          traj.actions.push_back(box_action(a.get<double>()));
        } else {
          auto values = a.get<std::vector<double>>();
          Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(
              values.data(), static_cast<Eigen::Index>(values.size()));
          traj.actions.push_back(Action{std::move(v)});
        }
      }
      traj.rewards = row.at("rewards").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DecodeError("dataset line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    if (traj.actions.empty() || traj.states.size() != traj.actions.size() + 1 ||
        traj.rewards.size() != traj.actions.size())
      throw DecodeError("dataset line " + std::to_string(line_no) +
                        ": states/actions/rewards lengths disagree");
    trajectories.push_back(std::move(traj));
  }
  if (trajectories.empty()) throw DecodeError("dataset is empty");
  return trajectories;
}

double dataset_behavior_mean(const std::filesystem::path& path) {
  auto trajectories = read_dataset(path);
  double total = 0.0;
  for (const auto& traj : trajectories)
    for (double r : traj.rewards) total += r;
  return total / static_cast<double>(trajectories.size());
}

std::vector<std::vector<Transition>> dataset_to_transitions(
    const std::vector<RawTrajectory>& raw, const ActionSpace& space,
    double gaussian_std, double smoothing_eps) {
  std::vector<std::vector<Transition>> out;
  out.reserve(raw.size());
  long traj_id = 0;
  for (const auto& traj : raw) {
    std::vector<Transition> steps;
    steps.reserve(traj.actions.size());
    for (std::size_t i = 0; i < traj.actions.size(); ++i) {
      Transition t;
      t.state = traj.states[i];
      t.action = traj.actions[i];
      t.reward = traj.rewards[i];
      t.next_state = traj.states[i + 1];
      t.done = i + 1 == traj.actions.size();
      t.traj_id = traj_id;
      t.step_index = static_cast<int>(i);
      if (space.is_discrete()) {
        int a = std::get<int>(t.action);
        if (a < 0 || a >= space.n_actions)
          throw DecodeError("dataset action out of range");
        Eigen::VectorXd probs = Eigen::VectorXd::Constant(
            space.n_actions, smoothing_eps / space.n_actions);
        probs[a] += 1.0 - smoothing_eps;
        t.mu_params = CategoricalParams{probs.array().log().matrix()};
      } else {
        const auto& v = std::get<Eigen::VectorXd>(t.action);
        if (v.size() != space.dim)
          throw DecodeError("dataset action dimension mismatch");
        t.mu_params = GaussianParams{v, gaussian_std};
      }
      steps.push_back(std::move(t));
    }
    out.push_back(std::move(steps));
    ++traj_id;
  }
  return out;
}

}  // namespace qwrlab
