#pragma once

#include <Eigen/Dense>
#include <vector>

#include "json.hpp"
#include "qwrlab/envs.hpp"
#include "qwrlab/rng.hpp"

namespace qwrlab {

// One weighted buffer entry over finite state/action ids.
struct WeightedCase {
  int state = 0;
  int action = 0;
  double xi = 1.0;
};

// Exact argmax of sum_i xi_i * log pi(a_i | s_i) over per-state
// distributions: pi(a|s) proportional to the xi mass on (s, a). On a buffer
// where each state carries one action this is the one-hot cloning policy,
// bitwise exact. Unobserved states get uniform rows.
Eigen::MatrixXd awr_optimum_discrete(const std::vector<WeightedCase>& buffer,
                                     int n_states, int n_actions);

struct GaussianCase {
  int state = 0;
  double action = 0.0;
  double xi = 1.0;
};

struct GaussianFit {
  double mean = 0.0;
  double stddev = 0.0;
};

// Per-state optimum of the weighted Gaussian log-density over the family
// sigma >= sigma_min: the weighted MLE with the deviation clamped from
// below. With one action per state this is (action, sigma_min).
std::vector<GaussianFit> awr_optimum_gaussian(
    const std::vector<GaussianCase>& buffer, int n_states, double sigma_min);

// The improved policy targeted by the weighted-regression actor update:
// pi*(a|s) proportional to mu(a|s) * exp((Q_mu(s,a) - V_mu(s)) / beta), with
// Q_mu exact from the linear Bellman solve. Two independent arithmetic
// routes must agree to 1e-12.
Eigen::MatrixXd qwr_target_policy(const TabularMDP& mdp,
                                  const Eigen::MatrixXd& mu, double beta);

// True iff V_{pi}(s) >= V_mu(s) - 1e-10 at every state where
// E_{a~pi} Q_mu(s,a) >= V_mu(s); both sides via exact solves.
bool policy_improvement_check(const TabularMDP& mdp, const Eigen::MatrixXd& mu,
                              const Eigen::MatrixXd& pi);

// --- Brute-force search routines, independent of the closed forms above.

// Argmax of sum_a weights[a] * log pi[a] over the simplex grid with
// `resolution` steps per coordinate.
Eigen::VectorXd simplex_grid_argmax(const Eigen::VectorXd& weights,
                                    int resolution);

// Adaptive-step projected gradient ascent on the weighted Gaussian
// log-likelihood, constrained to sigma >= sigma_min.
GaussianFit gaussian_ascent(const std::vector<GaussianCase>& cases,
                            double sigma_min, double start_mean,
                            double start_sigma);

// Seeded random tabular MDP with uniform-normalized transitions and rewards
// in [0, 1).
TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng);
Eigen::MatrixXd random_policy(int n_states, int n_actions, Rng& rng);

// Full verification suite: behavior-cloning optima (discrete and Gaussian),
// the target-policy closed form against grid search, and the policy
// improvement guarantee. Returns a pass/fail report.
nlohmann::json run_theorem_report(std::uint64_t seed);

}  // namespace qwrlab
