#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "qwrlab/net.hpp"
#include "qwrlab/policy.hpp"
#include "qwrlab/replay.hpp"
#include "qwrlab/rng.hpp"

namespace qwrlab {

// Aggregation over Q-values of sampled next actions: arithmetic mean, max,
// or scale-normalized log-sum-exp
//   F(X) = tau * s(X) * log[(1/|X|) * sum exp(x / (tau * s(X)))]
// with s(X) the mean absolute deviation or standard deviation (population
// form). When s(X) < 1e-8 the operator falls back to the mean.
struct BackupOperator {
  enum class Kind { mean, max, lse };
  enum class Scale { mean_abs_dev, std_dev };

  Kind kind = Kind::lse;
  double tau = 0.3;
  Scale scale = Scale::mean_abs_dev;

  static BackupOperator mean() { return {Kind::mean, 0.0, Scale::mean_abs_dev}; }
  static BackupOperator max() { return {Kind::max, 0.0, Scale::mean_abs_dev}; }
  static BackupOperator lse(double tau, Scale scale = Scale::mean_abs_dev) {
    if (!(tau > 0.0)) throw std::invalid_argument("lse needs tau > 0");
    return {Kind::lse, tau, scale};
  }
};

double apply_backup(const BackupOperator& op, std::span<const double> q_values);

// Exact-expectation form for discrete spaces: empirical averages are
// replaced by mu-weighted expectations and max runs over the support of mu.
// Weights must be a distribution.
double apply_backup_weighted(const BackupOperator& op,
                             const Eigen::VectorXd& q_values,
                             const Eigen::VectorXd& weights);

// Q-network: an observation tower o = MLP(s), an action embedding
// a = tanh(linear(enc(action))), the gate z = o .* a, and a scalar head.
class QNet {
 public:
  QNet(int obs_dim, int action_input_dim, const std::vector<int>& hidden,
       std::uint64_t seed);

  int obs_dim() const { return tower_.input_width(); }
  int action_input_dim() const { return embed_.input_width(); }
  int feature_dim() const { return tower_.output_width(); }

  const Net& tower() const { return tower_; }
  const Net& embed() const { return embed_; }
  const Net& head() const { return head_; }

  std::size_t param_count() const;
  Eigen::VectorXd flat_params() const;
  void set_flat_params(const Eigen::VectorXd& params);

 private:
  Net tower_;
  Net embed_;
  Net head_;
};

// One-hot for discrete actions, pass-through for box actions.
Eigen::VectorXd encode_action(const Action& action, int action_input_dim);

double q_value(const QNet& qnet, const Eigen::VectorXd& state,
               const Eigen::VectorXd& action_enc);
// Row-wise batch: q[i] = Q(states.row(i), action_encs.row(i)).
Eigen::VectorXd q_values(const QNet& qnet, const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& action_encs);
// All one-hot actions at once; result is states.rows() x n_actions.
Eigen::MatrixXd q_values_all_actions(const QNet& qnet,
                                     const Eigen::MatrixXd& states);

// Flat parameter gradient of sum_i dq[i] * Q(s_i, a_i).
Eigen::VectorXd q_backward(const QNet& qnet, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& action_encs,
                           const Eigen::VectorXd& dq);

// Hard copy of the live parameters into the frozen target copy.
void sync_target(const QNet& live, QNet& target);

struct QTarget {
  double value = 0.0;
  int horizon_used = 0;
  long traj_id = 0;
  int start_index = 0;
};

// Truncated TD(lambda) weighting of the per-horizon targets. `normalized`
// gives the final horizon the tail weight lambda^(h-1) so weights sum to 1;
// `literal` keeps (1-lambda)*lambda^(t-1) for every horizon.
enum class LambdaWeighting { normalized, literal };

// Blended multi-step bootstrapped target for the window's first transition.
// Per horizon t the bootstrap aggregates Q_target over k actions drawn from
// the stored sampling policy at the horizon's end state (exact expectation
// for categorical policies). A terminal final horizon has no bootstrap.
QTarget multistep_target(const MultiStepWindow& window, const QNet& target,
                         const BackupOperator& op, int k, double gamma,
                         double lambda, Rng& rng,
                         LambdaWeighting weighting = LambdaWeighting::normalized);

// Batched equivalent of mapping multistep_target over `windows`; consumes
// the rng in the same order.
std::vector<QTarget> multistep_targets(const std::vector<MultiStepWindow>& windows,
                                       const QNet& target,
                                       const BackupOperator& op, int k,
                                       double gamma, double lambda, Rng& rng,
                                       LambdaWeighting weighting =
                                           LambdaWeighting::normalized);

}  // namespace qwrlab
