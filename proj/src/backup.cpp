#include "qwrlab/backup.hpp"

#include <cmath>
#include <limits>

#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

constexpr double kScaleFloor = 1e-8;

void check_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw DivergenceError("non-finite q-value in backup", -1);
}

double weighted_scale(BackupOperator::Scale scale, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& w) {
  double mean = w.dot(x);
  if (scale == BackupOperator::Scale::mean_abs_dev)
    return w.dot((x.array() - mean).abs().matrix());
  return std::sqrt(w.dot((x.array() - mean).square().matrix()));
}

// Shift-stable scale-normalized log-sum-exp with expectation weights w.
double weighted_lse(double tau, BackupOperator::Scale scale,
                    const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  double s = weighted_scale(scale, x, w);
  if (s < kScaleFloor) return w.dot(x);
  double inv = 1.0 / (tau * s);
  double shift = x.maxCoeff() * inv;
  double acc = (w.array() * ((x.array() * inv) - shift).exp()).sum();
  return tau * s * (shift + std::log(acc));
}

}  // namespace

double apply_backup(const BackupOperator& op,
                    std::span<const double> q_values) {
  if (q_values.empty()) throw ProtocolError("backup over an empty q-value set");
  check_finite(q_values);
  Eigen::Map<const Eigen::VectorXd> x(q_values.data(),
                                      static_cast<Eigen::Index>(q_values.size()));
  switch (op.kind) {
    case BackupOperator::Kind::mean:
      return x.mean();
    case BackupOperator::Kind::max:
      return x.maxCoeff();
    case BackupOperator::Kind::lse: {
      Eigen::VectorXd w =
          Eigen::VectorXd::Constant(x.size(), 1.0 / static_cast<double>(x.size()));
      return weighted_lse(op.tau, op.scale, x, w);
    }
  }
  return 0.0;
}

double apply_backup_weighted(const BackupOperator& op,
                             const Eigen::VectorXd& q_values,
                             const Eigen::VectorXd& weights) {
  if (q_values.size() == 0) throw ProtocolError("backup over an empty q-value set");
  if (q_values.size() != weights.size())
    throw std::invalid_argument("backup weights length mismatch");
  check_finite({q_values.data(), static_cast<std::size_t>(q_values.size())});
  switch (op.kind) {
    case BackupOperator::Kind::mean:
      return weights.dot(q_values);
    case BackupOperator::Kind::max: {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < q_values.size(); ++a)
        if (weights[a] > 0.0) best = std::max(best, q_values[a]);
      if (!std::isfinite(best))
        throw std::invalid_argument("backup weights have empty support");
      return best;
    }
    case BackupOperator::Kind::lse:
      return weighted_lse(op.tau, op.scale, q_values, weights);
  }
  return 0.0;
}

QNet::QNet(int obs_dim, int action_input_dim, const std::vector<int>& hidden,
           std::uint64_t seed)
    : tower_(
          [&] {
            if (hidden.empty())
              throw std::invalid_argument("qnet needs at least one hidden layer");
            std::vector<LayerSpec> layers;
            int in = obs_dim;
            for (int width : hidden) {
              layers.push_back({in, width, Activation::relu});
              in = width;
            }
            return layers;
          }(),
          derive_seed(seed, 0)),
      embed_({{action_input_dim, hidden.back(), Activation::tanh}},
             derive_seed(seed, 1)),
      head_({{hidden.back(), 1, Activation::identity}}, derive_seed(seed, 2)) {}

std::size_t QNet::param_count() const {
  return static_cast<std::size_t>(tower_.params().size() +
                                  embed_.params().size() +
                                  head_.params().size());
}

Eigen::VectorXd QNet::flat_params() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count()));
  flat << tower_.params(), embed_.params(), head_.params();
  return flat;
}

void QNet::set_flat_params(const Eigen::VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(param_count()))
    throw std::invalid_argument("qnet parameter length mismatch");
  Eigen::Index offset = 0;
  for (Net* net : {&tower_, &embed_, &head_}) {
    net->params() = params.segment(offset, net->params().size());
    offset += net->params().size();
  }
}

Eigen::VectorXd encode_action(const Action& action, int action_input_dim) {
  if (const int* a = std::get_if<int>(&action)) {
    if (*a < 0 || *a >= action_input_dim)
      throw std::invalid_argument("discrete action out of range");
    Eigen::VectorXd enc = Eigen::VectorXd::Zero(action_input_dim);
    enc[*a] = 1.0;
    return enc;
  }
  const auto& v = std::get<Eigen::VectorXd>(action);
  if (v.size() != action_input_dim)
    throw std::invalid_argument("action dimension mismatch");
  return v;
}

Eigen::VectorXd q_values(const QNet& qnet, const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& action_encs) {
  if (states.rows() != action_encs.rows())
    throw std::invalid_argument("state/action batch size mismatch");
  Eigen::MatrixXd o = forward(qnet.tower(), states);
  Eigen::MatrixXd g = forward(qnet.embed(), action_encs);
  Eigen::MatrixXd z = o.cwiseProduct(g);
  return forward(qnet.head(), z).col(0);
}

double q_value(const QNet& qnet, const Eigen::VectorXd& state,
               const Eigen::VectorXd& action_enc) {
  return q_values(qnet, state.transpose(), action_enc.transpose())[0];
}

Eigen::MatrixXd q_values_all_actions(const QNet& qnet,
                                     const Eigen::MatrixXd& states) {
  // The one-hot embedding of action a is column a of the embed weights plus
  // the bias, so all actions reduce to one matrix product:
  //   Q(s, a) = tower(s) . (head_w .* tanh(W_col_a + b)) + head_b.
  int n_actions = qnet.action_input_dim();
  int feat = qnet.feature_dim();
  const auto& embed_params = qnet.embed().params();
  using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                     Eigen::Dynamic, Eigen::RowMajor>>;
  RowMajorMap embed_w(embed_params.data(), feat, n_actions);
  auto embed_b = embed_params.segment(
      static_cast<Eigen::Index>(feat) * n_actions, feat);
  const auto& head_params = qnet.head().params();
  auto head_w = head_params.head(feat);
  double head_b = head_params[feat];

  Eigen::MatrixXd gated =
      (embed_w.colwise() + embed_b).array().tanh().colwise() *
      head_w.array();
  Eigen::MatrixXd o = forward(qnet.tower(), states);
  return (o * gated).array() + head_b;
}

Eigen::VectorXd q_backward(const QNet& qnet, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& action_encs,
                           const Eigen::VectorXd& dq) {
  if (states.rows() != action_encs.rows() || states.rows() != dq.size())
    throw std::invalid_argument("q_backward batch size mismatch");
  ForwardTrace tower_trace = forward_trace(qnet.tower(), states);
  ForwardTrace embed_trace = forward_trace(qnet.embed(), action_encs);
  const Eigen::MatrixXd& o = tower_trace.output();
  const Eigen::MatrixXd& g = embed_trace.output();
  ForwardTrace head_trace = forward_trace(qnet.head(), o.cwiseProduct(g));

  BackwardResult head_back = backward(qnet.head(), head_trace, dq);
  BackwardResult tower_back =
      backward(qnet.tower(), tower_trace, head_back.input_grad.cwiseProduct(g));
  BackwardResult embed_back =
      backward(qnet.embed(), embed_trace, head_back.input_grad.cwiseProduct(o));

  Eigen::VectorXd grad(static_cast<Eigen::Index>(qnet.param_count()));
  grad << tower_back.param_grad, embed_back.param_grad, head_back.param_grad;
  return grad;
}

void sync_target(const QNet& live, QNet& target) {
  target.set_flat_params(live.flat_params());
}

namespace {

// Per-horizon bootstrap request of one window.
struct BootstrapRef {
  std::size_t window;
  int horizon;
  const Eigen::VectorXd* state;
  const PolicyParams* mu;
};

// Plans the horizons of a window: cumulative discounted rewards and which
// horizons need a bootstrap value.
struct WindowPlan {
  std::vector<double> reward_sum;   // per horizon t: sum gamma^d r_d, d < t
  std::vector<bool> needs_bootstrap;
  int h = 0;
};

WindowPlan plan_window(const MultiStepWindow& window, double gamma) {
  if (window.steps.empty()) throw ProtocolError("empty multi-step window");
  WindowPlan plan;
  plan.h = static_cast<int>(window.steps.size());
  plan.reward_sum.resize(static_cast<std::size_t>(plan.h));
  plan.needs_bootstrap.resize(static_cast<std::size_t>(plan.h));
  double acc = 0.0;
  double discount = 1.0;
  for (int t = 1; t <= plan.h; ++t) {
    acc += discount * window.steps[static_cast<std::size_t>(t - 1)].reward;
    discount *= gamma;
    plan.reward_sum[static_cast<std::size_t>(t - 1)] = acc;
    plan.needs_bootstrap[static_cast<std::size_t>(t - 1)] =
        !(t == plan.h && window.truncated_by_terminal);
  }
  return plan;
}

const PolicyParams& bootstrap_mu_at(const MultiStepWindow& window, int t) {
  if (t < static_cast<int>(window.steps.size()))
    return window.steps[static_cast<std::size_t>(t)].mu_params;
  if (!window.bootstrap_mu)
    throw ProtocolError("window needs a bootstrap policy past its end");
  return *window.bootstrap_mu;
}

const Eigen::VectorXd& bootstrap_state_at(const MultiStepWindow& window, int t) {
  if (t < static_cast<int>(window.steps.size()))
    return window.steps[static_cast<std::size_t>(t)].state;
  return window.bootstrap_state;
}

double blend_horizons(const WindowPlan& plan, const std::vector<double>& f,
                      double gamma, double lambda, LambdaWeighting weighting) {
  double target = 0.0;
  double lambda_pow = 1.0;  // lambda^(t-1)
  double discount = 1.0;
  for (int t = 1; t <= plan.h; ++t) {
    discount *= gamma;
    double q_t = plan.reward_sum[static_cast<std::size_t>(t - 1)];
    if (plan.needs_bootstrap[static_cast<std::size_t>(t - 1)])
      q_t += discount * f[static_cast<std::size_t>(t - 1)];
    double weight = t < plan.h || weighting == LambdaWeighting::literal
                        ? (1.0 - lambda) * lambda_pow
                        : lambda_pow;
    target += weight * q_t;
    lambda_pow *= lambda;
  }
  return target;
}

double bootstrap_value(const QNet& target, const BackupOperator& op, int k,
                       const Eigen::VectorXd& state, const PolicyParams& mu,
                       Rng& rng) {
  if (const auto* cat = std::get_if<CategoricalParams>(&mu)) {
    Eigen::VectorXd q_all =
        q_values_all_actions(target, state.transpose()).row(0);
    return apply_backup_weighted(op, q_all, categorical_probs(*cat));
  }
  auto actions = sample(mu, rng, k);
  Eigen::MatrixXd states(k, state.size());
  Eigen::MatrixXd encs(k, target.action_input_dim());
  for (int j = 0; j < k; ++j) {
    states.row(j) = state;
    encs.row(j) = encode_action(actions[static_cast<std::size_t>(j)],
                                target.action_input_dim());
  }
  Eigen::VectorXd q = q_values(target, states, encs);
  return apply_backup(op, {q.data(), static_cast<std::size_t>(q.size())});
}

}  // namespace

QTarget multistep_target(const MultiStepWindow& window, const QNet& target,
                         const BackupOperator& op, int k, double gamma,
                         double lambda, Rng& rng, LambdaWeighting weighting) {
  if (k < 1) throw std::invalid_argument("need k >= 1 action samples");
  WindowPlan plan = plan_window(window, gamma);
  std::vector<double> f(static_cast<std::size_t>(plan.h), 0.0);
  for (int t = 1; t <= plan.h; ++t) {
    if (!plan.needs_bootstrap[static_cast<std::size_t>(t - 1)]) continue;
    f[static_cast<std::size_t>(t - 1)] =
        bootstrap_value(target, op, k, bootstrap_state_at(window, t),
                        bootstrap_mu_at(window, t), rng);
  }
  double value = blend_horizons(plan, f, gamma, lambda, weighting);
  if (!std::isfinite(value))
    throw DivergenceError("non-finite multi-step target", -1);
  return {value, plan.h, window.traj_id, window.start_index};
}

std::vector<QTarget> multistep_targets(
    const std::vector<MultiStepWindow>& windows, const QNet& target,
    const BackupOperator& op, int k, double gamma, double lambda, Rng& rng,
    LambdaWeighting weighting) {
  if (k < 1) throw std::invalid_argument("need k >= 1 action samples");
  std::vector<WindowPlan> plans;
  plans.reserve(windows.size());
  std::vector<BootstrapRef> refs;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    plans.push_back(plan_window(windows[w], gamma));
    for (int t = 1; t <= plans[w].h; ++t)
      if (plans[w].needs_bootstrap[static_cast<std::size_t>(t - 1)])
        refs.push_back({w, t, &bootstrap_state_at(windows[w], t),
                        &bootstrap_mu_at(windows[w], t)});
  }

  std::vector<double> f_values(refs.size(), 0.0);
  std::vector<std::size_t> discrete_refs;
  std::vector<std::size_t> box_refs;
  for (std::size_t i = 0; i < refs.size(); ++i)
    (std::holds_alternative<CategoricalParams>(*refs[i].mu) ? discrete_refs
                                                            : box_refs)
        .push_back(i);

  if (!discrete_refs.empty()) {
    Eigen::MatrixXd states(discrete_refs.size(), target.obs_dim());
    for (std::size_t row = 0; row < discrete_refs.size(); ++row)
      states.row(static_cast<Eigen::Index>(row)) = *refs[discrete_refs[row]].state;
    Eigen::MatrixXd q_all = q_values_all_actions(target, states);
    for (std::size_t row = 0; row < discrete_refs.size(); ++row) {
      const auto& cat =
          std::get<CategoricalParams>(*refs[discrete_refs[row]].mu);
      f_values[discrete_refs[row]] = apply_backup_weighted(
          op, q_all.row(static_cast<Eigen::Index>(row)), categorical_probs(cat));
    }
  }

  if (!box_refs.empty()) {
    // Sampling stays in request order so the rng stream matches the
    // one-window-at-a-time path.
    Eigen::Index rows = static_cast<Eigen::Index>(box_refs.size()) * k;
    Eigen::MatrixXd states(rows, target.obs_dim());
    Eigen::MatrixXd encs(rows, target.action_input_dim());
    for (std::size_t i = 0; i < box_refs.size(); ++i) {
      const BootstrapRef& ref = refs[box_refs[i]];
      auto actions = sample(*ref.mu, rng, k);
      for (int j = 0; j < k; ++j) {
        Eigen::Index row = static_cast<Eigen::Index>(i) * k + j;
        states.row(row) = *ref.state;
        encs.row(row) = encode_action(actions[static_cast<std::size_t>(j)],
                                      target.action_input_dim());
      }
    }
    Eigen::VectorXd q = q_values(target, states, encs);
    for (std::size_t i = 0; i < box_refs.size(); ++i) {
      auto segment = q.segment(static_cast<Eigen::Index>(i) * k, k);
      f_values[box_refs[i]] = apply_backup(
          op, {segment.data(), static_cast<std::size_t>(k)});
    }
  }

  std::vector<QTarget> targets(windows.size());
  std::vector<std::vector<double>> per_window_f(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w)
    per_window_f[w].resize(static_cast<std::size_t>(plans[w].h), 0.0);
  for (std::size_t i = 0; i < refs.size(); ++i)
    per_window_f[refs[i].window][static_cast<std::size_t>(refs[i].horizon - 1)] =
        f_values[i];
  for (std::size_t w = 0; w < windows.size(); ++w) {
    double value =
        blend_horizons(plans[w], per_window_f[w], gamma, lambda, weighting);
    if (!std::isfinite(value))
      throw DivergenceError("non-finite multi-step target", -1);
    targets[w] = {value, plans[w].h, windows[w].traj_id,
                  windows[w].start_index};
  }
  return targets;
}

}  // namespace qwrlab
