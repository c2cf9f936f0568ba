#include "qwrlab/policy.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

double log_sum_exp(const Eigen::VectorXd& x) {
  double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

void append_doubles(std::string& out, const double* values, std::size_t n) {
  out.append(reinterpret_cast<const char*>(values), n * sizeof(double));
}

}  // namespace

Eigen::VectorXd categorical_probs(const CategoricalParams& params) {
  Eigen::VectorXd shifted =
      params.logits.array() - params.logits.maxCoeff();
  Eigen::VectorXd probs = shifted.array().exp();
  return probs / probs.sum();
}

double log_prob(const PolicyParams& params, const Action& action) {
  if (const auto* cat = std::get_if<CategoricalParams>(&params)) {
    int a = std::get<int>(action);
    if (a < 0 || a >= cat->logits.size())
      throw std::invalid_argument("categorical action out of range");
    return cat->logits[a] - log_sum_exp(cat->logits);
  }
  const auto& gauss = std::get<GaussianParams>(params);
  const auto& a = std::get<Eigen::VectorXd>(action);
  if (a.size() != gauss.mean.size())
    throw std::invalid_argument("gaussian action dimension mismatch");
  double sigma2 = gauss.stddev * gauss.stddev;
  double lp = 0.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    double z = a[d] - gauss.mean[d];
    lp += -0.5 * z * z / sigma2 - std::log(gauss.stddev) -
          0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

Action sample(const PolicyParams& params, Rng& rng) {
  if (const auto* cat = std::get_if<CategoricalParams>(&params)) {
    // Inverse-CDF walk over the softmax probabilities.
    Eigen::VectorXd probs = categorical_probs(*cat);
    double u = rng.uniform();
    double cum = 0.0;
    for (Eigen::Index a = 0; a < probs.size(); ++a) {
      cum += probs[a];
      if (u < cum) return discrete_action(static_cast<int>(a));
    }
    return discrete_action(static_cast<int>(probs.size() - 1));
  }
  const auto& gauss = std::get<GaussianParams>(params);
  Eigen::VectorXd a(gauss.mean.size());
  for (Eigen::Index d = 0; d < a.size(); ++d)
    a[d] = rng.normal(gauss.mean[d], gauss.stddev);
  return Action{std::move(a)};
}

std::vector<Action> sample(const PolicyParams& params, Rng& rng, int n) {
  if (n < 1) throw std::invalid_argument("need n >= 1 samples");
  std::vector<Action> actions;
  actions.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) actions.push_back(sample(params, rng));
  return actions;
}

Action greedy_action(const PolicyParams& params) {
  if (const auto* cat = std::get_if<CategoricalParams>(&params)) {
    Eigen::Index best = 0;
    cat->logits.maxCoeff(&best);
    return discrete_action(static_cast<int>(best));
  }
  return Action{std::get<GaussianParams>(params).mean};
}

std::string serialize_params(const PolicyParams& params) {
  std::string out;
  if (const auto* cat = std::get_if<CategoricalParams>(&params)) {
    out.push_back(char{1});
    std::uint32_t count = static_cast<std::uint32_t>(cat->logits.size());
    out.append(reinterpret_cast<const char*>(&count), sizeof(count));
    append_doubles(out, cat->logits.data(),
                   static_cast<std::size_t>(cat->logits.size()));
    return out;
  }
  const auto& gauss = std::get<GaussianParams>(params);
  out.push_back(char{2});
  std::uint32_t count = static_cast<std::uint32_t>(gauss.mean.size()) + 1;
  out.append(reinterpret_cast<const char*>(&count), sizeof(count));
  append_doubles(out, gauss.mean.data(),
                 static_cast<std::size_t>(gauss.mean.size()));
  append_doubles(out, &gauss.stddev, 1);
  return out;
}

PolicyParams deserialize_params(std::string_view bytes) {
  if (bytes.size() < 1 + sizeof(std::uint32_t))
    throw DecodeError("policy params payload too short");
  char variant = bytes[0];
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 1, sizeof(count));
  std::size_t expected = 1 + sizeof(std::uint32_t) +
                         static_cast<std::size_t>(count) * sizeof(double);
  if (bytes.size() != expected)
    throw DecodeError("policy params length mismatch");
  const char* payload = bytes.data() + 1 + sizeof(std::uint32_t);
  if (variant == 1) {
    if (count < 1) throw DecodeError("categorical needs at least one logit");
    CategoricalParams cat;
    cat.logits.resize(count);
    std::memcpy(cat.logits.data(), payload, count * sizeof(double));
    return cat;
  }
  if (variant == 2) {
    if (count < 2) throw DecodeError("gaussian needs a mean and a stddev");
    GaussianParams gauss;
    gauss.mean.resize(count - 1);
    std::memcpy(gauss.mean.data(), payload, (count - 1) * sizeof(double));
    std::memcpy(&gauss.stddev, payload + (count - 1) * sizeof(double),
                sizeof(double));
    if (!(gauss.stddev > 0.0)) throw DecodeError("gaussian stddev must be > 0");
    return gauss;
  }
  throw DecodeError("unknown policy params variant");
}

ActorNet::ActorNet(std::vector<LayerSpec> layers, std::uint64_t seed,
                   ActionSpace space_in, double gaussian_std_in)
    : net(std::move(layers), seed),
      space(space_in),
      gaussian_std(gaussian_std_in) {
  int head = net.output_width();
  int expected = space.is_discrete() ? space.n_actions : space.dim;
  if (head != expected)
    throw std::invalid_argument("actor head width does not match action space");
  if (!(gaussian_std > 0.0))
    throw std::invalid_argument("gaussian std must be > 0");
}

PolicyParams policy_params(const ActorNet& actor, const Eigen::VectorXd& state) {
  return params_from_head(actor, forward(actor.net, state));
}

Eigen::MatrixXd policy_heads(const ActorNet& actor,
                             const Eigen::MatrixXd& states) {
  return forward(actor.net, states);
}

PolicyParams params_from_head(const ActorNet& actor,
                              const Eigen::VectorXd& head) {
  if (actor.space.is_discrete()) return CategoricalParams{head};
  return GaussianParams{head, actor.gaussian_std};
}

}  // namespace qwrlab
