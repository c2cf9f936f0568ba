#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qwrlab/envs.hpp"
#include "qwrlab/net.hpp"
#include "qwrlab/rng.hpp"

namespace qwrlab {

inline constexpr double kDefaultGaussianStd = 0.4;

struct CategoricalParams {
  Eigen::VectorXd logits;
};

// Diagonal Gaussian with a fixed, shared standard deviation.
struct GaussianParams {
  Eigen::VectorXd mean;
  double stddev = kDefaultGaussianStd;
};

using PolicyParams = std::variant<CategoricalParams, GaussianParams>;

Eigen::VectorXd categorical_probs(const CategoricalParams& params);

double log_prob(const PolicyParams& params, const Action& action);
Action sample(const PolicyParams& params, Rng& rng);
std::vector<Action> sample(const PolicyParams& params, Rng& rng, int n);
// Deterministic evaluation action: argmax logit, or the Gaussian mean.
Action greedy_action(const PolicyParams& params);

// Wire format: 1 variant byte (1 = categorical, 2 = gaussian), a 4-byte
// little-endian count of 64-bit floats, then the floats. The gaussian payload
// is the mean followed by the stddev.
std::string serialize_params(const PolicyParams& params);
PolicyParams deserialize_params(std::string_view bytes);

// Policy network: an MLP head read as categorical logits or a Gaussian mean
// depending on the action space.
struct ActorNet {
  Net net;
  ActionSpace space;
  double gaussian_std = kDefaultGaussianStd;

  ActorNet(std::vector<LayerSpec> layers, std::uint64_t seed, ActionSpace space,
           double gaussian_std = kDefaultGaussianStd);
};

PolicyParams policy_params(const ActorNet& actor, const Eigen::VectorXd& state);
// Head outputs for a batch of states (rows), before the variant routing.
Eigen::MatrixXd policy_heads(const ActorNet& actor, const Eigen::MatrixXd& states);
PolicyParams params_from_head(const ActorNet& actor, const Eigen::VectorXd& head);

}  // namespace qwrlab
