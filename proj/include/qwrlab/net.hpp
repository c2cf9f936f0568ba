#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "qwrlab/rng.hpp"

namespace qwrlab {

enum class Activation { relu, tanh, identity };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  int input_width;
  int output_width;
  Activation activation;
};

// Fully-connected net with a flat parameter vector. Per layer the layout is
// the weight matrix W (output_width x input_width, row-major) followed by the
// bias. Forward computes act(W x + b) layer by layer.
class Net {
 public:
  Net(std::vector<LayerSpec> layers, std::uint64_t seed);

  static std::size_t param_count(const std::vector<LayerSpec>& layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  int input_width() const { return layers_.front().input_width; }
  int output_width() const { return layers_.back().output_width; }
  std::uint64_t seed() const { return seed_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

 private:
  std::vector<LayerSpec> layers_;
  Eigen::VectorXd params_;
  std::uint64_t seed_;
};

// Batched forward; inputs are rows. Pure in (parameters, inputs).
Eigen::MatrixXd forward(const Net& net, const Eigen::MatrixXd& inputs);
Eigen::VectorXd forward(const Net& net, const Eigen::VectorXd& input);

// Post-activation outputs of every layer, kept for the reverse pass.
struct ForwardTrace {
  Eigen::MatrixXd inputs;
  std::vector<Eigen::MatrixXd> layer_outputs;

  const Eigen::MatrixXd& output() const { return layer_outputs.back(); }
};

ForwardTrace forward_trace(const Net& net, const Eigen::MatrixXd& inputs);

struct BackwardResult {
  Eigen::VectorXd param_grad;  // d(cotangent . output)/d(params), flat
  Eigen::MatrixXd input_grad;  // same w.r.t. the inputs, row per batch item
};

// Reverse-mode pass. `output_cotangent` has one row per batch item; the
// parameter gradient is summed over the batch.
BackwardResult backward(const Net& net, const ForwardTrace& trace,
                        const Eigen::MatrixXd& output_cotangent);
BackwardResult backward(const Net& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& output_cotangent);

struct AdamState {
  long step_count = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  double learning_rate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState(std::size_t n_params, double lr)
      : first_moment(Eigen::VectorXd::Zero(n_params)),
        second_moment(Eigen::VectorXd::Zero(n_params)),
        learning_rate(lr) {}
};

// One bias-corrected Adam update in place. Throws DivergenceError on a
// non-finite gradient, naming the offending coordinate's step.
void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad);

// Checkpoint file: one-line JSON header (layer specs, seed, param count)
// followed by the raw little-endian 64-bit float parameter array.
void save_net(const std::filesystem::path& path, const Net& net);
Net load_net(const std::filesystem::path& path);

}  // namespace qwrlab
