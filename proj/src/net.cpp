#include "qwrlab/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "qwrlab/errors.hpp"

namespace qwrlab {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<const RowMajorMatrix>;
using MutableWeightMap = Eigen::Map<RowMajorMatrix>;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

void validate_layers(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw std::invalid_argument("net needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].input_width < 1 || layers[i].output_width < 1)
      throw std::invalid_argument("layer widths must be >= 1");
    if (i > 0 && layers[i].input_width != layers[i - 1].output_width)
      throw std::invalid_argument("chained layer widths do not match");
  }
}

void apply_activation(Activation act, Eigen::MatrixXd& y) {
  switch (act) {
    case Activation::relu:
      y = y.cwiseMax(0.0);
      break;
    case Activation::tanh:
      y = y.array().tanh().matrix();
      break;
    case Activation::identity:
      break;
  }
}

// d(act)/d(pre-activation) expressed through the post-activation value.
Eigen::ArrayXXd activation_grad(Activation act, const Eigen::MatrixXd& y) {
  switch (act) {
    case Activation::relu:
      return (y.array() > 0.0).cast<double>();
    case Activation::tanh:
      return 1.0 - y.array().square();
    case Activation::identity:
      return Eigen::ArrayXXd::Ones(y.rows(), y.cols());
  }
  return {};
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + name);
}

std::size_t Net::param_count(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers)
    n += static_cast<std::size_t>(l.input_width) * l.output_width +
         l.output_width;
  return n;
}

Net::Net(std::vector<LayerSpec> layers, std::uint64_t seed)
    : layers_(std::move(layers)), seed_(seed) {
  validate_layers(layers_);
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(layers_)));
  Rng rng(seed_);
  std::size_t offset = 0;
  for (const auto& l : layers_) {
    // He-style fan-in scaling for relu, Xavier-style otherwise; biases zero.
    double limit = l.activation == Activation::relu
                       ? std::sqrt(6.0 / l.input_width)
                       : std::sqrt(6.0 / (l.input_width + l.output_width));
    std::size_t n_weights =
        static_cast<std::size_t>(l.input_width) * l.output_width;
    for (std::size_t i = 0; i < n_weights; ++i)
      params_[static_cast<Eigen::Index>(offset + i)] = rng.uniform(-limit, limit);
    offset += n_weights + l.output_width;
  }
}

Eigen::MatrixXd forward(const Net& net, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != net.input_width())
    throw std::invalid_argument("forward: input width mismatch");
  Eigen::MatrixXd x = inputs;
  std::size_t offset = 0;
  for (const auto& l : net.layers()) {
    WeightMap w(net.params().data() + offset, l.output_width, l.input_width);
    offset += static_cast<std::size_t>(l.input_width) * l.output_width;
    auto b = net.params().segment(static_cast<Eigen::Index>(offset),
                                  l.output_width);
    offset += l.output_width;
    Eigen::MatrixXd y = (x * w.transpose()).rowwise() + b.transpose();
    apply_activation(l.activation, y);
    x = std::move(y);
  }
  return x;
}

Eigen::VectorXd forward(const Net& net, const Eigen::VectorXd& input) {
  return forward(net, Eigen::MatrixXd(input.transpose())).row(0);
}

ForwardTrace forward_trace(const Net& net, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != net.input_width())
    throw std::invalid_argument("forward: input width mismatch");
  ForwardTrace trace;
  trace.inputs = inputs;
  trace.layer_outputs.reserve(net.layers().size());
  const Eigen::MatrixXd* x = &trace.inputs;
  std::size_t offset = 0;
  for (const auto& l : net.layers()) {
    WeightMap w(net.params().data() + offset, l.output_width, l.input_width);
    offset += static_cast<std::size_t>(l.input_width) * l.output_width;
    auto b = net.params().segment(static_cast<Eigen::Index>(offset),
                                  l.output_width);
    offset += l.output_width;
    Eigen::MatrixXd y = (*x * w.transpose()).rowwise() + b.transpose();
    apply_activation(l.activation, y);
    trace.layer_outputs.push_back(std::move(y));
    x = &trace.layer_outputs.back();
  }
  return trace;
}

BackwardResult backward(const Net& net, const ForwardTrace& trace,
                        const Eigen::MatrixXd& output_cotangent) {
  const auto& layers = net.layers();
  if (output_cotangent.cols() != net.output_width() ||
      output_cotangent.rows() != trace.inputs.rows())
    throw std::invalid_argument("backward: cotangent shape mismatch");

  BackwardResult result;
  result.param_grad = Eigen::VectorXd::Zero(net.params().size());

  // Parameter offsets of each layer, front to back.
  std::vector<std::size_t> offsets(layers.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    offsets[i] = offset;
    offset += static_cast<std::size_t>(layers[i].input_width) *
                  layers[i].output_width +
              layers[i].output_width;
  }

  Eigen::MatrixXd cot = output_cotangent;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& l = layers[i];
    const Eigen::MatrixXd& y = trace.layer_outputs[i];
    const Eigen::MatrixXd& x =
        i == 0 ? trace.inputs : trace.layer_outputs[i - 1];
    Eigen::MatrixXd delta = (cot.array() * activation_grad(l.activation, y)).matrix();

    std::size_t n_weights =
        static_cast<std::size_t>(l.input_width) * l.output_width;
    MutableWeightMap grad_w(result.param_grad.data() + offsets[i],
                            l.output_width, l.input_width);
    grad_w.noalias() = delta.transpose() * x;
    result.param_grad.segment(
        static_cast<Eigen::Index>(offsets[i] + n_weights), l.output_width) =
        delta.colwise().sum().transpose();

    WeightMap w(net.params().data() + offsets[i], l.output_width,
                l.input_width);
    cot.noalias() = delta * w;
  }
  result.input_grad = std::move(cot);
  return result;
}

BackwardResult backward(const Net& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& output_cotangent) {
  ForwardTrace trace = forward_trace(net, Eigen::MatrixXd(input.transpose()));
  return backward(net, trace, Eigen::MatrixXd(output_cotangent.transpose()));
}

void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() ||
      params.size() != state.first_moment.size())
    throw std::invalid_argument("adam_step: vector length mismatch");
  for (Eigen::Index i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw DivergenceError("non-finite gradient at coordinate " +
                                std::to_string(i),
                            state.step_count);
  state.step_count += 1;
  state.first_moment =
      state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment = state.beta2 * state.second_moment.array() +
                        (1.0 - state.beta2) * grad.array().square();
  double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.array() -=
      state.learning_rate * (state.first_moment.array() / bias1) /
      ((state.second_moment.array() / bias2).sqrt() + state.epsilon);
}

void save_net(const std::filesystem::path& path, const Net& net) {
  nlohmann::ordered_json header;
  header["format"] = "qwrlab-net-v1";
  auto& layers = header["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : net.layers())
    layers.push_back({{"in", l.input_width},
                      {"out", l.output_width},
                      {"activation", activation_name(l.activation)}});
  header["seed"] = net.seed();
  header["param_count"] = static_cast<std::size_t>(net.params().size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(net.params().size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Net load_net(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw DecodeError("missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "qwrlab-net-v1")
    throw DecodeError("unknown checkpoint format");
  std::vector<LayerSpec> layers;
  try {
    for (const auto& l : header.at("layers"))
      layers.push_back({l.at("in").get<int>(), l.at("out").get<int>(),
                        activation_from_name(l.at("activation"))});
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad layer specs: ") + e.what());
  }
  Net net(layers, header.value("seed", std::uint64_t{0}));
  std::size_t expected = header.value("param_count", std::size_t{0});
  if (expected != static_cast<std::size_t>(net.params().size()))
    throw DecodeError("param count does not match layer specs");
  in.read(reinterpret_cast<char*>(net.params().data()),
          static_cast<std::streamsize>(net.params().size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) !=
      net.params().size() * sizeof(double))
    throw DecodeError("truncated parameter payload");
  return net;
}

}  // namespace qwrlab
