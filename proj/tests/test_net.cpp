#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "qwrlab/errors.hpp"
#include "qwrlab/net.hpp"

using namespace qwrlab;

namespace {

// Straight-line re-implementation of the affine+activation chain in long
// double, independent of the Eigen path.
std::vector<long double> naive_forward(const Net& net,
                                       const std::vector<long double>& input) {
  std::vector<long double> x = input;
  std::size_t offset = 0;
  for (const auto& layer : net.layers()) {
    std::vector<long double> y(static_cast<std::size_t>(layer.output_width));
    for (int o = 0; o < layer.output_width; ++o) {
      long double acc = 0.0L;
      for (int i = 0; i < layer.input_width; ++i)
        acc += static_cast<long double>(
                   net.params()[static_cast<Eigen::Index>(
                       offset + static_cast<std::size_t>(o) *
                                    layer.input_width +
                       i)]) *
               x[static_cast<std::size_t>(i)];
      acc += net.params()[static_cast<Eigen::Index>(
          offset +
          static_cast<std::size_t>(layer.input_width) * layer.output_width +
          o)];
      switch (layer.activation) {
        case Activation::relu:
          acc = acc > 0.0L ? acc : 0.0L;
          break;
        case Activation::tanh:
          acc = std::tanh(acc);
          break;
        case Activation::identity:
          break;
      }
      y[static_cast<std::size_t>(o)] = acc;
    }
    offset += static_cast<std::size_t>(layer.input_width) * layer.output_width +
              layer.output_width;
    x = std::move(y);
  }
  return x;
}

double finite_diff_max_rel_error(Net& net, const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& cotangent,
                                 double h = 1e-5) {
  BackwardResult result = backward(net, input, cotangent);
  double worst = 0.0;
  for (Eigen::Index p = 0; p < net.params().size(); ++p) {
    double saved = net.params()[p];
    net.params()[p] = saved + h;
    double up = cotangent.dot(forward(net, input));
    net.params()[p] = saved - h;
    double down = cotangent.dot(forward(net, input));
    net.params()[p] = saved;
    double numeric = (up - down) / (2.0 * h);
    double analytic = result.param_grad[p];
    double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / scale);
  }
  return worst;
}

// Textbook Adam, one scalar at a time.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  long t = 0;
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  double update(double param, double grad) {
    t += 1;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    return param - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("identity layer with identity weights passes input through") {
  Net net({{2, 2, Activation::identity}}, 0);
  net.params() << 1, 0, 0, 1, 0, 0;  // W = I, b = 0
  Eigen::VectorXd input(2);
  input << 1, 2;
  Eigen::VectorXd out = forward(net, input);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
}

TEST_CASE("relu clamps negative pre-activations") {
  Net net({{2, 2, Activation::relu}}, 0);
  net.params().setZero();
  net.params()[4] = -1.0;  // bias
  net.params()[5] = 3.0;
  Eigen::VectorXd input(2);
  input << 7.0, -2.5;
  Eigen::VectorXd out = forward(net, input);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 3.0);
}

TEST_CASE("seeded two-layer forward matches a long-double straight-line pass") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Net net({{3, 8, Activation::relu}, {8, 2, Activation::identity}}, seed);
    Rng rng(seed + 100);
    Eigen::VectorXd input(3);
    std::vector<long double> naive_in(3);
    for (int i = 0; i < 3; ++i) {
      input[i] = rng.uniform(-1, 1);
      naive_in[static_cast<std::size_t>(i)] = input[i];
    }
    Eigen::VectorXd out = forward(net, input);
    auto expected = naive_forward(net, naive_in);
    REQUIRE(out.size() == 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::isfinite(out[i]));
      CHECK(out[i] ==
            doctest::Approx(static_cast<double>(expected[static_cast<std::size_t>(i)]))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("forward is pure in parameters and input") {
  Net net({{4, 5, Activation::tanh}, {5, 3, Activation::identity}}, 7);
  Eigen::VectorXd input = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  Eigen::VectorXd a = forward(net, input);
  Eigen::VectorXd b = forward(net, input);
  CHECK(a == b);
}

TEST_CASE("forward rejects wrong input width") {
  Net net({{3, 2, Activation::identity}}, 0);
  Eigen::VectorXd input(2);
  input << 1, 2;
  CHECK_THROWS_AS(forward(net, input), std::invalid_argument);
}

TEST_CASE("layer validation") {
  CHECK_THROWS_AS(Net({{0, 2, Activation::relu}}, 0), std::invalid_argument);
  CHECK_THROWS_AS(
      Net({{2, 3, Activation::relu}, {4, 1, Activation::identity}}, 0),
      std::invalid_argument);
  CHECK(Net::param_count({{3, 4, Activation::relu},
                          {4, 2, Activation::identity}}) == 3 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("single linear unit gradient is (x, 1)") {
  Net net({{1, 1, Activation::identity}}, 0);
  net.params() << 0.5, 0.25;  // w, b
  Eigen::VectorXd input(1);
  input << 2.0;
  Eigen::VectorXd cot(1);
  cot << 1.0;
  BackwardResult result = backward(net, input, cot);
  CHECK(result.param_grad[0] == 2.0);
  CHECK(result.param_grad[1] == 1.0);
  CHECK(result.input_grad(0, 0) == 0.5);
}

TEST_CASE("zero cotangent gives zero gradient") {
  Net net({{3, 4, Activation::relu}, {4, 2, Activation::identity}}, 11);
  Eigen::VectorXd input = Eigen::VectorXd::Ones(3);
  BackwardResult result = backward(net, input, Eigen::VectorXd::Zero(2));
  CHECK(result.param_grad.isZero(0.0));
}

TEST_CASE("backward matches central finite differences on varied shapes") {
  struct Case {
    std::vector<LayerSpec> layers;
  };
  std::vector<Case> cases = {
      {{{3, 6, Activation::relu}, {6, 2, Activation::identity}}},
      {{{4, 5, Activation::tanh}, {5, 5, Activation::tanh},
        {5, 1, Activation::identity}}},
      {{{2, 7, Activation::relu}, {7, 4, Activation::tanh},
        {4, 3, Activation::identity}}},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Net net(c.layers, seed);
      Rng rng(seed * 31 + 1);
      Eigen::VectorXd input(net.input_width());
      for (Eigen::Index i = 0; i < input.size(); ++i)
        input[i] = rng.uniform(-1.5, 1.5);
      Eigen::VectorXd cot(net.output_width());
      for (Eigen::Index i = 0; i < cot.size(); ++i)
        cot[i] = rng.uniform(-1, 1);
      CHECK(finite_diff_max_rel_error(net, input, cot) <= 1e-4);
    }
  }
}

TEST_CASE("batched backward equals the sum of per-row gradients") {
  Net net({{3, 4, Activation::tanh}, {4, 2, Activation::identity}}, 5);
  Rng rng(99);
  Eigen::MatrixXd inputs(4, 3);
  Eigen::MatrixXd cots(4, 2);
  for (Eigen::Index r = 0; r < 4; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) inputs(r, c) = rng.uniform(-1, 1);
    for (Eigen::Index c = 0; c < 2; ++c) cots(r, c) = rng.uniform(-1, 1);
  }
  ForwardTrace trace = forward_trace(net, inputs);
  Eigen::VectorXd batched = backward(net, trace, cots).param_grad;
  Eigen::VectorXd summed = Eigen::VectorXd::Zero(net.params().size());
  for (Eigen::Index r = 0; r < 4; ++r)
    summed += backward(net, Eigen::VectorXd(inputs.row(r)),
                       Eigen::VectorXd(cots.row(r)))
                  .param_grad;
  CHECK((batched - summed).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam with zero gradient leaves params unchanged") {
  Eigen::VectorXd params(3);
  params << 1.0, -2.0, 0.5;
  Eigen::VectorXd before = params;
  AdamState state(3, 1e-3);
  adam_step(state, params, Eigen::VectorXd::Zero(3));
  CHECK(params == before);
  CHECK(state.step_count == 1);
}

TEST_CASE("first adam step moves opposite to the gradient sign") {
  for (double g : {3.0, -0.7, 1e-3}) {
    Eigen::VectorXd params = Eigen::VectorXd::Zero(1);
    AdamState state(1, 1e-2);
    Eigen::VectorXd grad(1);
    grad << g;
    adam_step(state, params, grad);
    CHECK(params[0] * g < 0.0);
  }
}

TEST_CASE("three adam steps on a scalar quadratic match the reference") {
  // f(x) = (x - 3)^2 / 2, grad = x - 3.
  double x = 0.0;
  Eigen::VectorXd params = Eigen::VectorXd::Zero(1);
  AdamState state(1, 0.05);
  ScalarAdam reference{.lr = 0.05};
  for (int step = 0; step < 3; ++step) {
    double grad = x - 3.0;
    x = reference.update(x, grad);
    Eigen::VectorXd g(1);
    g << params[0] - 3.0;
    adam_step(state, params, g);
    CHECK(std::abs(params[0] - x) < 1e-12);
  }
  CHECK(state.step_count == 3);
}

TEST_CASE("adam rejects non-finite gradients with the step index") {
  Eigen::VectorXd params = Eigen::VectorXd::Zero(2);
  AdamState state(2, 1e-3);
  Eigen::VectorXd grad(2);
  grad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(state, params, grad), DivergenceError);
  try {
    adam_step(state, params, grad);
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("checkpoint round-trip is bit exact") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "qwrlab-net-test";
  fs::create_directories(dir);
  fs::path file = dir / "net.ckpt";

  Net net({{3, 4, Activation::relu}, {4, 2, Activation::tanh}}, 42);
  save_net(file, net);
  Net loaded = load_net(file);
  CHECK(loaded.params() == net.params());
  CHECK(loaded.seed() == net.seed());
  REQUIRE(loaded.layers().size() == 2);
  CHECK(loaded.layers()[1].activation == Activation::tanh);

  Eigen::VectorXd input(3);
  input << 0.3, -1.0, 2.0;
  CHECK(forward(net, input) == forward(loaded, input));

  SUBCASE("truncated payload is a decode error") {
    auto size = fs::file_size(file);
    fs::resize_file(file, size - 8);
    CHECK_THROWS_AS(load_net(file), DecodeError);
  }
  SUBCASE("corrupted header is a decode error") {
    std::ofstream out(file, std::ios::binary);
    out << "{\"format\":\"nope\"}\n";
    out.close();
    CHECK_THROWS_AS(load_net(file), DecodeError);
  }
}
