#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "fd_oracle.hpp"
#include "narxsel/error.hpp"
#include "narxsel/nnet.hpp"

using namespace narxsel;
using namespace narxsel::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::invalid_argument;
}

Network linear_net(Eigen::MatrixXd W, Eigen::VectorXd b) {
  return Network({LayerParams{std::move(W), std::move(b), Activation::identity}});
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Eigen::VectorXd random_mask(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::VectorXd m(d);
  for (Eigen::Index i = 0; i < d; ++i) m(i) = u(rng);
  return m;
}

double mse(const Network& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& mask) {
  return (y - predict(net, X, mask)).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("hand-evaluated linear gate") {
  Eigen::MatrixXd W(1, 2);
  W << 2, 3;
  const Network net = linear_net(W, Eigen::VectorXd::Constant(1, 1.0));
  Eigen::MatrixXd X(1, 2);
  X << 1, 1;
  Eigen::VectorXd alpha(2);
  alpha << 1, 0.5;
  CHECK(predict(net, X, alpha)(0) == 4.5);

  const Eigen::VectorXd g = input_gradient(net, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  CHECK(g(0) == 2.0);
  CHECK(g(1) == 3.0);
  CHECK(input_gradient(net, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)).isZero(0.0));
}

TEST_CASE("identity mask equals ungated evaluation and zero mask is constant") {
  std::mt19937_64 rng(1);
  const std::vector<int> hidden = {6, 4};
  const Network net = Network::initialize(5, hidden, 3);
  const Eigen::MatrixXd X = random_matrix(9, 5, rng);

  // Manual ungated evaluation.
  Eigen::MatrixXd a = X.transpose();
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd s = (layer.W * a).colwise() + layer.b;
    a = layer.activation == Activation::tanh ? Eigen::MatrixXd(s.array().tanh()) : s;
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(5);
  CHECK((predict(net, X, ones) - a.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-14);

  const Eigen::VectorXd zero_out = predict(net, X, Eigen::VectorXd::Zero(5));
  CHECK((zero_out.array() == zero_out(0)).all());
}

TEST_CASE("first layer decomposes over masked columns") {
  std::mt19937_64 rng(2);
  const std::vector<int> hidden = {5};
  const Network net = Network::initialize(4, hidden, 8);
  const Eigen::MatrixXd X = random_matrix(6, 4, rng);
  const Eigen::VectorXd mask = random_mask(4, rng);
  const auto& l1 = net.layers()[0];
  const auto& l2 = net.layers()[1];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::VectorXd s = l1.b;
    for (Eigen::Index j = 0; j < 4; ++j) s += l1.W.col(j) * X(i, j) * mask(j);
    const double expected = (l2.W * s.array().tanh().matrix() + l2.b)(0);
    CHECK(predict(net, X.row(i), mask)(0) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("backward matches finite differences") {
  std::mt19937_64 rng(4);
  const std::vector<int> hidden = {7, 5};
  Network net = Network::initialize(6, hidden, 10);
  const Eigen::MatrixXd X = random_matrix(12, 6, rng);
  const Eigen::VectorXd y = random_matrix(12, 1, rng);
  Eigen::VectorXd mask = random_mask(6, rng);

  const auto [pred, trace] = forward(net, X, mask);
  const ParamGrads grads = backward(net, trace, y - pred);

  for (std::size_t m = 0; m < net.layers().size(); ++m) {
    auto& layer = net.mutable_layers()[m];
    const Eigen::VectorXd dW = central_difference(as_span(layer.W), [&] { return mse(net, X, y, mask); });
    const Eigen::VectorXd db = central_difference(as_span(layer.b), [&] { return mse(net, X, y, mask); });
    CHECK(max_relative_error(flat(grads.layers[m].dW), dW) < kFdRelTol);
    CHECK(max_relative_error(grads.layers[m].db, db) < kFdRelTol);
  }
  const Eigen::VectorXd dmask = central_difference(as_span(mask), [&] { return mse(net, X, y, mask); });
  CHECK(max_relative_error(grads.d_mask, dmask) < kFdRelTol);
}

TEST_CASE("backward edge cases") {
  std::mt19937_64 rng(5);
  const std::vector<int> hidden = {4};
  Network net = Network::initialize(3, hidden, 1);
  const Eigen::MatrixXd X = random_matrix(5, 3, rng);
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(3);
  mask(1) = 0.0;
  const auto [pred, trace] = forward(net, X, mask);

  const ParamGrads zero = backward(net, trace, Eigen::VectorXd::Zero(5));
  for (const auto& g : zero.layers) {
    CHECK(g.dW.isZero(0.0));
    CHECK(g.db.isZero(0.0));
  }

  const ParamGrads grads = backward(net, trace, Eigen::VectorXd::Ones(5));
  CHECK(grads.layers[0].dW.col(1).isZero(0.0));

  CHECK(code_of([&] { backward(net, trace, Eigen::VectorXd::Ones(4)); }) == ErrorCode::shape_mismatch);
  net.mutable_layers();
  CHECK(code_of([&] { backward(net, trace, Eigen::VectorXd::Ones(5)); }) == ErrorCode::stale_trace);
  const Network other = net;
  CHECK(code_of([&] { backward(other, trace, Eigen::VectorXd::Ones(5)); }) == ErrorCode::stale_trace);
}

TEST_CASE("forward rejects mismatched shapes") {
  const std::vector<int> hidden = {3};
  const Network net = Network::initialize(4, hidden, 0);
  CHECK(code_of([&] { forward(net, Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Ones(3)); }) ==
        ErrorCode::shape_mismatch);
  CHECK(code_of([&] { forward(net, Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Ones(3)); }) ==
        ErrorCode::shape_mismatch);
}

TEST_CASE("network construction invariants") {
  CHECK(code_of([] { Network(std::vector<LayerParams>{}); }) == ErrorCode::shape_mismatch);
  LayerParams tanh_head{Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1), Activation::tanh};
  CHECK(code_of([&] { Network({tanh_head}); }) == ErrorCode::shape_mismatch);
  LayerParams wide{Eigen::MatrixXd::Ones(2, 2), Eigen::VectorXd::Zero(2), Activation::identity};
  CHECK(code_of([&] { Network({wide}); }) == ErrorCode::shape_mismatch);
  LayerParams nan_head{Eigen::MatrixXd::Constant(1, 2, NAN), Eigen::VectorXd::Zero(1), Activation::identity};
  CHECK(code_of([&] { Network({nan_head}); }) == ErrorCode::numerical);

  const std::vector<int> hidden = {64};
  const Network net = Network::initialize(20, hidden, 42);
  CHECK(net.parameter_count() == 20 * 64 + 64 + 64 + 1);
  CHECK(net.layers()[0].W.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(20.0));
  CHECK(net.layers()[1].W.cwiseAbs().maxCoeff() <= 1.0 / 8.0);
  CHECK(net == Network::initialize(20, hidden, 42));
  CHECK(!(net == Network::initialize(20, hidden, 43)));
}

TEST_CASE("input gradient matches finite differences") {
  std::mt19937_64 rng(6);
  const std::vector<int> hidden = {8, 6};
  const Network net = Network::initialize(10, hidden, 77);
  Eigen::VectorXd x0 = random_matrix(10, 1, rng);
  const Eigen::VectorXd mask = random_mask(10, rng);

  const Eigen::VectorXd g = input_gradient(net, x0, mask);
  const Eigen::VectorXd fd =
      central_difference(as_span(x0), [&] { return predict(net, x0.transpose(), mask)(0); });
  CHECK(max_relative_error(g, fd) < kFdRelTol);
  CHECK((g - mask.cwiseProduct(gated_input_gradient(net, x0.cwiseProduct(mask)))).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("input-gradient VJP matches finite differences") {
  std::mt19937_64 rng(7);
  const std::vector<int> hidden = {6, 5};
  Network net = Network::initialize(5, hidden, 9);
  Eigen::VectorXd z = random_matrix(5, 1, rng);
  const Eigen::VectorXd v = random_matrix(5, 1, rng);
  auto objective = [&] { return v.dot(gated_input_gradient(net, z)); };

  const InputGradientVjp vjp = input_gradient_vjp(net, z, v);
  CHECK(max_relative_error(vjp.d_z, central_difference(as_span(z), objective)) < kFdRelTol);
  for (std::size_t m = 0; m < net.layers().size(); ++m) {
    auto& layer = net.mutable_layers()[m];
    CHECK(max_relative_error(flat(vjp.params.layers[m].dW), central_difference(as_span(layer.W), objective)) <
          kFdRelTol);
    CHECK(max_relative_error(vjp.params.layers[m].db, central_difference(as_span(layer.b), objective)) <
          kFdRelTol);
  }
}

TEST_CASE("first-layer deltas are the chain rule into the first pre-activation") {
  std::mt19937_64 rng(8);
  const std::vector<int> hidden = {4};
  Network net = Network::initialize(3, hidden, 2);
  const Eigen::MatrixXd X = random_matrix(4, 3, rng);
  const Eigen::VectorXd mask = random_mask(3, rng);
  const auto [pred, trace] = forward(net, X, mask);
  const Eigen::MatrixXd delta = first_layer_deltas(net, trace, Eigen::VectorXd::Ones(4));
  // d yhat_i / d b1 = delta row i, checked through the bias.
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto& b1 = net.mutable_layers()[0].b;
    const Eigen::VectorXd fd =
        central_difference(as_span(b1), [&] { return predict(net, X.row(i), mask)(0); });
    CHECK(max_relative_error(delta.row(i).transpose(), fd) < kFdRelTol);
  }
}

TEST_CASE("ParamGrads arithmetic") {
  const std::vector<int> hidden = {3};
  const Network net = Network::initialize(2, hidden, 0);
  ParamGrads a = ParamGrads::zeros_like(net);
  a.layers[0].dW.setOnes();
  ParamGrads b = a;
  a += b;
  a.scale(0.25);
  CHECK(a.layers[0].dW(0, 0) == 0.5);
  CHECK(a.all_finite());
  a.layers[1].db(0) = NAN;
  CHECK(!a.all_finite());
}

TEST_CASE("SGD step on w^2") {
  std::vector<double> w = {1.0};
  std::vector<double> g = {2.0};
  std::vector<ParamSlot> slots = {{w, g}};
  OptimizerState state;
  optimizer_step(slots, state, {OptimizerKind::sgd, 0.1});
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("Adam leaves parameters alone under zero gradient") {
  std::vector<double> w = {1.5, -2.0};
  const std::vector<double> g = {0.0, 0.0};
  std::vector<ParamSlot> slots = {{w, g}};
  OptimizerState state;
  optimizer_step(slots, state, {});
  CHECK(w[0] == 1.5);
  CHECK(w[1] == -2.0);
}

TEST_CASE("Adam drives w^2 to zero") {
  std::vector<double> w = {1.0};
  std::vector<double> g = {0.0};
  std::vector<ParamSlot> slots = {{w, g}};
  OptimizerState state;
  OptimizerConfig config;
  config.lr = 0.05;
  for (int step = 0; step < 500; ++step) {
    g[0] = 2.0 * w[0];
    optimizer_step(slots, state, config);
  }
  CHECK(std::abs(w[0]) < 1e-3);
}

TEST_CASE("Adam first step is lr times the gradient sign") {
  std::vector<double> w = {0.0, 0.0};
  const std::vector<double> g = {3.0, -0.01};
  std::vector<ParamSlot> slots = {{w, g}};
  OptimizerState state;
  optimizer_step(slots, state, {OptimizerKind::adam, 0.01});
  CHECK(w[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("optimizer surfaces bad gradients and shape changes") {
  std::vector<double> w = {1.0, 2.0};
  std::vector<double> g = {NAN, 0.0};
  std::vector<ParamSlot> slots = {{w, g}};
  OptimizerState state;
  CHECK(code_of([&] { optimizer_step(slots, state, {}); }) == ErrorCode::numerical);
  CHECK(w[0] == 1.0);

  g[0] = 1.0;
  optimizer_step(slots, state, {});
  std::vector<double> w3 = {1.0, 2.0, 3.0};
  std::vector<double> g3 = {0.0, 0.0, 0.0};
  std::vector<ParamSlot> other = {{w3, g3}};
  CHECK(code_of([&] { optimizer_step(other, state, {}); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const std::vector<int> hidden = {9, 4};
  const Network net = Network::initialize(7, hidden, 2024);
  const std::string text = network_to_text(net);
  const Network back = network_from_text(text);
  CHECK(back == net);
  CHECK(network_to_text(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "narxsel_test_net.json";
  save_network(net, path);
  CHECK(load_network(path) == net);
  std::filesystem::remove(path);

  CHECK(code_of([] { network_from_text("{not json"); }) == ErrorCode::parse);
  CHECK(code_of([] { load_network("/nonexistent/dir/net.json"); }) == ErrorCode::io);
}
