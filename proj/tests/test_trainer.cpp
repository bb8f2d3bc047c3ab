#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "fd_oracle.hpp"
#include "narxsel/error.hpp"
#include "narxsel/harness.hpp"
#include "narxsel/trainer.hpp"

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

Eigen::VectorXd normal_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  Eigen::MatrixXd m(r, c);
  m.reshaped() = normal_vector(r * c, rng);
  return m;
}

PreparedData small_f3(Eigen::Index n_train = 300) {
  ExperimentSpec spec;
  spec.systems = {SystemId::F3};
  spec.n_train = static_cast<std::size_t>(n_train);
  spec.n_test = 100;
  return prepare_data(spec, SystemId::F3, 0);
}

TrainConfig quick(GateMethod method, int epochs = 5) {
  TrainConfig config;
  config.method = method;
  config.epochs = epochs;
  config.batch_size = 64;
  config.hidden = {8};
  config.seed = 17;
  return config;
}

bool same_history(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t e = 0; e < a.size(); ++e) {
    if (a[e].mse != b[e].mse || a[e].var_penalty != b[e].var_penalty || a[e].total != b[e].total) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("variance penalty hand values") {
  const CorrelationMatrix I2{Eigen::MatrixXd::Identity(2, 2)};
  const Eigen::VectorXd g = (Eigen::VectorXd(2) << 1, 2).finished();
  CHECK(variance_penalty(Eigen::VectorXd::Zero(2), I2, g, 3.0) == 9.0);
  CHECK(variance_penalty(Eigen::VectorXd::Ones(2), I2, Eigen::VectorXd::Zero(2), 3.0) == 9.0);
  CHECK(variance_penalty(Eigen::VectorXd::Ones(2), I2, g, 5.0) == 0.0);

  const auto zero = penalty_gradients(Eigen::VectorXd::Ones(2), I2, g, 5.0);
  CHECK(zero.d_alpha.isZero(0.0));
  CHECK(zero.d_g.isZero(0.0));
  CHECK(code_of([&] { variance_penalty(Eigen::VectorXd::Ones(3), I2, g, 1.0); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("penalty gradients match finite differences") {
  std::mt19937_64 rng(21);
  for (int instance = 0; instance < 10; ++instance) {
    const Eigen::MatrixXd X = normal_matrix(30, 6, rng);
    const CorrelationMatrix C = correlation_matrix(X);
    Eigen::VectorXd alpha = (normal_vector(6, rng).array().tanh() * 0.5 + 0.5).matrix();
    Eigen::VectorXd g = normal_vector(6, rng);
    const double var_y = 2.0;
    const auto pg = penalty_gradients(alpha, C, g, var_y);
    auto loss = [&] { return variance_penalty(alpha, C, g, var_y); };
    CHECK(max_relative_error(pg.d_alpha, central_difference(as_span(alpha), loss)) < kFdRelTol);
    CHECK(max_relative_error(pg.d_g, central_difference(as_span(g), loss)) < kFdRelTol);
    CHECK(loss() >= 0.0);
  }
}

TEST_CASE("diagonal covariance gives separable penalty gradients") {
  std::mt19937_64 rng(22);
  const Eigen::VectorXd diag = normal_vector(5, rng).cwiseAbs().array() + 0.1;
  const CorrelationMatrix C{Eigen::MatrixXd(diag.asDiagonal())};
  const Eigen::VectorXd alpha = normal_vector(5, rng).cwiseAbs();
  const Eigen::VectorXd g = normal_vector(5, rng);
  const auto pg = penalty_gradients(alpha, C, g, 4.0);
  const Eigen::VectorXd basis = (alpha.array() * g.array().square() * diag.array()).matrix();
  const double ratio = pg.d_alpha(0) / basis(0);
  for (Eigen::Index j = 1; j < 5; ++j) CHECK(pg.d_alpha(j) / basis(j) == doctest::Approx(ratio).epsilon(1e-12));
}

TEST_CASE("composed decision-unit objective matches finite differences") {
  std::mt19937_64 rng(23);
  const Eigen::Index d = 6;
  const Eigen::MatrixXd X = normal_matrix(25, d, rng);
  const Eigen::VectorXd y = normal_vector(25, rng);
  const CorrelationMatrix C = correlation_matrix(X);
  const Eigen::VectorXd x0 = normal_vector(d, rng, 0.5);
  const std::vector<int> hidden = {5};
  Network net = Network::initialize(static_cast<int>(d), hidden, 4);
  DecisionUnit unit = DecisionUnit::zeros(d);
  unit.W.reshaped() = normal_vector(unit.W.size(), rng, 0.2);
  unit.b = normal_vector(d, rng, 0.5);
  const double var_y = 1.3;
  const double lambda = 0.7;

  const auto obj = decision_unit_objective(net, unit, C, X, y, x0, var_y, lambda);
  CHECK(obj.loss.total == obj.loss.mse + lambda * obj.loss.var_penalty);
  auto total = [&] { return decision_unit_objective(net, unit, C, X, y, x0, var_y, lambda).loss.total; };

  CHECK(max_relative_error(flat(obj.unit.dW), central_difference(as_span(unit.W), total)) < kFdRelTol);
  CHECK(max_relative_error(obj.unit.db, central_difference(as_span(unit.b), total)) < kFdRelTol);
  for (std::size_t m = 0; m < net.layers().size(); ++m) {
    auto& layer = net.mutable_layers()[m];
    CHECK(max_relative_error(flat(obj.network.layers[m].dW), central_difference(as_span(layer.W), total)) <
          kFdRelTol);
    CHECK(max_relative_error(obj.network.layers[m].db, central_difference(as_span(layer.b), total)) <
          kFdRelTol);
  }
}

TEST_CASE("stopping the penalty gradient leaves the network with MSE gradients only") {
  std::mt19937_64 rng(24);
  const Eigen::MatrixXd X = normal_matrix(20, 4, rng);
  const Eigen::VectorXd y = normal_vector(20, rng);
  const CorrelationMatrix C = correlation_matrix(X);
  const std::vector<int> hidden = {3};
  const Network net = Network::initialize(4, hidden, 9);
  const DecisionUnit unit = DecisionUnit::zeros(4);
  const auto with = decision_unit_objective(net, unit, C, X, y, Eigen::VectorXd::Zero(4), 1.0, 0.5, false);
  const auto plain = decision_unit_objective(net, unit, C, X, y, Eigen::VectorXd::Zero(4), 1.0, 0.0);
  CHECK(with.network.layers[0].dW == plain.network.layers[0].dW);
  CHECK(with.loss.var_penalty > 0.0);
}

TEST_CASE("frozen gate with zero weight reproduces plain regression") {
  const auto data = small_f3();
  TrainConfig config = quick(GateMethod::decision_unit, 8);
  config.lambda_v = 0.0;
  config.freeze_alpha = true;
  const auto model = train(data.train, config);
  Network plain_net;
  const auto plain = train_plain_mse(data.train, config, &plain_net);
  CHECK(same_history(model.history, plain));
  CHECK(model.network == plain_net);
  CHECK((model.alpha.values().array() == 1.0).all());
}

TEST_CASE("logged losses are consistent and training is deterministic") {
  const auto data = small_f3();
  for (auto method : {GateMethod::decision_unit, GateMethod::drop_in, GateMethod::stochastic}) {
    CAPTURE(to_string(method));
    const TrainConfig config = quick(method);
    const auto a = train(data.train, config);
    const auto b = train(data.train, config);
    CHECK(a.history.size() == 5);
    const double lambda = method == GateMethod::decision_unit ? config.lambda_v : 0.0;
    for (const auto& h : a.history) {
      CHECK(std::abs(h.total - (h.mse + lambda * h.var_penalty)) <= 1e-12);
      CHECK(h.var_penalty >= 0.0);
    }
    CHECK(same_history(a.history, b.history));
    CHECK(model_to_text(a) == model_to_text(b));
    const double e1 = evaluate(a, data.test);
    CHECK(evaluate(a, data.test) == e1);
  }
}

TEST_CASE("final scores agree with the trained gate") {
  const auto data = small_f3();
  const auto du = train(data.train, quick(GateMethod::decision_unit));
  CHECK(du.alpha.values() == decision_forward(std::get<DecisionUnit>(du.gate), du.correlation).values());
  CHECK(du.correlation.C == correlation_matrix(data.train.X).C);
  const auto drop = train(data.train, quick(GateMethod::drop_in));
  CHECK(drop.alpha.values() == dropin_scores(std::get<DropInGate>(drop.gate)).values());
  CHECK(drop.inference_mask() == std::get<DropInGate>(drop.gate).alpha_raw);
  const auto sto = train(data.train, quick(GateMethod::stochastic));
  const auto& gate = std::get<StochasticGate>(sto.gate);
  CHECK(sto.alpha.values() == gate.mu.cwiseMax(0.0).cwiseMin(1.0));
  CHECK(gate.sigma == 1.0);
}

TEST_CASE("model bundle round-trips exactly") {
  const auto data = small_f3();
  for (auto method : {GateMethod::decision_unit, GateMethod::drop_in, GateMethod::stochastic}) {
    const auto model = train(data.train, quick(method, 2));
    const std::string text = model_to_text(model);
    const auto back = model_from_text(text);
    CHECK(model_to_text(back) == text);
    CHECK(back.network == model.network);
    CHECK(predict(back, data.test) == predict(model, data.test));
  }
  const auto model = train(data.train, quick(GateMethod::decision_unit, 1));
  const auto path = std::filesystem::temp_directory_path() / "narxsel_test_model.json";
  save_model(model, path);
  CHECK(model_to_text(load_model(path)) == model_to_text(model));
  std::filesystem::remove(path);
  CHECK(code_of([] { model_from_text("{\"format\": \"other\"}"); }) == ErrorCode::parse);
  CHECK(code_of([] { load_model("/nonexistent/model.json"); }) == ErrorCode::io);
}

TEST_CASE("training log format") {
  std::ostringstream out;
  write_training_log(out, {{1.0, 0.5, 1.05}, {0.25, 0.0, 0.25}});
  CHECK(out.str() == "epoch,mse,var_penalty,total\n1,1,0.5,1.05\n2,0.25,0,0.25\n");
}

TEST_CASE("evaluate on an interpolated training set is zero") {
  LaggedDataset ds;
  ds.X = (Eigen::MatrixXd(4, 1) << -1.5, 0.2, 0.3, 1.0).finished();
  ds.targets = ds.X.col(0);
  ds.lag = 1;
  StandardizeStats stats;
  stats.x_mean = Eigen::VectorXd::Zero(1);
  stats.x_std = Eigen::VectorXd::Ones(1);
  stats.y_mean = 2.0;
  stats.y_std = 3.0;
  ds.standardization = stats;

  FittedModel model;
  model.network = Network({LayerParams{Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Activation::identity}});
  model.gate = DropInGate{Eigen::VectorXd::Ones(1)};
  model.alpha = ScoreVector(Eigen::VectorXd::Ones(1));
  model.stats = stats;
  CHECK(evaluate(model, ds) == 0.0);
  CHECK(predict(model, ds)(0) == -2.5);
}

TEST_CASE("pipeline mismatches are rejected") {
  const auto data = small_f3();
  const auto model = train(data.train, quick(GateMethod::drop_in, 1));
  LaggedDataset raw = data.test;
  raw.standardization.reset();
  CHECK(code_of([&] { evaluate(model, raw); }) == ErrorCode::pipeline_mismatch);
  LaggedDataset other = data.test;
  other.standardization->y_std *= 2.0;
  CHECK(code_of([&] { evaluate(model, other); }) == ErrorCode::pipeline_mismatch);
  CHECK(code_of([&] { train(raw, quick(GateMethod::drop_in)); }) == ErrorCode::pipeline_mismatch);
}

TEST_CASE("divergence surfaces as a training failure naming the step") {
  const auto data = small_f3();
  TrainConfig config = quick(GateMethod::drop_in, 50);
  config.optimizer = OptimizerKind::sgd;
  config.lr = 1e6;
  try {
    train(data.train, config);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::training_failure);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("configuration checks") {
  TrainConfig config;
  CHECK_NOTHROW(config.validate());
  config.lambda_v = -1.0;
  CHECK(code_of([&] { config.validate(); }) == ErrorCode::invalid_argument);
  config = {};
  config.epochs = 0;
  CHECK(code_of([&] { config.validate(); }) == ErrorCode::invalid_argument);
  config = {};
  config.hidden = {4, 0};
  CHECK(code_of([&] { config.validate(); }) == ErrorCode::invalid_argument);
  config = {};
  config.stochastic_sigma = 0.0;
  CHECK(code_of([&] { config.validate(); }) == ErrorCode::invalid_argument);
  CHECK(parse_x0_mode(to_string(X0Mode::zero)) == X0Mode::zero);
  CHECK(parse_x0_mode(to_string(X0Mode::train_mean)) == X0Mode::train_mean);
  CHECK(code_of([] { parse_x0_mode("median"); }) == ErrorCode::parse);
}
