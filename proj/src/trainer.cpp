#include "narxsel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "json_io.hpp"
#include "narxsel/csv.hpp"
#include "narxsel/error.hpp"
#include "narxsel/seeding.hpp"

namespace narxsel {

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kNoiseStream = 3 };

// Minibatch index ranges over a fresh permutation each epoch.
class BatchSchedule {
 public:
  BatchSchedule(Eigen::Index rows, int batch_size, std::uint64_t seed)
      : order_(static_cast<std::size_t>(rows)), batch_(batch_size), rng_(seed) {
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  }

  void shuffle() { std::shuffle(order_.begin(), order_.end(), rng_); }

  std::size_t batches() const { return (order_.size() + batch_ - 1) / batch_; }

  void gather(std::size_t k, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              Eigen::MatrixXd& Xb, Eigen::VectorXd& yb) const {
    const std::size_t begin = k * batch_;
    const std::size_t end = std::min(order_.size(), begin + batch_);
    const auto n = static_cast<Eigen::Index>(end - begin);
    Xb.resize(n, X.cols());
    yb.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index src = order_[begin + static_cast<std::size_t>(i)];
      Xb.row(i) = X.row(src);
      yb(i) = y(src);
    }
  }

 private:
  std::vector<Eigen::Index> order_;
  std::size_t batch_;
  std::mt19937_64 rng_;
};

double population_variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().mean();
}

// Sample-weighted mean of the minibatch losses seen during one epoch.
struct EpochLoss {
  double squared_error = 0.0;
  double penalty = 0.0;
  Eigen::Index samples = 0;

  void add(double batch_squared_error, double batch_penalty, Eigen::Index batch_rows) {
    squared_error += batch_squared_error;
    penalty += batch_penalty * static_cast<double>(batch_rows);
    samples += batch_rows;
  }

  LossBreakdown finish(double lambda) const {
    LossBreakdown out;
    out.mse = squared_error / static_cast<double>(samples);
    out.var_penalty = penalty / static_cast<double>(samples);
    out.total = out.mse + lambda * out.var_penalty;
    return out;
  }
};

void check_trainable(const LaggedDataset& dataset) {
  if (!dataset.standardization) {
    throw Error(ErrorCode::pipeline_mismatch, "train expects a standardized dataset");
  }
  if (dataset.rows() < 2 || dataset.cols() < 1) {
    throw Error(ErrorCode::insufficient_data, "training set is too small");
  }
}

Eigen::VectorXd expansion_point(const LaggedDataset& dataset, X0Mode mode) {
  if (mode == X0Mode::zero) return Eigen::VectorXd::Zero(dataset.cols());
  return dataset.X.colwise().mean().transpose();
}

[[noreturn]] void fail_step(int epoch, std::size_t batch, const std::string& why) {
  throw Error(ErrorCode::training_failure, "training diverged at epoch " + std::to_string(epoch) +
                                               ", batch " + std::to_string(batch) + ": " + why);
}

void check_loss(double value, int epoch, std::size_t batch) {
  if (!std::isfinite(value)) fail_step(epoch, batch, "non-finite loss");
}

void apply_step(std::vector<ParamSlot>& slots, OptimizerState& state, const OptimizerConfig& opt,
                int epoch, std::size_t batch) {
  try {
    optimizer_step(slots, state, opt);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::numerical) fail_step(epoch, batch, e.what());
    throw;
  }
}

std::span<double> span_of(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> cspan_of(const Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> cspan_of(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

std::string to_string(X0Mode mode) { return mode == X0Mode::zero ? "zero" : "train_mean"; }

X0Mode parse_x0_mode(std::string_view text) {
  if (text == "train_mean") return X0Mode::train_mean;
  if (text == "zero") return X0Mode::zero;
  throw Error(ErrorCode::parse, "unknown x0 mode '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lambda_v >= 0.0) || !std::isfinite(lambda_v)) {
    throw Error(ErrorCode::invalid_argument, "lambda_v must be finite and >= 0");
  }
  if (epochs < 1) throw Error(ErrorCode::invalid_argument, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::invalid_argument, "lr must be positive");
  if (!(stochastic_sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "stochastic sigma must be > 0");
  if (!(dropin_l1 >= 0.0)) throw Error(ErrorCode::invalid_argument, "dropin_l1 must be >= 0");
  for (int w : hidden) {
    if (w < 1) throw Error(ErrorCode::invalid_argument, "hidden widths must be positive");
  }
}

Eigen::VectorXd FittedModel::inference_mask() const {
  if (const auto* drop = std::get_if<DropInGate>(&gate)) return drop->alpha_raw;
  return alpha.values();
}

double variance_penalty(const Eigen::VectorXd& alpha, const CorrelationMatrix& C,
                        const Eigen::VectorXd& g, double var_y) {
  if (alpha.size() != C.dim() || g.size() != C.dim()) {
    throw Error(ErrorCode::shape_mismatch, "variance_penalty operands differ in size");
  }
  const Eigen::VectorXd w = alpha.cwiseProduct(g);
  const double gap = var_y - w.dot(C.C * w);
  return gap * gap;
}

PenaltyGradients penalty_gradients(const Eigen::VectorXd& alpha, const CorrelationMatrix& C,
                                   const Eigen::VectorXd& g, double var_y) {
  if (alpha.size() != C.dim() || g.size() != C.dim()) {
    throw Error(ErrorCode::shape_mismatch, "penalty_gradients operands differ in size");
  }
  const Eigen::VectorXd w = alpha.cwiseProduct(g);
  const Eigen::VectorXd Cw = C.C * w;
  const double gap = var_y - w.dot(Cw);
  // d/dw (var_y - w^T C w)^2 = -4 gap C w for symmetric C.
  const Eigen::VectorXd d_w = -4.0 * gap * Cw;
  return {d_w.cwiseProduct(g), d_w.cwiseProduct(alpha)};
}

ObjectiveGradients decision_unit_objective(const Network& net, const DecisionUnit& unit,
                                           const CorrelationMatrix& C, const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& y, const Eigen::VectorXd& x0,
                                           double var_y, double lambda_v,
                                           bool penalty_through_network) {
  ObjectiveGradients out;
  const Eigen::VectorXd alpha = decision_forward(unit, C).values();
  const auto [pred, trace] = forward(net, X, alpha);
  const Eigen::VectorXd residual = y - pred;
  out.loss.mse = residual.squaredNorm() / static_cast<double>(y.size());
  out.network = backward(net, trace, residual);
  out.d_alpha = out.network.d_mask;

  if (lambda_v > 0.0) {
    const Eigen::VectorXd z0 = x0.cwiseProduct(alpha);
    const Eigen::VectorXd g = gated_input_gradient(net, z0);
    out.loss.var_penalty = variance_penalty(alpha, C, g, var_y);
    const auto pg = penalty_gradients(alpha, C, g, var_y);
    out.d_alpha += lambda_v * pg.d_alpha;
    if (penalty_through_network) {
      auto vjp = input_gradient_vjp(net, z0, pg.d_g);
      vjp.params.d_mask = Eigen::VectorXd::Zero(alpha.size());
      out.network += vjp.params.scale(lambda_v);
      out.d_alpha += lambda_v * vjp.d_z.cwiseProduct(x0);
    }
  }
  out.loss.total = out.loss.mse + lambda_v * out.loss.var_penalty;
  out.network.d_mask = out.d_alpha;
  out.unit = decision_backward(unit, C, out.d_alpha);
  return out;
}

FittedModel train(const LaggedDataset& dataset, const TrainConfig& config) {
  config.validate();
  check_trainable(dataset);
  const Eigen::Index d = dataset.cols();
  const Eigen::MatrixXd& X = dataset.X;
  const Eigen::VectorXd& y = dataset.targets;

  FittedModel model;
  model.stats = *dataset.standardization;
  model.labels = dataset.labels;
  model.lag = dataset.lag;
  model.network = Network::initialize(static_cast<int>(d), config.hidden,
                                      derive_seed({config.seed, kInitStream}));

  const OptimizerConfig opt{config.optimizer, config.lr};
  OptimizerState state;
  BatchSchedule schedule(dataset.rows(), config.batch_size, derive_seed({config.seed, kShuffleStream}));
  std::mt19937_64 noise_rng(derive_seed({config.seed, kNoiseStream}));
  std::normal_distribution<double> normal(0.0, 1.0);

  const double var_y = population_variance(y);
  const Eigen::VectorXd x0 = expansion_point(dataset, config.x0_mode);
  const bool penalized = config.method == GateMethod::decision_unit && config.lambda_v > 0.0 &&
                         !config.freeze_alpha;
  const double lambda = penalized ? config.lambda_v : 0.0;

  switch (config.method) {
    case GateMethod::decision_unit:
      model.correlation = correlation_matrix(X, config.centering);
      model.gate = DecisionUnit::zeros(d, config.full_flatten);
      break;
    case GateMethod::drop_in:
      model.gate = DropInGate{Eigen::VectorXd::Ones(d)};
      break;
    case GateMethod::stochastic:
      model.gate = StochasticGate{Eigen::VectorXd::Constant(d, 0.5), config.stochastic_sigma};
      break;
  }

  Eigen::MatrixXd Xb;
  Eigen::VectorXd yb;
  Eigen::VectorXd eps(d);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    schedule.shuffle();
    EpochLoss epoch_loss;
    for (std::size_t k = 0; k < schedule.batches(); ++k) {
      schedule.gather(k, X, y, Xb, yb);
      ParamGrads grads;
      std::vector<ParamSlot> slots;

      if (auto* unit = std::get_if<DecisionUnit>(&model.gate)) {
        if (config.freeze_alpha) {
          const auto [pred, trace] = forward(model.network, Xb, Eigen::VectorXd::Ones(d));
          const Eigen::VectorXd residual = yb - pred;
          check_loss(residual.squaredNorm(), epoch, k);
          epoch_loss.add(residual.squaredNorm(), 0.0, yb.size());
          grads = backward(model.network, trace, residual);
          slots = network_slots(model.network, grads);
          apply_step(slots, state, opt, epoch, k);
          continue;
        }
        const CorrelationMatrix batch_c =
            config.recompute_correlation ? correlation_matrix(Xb, config.centering) : model.correlation;
        auto obj = decision_unit_objective(model.network, *unit, batch_c, Xb, yb, x0, var_y, lambda,
                                           config.penalty_through_network);
        check_loss(obj.loss.total, epoch, k);
        epoch_loss.add(obj.loss.mse * static_cast<double>(yb.size()), obj.loss.var_penalty, yb.size());
        grads = std::move(obj.network);
        slots = network_slots(model.network, grads);
        auto unit_grads = std::move(obj.unit);
        slots.push_back({span_of(unit->W), cspan_of(unit_grads.dW)});
        slots.push_back({span_of(unit->b), cspan_of(unit_grads.db)});
        apply_step(slots, state, opt, epoch, k);
        continue;
      }

      Eigen::VectorXd mask;
      auto* stochastic = std::get_if<StochasticGate>(&model.gate);
      if (stochastic) {
        for (Eigen::Index j = 0; j < d; ++j) eps(j) = normal(noise_rng);
        mask = stochastic_forward(*stochastic, eps, true).values();
      } else {
        mask = std::get<DropInGate>(model.gate).alpha_raw;
      }
      const auto [pred, trace] = forward(model.network, Xb, mask);
      const Eigen::VectorXd residual = yb - pred;
      check_loss(residual.squaredNorm(), epoch, k);
      epoch_loss.add(residual.squaredNorm(), 0.0, yb.size());
      grads = backward(model.network, trace, residual);
      Eigen::VectorXd gate_grad;
      slots = network_slots(model.network, grads);
      if (stochastic) {
        gate_grad = stochastic_mu_gradient(*stochastic, eps, grads.d_mask);
        slots.push_back({span_of(stochastic->mu), cspan_of(gate_grad)});
      } else {
        auto& drop = std::get<DropInGate>(model.gate);
        gate_grad = grads.d_mask;
        if (config.dropin_l1 > 0.0) {
          gate_grad += config.dropin_l1 * drop.alpha_raw.array().sign().matrix();
        }
        slots.push_back({span_of(drop.alpha_raw), cspan_of(gate_grad)});
      }
      apply_step(slots, state, opt, epoch, k);
    }
    model.history.push_back(epoch_loss.finish(lambda));
  }

  if (config.freeze_alpha) {
    model.alpha = ScoreVector(Eigen::VectorXd::Ones(d));
  } else if (const auto* unit = std::get_if<DecisionUnit>(&model.gate)) {
    model.alpha = decision_forward(*unit, model.correlation);
  } else if (const auto* drop = std::get_if<DropInGate>(&model.gate)) {
    model.alpha = dropin_scores(*drop);
  } else {
    model.alpha = stochastic_forward(std::get<StochasticGate>(model.gate), {}, false);
  }
  return model;
}

std::vector<LossBreakdown> train_plain_mse(const LaggedDataset& dataset, const TrainConfig& config,
                                           Network* fitted) {
  config.validate();
  check_trainable(dataset);
  const Eigen::Index d = dataset.cols();
  Network net = Network::initialize(static_cast<int>(d), config.hidden,
                                    derive_seed({config.seed, kInitStream}));
  const OptimizerConfig opt{config.optimizer, config.lr};
  OptimizerState state;
  BatchSchedule schedule(dataset.rows(), config.batch_size, derive_seed({config.seed, kShuffleStream}));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d);

  std::vector<LossBreakdown> history;
  Eigen::MatrixXd Xb;
  Eigen::VectorXd yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    schedule.shuffle();
    EpochLoss epoch_loss;
    for (std::size_t k = 0; k < schedule.batches(); ++k) {
      schedule.gather(k, dataset.X, dataset.targets, Xb, yb);
      const auto [pred, trace] = forward(net, Xb, ones);
      const Eigen::VectorXd residual = yb - pred;
      check_loss(residual.squaredNorm(), epoch, k);
      epoch_loss.add(residual.squaredNorm(), 0.0, yb.size());
      const ParamGrads grads = backward(net, trace, residual);
      auto slots = network_slots(net, grads);
      apply_step(slots, state, opt, epoch, k);
    }
    history.push_back(epoch_loss.finish(0.0));
  }
  if (fitted) *fitted = std::move(net);
  return history;
}

Eigen::VectorXd predict(const FittedModel& model, const LaggedDataset& dataset) {
  if (!dataset.standardization || !(*dataset.standardization == model.stats)) {
    throw Error(ErrorCode::pipeline_mismatch,
                "dataset was not standardized with the model's training statistics");
  }
  if (dataset.cols() != model.network.input_dim()) {
    throw Error(ErrorCode::pipeline_mismatch, "dataset width does not match the model");
  }
  const Eigen::VectorXd z = narxsel::predict(model.network, dataset.X, model.inference_mask());
  return (z.array() * model.stats.y_std + model.stats.y_mean).matrix();
}

double evaluate(const FittedModel& model, const LaggedDataset& test) {
  const Eigen::VectorXd pred = predict(model, test);
  const Eigen::VectorXd target =
      (test.targets.array() * model.stats.y_std + model.stats.y_mean).matrix();
  return (target - pred).squaredNorm() / static_cast<double>(target.size());
}

void write_training_log(std::ostream& out, const std::vector<LossBreakdown>& history) {
  out << "epoch,mse,var_penalty,total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out << e + 1 << ',' << format_double(history[e].mse) << ','
        << format_double(history[e].var_penalty) << ',' << format_double(history[e].total) << '\n';
  }
}

std::string model_to_text(const FittedModel& model) {
  using detail::ordered_json;
  using detail::to_json;
  ordered_json gate;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, DecisionUnit>) {
          gate = {{"method", "decision_unit"},
                  {"full_flatten", g.full_flatten},
                  {"W", to_json(g.W)},
                  {"b", to_json(g.b)}};
        } else if constexpr (std::is_same_v<T, DropInGate>) {
          gate = {{"method", "drop_in"}, {"alpha_raw", to_json(g.alpha_raw)}};
        } else {
          gate = {{"method", "stochastic"}, {"mu", to_json(g.mu)}, {"sigma", g.sigma}};
        }
      },
      model.gate);

  ordered_json labels = ordered_json::array();
  for (const auto& label : model.labels) labels.push_back(label.name());
  ordered_json history = ordered_json::array();
  for (const auto& h : model.history) history.push_back({h.mse, h.var_penalty, h.total});

  ordered_json j = {{"format", "narxsel-model"},
                    {"version", 1},
                    {"lag", model.lag},
                    {"labels", labels},
                    {"network", to_json(model.network)},
                    {"gate", gate},
                    {"stats", to_json(model.stats)},
                    {"correlation", to_json(model.correlation.C)},
                    {"alpha", to_json(model.alpha.values())},
                    {"history", history}};
  return j.dump(2) + "\n";
}

FittedModel model_from_text(std::string_view text) {
  using detail::ordered_json;
  try {
    const auto j = ordered_json::parse(text);
    if (j.at("format") != "narxsel-model") throw Error(ErrorCode::parse, "not a model bundle");
    FittedModel model;
    model.lag = j.at("lag").get<int>();
    for (const auto& label : j.at("labels")) {
      model.labels.push_back(ColumnLabel::parse(label.get<std::string>()));
    }
    model.network = detail::network_from_json(j.at("network"));
    const auto& gate = j.at("gate");
    const GateMethod method = parse_method(gate.at("method").get<std::string>());
    if (method == GateMethod::decision_unit) {
      DecisionUnit unit;
      unit.full_flatten = gate.at("full_flatten").get<bool>();
      unit.W = detail::matrix_from_json(gate.at("W"));
      unit.b = detail::vector_from_json(gate.at("b"));
      model.gate = std::move(unit);
    } else if (method == GateMethod::drop_in) {
      model.gate = DropInGate{detail::vector_from_json(gate.at("alpha_raw"))};
    } else {
      model.gate = StochasticGate{detail::vector_from_json(gate.at("mu")),
                                  gate.at("sigma").get<double>()};
    }
    model.stats = detail::stats_from_json(j.at("stats"));
    model.correlation.C = detail::matrix_from_json(j.at("correlation"));
    model.alpha = ScoreVector(detail::vector_from_json(j.at("alpha")));
    for (const auto& h : j.at("history")) {
      model.history.push_back({h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>()});
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("model bundle: ") + e.what());
  }
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_text(model));
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_from_text(buffer.str());
}

}  // namespace narxsel
