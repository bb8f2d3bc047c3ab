#include "narxsel/gating.hpp"

#include <cmath>

#include "narxsel/error.hpp"

namespace narxsel {

ScoreVector::ScoreVector(Eigen::VectorXd alpha) : alpha_(std::move(alpha)) {
  for (Eigen::Index i = 0; i < alpha_.size(); ++i) {
    if (!(alpha_(i) >= 0.0 && alpha_(i) <= 1.0)) {
      throw Error(ErrorCode::out_of_range, "score " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

std::string to_string(GateMethod method) {
  switch (method) {
    case GateMethod::decision_unit: return "decision_unit";
    case GateMethod::drop_in: return "drop_in";
    case GateMethod::stochastic: return "stochastic";
  }
  return "unknown";
}

GateMethod parse_method(std::string_view text) {
  if (text == "decision_unit" || text == "proposed") return GateMethod::decision_unit;
  if (text == "drop_in" || text == "dropin") return GateMethod::drop_in;
  if (text == "stochastic") return GateMethod::stochastic;
  throw Error(ErrorCode::parse, "unknown method '" + std::string(text) +
                                    "' (expected decision_unit, drop_in or stochastic)");
}

Eigen::Index decision_feature_count(Eigen::Index dim, bool full_flatten) {
  return full_flatten ? dim * dim : dim * (dim + 1) / 2;
}

DecisionUnit DecisionUnit::zeros(Eigen::Index dim, bool full_flatten) {
  DecisionUnit unit;
  unit.W = Eigen::MatrixXd::Zero(dim, decision_feature_count(dim, full_flatten));
  unit.b = Eigen::VectorXd::Zero(dim);
  unit.full_flatten = full_flatten;
  return unit;
}

Eigen::VectorXd decision_features(const CorrelationMatrix& C, bool full_flatten) {
  const Eigen::Index d = C.dim();
  Eigen::VectorXd f(decision_feature_count(d, full_flatten));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = full_flatten ? 0 : i; j < d; ++j) f(k++) = C.C(i, j);
  }
  return f;
}

namespace {

void check_unit(const DecisionUnit& unit, const CorrelationMatrix& C) {
  if (unit.b.size() != C.dim() || unit.W.rows() != C.dim() ||
      unit.W.cols() != decision_feature_count(C.dim(), unit.full_flatten)) {
    throw Error(ErrorCode::shape_mismatch, "decision unit does not match a " +
                                               std::to_string(C.dim()) + "-column covariance");
  }
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& logits) {
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

}  // namespace

ScoreVector decision_forward(const DecisionUnit& unit, const CorrelationMatrix& C) {
  check_unit(unit, C);
  return ScoreVector(sigmoid(unit.W * decision_features(C, unit.full_flatten) + unit.b));
}

DecisionUnitGrads decision_backward(const DecisionUnit& unit, const CorrelationMatrix& C,
                                    const Eigen::VectorXd& upstream_grad) {
  check_unit(unit, C);
  if (upstream_grad.size() != C.dim()) {
    throw Error(ErrorCode::shape_mismatch, "upstream gradient does not match score count");
  }
  const Eigen::VectorXd features = decision_features(C, unit.full_flatten);
  const Eigen::VectorXd alpha = sigmoid(unit.W * features + unit.b);
  const Eigen::VectorXd d_logit =
      (upstream_grad.array() * alpha.array() * (1.0 - alpha.array())).matrix();
  return {d_logit * features.transpose(), d_logit};
}

ScoreVector dropin_scores(const DropInGate& gate) {
  return ScoreVector(gate.alpha_raw.cwiseMax(0.0).cwiseMin(1.0));
}

ScoreVector stochastic_forward(const StochasticGate& gate, const Eigen::VectorXd& eps, bool training) {
  if (!training) return ScoreVector(gate.mu.cwiseMax(0.0).cwiseMin(1.0));
  if (eps.size() != gate.mu.size()) {
    throw Error(ErrorCode::shape_mismatch, "noise vector does not match gate size");
  }
  return ScoreVector((gate.mu + gate.sigma * eps).cwiseMax(0.0).cwiseMin(1.0));
}

Eigen::VectorXd stochastic_mu_gradient(const StochasticGate& gate, const Eigen::VectorXd& eps,
                                       const Eigen::VectorXd& upstream_grad) {
  if (eps.size() != gate.mu.size() || upstream_grad.size() != gate.mu.size()) {
    throw Error(ErrorCode::shape_mismatch, "stochastic gate gradient shapes differ");
  }
  Eigen::VectorXd grad(gate.mu.size());
  for (Eigen::Index j = 0; j < grad.size(); ++j) {
    const double z = gate.mu(j) + gate.sigma * eps(j);
    grad(j) = (z > 0.0 && z < 1.0) ? upstream_grad(j) : 0.0;
  }
  return grad;
}

GateMethod method_of(const GateState& gate) {
  if (std::holds_alternative<DecisionUnit>(gate)) return GateMethod::decision_unit;
  if (std::holds_alternative<DropInGate>(gate)) return GateMethod::drop_in;
  return GateMethod::stochastic;
}

double sparsity_l1(const ScoreVector& scores) { return scores.values().cwiseAbs().sum(); }

std::vector<int> threshold_support(const ScoreVector& scores, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "threshold must lie in (0, 1)");
  }
  std::vector<int> out;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    if (scores[j] > threshold) out.push_back(static_cast<int>(j));
  }
  return out;
}

}  // namespace narxsel
