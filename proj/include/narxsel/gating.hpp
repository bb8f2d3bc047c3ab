#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "narxsel/fim.hpp"

namespace narxsel {

/// Relevance scores, one per regressor column, every entry in [0, 1].
class ScoreVector {
 public:
  ScoreVector() = default;
  explicit ScoreVector(Eigen::VectorXd alpha);

  const Eigen::VectorXd& values() const { return alpha_; }
  Eigen::Index size() const { return alpha_.size(); }
  double operator[](Eigen::Index i) const { return alpha_(i); }

 private:
  Eigen::VectorXd alpha_;
};

enum class GateMethod { decision_unit, drop_in, stochastic };

std::string to_string(GateMethod method);
GateMethod parse_method(std::string_view text);

/// Logistic map from the lagged covariance to one score per column.
struct DecisionUnit {
  Eigen::MatrixXd W;  // d x features
  Eigen::VectorXd b;  // d
  /// Features are the upper triangle (with diagonal) of C unless set, in
  /// which case the full row-major flattening is used.
  bool full_flatten = false;

  /// Zero weights and bias, so every score starts at 0.5.
  static DecisionUnit zeros(Eigen::Index dim, bool full_flatten = false);
};

Eigen::VectorXd decision_features(const CorrelationMatrix& C, bool full_flatten);
Eigen::Index decision_feature_count(Eigen::Index dim, bool full_flatten);

/// alpha = sigmoid(W * features(C) + b).
ScoreVector decision_forward(const DecisionUnit& unit, const CorrelationMatrix& C);

struct DecisionUnitGrads {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

/// Chain rule through the sigmoid for an upstream dL/dalpha.
DecisionUnitGrads decision_backward(const DecisionUnit& unit, const CorrelationMatrix& C,
                                    const Eigen::VectorXd& upstream_grad);

/// Elementwise trainable weights on the inputs. The forward pass uses the raw
/// values; reported scores are clamped to [0, 1].
struct DropInGate {
  Eigen::VectorXd alpha_raw;
};

ScoreVector dropin_scores(const DropInGate& gate);

/// z = clamp(mu + sigma * eps, 0, 1) during training and clamp(mu, 0, 1) at
/// inference; sigma is fixed.
struct StochasticGate {
  Eigen::VectorXd mu;
  double sigma = 1.0;
};

ScoreVector stochastic_forward(const StochasticGate& gate, const Eigen::VectorXd& eps, bool training);

/// upstream where 0 < mu + sigma * eps < 1, zero where the clamp is active.
Eigen::VectorXd stochastic_mu_gradient(const StochasticGate& gate, const Eigen::VectorXd& eps,
                                       const Eigen::VectorXd& upstream_grad);

using GateState = std::variant<DecisionUnit, DropInGate, StochasticGate>;

GateMethod method_of(const GateState& gate);

double sparsity_l1(const ScoreVector& scores);

/// Column indices with alpha strictly greater than threshold.
std::vector<int> threshold_support(const ScoreVector& scores, double threshold = 0.5);

}  // namespace narxsel
