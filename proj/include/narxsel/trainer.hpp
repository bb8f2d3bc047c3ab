#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "narxsel/datagen.hpp"
#include "narxsel/fim.hpp"
#include "narxsel/gating.hpp"
#include "narxsel/nnet.hpp"

namespace narxsel {

enum class X0Mode { train_mean, zero };

std::string to_string(X0Mode mode);
X0Mode parse_x0_mode(std::string_view text);

struct TrainConfig {
  GateMethod method = GateMethod::decision_unit;
  /// Weight of the variance-alignment penalty; used by the decision unit only.
  double lambda_v = 0.1;
  double lr = 3e-3;
  int epochs = 2000;
  int batch_size = 128;
  std::uint64_t seed = 0;
  X0Mode x0_mode = X0Mode::train_mean;
  std::vector<int> hidden = {64};
  OptimizerKind optimizer = OptimizerKind::adam;

  // Decision unit.
  bool full_flatten = false;
  Centering centering = Centering::centered;
  /// Recompute the covariance from every minibatch instead of once.
  bool recompute_correlation = false;
  /// When false the penalty treats g as a constant for the network weights.
  bool penalty_through_network = true;
  /// Pins alpha to 1 and leaves the decision unit untouched.
  bool freeze_alpha = false;

  // Baselines.
  double dropin_l1 = 0.0;
  double stochastic_sigma = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double mse = 0.0;
  double var_penalty = 0.0;
  double total = 0.0;
};

struct FittedModel {
  Network network;
  GateState gate;
  StandardizeStats stats;
  /// Covariance the decision unit reads; empty for the baselines.
  CorrelationMatrix correlation;
  ScoreVector alpha;
  std::vector<LossBreakdown> history;
  std::vector<ColumnLabel> labels;
  int lag = 0;

  /// Mask applied to the inputs at inference time.
  Eigen::VectorXd inference_mask() const;
};

/// (var_y - g^T diag(alpha) C diag(alpha) g)^2.
double variance_penalty(const Eigen::VectorXd& alpha, const CorrelationMatrix& C,
                        const Eigen::VectorXd& g, double var_y);

struct PenaltyGradients {
  Eigen::VectorXd d_alpha;
  Eigen::VectorXd d_g;
};

PenaltyGradients penalty_gradients(const Eigen::VectorXd& alpha, const CorrelationMatrix& C,
                                   const Eigen::VectorXd& g, double var_y);

/// Loss and gradients for one minibatch of the decision-unit objective:
/// MSE + lambda_v * penalty, with g evaluated at x0 ⊙ alpha.
struct ObjectiveGradients {
  LossBreakdown loss;
  ParamGrads network;
  DecisionUnitGrads unit;
  Eigen::VectorXd d_alpha;
};

ObjectiveGradients decision_unit_objective(const Network& net, const DecisionUnit& unit,
                                           const CorrelationMatrix& C, const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& y, const Eigen::VectorXd& x0,
                                           double var_y, double lambda_v,
                                           bool penalty_through_network = true);

/// Minibatch training on a standardized dataset.
FittedModel train(const LaggedDataset& dataset, const TrainConfig& config);

/// Ungated reference: same initialization, batches and optimizer, plain MSE.
/// Returns the per-epoch training MSE.
std::vector<LossBreakdown> train_plain_mse(const LaggedDataset& dataset, const TrainConfig& config,
                                           Network* fitted = nullptr);

/// Predictions in the original target units.
Eigen::VectorXd predict(const FittedModel& model, const LaggedDataset& dataset);

/// MSE on de-standardized predictions. The dataset must carry the model's
/// standardization.
double evaluate(const FittedModel& model, const LaggedDataset& test);

/// `epoch,mse,var_penalty,total`.
void write_training_log(std::ostream& out, const std::vector<LossBreakdown>& history);

std::string model_to_text(const FittedModel& model);
FittedModel model_from_text(std::string_view text);
void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

}  // namespace narxsel
