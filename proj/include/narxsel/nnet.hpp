#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace narxsel {

enum class Activation { tanh, identity };

std::string to_string(Activation activation);
Activation parse_activation(std::string_view text);

struct LayerParams {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
  Activation activation = Activation::tanh;
};

/// Feed-forward scalar regressor. The input of the first layer is gated
/// elementwise by a mask before the affine map.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerParams> layers);

  /// Hidden tanh layers of the given widths followed by a linear scalar head,
  /// weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Network initialize(int input_dim, std::span<const int> hidden, std::uint64_t seed);

  const std::vector<LayerParams>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding forward traces.
  std::vector<LayerParams>& mutable_layers() {
    ++revision_;
    return layers_;
  }

  int input_dim() const;
  int first_width() const;
  std::size_t parameter_count() const;
  std::uint64_t revision() const { return revision_; }

  bool operator==(const Network& other) const;

 private:
  void validate() const;

  std::vector<LayerParams> layers_;
  std::uint64_t revision_ = 0;
};

/// Everything backward() needs from one forward pass.
struct ForwardTrace {
  const Network* source = nullptr;
  std::uint64_t revision = 0;
  Eigen::VectorXd mask;
  Eigen::MatrixXd input;        // raw X, N x d
  Eigen::MatrixXd gated_input;  // X with each row multiplied by mask
  std::vector<Eigen::MatrixXd> pre;   // per layer, N x out
  std::vector<Eigen::MatrixXd> post;  // per layer, N x out

  Eigen::Index samples() const { return input.rows(); }
};

struct LayerGrad {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

struct ParamGrads {
  std::vector<LayerGrad> layers;
  Eigen::VectorXd d_mask;

  static ParamGrads zeros_like(const Network& net);
  ParamGrads& operator+=(const ParamGrads& other);
  ParamGrads& scale(double factor);
  bool all_finite() const;
};

/// Predictions for every row of X; the first layer sees X with column j
/// multiplied by mask(j).
std::pair<Eigen::VectorXd, ForwardTrace> forward(const Network& net, const Eigen::MatrixXd& X,
                                                 const Eigen::VectorXd& mask);
Eigen::VectorXd predict(const Network& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& mask);

/// Back-propagated first-layer errors: row i is output_grad(i) * d yhat_i / d s1_i,
/// where s1 is the first-layer pre-activation.
Eigen::MatrixXd first_layer_deltas(const Network& net, const ForwardTrace& trace,
                                   const Eigen::VectorXd& output_grad);

/// Gradients for an arbitrary upstream dL/dyhat.
ParamGrads backward_from_output(const Network& net, const ForwardTrace& trace,
                                const Eigen::VectorXd& output_grad);

/// Gradients of (1/N) sum (y - yhat)^2 given residuals r = y - yhat.
ParamGrads backward(const Network& net, const ForwardTrace& trace, const Eigen::VectorXd& residuals);

/// d f / d z at the gated point z (the argument the first layer sees).
Eigen::VectorXd gated_input_gradient(const Network& net, const Eigen::VectorXd& z);

/// d f(x ⊙ mask) / d x at x0; equals mask ⊙ gated_input_gradient(x0 ⊙ mask).
Eigen::VectorXd input_gradient(const Network& net, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& mask);

struct InputGradientVjp {
  ParamGrads params;   // d_mask left empty
  Eigen::VectorXd d_z;
};

/// Gradient of v^T (d f / d z)(z) with respect to all parameters and to z.
InputGradientVjp input_gradient_vjp(const Network& net, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& v);

// --- optimizer --------------------------------------------------------------

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

struct OptimizerState {
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;
  long long step = 0;
};

/// In-place update of every slot. The state is sized on first use; a later
/// call with different slot shapes is a shape error. Non-finite gradients
/// raise a numerical error before anything is modified.
void optimizer_step(std::span<const ParamSlot> slots, OptimizerState& state,
                    const OptimizerConfig& config);

/// Slots pairing every network parameter with its gradient, layer by layer
/// (W then b).
std::vector<ParamSlot> network_slots(Network& net, const ParamGrads& grads);

// --- checkpoint -------------------------------------------------------------

std::string network_to_text(const Network& net);
Network network_from_text(std::string_view text);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace narxsel
