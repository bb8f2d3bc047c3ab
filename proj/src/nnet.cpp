#include "narxsel/nnet.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json_io.hpp"
#include "narxsel/error.hpp"

namespace narxsel {

namespace {

// Eigen only vectorizes tanh for float; this form runs on the vectorized exp.
// Below |s| = 1/16 the odd Taylor series avoids the cancellation in 1 - t.
template <typename Derived>
auto tanh_array(const Eigen::ArrayBase<Derived>& s) {
  using Array = Eigen::Array<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
  const Array x = s;
  const Array ax = x.abs();
  const Array t = (-2.0 * ax).exp();
  const Array large = (1.0 - t) / (1.0 + t);
  const Array x2 = ax.square();
  const Array small =
      ax * (1.0 + x2 * (-1.0 / 3 + x2 * (2.0 / 15 + x2 * (-17.0 / 315 + x2 * (62.0 / 2835)))));
  const Array mag = (ax < 0.0625).select(small, large);
  return Array((x < 0.0).select(-mag, mag));
}

Eigen::MatrixXd activate(Activation act, const Eigen::MatrixXd& s) {
  if (act == Activation::tanh) return tanh_array(s.array()).matrix();
  return s;
}

// phi'(s) expressed through a = phi(s).
Eigen::ArrayXXd derivative_from_output(Activation act, const Eigen::MatrixXd& a) {
  if (act == Activation::tanh) return 1.0 - a.array().square();
  return Eigen::ArrayXXd::Ones(a.rows(), a.cols());
}

void check_trace(const Network& net, const ForwardTrace& trace) {
  if (trace.source != &net || trace.revision != net.revision() ||
      trace.post.size() != net.layers().size()) {
    throw Error(ErrorCode::stale_trace,
                "forward trace does not belong to the current network parameters");
  }
}

void check_input(const Network& net, Eigen::Index cols, Eigen::Index mask_size) {
  if (net.layers().empty()) throw Error(ErrorCode::shape_mismatch, "network has no layers");
  if (cols != net.input_dim() || mask_size != net.input_dim()) {
    throw Error(ErrorCode::shape_mismatch,
                "input width " + std::to_string(cols) + " / mask " + std::to_string(mask_size) +
                    " do not match network input " + std::to_string(net.input_dim()));
  }
}

}  // namespace

std::string to_string(Activation activation) {
  return activation == Activation::tanh ? "tanh" : "identity";
}

Activation parse_activation(std::string_view text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "identity") return Activation::identity;
  throw Error(ErrorCode::parse, "unknown activation '" + std::string(text) + "'");
}

Network::Network(std::vector<LayerParams> layers) : layers_(std::move(layers)) { validate(); }

void Network::validate() const {
  if (layers_.empty()) throw Error(ErrorCode::shape_mismatch, "network needs at least one layer");
  for (std::size_t m = 0; m < layers_.size(); ++m) {
    const auto& layer = layers_[m];
    if (layer.W.rows() != layer.b.size() || layer.W.rows() == 0 || layer.W.cols() == 0) {
      throw Error(ErrorCode::shape_mismatch, "layer " + std::to_string(m) + " has inconsistent W/b");
    }
    if (m > 0 && layer.W.cols() != layers_[m - 1].W.rows()) {
      throw Error(ErrorCode::shape_mismatch,
                  "layer " + std::to_string(m) + " input does not match previous output");
    }
    if (!layer.W.allFinite() || !layer.b.allFinite()) {
      throw Error(ErrorCode::numerical, "layer " + std::to_string(m) + " has non-finite entries");
    }
  }
  if (layers_.back().W.rows() != 1 || layers_.back().activation != Activation::identity) {
    throw Error(ErrorCode::shape_mismatch, "last layer must be a scalar identity head");
  }
}

Network Network::initialize(int input_dim, std::span<const int> hidden, std::uint64_t seed) {
  if (input_dim < 1) throw Error(ErrorCode::invalid_argument, "input_dim must be positive");
  std::mt19937_64 rng(seed);
  std::vector<LayerParams> layers;
  int fan_in = input_dim;
  auto make = [&](int out, Activation act) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    LayerParams layer;
    layer.W.resize(out, fan_in);
    for (Eigen::Index i = 0; i < layer.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = dist(rng);
    }
    layer.b.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) layer.b(i) = dist(rng);
    layer.activation = act;
    layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (int width : hidden) {
    if (width < 1) throw Error(ErrorCode::invalid_argument, "hidden widths must be positive");
    make(width, Activation::tanh);
  }
  make(1, Activation::identity);
  return Network(std::move(layers));
}

int Network::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols());
}

int Network::first_width() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.rows());
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.W.size() + layer.b.size());
  return n;
}

bool Network::operator==(const Network& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t m = 0; m < layers_.size(); ++m) {
    const auto& a = layers_[m];
    const auto& b = other.layers_[m];
    if (a.activation != b.activation || a.W.rows() != b.W.rows() || a.W.cols() != b.W.cols() ||
        a.W != b.W || a.b != b.b) {
      return false;
    }
  }
  return true;
}

ParamGrads ParamGrads::zeros_like(const Network& net) {
  ParamGrads g;
  for (const auto& layer : net.layers()) {
    g.layers.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()),
                        Eigen::VectorXd::Zero(layer.b.size())});
  }
  g.d_mask = Eigen::VectorXd::Zero(net.input_dim());
  return g;
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
  if (other.layers.size() != layers.size()) {
    throw Error(ErrorCode::shape_mismatch, "gradient sets differ in depth");
  }
  for (std::size_t m = 0; m < layers.size(); ++m) {
    layers[m].dW += other.layers[m].dW;
    layers[m].db += other.layers[m].db;
  }
  if (other.d_mask.size() == d_mask.size()) {
    d_mask += other.d_mask;
  } else if (other.d_mask.size() != 0) {
    throw Error(ErrorCode::shape_mismatch, "mask gradients differ in size");
  }
  return *this;
}

ParamGrads& ParamGrads::scale(double factor) {
  for (auto& layer : layers) {
    layer.dW *= factor;
    layer.db *= factor;
  }
  d_mask *= factor;
  return *this;
}

bool ParamGrads::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.dW.allFinite() || !layer.db.allFinite()) return false;
  }
  return d_mask.allFinite();
}

std::pair<Eigen::VectorXd, ForwardTrace> forward(const Network& net, const Eigen::MatrixXd& X,
                                                 const Eigen::VectorXd& mask) {
  check_input(net, X.cols(), mask.size());
  ForwardTrace trace;
  trace.source = &net;
  trace.revision = net.revision();
  trace.mask = mask;
  trace.input = X;
  trace.gated_input = (X.array().rowwise() * mask.transpose().array()).matrix();

  const Eigen::MatrixXd* a = &trace.gated_input;
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd s = *a * layer.W.transpose();
    s.rowwise() += layer.b.transpose();
    trace.post.push_back(activate(layer.activation, s));
    trace.pre.push_back(std::move(s));
    a = &trace.post.back();
  }
  Eigen::VectorXd predictions = trace.post.back().col(0);
  return {std::move(predictions), std::move(trace)};
}

Eigen::VectorXd predict(const Network& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& mask) {
  check_input(net, X.cols(), mask.size());
  Eigen::MatrixXd a = (X.array().rowwise() * mask.transpose().array()).matrix();
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd s = a * layer.W.transpose();
    s.rowwise() += layer.b.transpose();
    a = activate(layer.activation, s);
  }
  return a.col(0);
}

namespace {

// Deltas dL/ds for every layer, last layer first in computation order.
std::vector<Eigen::MatrixXd> layer_deltas(const Network& net, const ForwardTrace& trace,
                                          const Eigen::VectorXd& output_grad) {
  check_trace(net, trace);
  if (output_grad.size() != trace.samples()) {
    throw Error(ErrorCode::shape_mismatch, "output gradient length does not match batch size");
  }
  const auto& layers = net.layers();
  const std::size_t depth = layers.size();
  std::vector<Eigen::MatrixXd> deltas(depth);
  deltas[depth - 1] =
      (derivative_from_output(layers[depth - 1].activation, trace.post[depth - 1]).colwise() *
       output_grad.array())
          .matrix();
  for (std::size_t m = depth - 1; m > 0; --m) {
    deltas[m - 1] = ((deltas[m] * layers[m].W).array() *
                     derivative_from_output(layers[m - 1].activation, trace.post[m - 1]))
                        .matrix();
  }
  return deltas;
}

}  // namespace

Eigen::MatrixXd first_layer_deltas(const Network& net, const ForwardTrace& trace,
                                   const Eigen::VectorXd& output_grad) {
  return layer_deltas(net, trace, output_grad).front();
}

ParamGrads backward_from_output(const Network& net, const ForwardTrace& trace,
                                const Eigen::VectorXd& output_grad) {
  const auto deltas = layer_deltas(net, trace, output_grad);
  const auto& layers = net.layers();
  ParamGrads grads;
  grads.layers.resize(layers.size());
  for (std::size_t m = 0; m < layers.size(); ++m) {
    const Eigen::MatrixXd& below = m == 0 ? trace.gated_input : trace.post[m - 1];
    grads.layers[m].dW = deltas[m].transpose() * below;
    grads.layers[m].db = deltas[m].colwise().sum().transpose();
  }
  const Eigen::MatrixXd d_gated = deltas.front() * layers.front().W;
  grads.d_mask = (d_gated.array() * trace.input.array()).colwise().sum().transpose();
  return grads;
}

ParamGrads backward(const Network& net, const ForwardTrace& trace, const Eigen::VectorXd& residuals) {
  const double n = static_cast<double>(trace.samples());
  return backward_from_output(net, trace, (-2.0 / n) * residuals);
}

Eigen::VectorXd gated_input_gradient(const Network& net, const Eigen::VectorXd& z) {
  check_input(net, z.size(), z.size());
  const auto& layers = net.layers();
  std::vector<Eigen::VectorXd> post;
  post.reserve(layers.size());
  Eigen::VectorXd a = z;
  for (const auto& layer : layers) {
    Eigen::VectorXd s = layer.W * a + layer.b;
    a = activate(layer.activation, s);
    post.push_back(a);
  }
  Eigen::VectorXd e = derivative_from_output(layers.back().activation, post.back()).matrix();
  for (std::size_t m = layers.size() - 1; m > 0; --m) {
    e = ((layers[m].W.transpose() * e).array() *
         derivative_from_output(layers[m - 1].activation, post[m - 1]).col(0))
            .matrix();
  }
  return layers.front().W.transpose() * e;
}

Eigen::VectorXd input_gradient(const Network& net, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& mask) {
  check_input(net, x0.size(), mask.size());
  const Eigen::VectorXd z = x0.cwiseProduct(mask);
  return mask.cwiseProduct(gated_input_gradient(net, z));
}

InputGradientVjp input_gradient_vjp(const Network& net, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& v) {
  check_input(net, z.size(), v.size());
  const auto& layers = net.layers();
  const std::size_t depth = layers.size();

  // Primal and tangent (direction v) forward passes.
  std::vector<Eigen::VectorXd> a(depth + 1), a_dot(depth + 1), s_dot(depth);
  std::vector<Eigen::ArrayXd> d1(depth), d2(depth);
  a[0] = z;
  a_dot[0] = v;
  for (std::size_t m = 0; m < depth; ++m) {
    const auto& layer = layers[m];
    const Eigen::VectorXd s = layer.W * a[m] + layer.b;
    if (layer.activation == Activation::tanh) {
      a[m + 1] = tanh_array(s.array()).matrix();
      d1[m] = 1.0 - a[m + 1].array().square();
      d2[m] = -2.0 * a[m + 1].array() * d1[m];
    } else {
      a[m + 1] = s;
      d1[m] = Eigen::ArrayXd::Ones(s.size());
      d2[m] = Eigen::ArrayXd::Zero(s.size());
    }
    s_dot[m] = layer.W * a_dot[m];
    a_dot[m + 1] = (d1[m] * s_dot[m].array()).matrix();
  }

  // Reverse sweep of the scalar output a_dot[depth].
  InputGradientVjp out;
  out.params.layers.resize(depth);
  Eigen::VectorXd adj_a = Eigen::VectorXd::Zero(a[depth].size());
  Eigen::VectorXd adj_a_dot = Eigen::VectorXd::Ones(a_dot[depth].size());
  for (std::size_t m = depth; m-- > 0;) {
    const auto& layer = layers[m];
    const Eigen::VectorXd adj_s_dot = (d1[m] * adj_a_dot.array()).matrix();
    const Eigen::VectorXd adj_s =
        (d2[m] * s_dot[m].array() * adj_a_dot.array() + d1[m] * adj_a.array()).matrix();
    out.params.layers[m].dW = adj_s_dot * a_dot[m].transpose() + adj_s * a[m].transpose();
    out.params.layers[m].db = adj_s;
    adj_a_dot = layer.W.transpose() * adj_s_dot;
    adj_a = layer.W.transpose() * adj_s;
  }
  out.d_z = adj_a;
  return out;
}

void optimizer_step(std::span<const ParamSlot> slots, OptimizerState& state,
                    const OptimizerConfig& config) {
  if (state.m.empty()) {
    for (const auto& slot : slots) {
      const auto n = static_cast<Eigen::Index>(slot.value.size());
      state.m.push_back(Eigen::VectorXd::Zero(n));
      state.v.push_back(Eigen::VectorXd::Zero(n));
    }
  }
  if (state.m.size() != slots.size()) {
    throw Error(ErrorCode::shape_mismatch, "optimizer state has a different number of slots");
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& slot = slots[k];
    if (slot.value.size() != slot.grad.size() ||
        static_cast<Eigen::Index>(slot.value.size()) != state.m[k].size()) {
      throw Error(ErrorCode::shape_mismatch, "optimizer slot " + std::to_string(k) + " changed shape");
    }
    for (double g : slot.grad) {
      if (!std::isfinite(g)) {
        throw Error(ErrorCode::numerical, "non-finite gradient in slot " + std::to_string(k));
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    Eigen::Map<Eigen::VectorXd> value(slots[k].value.data(),
                                      static_cast<Eigen::Index>(slots[k].value.size()));
    Eigen::Map<const Eigen::VectorXd> grad(slots[k].grad.data(),
                                           static_cast<Eigen::Index>(slots[k].grad.size()));
    if (config.kind == OptimizerKind::sgd) {
      value -= config.lr * grad;
      continue;
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
    value.array() -= config.lr * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + config.epsilon);
  }
}

std::vector<ParamSlot> network_slots(Network& net, const ParamGrads& grads) {
  auto& layers = net.mutable_layers();
  if (grads.layers.size() != layers.size()) {
    throw Error(ErrorCode::shape_mismatch, "gradients do not match network depth");
  }
  std::vector<ParamSlot> slots;
  for (std::size_t m = 0; m < layers.size(); ++m) {
    auto& layer = layers[m];
    const auto& g = grads.layers[m];
    if (g.dW.rows() != layer.W.rows() || g.dW.cols() != layer.W.cols() || g.db.size() != layer.b.size()) {
      throw Error(ErrorCode::shape_mismatch, "gradient shape mismatch at layer " + std::to_string(m));
    }
    slots.push_back({{layer.W.data(), static_cast<std::size_t>(layer.W.size())},
                     {g.dW.data(), static_cast<std::size_t>(g.dW.size())}});
    slots.push_back({{layer.b.data(), static_cast<std::size_t>(layer.b.size())},
                     {g.db.data(), static_cast<std::size_t>(g.db.size())}});
  }
  return slots;
}

std::string network_to_text(const Network& net) { return detail::to_json(net).dump(2) + "\n"; }

Network network_from_text(std::string_view text) {
  detail::ordered_json j;
  try {
    j = detail::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::parse, std::string("network checkpoint: ") + e.what());
  }
  return detail::network_from_json(j);
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << network_to_text(net);
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return network_from_text(buffer.str());
}

}  // namespace narxsel
