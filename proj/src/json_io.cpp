#include "json_io.hpp"

#include "narxsel/error.hpp"

namespace narxsel::detail {

namespace {

const ordered_json& field(const ordered_json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::parse, std::string("missing field '") + key + "'");
  }
  return j.at(key);
}

}  // namespace

ordered_json to_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const ordered_json& j) {
  if (!j.is_array()) throw Error(ErrorCode::parse, "expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

ordered_json to_json(const Eigen::MatrixXd& m) {
  ordered_json data = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const ordered_json& j) {
  const auto rows = field(j, "rows").get<Eigen::Index>();
  const auto cols = field(j, "cols").get<Eigen::Index>();
  const auto& data = field(j, "data");
  if (rows < 0 || cols < 0 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(rows * cols)) {
    throw Error(ErrorCode::parse, "matrix data does not match its dimensions");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  }
  return m;
}

ordered_json to_json(const Network& net) {
  ordered_json layers = ordered_json::array();
  for (const auto& layer : net.layers()) {
    ordered_json entry;
    entry["in"] = layer.W.cols();
    entry["out"] = layer.W.rows();
    entry["activation"] = to_string(layer.activation);
    entry["W"] = to_json(layer.W)["data"];
    entry["b"] = to_json(layer.b);
    layers.push_back(std::move(entry));
  }
  return {{"format", "narxsel-network"}, {"version", 1}, {"layers", std::move(layers)}};
}

Network network_from_json(const ordered_json& j) {
  try {
    if (field(j, "format") != "narxsel-network") {
      throw Error(ErrorCode::parse, "not a network checkpoint");
    }
    std::vector<LayerParams> layers;
    for (const auto& entry : field(j, "layers")) {
      ordered_json shaped = {{"rows", field(entry, "out")},
                             {"cols", field(entry, "in")},
                             {"data", field(entry, "W")}};
      LayerParams layer;
      layer.W = matrix_from_json(shaped);
      layer.b = vector_from_json(field(entry, "b"));
      layer.activation = parse_activation(field(entry, "activation").get<std::string>());
      layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("network checkpoint: ") + e.what());
  }
}

ordered_json to_json(const StandardizeStats& stats) {
  return {{"x_mean", to_json(stats.x_mean)},
          {"x_std", to_json(stats.x_std)},
          {"y_mean", stats.y_mean},
          {"y_std", stats.y_std}};
}

StandardizeStats stats_from_json(const ordered_json& j) {
  StandardizeStats stats;
  stats.x_mean = vector_from_json(field(j, "x_mean"));
  stats.x_std = vector_from_json(field(j, "x_std"));
  stats.y_mean = field(j, "y_mean").get<double>();
  stats.y_std = field(j, "y_std").get<double>();
  return stats;
}

}  // namespace narxsel::detail
