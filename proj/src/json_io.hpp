#pragma once

// JSON converters shared by the checkpoint, model bundle and report code.

#include <json.hpp>

#include "narxsel/datagen.hpp"
#include "narxsel/nnet.hpp"

namespace narxsel::detail {

using nlohmann::ordered_json;

ordered_json to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const ordered_json& j);

/// Row-major flattening with explicit dimensions.
ordered_json to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const ordered_json& j);

ordered_json to_json(const Network& net);
Network network_from_json(const ordered_json& j);

ordered_json to_json(const StandardizeStats& stats);
StandardizeStats stats_from_json(const ordered_json& j);

}  // namespace narxsel::detail
