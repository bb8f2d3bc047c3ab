#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace narxsel {

/// The eleven benchmark NARX generators, F1..F11.
enum class SystemId { F1 = 1, F2, F3, F4, F5, F6, F7, F8, F9, F10, F11 };

inline constexpr int kSystemCount = 11;

std::string to_string(SystemId id);
SystemId parse_system(std::string_view text);
std::vector<SystemId> all_systems();

/// Largest lag (in either signal) used by the generator's formula.
int max_lag(SystemId id);

/// Input range on which the recursion stays bounded, for systems that diverge
/// on the default [-2.5, 2.5]. Empty when the default range is already stable
/// or when no symmetric range helps.
std::optional<std::pair<double, double>> stable_input_range(SystemId id);

/// Initial output history to use instead of zero when zero is a degenerate
/// fixed point of the recursion.
std::optional<double> stable_initial_output(SystemId id);

struct SimConfig {
  SystemId system = SystemId::F3;
  std::size_t n_samples = 6000;
  double u_low = -2.5;
  double u_high = 2.5;
  std::size_t burn_in = 50;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  /// Value of y before the first simulated step.
  double y_init = 0.0;

  void validate() const;
};

struct TimeSeriesPair {
  std::vector<double> u;
  std::vector<double> y;

  std::size_t size() const { return u.size(); }
};

enum class Signal { u, y };

struct ColumnLabel {
  Signal signal;
  int lag;

  /// "u_lag3", "y_lag1", ...
  std::string name() const;
  static ColumnLabel parse(std::string_view text);

  auto operator<=>(const ColumnLabel&) const = default;
};

struct StandardizeStats {
  Eigen::VectorXd x_mean;
  Eigen::VectorXd x_std;
  double y_mean = 0.0;
  double y_std = 1.0;

  bool operator==(const StandardizeStats& other) const;
};

/// Regressor matrix of lagged windows. Row i holds
/// [u_{t-n_b}, ..., u_{t-1}, y_{t-n_a}, ..., y_{t-1}] for t = i + max(n_a, n_b)
/// and targets(i) = y_t.
struct LaggedDataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd targets;
  int lag = 0;
  std::vector<ColumnLabel> labels;
  /// Set once the dataset has been standardized; records the stats applied.
  std::optional<StandardizeStats> standardization;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

std::vector<double> generate_input(std::size_t n, double u_low, double u_high,
                                   std::uint64_t seed);

/// Runs the recursion for config.n_samples + config.burn_in steps and drops
/// the first burn_in. Steps earlier than the system's max lag hold y_init.
TimeSeriesPair simulate(const SimConfig& config, std::span<const double> u);

/// generate_input + simulate with the input drawn from config.seed.
TimeSeriesPair simulate_system(const SimConfig& config);

LaggedDataset build_lagged(const TimeSeriesPair& pair, int lag);

/// ARX regressor with separate output (n_a) and input (n_b) orders;
/// build_lagged(pair, k) == build_arx(pair, k, k).
LaggedDataset build_arx(const TimeSeriesPair& pair, int n_a, int n_b);

std::pair<LaggedDataset, StandardizeStats> standardize(const LaggedDataset& dataset);
LaggedDataset apply_standardize(const LaggedDataset& dataset, const StandardizeStats& stats);

/// Contiguous prefix of n_train rows and the remaining suffix.
std::pair<LaggedDataset, LaggedDataset> split_time_ordered(const LaggedDataset& dataset,
                                                           std::size_t n_train);

std::set<ColumnLabel> ground_truth_support(SystemId id);

}  // namespace narxsel
