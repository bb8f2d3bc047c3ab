#include "narxsel/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

#include "narxsel/error.hpp"
#include "narxsel/seeding.hpp"

namespace narxsel {

namespace {

constexpr double kDivergenceBound = 1e6;

// Evaluates one step of the recursion. `u(k)` and `y(k)` return the value k
// steps in the past.
template <typename U, typename Y>
double evaluate_system(SystemId id, U u, Y y) {
  switch (id) {
    case SystemId::F1:
      return std::sin(y(1)) + 0.01 * y(2) + u(4) + u(1) * u(1) + u(2) * u(3);
    case SystemId::F2:
      return 0.01 * y(1) * y(1) + std::pow(u(1), 5) + u(2) * u(3) * std::pow(u(4), 4);
    case SystemId::F3:
      return u(1) * u(1) + u(2) * u(3) * u(4);
    case SystemId::F4:
      return u(3) * u(2) + u(3) * u(1) + u(3) * u(2) * u(1) + std::sin(y(2)) +
             std::exp(-y(1));
    case SystemId::F5:
      return std::sin(u(1) * u(2)) + std::exp(-y(1) * y(2));
    case SystemId::F6:
      return std::exp(std::sin(y(1))) + y(3) * std::exp(-u(2));
    case SystemId::F7:
      return u(5) * std::exp(std::sin(y(1))) + y(3) * std::exp(-u(2));
    case SystemId::F8:
      return std::exp(u(1) + u(3)) + u(2) * u(4) + 1.0 / (1.0 + y(6) * y(6));
    case SystemId::F9:
      return std::sqrt(std::exp(u(5))) + 1.0 / (1.0 + y(6) * y(6) + u(2) * u(2));
    case SystemId::F10:
      return std::pow(2.0, -std::abs(u(1) * u(2))) * std::sqrt(y(1)) +
             0.01 * std::asin(y(10));
    case SystemId::F11:
      return 0.01 * u(10) * std::atan(y(1) + u(1)) + std::max(u(2), 0.5) +
             1.0 / (1.0 + y(5) * y(5) + u(3) * u(3));
  }
  throw Error(ErrorCode::invalid_argument, "unknown system id");
}

}  // namespace

std::string to_string(SystemId id) { return "F" + std::to_string(static_cast<int>(id)); }

SystemId parse_system(std::string_view text) {
  if (text.size() >= 2 && (text[0] == 'F' || text[0] == 'f')) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + 1, text.data() + text.size(), value);
    if (ec == std::errc{} && ptr == text.data() + text.size() && value >= 1 &&
        value <= kSystemCount) {
      return static_cast<SystemId>(value);
    }
  }
  throw Error(ErrorCode::parse, "unknown system '" + std::string(text) + "' (expected F1..F11)");
}

std::vector<SystemId> all_systems() {
  std::vector<SystemId> out;
  for (int i = 1; i <= kSystemCount; ++i) out.push_back(static_cast<SystemId>(i));
  return out;
}

int max_lag(SystemId id) {
  int lag = 0;
  for (const auto& label : ground_truth_support(id)) lag = std::max(lag, label.lag);
  return lag;
}

std::optional<std::pair<double, double>> stable_input_range(SystemId id) {
  switch (id) {
    case SystemId::F2: return std::pair{-1.0, 1.0};
    case SystemId::F4: return std::pair{-1.5, 1.5};
    case SystemId::F5: return std::pair{-0.8, 0.8};
    // y_{t-3} exp(-u_{t-2}) is a zero-drift multiplicative walk for any
    // symmetric range; a nonnegative input makes the factor contractive.
    case SystemId::F6:
    case SystemId::F7: return std::pair{0.0, 2.5};
    default: return std::nullopt;
  }
}

std::optional<double> stable_initial_output(SystemId id) {
  // sqrt(y_{t-1}) keeps y = 0 a fixed point.
  if (id == SystemId::F10) return 0.5;
  return std::nullopt;
}

void SimConfig::validate() const {
  if (!(u_low < u_high)) {
    throw Error(ErrorCode::invalid_argument, "input range requires u_low < u_high");
  }
  if (n_samples == 0) throw Error(ErrorCode::empty_request, "n_samples must be positive");
  if (n_samples <= burn_in) {
    throw Error(ErrorCode::invalid_argument, "n_samples must exceed burn_in");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw Error(ErrorCode::invalid_argument, "noise_std must be finite and nonnegative");
  }
  if (!std::isfinite(y_init)) throw Error(ErrorCode::invalid_argument, "y_init must be finite");
}

std::string ColumnLabel::name() const {
  return std::string(signal == Signal::u ? "u" : "y") + "_lag" + std::to_string(lag);
}

ColumnLabel ColumnLabel::parse(std::string_view text) {
  auto fail = [&] {
    return Error(ErrorCode::parse, "bad column label '" + std::string(text) + "'");
  };
  if (text.size() < 6 || text.substr(1, 4) != "_lag") throw fail();
  ColumnLabel label{};
  if (text[0] == 'u') {
    label.signal = Signal::u;
  } else if (text[0] == 'y') {
    label.signal = Signal::y;
  } else {
    throw fail();
  }
  auto [ptr, ec] = std::from_chars(text.data() + 5, text.data() + text.size(), label.lag);
  if (ec != std::errc{} || ptr != text.data() + text.size() || label.lag < 1) throw fail();
  return label;
}

bool StandardizeStats::operator==(const StandardizeStats& other) const {
  return x_mean.size() == other.x_mean.size() && x_std.size() == other.x_std.size() &&
         x_mean == other.x_mean && x_std == other.x_std && y_mean == other.y_mean &&
         y_std == other.y_std;
}

std::vector<double> generate_input(std::size_t n, double u_low, double u_high,
                                   std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::empty_request, "generate_input: n must be positive");
  if (!(u_low < u_high)) {
    throw Error(ErrorCode::invalid_argument, "generate_input: requires u_low < u_high");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(u_low, u_high);
  std::vector<double> u(n);
  for (auto& v : u) v = dist(rng);
  return u;
}

TimeSeriesPair simulate(const SimConfig& config, std::span<const double> u) {
  config.validate();
  const std::size_t total = config.n_samples + config.burn_in;
  if (u.size() < total) {
    throw Error(ErrorCode::insufficient_data,
                "simulate: input has " + std::to_string(u.size()) + " samples, need " +
                    std::to_string(total));
  }
  const auto start = static_cast<std::size_t>(max_lag(config.system));

  std::vector<double> y(total, config.y_init);
  for (std::size_t t = start; t < total; ++t) {
    auto past_u = [&](int k) { return u[t - static_cast<std::size_t>(k)]; };
    auto past_y = [&](int k) { return y[t - static_cast<std::size_t>(k)]; };
    const double value = evaluate_system(config.system, past_u, past_y);
    if (!std::isfinite(value) || std::abs(value) > kDivergenceBound) {
      throw Error(ErrorCode::divergence, to_string(config.system) + " diverged at step " +
                                             std::to_string(t) + " (|y| > 1e6 or not finite)");
    }
    y[t] = value;
  }

  if (config.noise_std > 0.0) {
    std::mt19937_64 rng(splitmix64(config.seed ^ 0x6E6F697365ULL));
    std::normal_distribution<double> noise(0.0, config.noise_std);
    for (auto& v : y) v += noise(rng);
  }

  TimeSeriesPair out;
  out.u.assign(u.begin() + static_cast<std::ptrdiff_t>(config.burn_in),
               u.begin() + static_cast<std::ptrdiff_t>(total));
  out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(config.burn_in), y.end());
  return out;
}

TimeSeriesPair simulate_system(const SimConfig& config) {
  config.validate();
  auto u = generate_input(config.n_samples + config.burn_in, config.u_low, config.u_high,
                          config.seed);
  return simulate(config, u);
}

LaggedDataset build_arx(const TimeSeriesPair& pair, int n_a, int n_b) {
  if (pair.u.size() != pair.y.size()) {
    throw Error(ErrorCode::shape_mismatch, "series u and y differ in length");
  }
  if (n_a < 1 || n_b < 1) throw Error(ErrorCode::invalid_argument, "lag orders must be >= 1");
  const int order = std::max(n_a, n_b);
  const auto length = static_cast<Eigen::Index>(pair.size());
  if (length <= order) {
    throw Error(ErrorCode::insufficient_data,
                "series of length " + std::to_string(length) + " is too short for lag " +
                    std::to_string(order));
  }

  LaggedDataset ds;
  ds.lag = order;
  const Eigen::Index rows = length - order;
  ds.X.resize(rows, n_a + n_b);
  ds.targets.resize(rows);
  for (int k = n_b; k >= 1; --k) ds.labels.push_back({Signal::u, k});
  for (int k = n_a; k >= 1; --k) ds.labels.push_back({Signal::y, k});

  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::Index t = i + order;
    Eigen::Index col = 0;
    for (int k = n_b; k >= 1; --k) ds.X(i, col++) = pair.u[static_cast<std::size_t>(t - k)];
    for (int k = n_a; k >= 1; --k) ds.X(i, col++) = pair.y[static_cast<std::size_t>(t - k)];
    ds.targets(i) = pair.y[static_cast<std::size_t>(t)];
  }
  return ds;
}

LaggedDataset build_lagged(const TimeSeriesPair& pair, int lag) {
  return build_arx(pair, lag, lag);
}

std::pair<LaggedDataset, StandardizeStats> standardize(const LaggedDataset& dataset) {
  const Eigen::Index n = dataset.rows();
  if (n < 2) throw Error(ErrorCode::insufficient_data, "standardize needs at least 2 rows");

  auto population_std = [](const auto& v, double mean) {
    return std::sqrt((v.array() - mean).square().mean());
  };
  auto check = [](double sd, double mean, const std::string& what) {
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw Error(ErrorCode::degenerate_feature, what + " is constant");
    }
  };

  StandardizeStats stats;
  stats.x_mean = dataset.X.colwise().mean().transpose();
  stats.x_std.resize(dataset.cols());
  for (Eigen::Index j = 0; j < dataset.cols(); ++j) {
    stats.x_std(j) = population_std(dataset.X.col(j), stats.x_mean(j));
    const std::string name = j < static_cast<Eigen::Index>(dataset.labels.size())
                                 ? dataset.labels[static_cast<std::size_t>(j)].name()
                                 : "column " + std::to_string(j);
    check(stats.x_std(j), stats.x_mean(j), "feature " + name);
  }
  stats.y_mean = dataset.targets.mean();
  stats.y_std = population_std(dataset.targets, stats.y_mean);
  check(stats.y_std, stats.y_mean, "target");

  return {apply_standardize(dataset, stats), stats};
}

LaggedDataset apply_standardize(const LaggedDataset& dataset, const StandardizeStats& stats) {
  if (stats.x_mean.size() != dataset.cols() || stats.x_std.size() != dataset.cols()) {
    throw Error(ErrorCode::shape_mismatch, "standardize stats do not match dataset width");
  }
  if (dataset.standardization) {
    throw Error(ErrorCode::pipeline_mismatch, "dataset is already standardized");
  }
  LaggedDataset out = dataset;
  out.X = ((dataset.X.rowwise() - stats.x_mean.transpose()).array().rowwise() /
           stats.x_std.transpose().array())
              .matrix();
  out.targets = ((dataset.targets.array() - stats.y_mean) / stats.y_std).matrix();
  out.standardization = stats;
  return out;
}

std::pair<LaggedDataset, LaggedDataset> split_time_ordered(const LaggedDataset& dataset,
                                                           std::size_t n_train) {
  const auto n = static_cast<std::size_t>(dataset.rows());
  if (n_train == 0 || n_train >= n) {
    throw Error(ErrorCode::insufficient_data,
                "split of " + std::to_string(n) + " rows at " + std::to_string(n_train) +
                    " leaves an empty side");
  }
  const auto head = static_cast<Eigen::Index>(n_train);
  const auto tail = static_cast<Eigen::Index>(n - n_train);
  LaggedDataset train = dataset;
  LaggedDataset test = dataset;
  train.X = dataset.X.topRows(head);
  train.targets = dataset.targets.head(head);
  test.X = dataset.X.bottomRows(tail);
  test.targets = dataset.targets.tail(tail);
  return {std::move(train), std::move(test)};
}

std::set<ColumnLabel> ground_truth_support(SystemId id) {
  using S = Signal;
  switch (id) {
    case SystemId::F1: return {{S::y, 1}, {S::y, 2}, {S::u, 4}, {S::u, 1}, {S::u, 2}, {S::u, 3}};
    case SystemId::F2: return {{S::y, 1}, {S::u, 1}, {S::u, 2}, {S::u, 3}, {S::u, 4}};
    case SystemId::F3: return {{S::u, 1}, {S::u, 2}, {S::u, 3}, {S::u, 4}};
    case SystemId::F4: return {{S::u, 1}, {S::u, 2}, {S::u, 3}, {S::y, 1}, {S::y, 2}};
    case SystemId::F5: return {{S::u, 1}, {S::u, 2}, {S::y, 1}, {S::y, 2}};
    case SystemId::F6: return {{S::y, 1}, {S::y, 3}, {S::u, 2}};
    case SystemId::F7: return {{S::u, 5}, {S::y, 1}, {S::y, 3}, {S::u, 2}};
    case SystemId::F8: return {{S::u, 1}, {S::u, 3}, {S::u, 2}, {S::u, 4}, {S::y, 6}};
    case SystemId::F9: return {{S::u, 5}, {S::y, 6}, {S::u, 2}};
    case SystemId::F10: return {{S::u, 1}, {S::u, 2}, {S::y, 1}, {S::y, 10}};
    case SystemId::F11:
      return {{S::u, 10}, {S::u, 1}, {S::u, 2}, {S::u, 3}, {S::y, 1}, {S::y, 5}};
  }
  throw Error(ErrorCode::invalid_argument, "unknown system id");
}

}  // namespace narxsel
