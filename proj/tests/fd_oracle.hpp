#pragma once

// Central finite differences used as the independent oracle for every
// analytic gradient in the test suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include <Eigen/Dense>

namespace narxsel::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries that are zero up
/// to truncation error from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Perturbs every entry of `params` in place and returns the central
/// difference of `loss`; entries are restored afterwards.
inline Eigen::VectorXd central_difference(std::span<double> params, const std::function<double()>& loss,
                                          double step = kFdStep) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + step;
    const double up = loss();
    params[k] = saved - step;
    const double down = loss();
    params[k] = saved;
    out(static_cast<Eigen::Index>(k)) = (up - down) / (2.0 * step);
  }
  return out;
}

inline double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    worst = std::max(worst, relative_error(analytic(k), numeric(k)));
  }
  return worst;
}

template <typename Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
Eigen::VectorXd flat(const Eigen::PlainObjectBase<Derived>& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

}  // namespace narxsel::testing
