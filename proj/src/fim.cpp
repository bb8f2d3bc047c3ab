#include "narxsel/fim.hpp"

#include <ostream>
#include <random>

#include "narxsel/csv.hpp"
#include "narxsel/error.hpp"

namespace narxsel {

CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& X, Centering centering) {
  if (X.rows() < 2) {
    throw Error(ErrorCode::insufficient_data, "correlation_matrix needs at least 2 samples");
  }
  const double n = static_cast<double>(X.rows());
  Eigen::MatrixXd centered = X;
  if (centering == Centering::centered) centered.rowwise() -= X.colwise().mean();

  CorrelationMatrix out;
  out.C = (centered.transpose() * centered) / n;
  // Mirror the upper triangle so the result is exactly symmetric.
  out.C.triangularView<Eigen::StrictlyLower>() = out.C.transpose();
  return out;
}

double min_eigenvalue(const Eigen::MatrixXd& M) {
  const Eigen::MatrixXd sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& C,
                           const std::vector<ColumnLabel>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != C.dim()) {
    throw Error(ErrorCode::shape_mismatch, "labels do not match correlation matrix size");
  }
  std::vector<std::string> cells{"label"};
  for (const auto& label : labels) cells.push_back(label.name());
  write_csv_row(out, cells);
  for (Eigen::Index i = 0; i < C.dim(); ++i) {
    cells.clear();
    cells.push_back(labels[static_cast<std::size_t>(i)].name());
    for (Eigen::Index j = 0; j < C.dim(); ++j) cells.push_back(format_double(C.C(i, j)));
    write_csv_row(out, cells);
  }
}

Eigen::MatrixXd first_layer_jacobian(const Network& net, const ForwardTrace& trace, Eigen::Index i) {
  if (i < 0 || i >= trace.samples()) {
    throw Error(ErrorCode::out_of_range, "sample index " + std::to_string(i) + " outside trace of " +
                                             std::to_string(trace.samples()));
  }
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(trace.samples());
  unit(i) = 1.0;
  const Eigen::MatrixXd deltas = first_layer_deltas(net, trace, unit);
  // residual = y - yhat, so its derivative carries a minus sign.
  return -deltas.row(i).transpose() * trace.gated_input.row(i);
}

EmpiricalFIM empirical_fim(const Network& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& alpha) {
  if (X.rows() == 0) throw Error(ErrorCode::empty_request, "empirical_fim needs a nonempty batch");
  if (y.size() != X.rows()) throw Error(ErrorCode::shape_mismatch, "targets do not match batch");
  const auto [pred, trace] = forward(net, X, alpha);
  const Eigen::VectorXd residual = y - pred;
  // Row i of deltas is d yhat_i / d s1_i.
  const Eigen::MatrixXd deltas = first_layer_deltas(net, trace, Eigen::VectorXd::Ones(X.rows()));

  const Eigen::Index h = deltas.cols();
  const Eigen::Index d = X.cols();
  // Row i of S is s_i = residual_i * vec(J_i), J_i = -delta_i x_i^T (row-major).
  Eigen::MatrixXd S(X.rows(), h * d);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index k = 0; k < h; ++k) {
      S.row(i).segment(k * d, d) = -residual(i) * deltas(i, k) * trace.gated_input.row(i);
    }
  }
  EmpiricalFIM out;
  out.samples = X.rows();
  out.F = (S.transpose() * S) / static_cast<double>(X.rows());
  out.F.triangularView<Eigen::StrictlyLower>() = out.F.transpose();
  return out;
}

CramerRaoReport cramer_rao_toy(const Eigen::MatrixXd& design, Eigen::Index n_reps, double sigma,
                               std::uint64_t seed) {
  if (n_reps < 100) throw Error(ErrorCode::invalid_argument, "cramer_rao_toy needs n_reps >= 100");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be nonnegative");
  const Eigen::Index p = design.cols();
  if (design.rows() <= p) throw Error(ErrorCode::insufficient_data, "design needs more rows than columns");

  const Eigen::MatrixXd gram = design.transpose() * design;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    throw Error(ErrorCode::conditioning, "design matrix is rank deficient (rank " +
                                             std::to_string(qr.rank()) + " < " + std::to_string(p) + ")");
  }

  CramerRaoReport report;
  report.n_reps = n_reps;
  report.samples = design.rows();
  report.sigma = sigma;
  report.beta_true = Eigen::VectorXd::LinSpaced(p, 1.0, static_cast<double>(p));
  report.bound = sigma * sigma * gram.inverse();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::VectorXd clean = design * report.beta_true;
  Eigen::MatrixXd estimates(n_reps, p);
  Eigen::VectorXd y(design.rows());
  for (Eigen::Index r = 0; r < n_reps; ++r) {
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = clean(i) + sigma * noise(rng);
    estimates.row(r) = qr.solve(y).transpose();
  }
  report.beta_mean = estimates.colwise().mean().transpose();
  const Eigen::MatrixXd centered = estimates.rowwise() - report.beta_mean.transpose();
  report.empirical_cov = (centered.transpose() * centered) / static_cast<double>(n_reps - 1);
  return report;
}

CramerRaoReport cramer_rao_toy(Eigen::Index n_reps, Eigen::Index samples, double sigma,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd design(samples, 3);
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    for (Eigen::Index j = 0; j < design.cols(); ++j) design(i, j) = normal(rng);
  }
  return cramer_rao_toy(design, n_reps, sigma, seed);
}

}  // namespace narxsel
