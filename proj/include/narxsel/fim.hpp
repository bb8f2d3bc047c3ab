#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "narxsel/datagen.hpp"
#include "narxsel/nnet.hpp"

namespace narxsel {

/// Lagged covariance matrix of the regressor. With the dataset column order
/// [u lags..., y lags...] its blocks are the input auto-covariance, the
/// output auto-covariance and the input/output cross-covariance.
struct CorrelationMatrix {
  Eigen::MatrixXd C;

  Eigen::Index dim() const { return C.rows(); }
};

enum class Centering { centered, raw };

/// (1/N) X~^T X~ with X~ the column-centered X (or X itself for raw).
/// Touches nothing but X.
CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& X,
                                     Centering centering = Centering::centered);

/// Smallest eigenvalue of the symmetrized matrix.
double min_eigenvalue(const Eigen::MatrixXd& M);

/// Square CSV with a leading label column and a header of the same labels.
void write_correlation_csv(std::ostream& out, const CorrelationMatrix& C,
                           const std::vector<ColumnLabel>& labels);

/// Jacobian of the residual y_i - yhat_i with respect to the first-layer
/// weights, h x d. It is the outer product of the back-propagated first-layer
/// error and the gated input of sample i, so its rank is at most one.
Eigen::MatrixXd first_layer_jacobian(const Network& net, const ForwardTrace& trace, Eigen::Index i);

struct EmpiricalFIM {
  Eigen::MatrixXd F;  // (h*d) x (h*d), row-major flattening of W1
  Eigen::Index samples = 0;
};

/// F = (1/N) sum_i s_i s_i^T with s_i = residual_i * vec(J_i).
EmpiricalFIM empirical_fim(const Network& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& alpha);

struct CramerRaoReport {
  Eigen::Index n_reps = 0;
  Eigen::Index samples = 0;
  double sigma = 0.0;
  Eigen::VectorXd beta_true;
  Eigen::VectorXd beta_mean;
  Eigen::MatrixXd empirical_cov;  // covariance of the OLS estimates across replications
  Eigen::MatrixXd bound;          // sigma^2 (X^T X)^{-1}
};

/// Monte-Carlo check of the OLS covariance against sigma^2 (X^T X)^{-1} on a
/// fixed design with fresh Gaussian noise per replication.
CramerRaoReport cramer_rao_toy(const Eigen::MatrixXd& design, Eigen::Index n_reps, double sigma,
                               std::uint64_t seed);

/// Same, on an N x 3 standard-normal design drawn from the seed.
CramerRaoReport cramer_rao_toy(Eigen::Index n_reps, Eigen::Index samples, double sigma,
                               std::uint64_t seed);

}  // namespace narxsel
