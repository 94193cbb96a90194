#pragma once

#include <Eigen/Dense>

namespace ivddpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Largest eigenvalue modulus of a square matrix.
double spectral_radius(const MatrixXd& a);

/// Truncated-SVD pseudo-inverse. Singular values below
/// `rel_tol * sigma_max` are treated as zero.
struct PseudoInverse {
  MatrixXd pinv;
  VectorXd singular_values;
  Eigen::Index rank = 0;
};

PseudoInverse pseudo_inverse(const MatrixXd& m, double rel_tol = 1e-10);

/// Numerical rank with the same thresholding rule as `pseudo_inverse`.
Eigen::Index numerical_rank(const MatrixXd& m, double rel_tol = 1e-10);

/// Rows form an orthonormal basis of the left null space of `m`,
/// i.e. result * m == 0.
MatrixXd left_null_space(const MatrixXd& m, double rel_tol = 1e-12);

/// Orthonormal basis (as columns) of the column space of `m`.
MatrixXd orthonormal_column_basis(const MatrixXd& m, double rel_tol = 1e-12);

inline MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace ivddpc
