#include "ivddpc/linalg.hpp"

#include <Eigen/Eigenvalues>

namespace ivddpc {

double spectral_radius(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

PseudoInverse pseudo_inverse(const MatrixXd& m, double rel_tol) {
  PseudoInverse out;
  out.pinv = MatrixXd::Zero(m.cols(), m.rows());
  if (m.size() == 0) return out;
  Eigen::BDCSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.singular_values = svd.singularValues();
  const double smax = out.singular_values.size() ? out.singular_values(0) : 0.0;
  if (smax <= 0.0) return out;
  const double cut = rel_tol * smax;
  Eigen::Index r = 0;
  while (r < out.singular_values.size() && out.singular_values(r) > cut) ++r;
  out.rank = r;
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();
  out.pinv = v.leftCols(r) *
             out.singular_values.head(r).cwiseInverse().asDiagonal() *
             u.leftCols(r).transpose();
  return out;
}

Eigen::Index numerical_rank(const MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<MatrixXd> svd(m);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > rel_tol * s(0)) ++r;
  return r;
}

MatrixXd left_null_space(const MatrixXd& m, double rel_tol) {
  const Eigen::Index rows = m.rows();
  if (m.cols() == 0) return MatrixXd::Identity(rows, rows);
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullU);
  const VectorXd& s = svd.singularValues();
  Eigen::Index r = 0;
  if (s.size() && s(0) > 0.0) {
    while (r < s.size() && s(r) > rel_tol * s(0)) ++r;
  }
  return svd.matrixU().rightCols(rows - r).transpose();
}

MatrixXd orthonormal_column_basis(const MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return MatrixXd(m.rows(), 0);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
  qr.setThreshold(rel_tol);
  const Eigen::Index r = qr.rank();
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(m.rows(), r);
  return q;
}

}  // namespace ivddpc
