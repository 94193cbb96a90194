#pragma once

#include <optional>
#include <string>

#include "ivddpc/linalg.hpp"

namespace ivddpc {

/// min 1/2 x'Px + q'x  s.t.  Aeq x = beq,  lb <= x <= ub.
/// Bounds may be +-infinity.
struct QuadraticProgram {
  MatrixXd P;
  VectorXd q;
  MatrixXd Aeq;
  VectorXd beq;
  VectorXd lb, ub;

  Eigen::Index variables() const { return P.rows(); }
  /// Fills empty Aeq/beq/lb/ub with "no constraint" and validates shapes,
  /// symmetry of P and lb <= ub.
  void normalize();
  double objective(const VectorXd& x) const;
};

struct SolverSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  double eps_infeasible = 1e-5;
  int max_iter = 20000;
  int check_every = 5;
  bool adaptive_rho = true;
  int adapt_every = 50;
  bool polish = true;
  bool warm_start = false;

  void validate() const;
};

enum class QpStatus { Solved, MaxIterations, PrimalInfeasible };

std::string to_string(QpStatus s);

struct QpSolution {
  VectorXd x;
  VectorXd y_eq;   ///< multipliers of Aeq x = beq
  VectorXd y_box;  ///< multipliers of the bounds (negative at lower, positive at upper)
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
};

/// Factorization cache for a fixed (P, Aeq) pair. q, beq and the bounds may
/// change between solves, as they do along a receding horizon. Not shareable
/// across threads while solving.
class QpWorkspace {
 public:
  QpWorkspace(MatrixXd P, MatrixXd Aeq, SolverSettings settings = {});

  QpSolution solve(const VectorXd& q, const VectorXd& beq, const VectorXd& lb,
                   const VectorXd& ub);

  const SolverSettings& settings() const { return settings_; }

 private:
  void set_rho(const VectorXd& lb, const VectorXd& ub, double rho);
  void factorize();
  bool polish(const VectorXd& q, const VectorXd& beq, const VectorXd& lb, const VectorXd& ub,
              QpSolution& sol) const;

  MatrixXd P_, Aeq_;
  SolverSettings settings_;
  Eigen::Index n_, k_;
  VectorXd rho_eq_, rho_box_;
  double rho_ = 0.0;
  Eigen::LDLT<MatrixXd> kkt_;
  std::optional<VectorXd> x_prev_, z_prev_, y_prev_;
};

QpSolution solve(const QuadraticProgram& qp, const SolverSettings& settings = {});

/// Direct solver for equality-only problems through the null space of Aeq.
/// Directions of zero curvature that do not affect the objective are resolved
/// by minimum norm. Throws QpError for inconsistent constraints or an
/// objective unbounded below on the feasible set.
class EqualityQp {
 public:
  EqualityQp(const MatrixXd& P, const MatrixXd& Aeq);
  VectorXd solve(const VectorXd& q, const VectorXd& beq) const;

 private:
  Eigen::Index n_;
  MatrixXd P_, Aeq_;
  std::optional<Eigen::CompleteOrthogonalDecomposition<MatrixXd>> cod_;
  MatrixXd Z_;
  MatrixXd reduced_pinv_;
  MatrixXd reduced_;
  double emax_ = 0.0;
};

/// min ||A x - b||^2  s.t.  C x = d, solved in factored form (no normal
/// equations) through the null space of C; minimum norm among minimizers.
/// Throws QpError for inconsistent constraints.
class EqualityLsq {
 public:
  EqualityLsq(const MatrixXd& A, const MatrixXd& C);
  VectorXd solve(const VectorXd& b, const VectorXd& d) const;

 private:
  MatrixXd A_, C_, Z_;
  std::optional<Eigen::CompleteOrthogonalDecomposition<MatrixXd>> c_cod_;
  std::optional<Eigen::CompleteOrthogonalDecomposition<MatrixXd>> az_cod_;
};

VectorXd solve_equality_ls(const MatrixXd& P, const VectorXd& q, const MatrixXd& Aeq,
                           const VectorXd& beq);

}  // namespace ivddpc
