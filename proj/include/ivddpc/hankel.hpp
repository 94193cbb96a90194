#pragma once

#include "ivddpc/sslib.hpp"

namespace ivddpc {

/// Block-Hankel matrix of depth `depth`: column j is
/// col(x(j), ..., x(j + depth - 1)) for a signal stored one sample per column.
MatrixXd hankel(const MatrixXd& signal, int depth);

/// Offline data matrices at horizons (past, future).
///   Z_p = col(U_p, Y_p), inputs first.
/// R_f is empty for open-loop data and E_f is empty when the noise is unknown.
struct HankelBundle {
  int past = 0;
  int future = 0;
  MatrixXd Up, Yp, Zp, Uf, Yf, Rf, Ef;

  Eigen::Index columns() const { return Zp.cols(); }
  Eigen::Index inputs() const { return Uf.rows() / future; }
  Eigen::Index outputs() const { return Yf.rows() / future; }
  bool closed_loop() const { return Rf.cols() > 0; }
  bool has_noise() const { return Ef.cols() > 0; }

  /// col(Z_p, U_f)
  MatrixXd regressor() const;
};

HankelBundle build_bundle(const Trajectory& traj, int past, int future);

/// Row block i (0-based) is C A^i.
MatrixXd extended_observability(const MatrixXd& A, const MatrixXd& C, int depth);

/// [A^{s-1} B, ..., A B, B]: oldest sample multiplies the leftmost block.
MatrixXd extended_controllability(const MatrixXd& A, const MatrixXd& B, int depth);

/// Lower block-triangular Toeplitz matrix of Markov parameters.
MatrixXd toeplitz(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const MatrixXd& D,
                  int depth);

/// Relative residual of the predictor-form data equation
///   Y_f = Gamma Delta Z_p + H^u U_f + H^e E_f,
/// with Delta = [Delta(A_K, B - K D), Delta(A_K, K)].
/// Without E_f the data must be noise-free; pass `assume_noise_free`.
double data_equation_residual(const StateSpaceModel& model, const HankelBundle& bundle,
                              bool assume_noise_free = false);

/// Last `past` inputs stacked over last `past` outputs before time t.
struct OnlineWindow {
  VectorXd z_p;
  Eigen::Index t = 0;
};

/// `t` is 1-based sample time as in col(u_{[t-L_p, t-1]}); t = past + 1 is
/// the earliest valid time.
OnlineWindow online_window(const Trajectory& traj, Eigen::Index t, int past);

/// Same as online_window on raw histories (one sample per column).
VectorXd past_window(const MatrixXd& u, const MatrixXd& y, Eigen::Index t, int past);

}  // namespace ivddpc
