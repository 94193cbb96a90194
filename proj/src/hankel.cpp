#include "ivddpc/hankel.hpp"

#include <sstream>
#include <stdexcept>

#include "ivddpc/error.hpp"

namespace ivddpc {

MatrixXd hankel(const MatrixXd& signal, int depth) {
  const Eigen::Index d = signal.rows(), T = signal.cols();
  if (depth < 1) throw std::invalid_argument("hankel: depth must be at least 1");
  if (depth > T) {
    std::ostringstream os;
    os << "hankel: depth " << depth << " exceeds signal length " << T;
    throw DimensionError(os.str());
  }
  const Eigen::Index cols = T - depth + 1;
  MatrixXd H(d * depth, cols);
  for (int i = 0; i < depth; ++i) H.middleRows(i * d, d) = signal.middleCols(i, cols);
  return H;
}

MatrixXd HankelBundle::regressor() const {
  MatrixXd W(Zp.rows() + Uf.rows(), Zp.cols());
  W << Zp, Uf;
  return W;
}

HankelBundle build_bundle(const Trajectory& traj, int past, int future) {
  traj.validate();
  const Eigen::Index N = traj.length();
  if (past < 1 || future < 1) throw std::invalid_argument("build_bundle: horizons must be positive");
  if (N < past + future) {
    std::ostringstream os;
    os << "build_bundle: need at least " << past + future << " samples, have " << N;
    throw DimensionError(os.str());
  }
  HankelBundle b;
  b.past = past;
  b.future = future;
  const Eigen::Index head = N - future;
  const Eigen::Index tail = N - past;
  b.Up = hankel(traj.u.leftCols(head), past);
  b.Yp = hankel(traj.y.leftCols(head), past);
  b.Zp.resize(b.Up.rows() + b.Yp.rows(), b.Up.cols());
  b.Zp << b.Up, b.Yp;
  b.Uf = hankel(traj.u.rightCols(tail), future);
  b.Yf = hankel(traj.y.rightCols(tail), future);
  if (traj.closed_loop()) b.Rf = hankel(traj.r.rightCols(tail), future);
  if (traj.has_noise()) b.Ef = hankel(traj.e.rightCols(tail), future);
  return b;
}

MatrixXd extended_observability(const MatrixXd& A, const MatrixXd& C, int depth) {
  if (depth < 1) throw std::invalid_argument("extended_observability: depth must be positive");
  const Eigen::Index p = C.rows();
  MatrixXd G(p * depth, A.cols());
  MatrixXd CAk = C;
  for (int i = 0; i < depth; ++i) {
    G.middleRows(i * p, p) = CAk;
    CAk = CAk * A;
  }
  return G;
}

MatrixXd extended_controllability(const MatrixXd& A, const MatrixXd& B, int depth) {
  if (depth < 1) throw std::invalid_argument("extended_controllability: depth must be positive");
  const Eigen::Index m = B.cols();
  MatrixXd Dl(A.rows(), m * depth);
  MatrixXd AkB = B;
  for (int i = depth - 1; i >= 0; --i) {
    Dl.middleCols(i * m, m) = AkB;
    AkB = A * AkB;
  }
  return Dl;
}

MatrixXd toeplitz(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const MatrixXd& D,
                  int depth) {
  if (depth < 1) throw std::invalid_argument("toeplitz: depth must be positive");
  const Eigen::Index p = C.rows(), m = B.cols();
  const MatrixXd markov = markov_parameters(A, B, C, D, depth);
  MatrixXd T = MatrixXd::Zero(p * depth, m * depth);
  for (int i = 0; i < depth; ++i) {
    for (int j = 0; j <= i; ++j) T.block(i * p, j * m, p, m) = markov.middleRows((i - j) * p, p);
  }
  return T;
}

double data_equation_residual(const StateSpaceModel& model, const HankelBundle& bundle,
                              bool assume_noise_free) {
  model.validate();
  if (!model.K) throw std::invalid_argument("data_equation_residual: model needs a Kalman gain");
  if (!bundle.has_noise() && !assume_noise_free) {
    throw std::invalid_argument("data_equation_residual: E_f missing for possibly noisy data");
  }
  const MatrixXd& K = *model.K;
  const MatrixXd AK = model.predictor_matrix();
  const Eigen::Index n = model.states(), m = model.inputs(), p = model.outputs();
  if (bundle.Uf.rows() != m * bundle.future || bundle.Yf.rows() != p * bundle.future) {
    throw DimensionError("data_equation_residual: bundle does not match model channels");
  }
  MatrixXd Delta(n, (m + p) * bundle.past);
  Delta << extended_controllability(AK, model.B - K * model.D, bundle.past),
      extended_controllability(AK, K, bundle.past);
  const MatrixXd Gamma = extended_observability(model.A, model.C, bundle.future);
  const MatrixXd Hu = toeplitz(model.A, model.B, model.C, model.D, bundle.future);
  MatrixXd resid = bundle.Yf - Gamma * (Delta * bundle.Zp) - Hu * bundle.Uf;
  if (bundle.has_noise()) {
    const MatrixXd He =
        toeplitz(model.A, K, model.C, MatrixXd::Identity(p, p), bundle.future);
    resid -= He * bundle.Ef;
  }
  const double denom = bundle.Yf.norm();
  return denom > 0.0 ? resid.norm() / denom : resid.norm();
}

VectorXd past_window(const MatrixXd& u, const MatrixXd& y, Eigen::Index t, int past) {
  if (past < 1) throw std::invalid_argument("past_window: past horizon must be positive");
  if (t <= past) {
    std::ostringstream os;
    os << "past_window: time " << t << " needs more than " << past << " samples of history";
    throw std::out_of_range(os.str());
  }
  if (t - 1 > u.cols() || t - 1 > y.cols()) throw std::out_of_range("past_window: time beyond recorded history");
  const Eigen::Index m = u.rows(), p = y.rows();
  const Eigen::Index start = t - 1 - past;  // 0-based index of sample t - L_p
  VectorXd z((m + p) * past);
  for (int i = 0; i < past; ++i) {
    z.segment(i * m, m) = u.col(start + i);
    z.segment(m * past + i * p, p) = y.col(start + i);
  }
  return z;
}

OnlineWindow online_window(const Trajectory& traj, Eigen::Index t, int past) {
  return OnlineWindow{past_window(traj.u, traj.y, t, past), t};
}

}  // namespace ivddpc
