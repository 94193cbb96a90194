#include "ivddpc/sslib.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ivddpc/error.hpp"

namespace ivddpc {

namespace {

std::string shape(const MatrixXd& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_shape(const MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << name << " is " << shape(m) << ", expected " << rows << "x" << cols;
    throw DimensionError(os.str());
  }
}

}  // namespace

// ---------------------------------------------------------------- models

MatrixXd StateSpaceModel::gain_or_zero() const {
  return K ? *K : MatrixXd::Zero(states(), outputs());
}

MatrixXd StateSpaceModel::predictor_matrix() const {
  if (!K) throw std::invalid_argument("predictor_matrix: model has no Kalman gain");
  return A - (*K) * C;
}

void StateSpaceModel::validate() const {
  const Eigen::Index n = A.rows(), m = B.cols(), p = C.rows();
  require_shape(A, n, n, "A");
  require_shape(B, n, m, "B");
  require_shape(C, p, n, "C");
  require_shape(D, p, m, "D");
  if (K) {
    require_shape(*K, n, p, "K");
    const double rho = spectral_radius(A - (*K) * C);
    if (!(rho < 1.0)) {
      std::ostringstream os;
      os << "A - K C is not Schur stable (spectral radius " << rho << ")";
      throw std::invalid_argument(os.str());
    }
  }
}

StateSpaceModel StateSpaceModel::make(MatrixXd A, MatrixXd B, MatrixXd C, MatrixXd D,
                                      std::optional<MatrixXd> K) {
  StateSpaceModel m{std::move(A), std::move(B), std::move(C), std::move(D), std::move(K)};
  m.validate();
  return m;
}

void ControllerModel::validate() const {
  const Eigen::Index nc = Ac.rows(), p = Bc.cols(), m = Cc.rows();
  require_shape(Ac, nc, nc, "A_c");
  require_shape(Bc, nc, p, "B_c");
  require_shape(Cc, m, nc, "C_c");
  require_shape(Dc, m, p, "D_c");
}

void ControllerModel::validate_against(const StateSpaceModel& plant) const {
  validate();
  if (inputs() != plant.outputs() || outputs() != plant.inputs()) {
    std::ostringstream os;
    os << "controller maps " << inputs() << " -> " << outputs() << " channels but plant has "
       << plant.inputs() << " inputs and " << plant.outputs() << " outputs";
    throw DimensionError(os.str());
  }
}

ControllerModel ControllerModel::make(MatrixXd Ac, MatrixXd Bc, MatrixXd Cc, MatrixXd Dc) {
  ControllerModel c{std::move(Ac), std::move(Bc), std::move(Cc), std::move(Dc)};
  c.validate();
  return c;
}

void Trajectory::validate() const {
  const Eigen::Index n = length();
  if (y.cols() != n) throw DimensionError("trajectory: y length differs from u length");
  if (r.cols() != 0 && r.cols() != n) throw DimensionError("trajectory: r length differs");
  if (e.cols() != 0 && e.cols() != n) throw DimensionError("trajectory: e length differs");
  if (r.cols() && r.rows() != y.rows()) throw DimensionError("trajectory: r/y channel mismatch");
  if (e.cols() && e.rows() != y.rows()) throw DimensionError("trajectory: e/y channel mismatch");
}

// ------------------------------------------------------------ simulation

Trajectory simulate_open_loop(const StateSpaceModel& model, const MatrixXd& u,
                              const MatrixXd& e, const VectorXd& x0) {
  const Eigen::Index n = model.states(), p = model.outputs(), N = u.cols();
  if (u.rows() != model.inputs()) throw DimensionError("simulate_open_loop: u channel count");
  if (e.rows() != p || e.cols() != N) throw DimensionError("simulate_open_loop: e shape");
  if (x0.size() != n) throw DimensionError("simulate_open_loop: x0 size");

  const MatrixXd K = model.gain_or_zero();
  Trajectory traj;
  traj.u = u;
  traj.e = e;
  traj.y.resize(p, N);
  VectorXd x = x0;
  for (Eigen::Index t = 0; t < N; ++t) {
    traj.y.col(t) = model.C * x + model.D * u.col(t) + e.col(t);
    x = model.A * x + model.B * u.col(t) + K * e.col(t);
  }
  return traj;
}

ClosedLoopStepper::ClosedLoopStepper(const StateSpaceModel& plant, const ControllerModel& ctrl,
                                     VectorXd x0, VectorXd xc0)
    : plant_(plant), ctrl_(ctrl), plant_gain_(plant.gain_or_zero()),
      x_(std::move(x0)), xc_(std::move(xc0)) {
  ctrl.validate_against(plant);
  if (x_.size() != plant.states()) throw DimensionError("closed loop: x0 size");
  if (xc_.size() != ctrl.states()) throw DimensionError("closed loop: xc0 size");
  // u = C_c xc + D_c (r - C x - D u - e)  =>  (I + D_c D) u = ...
  const MatrixXd loop =
      MatrixXd::Identity(plant.inputs(), plant.inputs()) + ctrl.Dc * plant.D;
  Eigen::FullPivLU<MatrixXd> check(loop);
  if (loop.size() > 0 && !check.isInvertible()) {
    throw WellPosednessError("closed loop is ill-posed: I + D_c D is singular");
  }
  if (loop.size() > 0) {
    const double cond_inv = 1.0 / (loop.norm() * check.inverse().norm());
    if (cond_inv < 1e-12) throw WellPosednessError("closed loop is ill-posed: I + D_c D is near-singular");
  }
  loop_.compute(loop);
}

ClosedLoopStepper::Sample ClosedLoopStepper::step(const Eigen::Ref<const VectorXd>& r,
                                                  const Eigen::Ref<const VectorXd>& e) {
  const StateSpaceModel& P = plant_;
  const ControllerModel& Cn = ctrl_;
  Sample s;
  s.u = loop_.solve(Cn.Cc * xc_ + Cn.Dc * (r - P.C * x_ - e));
  s.y = P.C * x_ + P.D * s.u + e;
  const VectorXd w = r - s.y;
  x_ = P.A * x_ + P.B * s.u + plant_gain_ * e;
  xc_ = Cn.Ac * xc_ + Cn.Bc * w;
  return s;
}

Trajectory simulate_closed_loop(const StateSpaceModel& plant, const ControllerModel& ctrl,
                                const MatrixXd& r, const MatrixXd& e, const VectorXd& x0,
                                const VectorXd& xc0) {
  const Eigen::Index p = plant.outputs(), N = r.cols();
  if (r.rows() != p) throw DimensionError("simulate_closed_loop: r channel count");
  if (e.rows() != p || e.cols() != N) throw DimensionError("simulate_closed_loop: e shape");
  ClosedLoopStepper loop(plant, ctrl, x0, xc0);
  Trajectory traj;
  traj.u.resize(plant.inputs(), N);
  traj.y.resize(p, N);
  traj.r = r;
  traj.e = e;
  for (Eigen::Index t = 0; t < N; ++t) {
    auto s = loop.step(r.col(t), e.col(t));
    traj.u.col(t) = s.u;
    traj.y.col(t) = s.y;
  }
  return traj;
}

// --------------------------------------------------------------- signals

VectorXd square_wave(int period, double duty, double amplitude, int length, int phase) {
  if (period <= 0 || length <= 0) throw std::invalid_argument("square_wave: period and length must be positive");
  if (period < 2) throw std::invalid_argument("square_wave: period must be at least 2");
  if (!(duty > 0.0 && duty < 1.0)) throw std::invalid_argument("square_wave: duty must lie in (0, 1)");
  const long high = std::lround(duty * period);
  VectorXd out(length);
  for (int k = 0; k < length; ++k) {
    long pos = (static_cast<long>(k) + phase) % period;
    if (pos < 0) pos += period;
    out(k) = pos < high ? amplitude : -amplitude;
  }
  return out;
}

VectorXd excitation_reference(int period, double duty, const std::vector<double>& amplitudes) {
  if (amplitudes.empty()) throw std::invalid_argument("excitation_reference: empty amplitude list");
  VectorXd out(static_cast<Eigen::Index>(period) * static_cast<Eigen::Index>(amplitudes.size()));
  Eigen::Index at = 0;
  for (double a : amplitudes) {
    out.segment(at, period) = square_wave(period, duty, a, period);
    at += period;
  }
  return out;
}

GaussianSource::GaussianSource(std::uint64_t seed) : engine_(seed) {}

double GaussianSource::uniform() {
  // (0, 1]: never zero, so log() below is finite.
  return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
}

double GaussianSource::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

MatrixXd gaussian_noise(std::uint64_t seed, const VectorXd& sigma, Eigen::Index length) {
  if ((sigma.array() < 0.0).any()) throw std::invalid_argument("gaussian_noise: negative sigma");
  MatrixXd out(sigma.size(), length);
  GaussianSource src(seed);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index c = 0; c < sigma.size(); ++c) out(c, t) = sigma(c) * src.next();
  }
  return out;
}

// --------------------------------------------------------------- Riccati

namespace {

MatrixXd riccati_map(const MatrixXd& P, const MatrixXd& A, const MatrixXd& C, const MatrixXd& Qw,
                     const MatrixXd& Rv) {
  const MatrixXd S = C * P * C.transpose() + Rv;
  const MatrixXd APC = A * P * C.transpose();
  return symmetrized(A * P * A.transpose() + Qw - APC * S.ldlt().solve(APC.transpose()));
}

}  // namespace

double dare_residual(const MatrixXd& P, const MatrixXd& A, const MatrixXd& C,
                     const MatrixXd& Qw, const MatrixXd& Rv) {
  return (riccati_map(P, A, C, Qw, Rv) - P).norm() / std::max(1.0, P.norm());
}

MatrixXd dare_solve(const MatrixXd& A, const MatrixXd& C, const MatrixXd& Qw,
                    const MatrixXd& Rv, DareOptions opts) {
  const Eigen::Index n = A.rows(), p = C.rows();
  require_shape(A, n, n, "A");
  require_shape(C, p, n, "C");
  require_shape(Qw, n, n, "Qw");
  require_shape(Rv, p, p, "Rv");
  Eigen::LLT<MatrixXd> rchol(Rv);
  if (rchol.info() != Eigen::Success) throw std::invalid_argument("dare_solve: Rv must be positive definite");

  // Doubling on the dual (control-form) equation with F = A', G = C' Rv^-1 C.
  MatrixXd F = A.transpose();
  MatrixXd G = C.transpose() * rchol.solve(C);
  MatrixXd H = Qw;
  const MatrixXd I = MatrixXd::Identity(n, n);
  double last = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::PartialPivLU<MatrixXd> W(I + G * H);
    const MatrixXd WF = W.solve(F);
    const MatrixXd WG = W.solve(G);
    const MatrixXd Hn = symmetrized(H + F.transpose() * H * WF);
    const MatrixXd Gn = symmetrized(G + F * WG * F.transpose());
    F = F * WF;
    const double step = (Hn - H).norm() / std::max(1.0, Hn.norm());
    H = Hn;
    G = Gn;
    if (!H.allFinite()) break;
    if (step <= 0.1 * opts.tol) {
      last = dare_residual(H, A, C, Qw, Rv);
      if (last <= opts.tol) return H;
      // Refine with the Riccati map when doubling stalls above tol.
      for (int k = 0; k < opts.max_iter && last > opts.tol && H.allFinite(); ++k) {
        H = riccati_map(H, A, C, Qw, Rv);
        last = dare_residual(H, A, C, Qw, Rv);
      }
      if (last <= opts.tol) return H;
      break;
    }
  }
  if (H.allFinite()) last = dare_residual(H, A, C, Qw, Rv);
  throw ConvergenceError("dare_solve: no convergence", last);
}

MatrixXd kalman_gain(const StateSpaceModel& model, const MatrixXd& Qw, const MatrixXd& Rv) {
  const MatrixXd P = dare_solve(model.A, model.C, Qw, Rv);
  const MatrixXd S = model.C * P * model.C.transpose() + Rv;
  return S.ldlt().solve(model.C * P * model.A.transpose()).transpose();
}

MatrixXd stabilizing_output_injection(const MatrixXd& A, const MatrixXd& C) {
  if (spectral_radius(A) < 1.0) return MatrixXd::Zero(A.rows(), C.rows());
  const MatrixXd I_n = MatrixXd::Identity(A.rows(), A.rows());
  const MatrixXd I_p = MatrixXd::Identity(C.rows(), C.rows());
  const MatrixXd P = dare_solve(A, C, I_n, I_p);
  const MatrixXd S = C * P * C.transpose() + I_p;
  const MatrixXd gain = S.ldlt().solve(C * P * A.transpose()).transpose();
  return -gain;
}

MatrixXd markov_parameters(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C,
                           const MatrixXd& D, int count) {
  const Eigen::Index p = C.rows(), m = B.cols();
  MatrixXd out(p * count, m);
  if (count <= 0) return out;
  out.topRows(p) = D;
  MatrixXd AkB = B;
  for (int k = 1; k < count; ++k) {
    out.middleRows(k * p, p) = C * AkB;
    AkB = A * AkB;
  }
  return out;
}

}  // namespace ivddpc
