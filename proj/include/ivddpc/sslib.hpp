#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "ivddpc/linalg.hpp"

namespace ivddpc {

/// Discrete-time plant in innovation form:
///   x(t+1) = A x(t) + B u(t) + K e(t)
///   y(t)   = C x(t) + D u(t) + e(t)
/// K is optional; an absent K behaves as zero in simulation.
struct StateSpaceModel {
  MatrixXd A, B, C, D;
  std::optional<MatrixXd> K;

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return B.cols(); }
  Eigen::Index outputs() const { return C.rows(); }

  /// K, or an n x p zero matrix when absent.
  MatrixXd gain_or_zero() const;
  /// A - K C. Requires K.
  MatrixXd predictor_matrix() const;

  /// Throws DimensionError on inconsistent shapes and std::invalid_argument
  /// when K is present but A - K C is not Schur stable.
  void validate() const;

  static StateSpaceModel make(MatrixXd A, MatrixXd B, MatrixXd C, MatrixXd D,
                              std::optional<MatrixXd> K = std::nullopt);
};

/// Output-feedback controller driven by the tracking error w = r - y:
///   x_c(t+1) = A_c x_c(t) + B_c w(t)
///   u(t)     = C_c x_c(t) + D_c w(t)
struct ControllerModel {
  MatrixXd Ac, Bc, Cc, Dc;

  Eigen::Index states() const { return Ac.rows(); }
  Eigen::Index inputs() const { return Bc.cols(); }   // plant outputs p
  Eigen::Index outputs() const { return Cc.rows(); }  // plant inputs m

  void validate() const;
  /// Additionally checks that the controller conforms to `plant`.
  void validate_against(const StateSpaceModel& plant) const;

  static ControllerModel make(MatrixXd Ac, MatrixXd Bc, MatrixXd Cc, MatrixXd Dc);
};

/// Signals stored one sample per column. `r` and `e` may have zero columns
/// (open loop / unknown noise).
struct Trajectory {
  MatrixXd u, y, r, e;

  Eigen::Index length() const { return u.cols(); }
  bool closed_loop() const { return r.cols() > 0; }
  bool has_noise() const { return e.cols() > 0; }
  void validate() const;
};

Trajectory simulate_open_loop(const StateSpaceModel& model, const MatrixXd& u,
                              const MatrixXd& e, const VectorXd& x0);

/// One-sample interconnection of plant and controller. The instantaneous
/// loop through D and D_c is solved exactly each step.
class ClosedLoopStepper {
 public:
  ClosedLoopStepper(const StateSpaceModel& plant, const ControllerModel& ctrl,
                    VectorXd x0, VectorXd xc0);

  struct Sample {
    VectorXd u, y;
  };

  /// Advances both states by one sample.
  Sample step(const Eigen::Ref<const VectorXd>& r, const Eigen::Ref<const VectorXd>& e);

  const VectorXd& plant_state() const { return x_; }
  const VectorXd& controller_state() const { return xc_; }

 private:
  StateSpaceModel plant_;
  ControllerModel ctrl_;
  MatrixXd plant_gain_;
  Eigen::PartialPivLU<MatrixXd> loop_;
  VectorXd x_, xc_;
};

Trajectory simulate_closed_loop(const StateSpaceModel& plant, const ControllerModel& ctrl,
                                const MatrixXd& r, const MatrixXd& e, const VectorXd& x0,
                                const VectorXd& xc0);

/// +amplitude for the first round(duty*period) samples of every period,
/// -amplitude for the rest. `phase` shifts the pattern left.
VectorXd square_wave(int period, double duty, double amplitude, int length, int phase = 0);

/// One full square-wave period per amplitude, concatenated.
VectorXd excitation_reference(int period, double duty, const std::vector<double>& amplitudes);

/// Pseudo-random Gaussian source. The bit stream is fixed across platforms:
/// std::mt19937_64 (whose output sequence is specified by the standard),
/// 53-bit uniforms, and the Box-Muller transform using both the cosine and
/// sine branches. std::normal_distribution is deliberately not used since its
/// algorithm is implementation defined.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed);
  double next();

 private:
  double uniform();
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// channels x length matrix of N(0, sigma_i^2) samples, channel-interleaved
/// in time order.
MatrixXd gaussian_noise(std::uint64_t seed, const VectorXd& sigma, Eigen::Index length);

struct DareOptions {
  double tol = 1e-10;
  int max_iter = 200;
};

/// Stabilizing solution of the filter Riccati equation
///   P = A P A' + Qw - A P C' (C P C' + Rv)^-1 C P A'.
/// Structure-preserving doubling; throws ConvergenceError with the last
/// residual when it does not settle.
MatrixXd dare_solve(const MatrixXd& A, const MatrixXd& C, const MatrixXd& Qw,
                    const MatrixXd& Rv, DareOptions opts = {});

/// Riccati map residual ||F(P) - P||_F / max(1, ||P||_F).
double dare_residual(const MatrixXd& P, const MatrixXd& A, const MatrixXd& C,
                     const MatrixXd& Qw, const MatrixXd& Rv);

/// Steady-state predictor gain K = A P C' (C P C' + Rv)^-1. Ignores model.K.
MatrixXd kalman_gain(const StateSpaceModel& model, const MatrixXd& Qw, const MatrixXd& Rv);

/// L with A + L C Schur stable. Zero when A already is; otherwise the
/// negated steady-state filter gain for identity weights.
MatrixXd stabilizing_output_injection(const MatrixXd& A, const MatrixXd& C);

/// First `count` Markov parameters D, CB, CAB, ... stacked vertically.
MatrixXd markov_parameters(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C,
                           const MatrixXd& D, int count);

}  // namespace ivddpc
