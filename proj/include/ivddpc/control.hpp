#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivddpc/iv.hpp"
#include "ivddpc/qp.hpp"

namespace ivddpc {

/// Tracking problem solved at every sample:
///   min ||y_f - y^r_f||_Q^2 + ||u_f||_R^2  over the future horizon,
/// with per-channel input/output boxes replicated along the horizon.
struct ControlTask {
  int past = 0;
  int future = 0;
  int steps = 0;            ///< N_c, samples under predictive control
  MatrixXd Q;               ///< (p L_f) x (p L_f)
  MatrixXd R;               ///< (m L_f) x (m L_f)
  VectorXd u_min, u_max;    ///< per channel, may be +-inf
  VectorXd y_min, y_max;
  /// Reference over steps + future samples (p rows); column t is r at
  /// controlled step t, the tail supplies the preview at the end of the run.
  MatrixXd reference;
  /// Reference seen by the loop controller during the first `past` samples.
  MatrixXd warmup_reference;

  Eigen::Index inputs() const { return u_min.size(); }
  Eigen::Index outputs() const { return y_min.size(); }
  bool input_bounded() const;
  bool output_bounded() const;

  /// col(r(t), ..., r(t + L_f - 1)) for controlled step t (0-based).
  VectorXd reference_window(Eigen::Index t) const;
  /// Per-sample weight blocks.
  MatrixXd q_block() const { return Q.topLeftCorner(outputs(), outputs()); }
  MatrixXd r_block() const { return R.topLeftCorner(inputs(), inputs()); }

  void validate() const;

  /// Q = I_{L_f} kron diag(q_diag), R likewise; unbounded boxes.
  static ControlTask make(int past, int future, int steps, const VectorXd& q_diag,
                          const VectorXd& r_diag, MatrixXd reference, MatrixXd warmup_reference);
};

enum class VariantTag { Oracle, Spc, DdpcIv, DdpcIv1, DdpcIv2, RddpcIv, LoopBaseline };

std::string to_string(VariantTag t);
VariantTag variant_tag_from_string(const std::string& s);
/// Instrument used by each data-driven tag (SPC -> open loop, ...).
std::optional<IvVariant> instrument_for(VariantTag t);

struct ControllerVariant {
  VariantTag tag = VariantTag::Oracle;
  double lambda = 0.0;  ///< RddpcIv only
  int norm_order = 2;   ///< 2: squared 2-norm, 1: 1-norm

  std::string label() const;
};

struct KalmanState {
  VectorXd x_hat;
};

/// Innovation-form predictor update x+ = A x + B u + K (y - C x - D u).
KalmanState kalman_update(const StateSpaceModel& model, const KalmanState& state,
                          const VectorXd& u, const VectorXd& y);

struct PlanResult {
  VectorXd u_f;
  VectorXd y_f;            ///< predicted outputs of the plan
  double cost = 0.0;       ///< tracking cost of (u_f, y_f)
  double objective = 0.0;  ///< optimizer objective (cost plus regularizer)
  int iterations = 0;      ///< QP iterations, 0 for direct solves
  std::optional<VectorXd> g;
};

/// Tracking cost ||y - yr||_Q^2 + ||u||_R^2 of a plan.
double plan_cost(const ControlTask& task, const VectorXd& u_f, const VectorXd& y_f,
                 const VectorXd& y_ref);

/// Plans against an affine forecast y_f = F + G u_f. Shared by the oracle
/// (F = Gamma x_hat, G = H^u) and the identified predictors
/// (F = Omega_p z_p, G = Omega_f). Caches the solver setup.
class AffinePlanner {
 public:
  AffinePlanner(const ControlTask& task, MatrixXd G, SolverSettings settings = {});
  PlanResult plan(const VectorXd& F, const VectorXd& y_ref);

 private:
  ControlTask task_;
  MatrixXd G_;
  std::optional<Eigen::LDLT<MatrixXd>> direct_;
  std::optional<QpWorkspace> qp_;
  bool joint_ = false;
  VectorXd lb_, ub_;
};

/// Common interface for everything the receding-horizon executive can run.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual PlanResult plan(const VectorXd& z_p, const VectorXd& y_ref) = 0;
  /// Called with every applied (u, y) pair, including warmup samples.
  virtual void observe(const VectorXd& /*u*/, const VectorXd& /*y*/) {}
};

/// Identified-predictor controller y_f = Omega* col(z_p, u_f).
class PredictorPolicy : public Policy {
 public:
  PredictorPolicy(const InstrumentSet& iv, const ControlTask& task, SolverSettings settings = {});
  PlanResult plan(const VectorXd& z_p, const VectorXd& y_ref) override;

 private:
  MatrixXd omega_past_;
  AffinePlanner planner_;
};

/// Model-based controller with a steady-state Kalman predictor, x_hat(0) = 0.
class OraclePolicy : public Policy {
 public:
  OraclePolicy(const StateSpaceModel& model, const ControlTask& task, SolverSettings settings = {});
  PlanResult plan(const VectorXd& z_p, const VectorXd& y_ref) override;
  void observe(const VectorXd& u, const VectorXd& y) override;
  const KalmanState& state() const { return state_; }
  void set_state(KalmanState s) { state_ = std::move(s); }

 private:
  StateSpaceModel model_;
  MatrixXd Gamma_;
  KalmanState state_;
  AffinePlanner planner_;
};

/// Projection-regularized DDPC
///   min J + lambda ||(I - Pi) g||  s.t. col(Z_p, U_f, Y_f) g = col(z_p, u_f, y_f), boxes.
/// For the squared 2-norm, g is restricted without loss to the span of the
/// rows of [Z_p; U_f; Y_f; Phi]: components orthogonal to it change neither
/// the constraints nor J, and only add to ||(I - Pi) g||. The problem is then
/// solved in an orthonormal basis of that span. The 1-norm works in the full
/// N̄-dimensional g and is meant for small data sets.
class RddpcPolicy : public Policy {
 public:
  RddpcPolicy(const HankelBundle& bundle, const InstrumentSet& iv, const ControlTask& task,
              double lambda, int norm_order = 2, SolverSettings settings = {});
  PlanResult plan(const VectorXd& z_p, const VectorXd& y_ref) override;

  /// The regularizer ||(I - Pi) g||_2^2 or ||(I - Pi) g||_1 of a given g.
  double regularizer(const VectorXd& g) const;

 private:
  PlanResult plan_reduced(const VectorXd& z_p, const VectorXd& y_ref);
  PlanResult plan_l1(const VectorXd& z_p, const VectorXd& y_ref);

  ControlTask task_;
  double lambda_;
  int norm_order_;
  Eigen::Index m_lf_, p_lf_, zp_rows_;
  MatrixXd basis_;        // N̄ x k
  MatrixXd zb_, ub_, yb_;  // data matrices in the basis
  MatrixXd residual_op_;  // (I - Pi) basis, N̄ x k
  MatrixXd Phi_T_, weighted_pinv_, W_;
  MatrixXd q_sqrt_;
  std::optional<EqualityLsq> direct_;
  std::optional<QpWorkspace> qp_;
  VectorXd lb_, ub_vec_;
};

/// Single-call forms of the three planners.
PlanResult predictor_step(const InstrumentSet& iv, const VectorXd& z_p, const ControlTask& task,
                          Eigen::Index t, const SolverSettings& settings = {});
PlanResult rddpc_step(const HankelBundle& bundle, const InstrumentSet& iv, const ControlTask& task,
                      const VectorXd& z_p, Eigen::Index t, double lambda, int norm_order = 2,
                      const SolverSettings& settings = {});
PlanResult oracle_step(const StateSpaceModel& model, const KalmanState& state,
                       const ControlTask& task, Eigen::Index t, const SolverSettings& settings = {});

/// One closed-loop control experiment.
struct RunRecord {
  std::string variant;
  Trajectory traj;        ///< warmup samples first, then the controlled samples
  int warmup = 0;
  std::vector<double> plan_cost;   ///< NaN during warmup
  std::vector<int> iterations;
  double J = 0.0;
  bool failed = false;
  std::string error;
};

/// Runs `task.past` warmup samples under `warmup_ctrl` followed by
/// `task.steps` receding-horizon samples of `policy` (first planned input
/// applied, then re-plan). `policy == nullptr` keeps the loop controller
/// in charge throughout. `noise` supplies e(t) for all past + steps samples.
RunRecord receding_horizon_run(const StateSpaceModel& plant, Policy* policy,
                               const ControlTask& task, const MatrixXd& noise,
                               const ControllerModel& warmup_ctrl, const std::string& label = "");

/// sum_t ||y(t) - r(t)||_Q^2 + ||u(t)||_R^2 over the given samples.
double cost_index(const MatrixXd& y, const MatrixXd& r, const MatrixXd& u, const MatrixXd& Qblk,
                  const MatrixXd& Rblk);
/// Same over the controlled (non-warmup) part of a record.
double cost_index(const RunRecord& record, const MatrixXd& Qblk, const MatrixXd& Rblk);

}  // namespace ivddpc
