#include "ivddpc/control.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ivddpc/error.hpp"

namespace ivddpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd replicate(const VectorXd& v, int times) {
  VectorXd out(v.size() * times);
  for (int i = 0; i < times; ++i) out.segment(i * v.size(), v.size()) = v;
  return out;
}

MatrixXd block_diag(const std::vector<const MatrixXd*>& blocks) {
  Eigen::Index n = 0;
  for (const auto* b : blocks) n += b->rows();
  MatrixXd out = MatrixXd::Zero(n, n);
  Eigen::Index at = 0;
  for (const auto* b : blocks) {
    out.block(at, at, b->rows(), b->cols()) = *b;
    at += b->rows();
  }
  return out;
}

void check_solution(const QpSolution& sol, const char* who) {
  if (sol.status == QpStatus::PrimalInfeasible) {
    throw QpError(std::string(who) + ": planning problem is infeasible");
  }
  if (sol.status != QpStatus::Solved) {
    std::ostringstream os;
    os << who << ": QP stopped after " << sol.iterations << " iterations (primal residual "
       << sol.primal_residual << ", dual residual " << sol.dual_residual << ")";
    throw QpError(os.str());
  }
}

}  // namespace

// ------------------------------------------------------------------ task

bool ControlTask::input_bounded() const { return u_min.array().isFinite().any() || u_max.array().isFinite().any(); }
bool ControlTask::output_bounded() const { return y_min.array().isFinite().any() || y_max.array().isFinite().any(); }

VectorXd ControlTask::reference_window(Eigen::Index t) const {
  const Eigen::Index p = outputs();
  if (t < 0 || t + future > reference.cols()) {
    std::ostringstream os;
    os << "reference_window: step " << t << " needs reference samples up to " << t + future
       << ", have " << reference.cols();
    throw std::out_of_range(os.str());
  }
  VectorXd w(p * future);
  for (int i = 0; i < future; ++i) w.segment(i * p, p) = reference.col(t + i);
  return w;
}

void ControlTask::validate() const {
  const Eigen::Index m = inputs(), p = outputs();
  if (past < 1 || future < 1 || steps < 1) throw std::invalid_argument("ControlTask: horizons and steps must be positive");
  if (u_max.size() != m || y_max.size() != p) throw DimensionError("ControlTask: bound lengths");
  if ((u_min.array() > u_max.array()).any() || (y_min.array() > y_max.array()).any()) {
    throw std::invalid_argument("ControlTask: lower bound exceeds upper bound");
  }
  if (Q.rows() != p * future || Q.cols() != p * future) throw DimensionError("ControlTask: Q shape");
  if (R.rows() != m * future || R.cols() != m * future) throw DimensionError("ControlTask: R shape");
  if ((Q - Q.transpose()).norm() > 1e-12 * Q.norm() || (R - R.transpose()).norm() > 1e-12 * R.norm()) {
    throw std::invalid_argument("ControlTask: Q and R must be symmetric");
  }
  if (Eigen::LLT<MatrixXd>(Q).info() != Eigen::Success || Eigen::LLT<MatrixXd>(R).info() != Eigen::Success) {
    throw std::invalid_argument("ControlTask: Q and R must be positive definite");
  }
  if (reference.rows() != p || reference.cols() < steps + future) {
    throw DimensionError("ControlTask: reference must have p rows and steps + future columns");
  }
  if (warmup_reference.rows() != p || warmup_reference.cols() != past) {
    throw DimensionError("ControlTask: warmup reference must be p x past");
  }
}

ControlTask ControlTask::make(int past, int future, int steps, const VectorXd& q_diag,
                              const VectorXd& r_diag, MatrixXd reference, MatrixXd warmup_reference) {
  ControlTask t;
  t.past = past;
  t.future = future;
  t.steps = steps;
  t.Q = MatrixXd(replicate(q_diag, future).asDiagonal());
  t.R = MatrixXd(replicate(r_diag, future).asDiagonal());
  t.u_min = VectorXd::Constant(r_diag.size(), -kInf);
  t.u_max = VectorXd::Constant(r_diag.size(), kInf);
  t.y_min = VectorXd::Constant(q_diag.size(), -kInf);
  t.y_max = VectorXd::Constant(q_diag.size(), kInf);
  t.reference = std::move(reference);
  t.warmup_reference = std::move(warmup_reference);
  t.validate();
  return t;
}

// -------------------------------------------------------------- variants

std::string to_string(VariantTag t) {
  switch (t) {
    case VariantTag::Oracle: return "oracle";
    case VariantTag::Spc: return "spc";
    case VariantTag::DdpcIv: return "ddpc_iv";
    case VariantTag::DdpcIv1: return "ddpc_iv1";
    case VariantTag::DdpcIv2: return "ddpc_iv2";
    case VariantTag::RddpcIv: return "rddpc_iv";
    case VariantTag::LoopBaseline: return "loop";
  }
  return "unknown";
}

VariantTag variant_tag_from_string(const std::string& s) {
  for (VariantTag t : {VariantTag::Oracle, VariantTag::Spc, VariantTag::DdpcIv, VariantTag::DdpcIv1,
                       VariantTag::DdpcIv2, VariantTag::RddpcIv, VariantTag::LoopBaseline}) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown controller variant '" + s + "'");
}

std::optional<IvVariant> instrument_for(VariantTag t) {
  switch (t) {
    case VariantTag::Spc: return IvVariant::OpenLoop;
    case VariantTag::DdpcIv: return IvVariant::Combined;
    case VariantTag::DdpcIv1: return IvVariant::RefOnly;
    case VariantTag::DdpcIv2: return IvVariant::LcfOnly;
    case VariantTag::RddpcIv: return IvVariant::Combined;
    default: return std::nullopt;
  }
}

std::string ControllerVariant::label() const {
  if (tag != VariantTag::RddpcIv) return to_string(tag);
  std::ostringstream os;
  os << to_string(tag) << "(lambda=" << lambda << (norm_order == 1 ? ",l1" : "") << ")";
  return os.str();
}

KalmanState kalman_update(const StateSpaceModel& model, const KalmanState& state,
                          const VectorXd& u, const VectorXd& y) {
  if (!model.K) throw std::invalid_argument("kalman_update: model has no Kalman gain");
  if (state.x_hat.size() != model.states()) throw DimensionError("kalman_update: state size");
  const VectorXd innov = y - model.C * state.x_hat - model.D * u;
  return KalmanState{model.A * state.x_hat + model.B * u + (*model.K) * innov};
}

double plan_cost(const ControlTask& task, const VectorXd& u_f, const VectorXd& y_f,
                 const VectorXd& y_ref) {
  const VectorXd dy = y_f - y_ref;
  return dy.dot(task.Q * dy) + u_f.dot(task.R * u_f);
}

// --------------------------------------------------------------- planner

AffinePlanner::AffinePlanner(const ControlTask& task, MatrixXd G, SolverSettings settings)
    : task_(task), G_(std::move(G)) {
  const Eigen::Index mlf = G_.cols(), plf = G_.rows();
  if (mlf != task.R.rows() || plf != task.Q.rows()) throw DimensionError("AffinePlanner: predictor shape");
  const VectorXd ulo = replicate(task.u_min, task.future), uhi = replicate(task.u_max, task.future);
  const MatrixXd H = G_.transpose() * task.Q * G_ + task.R;
  if (!task.input_bounded() && !task.output_bounded()) {
    direct_.emplace(H);
  } else if (!task.output_bounded()) {
    qp_.emplace(2.0 * symmetrized(H), MatrixXd(0, mlf), settings);
    lb_ = ulo;
    ub_ = uhi;
  } else {
    joint_ = true;
    MatrixXd Aeq(plf, mlf + plf);
    Aeq << -G_, MatrixXd::Identity(plf, plf);
    const MatrixXd R2 = 2.0 * task.R, Q2 = 2.0 * task.Q;
    qp_.emplace(block_diag({&R2, &Q2}), Aeq, settings);
    lb_.resize(mlf + plf);
    ub_.resize(mlf + plf);
    lb_ << ulo, replicate(task.y_min, task.future);
    ub_ << uhi, replicate(task.y_max, task.future);
  }
}

PlanResult AffinePlanner::plan(const VectorXd& F, const VectorXd& y_ref) {
  const Eigen::Index mlf = G_.cols(), plf = G_.rows();
  PlanResult out;
  const VectorXd lin = G_.transpose() * (task_.Q * (F - y_ref));
  if (direct_) {
    out.u_f = -direct_->solve(lin);
  } else if (!joint_) {
    QpSolution sol = qp_->solve(2.0 * lin, VectorXd(0), lb_, ub_);
    check_solution(sol, "plan");
    out.u_f = sol.x;
    out.iterations = sol.iterations;
  } else {
    VectorXd q(mlf + plf);
    q << VectorXd::Zero(mlf), -2.0 * (task_.Q * y_ref);
    QpSolution sol = qp_->solve(q, F, lb_, ub_);
    check_solution(sol, "plan");
    out.u_f = sol.x.head(mlf);
    out.iterations = sol.iterations;
  }
  out.y_f = F + G_ * out.u_f;
  out.cost = plan_cost(task_, out.u_f, out.y_f, y_ref);
  out.objective = out.cost;
  return out;
}

PredictorPolicy::PredictorPolicy(const InstrumentSet& iv, const ControlTask& task,
                                 SolverSettings settings)
    : omega_past_(iv.omega_past()), planner_(task, iv.omega_future(), settings) {}

PlanResult PredictorPolicy::plan(const VectorXd& z_p, const VectorXd& y_ref) {
  if (z_p.size() != omega_past_.cols()) throw DimensionError("PredictorPolicy: z_p length");
  return planner_.plan(omega_past_ * z_p, y_ref);
}

OraclePolicy::OraclePolicy(const StateSpaceModel& model, const ControlTask& task,
                           SolverSettings settings)
    : model_(model),
      Gamma_(extended_observability(model.A, model.C, task.future)),
      state_{VectorXd::Zero(model.states())},
      planner_(task, toeplitz(model.A, model.B, model.C, model.D, task.future), settings) {
  if (!model.K) throw std::invalid_argument("OraclePolicy: model needs a Kalman gain");
}

PlanResult OraclePolicy::plan(const VectorXd& /*z_p*/, const VectorXd& y_ref) {
  return planner_.plan(Gamma_ * state_.x_hat, y_ref);
}

void OraclePolicy::observe(const VectorXd& u, const VectorXd& y) {
  state_ = kalman_update(model_, state_, u, y);
}

// ----------------------------------------------------------------- RDDPC

RddpcPolicy::RddpcPolicy(const HankelBundle& bundle, const InstrumentSet& iv_in,
                         const ControlTask& task, double lambda, int norm_order,
                         SolverSettings settings)
    : task_(task), lambda_(lambda), norm_order_(norm_order) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("RddpcPolicy: lambda must be non-negative");
  if (norm_order != 1 && norm_order != 2) throw std::invalid_argument("RddpcPolicy: norm order must be 1 or 2");
  InstrumentSet iv = iv_in;
  if (!iv.weighted_pinv) predictor(bundle, iv);
  m_lf_ = bundle.Uf.rows();
  p_lf_ = bundle.Yf.rows();
  zp_rows_ = bundle.Zp.rows();
  if (m_lf_ != task.R.rows() || p_lf_ != task.Q.rows()) throw DimensionError("RddpcPolicy: task does not match bundle");
  Phi_T_ = iv.Phi.transpose();
  weighted_pinv_ = *iv.weighted_pinv;
  W_ = bundle.regressor();

  const VectorXd ulo = replicate(task.u_min, task.future), uhi = replicate(task.u_max, task.future);
  const VectorXd ylo = replicate(task.y_min, task.future), yhi = replicate(task.y_max, task.future);
  const bool boxed = task.input_bounded() || task.output_bounded();

  if (norm_order == 2) {
    MatrixXd S(bundle.columns(), zp_rows_ + m_lf_ + p_lf_ + iv.Phi.rows());
    S << bundle.Zp.transpose(), bundle.Uf.transpose(), bundle.Yf.transpose(), Phi_T_;
    basis_ = orthonormal_column_basis(S, 1e-10);
    zb_ = bundle.Zp * basis_;
    ub_ = bundle.Uf * basis_;
    yb_ = bundle.Yf * basis_;
    residual_op_ = basis_ - Phi_T_ * (weighted_pinv_ * (W_ * basis_));
    const Eigen::Index k = basis_.cols();
    if (!boxed) {
      q_sqrt_ = Eigen::SelfAdjointEigenSolver<MatrixXd>(symmetrized(task.Q)).operatorSqrt();
      const MatrixXd r_sqrt = Eigen::SelfAdjointEigenSolver<MatrixXd>(symmetrized(task.R)).operatorSqrt();
      MatrixXd A(p_lf_ + m_lf_ + residual_op_.rows(), k);
      A << q_sqrt_ * yb_, r_sqrt * ub_, std::sqrt(lambda) * residual_op_;
      direct_.emplace(A, zb_);
    } else {
      const MatrixXd Ga = 2.0 * lambda * symmetrized(residual_op_.transpose() * residual_op_), R2 = 2.0 * task.R, Q2 = 2.0 * task.Q;
      MatrixXd Aeq = MatrixXd::Zero(zp_rows_ + m_lf_ + p_lf_, k + m_lf_ + p_lf_);
      Aeq.topLeftCorner(zp_rows_, k) = zb_;
      Aeq.block(zp_rows_, 0, m_lf_, k) = ub_;
      Aeq.block(zp_rows_, k, m_lf_, m_lf_) = -MatrixXd::Identity(m_lf_, m_lf_);
      Aeq.block(zp_rows_ + m_lf_, 0, p_lf_, k) = yb_;
      Aeq.block(zp_rows_ + m_lf_, k + m_lf_, p_lf_, p_lf_) = -MatrixXd::Identity(p_lf_, p_lf_);
      qp_.emplace(block_diag({&Ga, &R2, &Q2}), Aeq, settings);
      lb_.resize(k + m_lf_ + p_lf_);
      ub_vec_.resize(k + m_lf_ + p_lf_);
      lb_ << VectorXd::Constant(k, -kInf), ulo, ylo;
      ub_vec_ << VectorXd::Constant(k, kInf), uhi, yhi;
    }
  } else {
    const Eigen::Index nb = bundle.columns();
    if (nb > 2000) {
      throw std::invalid_argument("RddpcPolicy: the 1-norm regularizer is limited to at most 2000 data columns");
    }
    const MatrixXd IminusPi = MatrixXd::Identity(nb, nb) - Phi_T_ * (weighted_pinv_ * W_);
    const Eigen::Index n = 3 * nb + m_lf_ + p_lf_;
    const Eigen::Index rows = zp_rows_ + m_lf_ + p_lf_ + nb;
    MatrixXd Aeq = MatrixXd::Zero(rows, n);
    Aeq.block(0, 0, zp_rows_, nb) = bundle.Zp;
    Aeq.block(zp_rows_, 0, m_lf_, nb) = bundle.Uf;
    Aeq.block(zp_rows_, 3 * nb, m_lf_, m_lf_) = -MatrixXd::Identity(m_lf_, m_lf_);
    Aeq.block(zp_rows_ + m_lf_, 0, p_lf_, nb) = bundle.Yf;
    Aeq.block(zp_rows_ + m_lf_, 3 * nb + m_lf_, p_lf_, p_lf_) = -MatrixXd::Identity(p_lf_, p_lf_);
    const Eigen::Index r0 = zp_rows_ + m_lf_ + p_lf_;
    Aeq.block(r0, 0, nb, nb) = IminusPi;
    Aeq.block(r0, nb, nb, nb) = -MatrixXd::Identity(nb, nb);
    Aeq.block(r0, 2 * nb, nb, nb) = MatrixXd::Identity(nb, nb);
    MatrixXd P = MatrixXd::Zero(n, n);
    P.block(3 * nb, 3 * nb, m_lf_, m_lf_) = 2.0 * task.R;
    P.block(3 * nb + m_lf_, 3 * nb + m_lf_, p_lf_, p_lf_) = 2.0 * task.Q;
    qp_.emplace(P, Aeq, settings);
    lb_.resize(n);
    ub_vec_.resize(n);
    lb_ << VectorXd::Constant(nb, -kInf), VectorXd::Zero(2 * nb), ulo, ylo;
    ub_vec_ << VectorXd::Constant(3 * nb, kInf), uhi, yhi;
  }
}

double RddpcPolicy::regularizer(const VectorXd& g) const {
  const VectorXd r = g - Phi_T_ * (weighted_pinv_ * (W_ * g));
  return norm_order_ == 2 ? r.squaredNorm() : r.lpNorm<1>();
}

PlanResult RddpcPolicy::plan(const VectorXd& z_p, const VectorXd& y_ref) {
  if (z_p.size() != zp_rows_) throw DimensionError("RddpcPolicy: z_p length");
  if (y_ref.size() != p_lf_) throw DimensionError("RddpcPolicy: reference length");
  return norm_order_ == 2 ? plan_reduced(z_p, y_ref) : plan_l1(z_p, y_ref);
}

PlanResult RddpcPolicy::plan_reduced(const VectorXd& z_p, const VectorXd& y_ref) {
  const Eigen::Index k = basis_.cols();
  PlanResult out;
  VectorXd a;
  if (direct_) {
    VectorXd b = VectorXd::Zero(p_lf_ + m_lf_ + residual_op_.rows());
    b.head(p_lf_) = q_sqrt_ * y_ref;
    a = direct_->solve(b, z_p);
  } else {
    VectorXd q = VectorXd::Zero(k + m_lf_ + p_lf_);
    q.tail(p_lf_) = -2.0 * (task_.Q * y_ref);
    VectorXd beq = VectorXd::Zero(zp_rows_ + m_lf_ + p_lf_);
    beq.head(zp_rows_) = z_p;
    QpSolution sol = qp_->solve(q, beq, lb_, ub_vec_);
    check_solution(sol, "rddpc");
    a = sol.x.head(k);
    out.iterations = sol.iterations;
  }
  out.u_f = ub_ * a;
  out.y_f = yb_ * a;
  out.g = basis_ * a;
  out.cost = plan_cost(task_, out.u_f, out.y_f, y_ref);
  out.objective = out.cost + lambda_ * (residual_op_ * a).squaredNorm();
  return out;
}

PlanResult RddpcPolicy::plan_l1(const VectorXd& z_p, const VectorXd& y_ref) {
  const Eigen::Index nb = W_.cols();
  const Eigen::Index n = 3 * nb + m_lf_ + p_lf_;
  VectorXd q = VectorXd::Zero(n);
  q.segment(nb, 2 * nb).setConstant(lambda_);
  q.tail(p_lf_) = -2.0 * (task_.Q * y_ref);
  VectorXd beq = VectorXd::Zero(zp_rows_ + m_lf_ + p_lf_ + nb);
  beq.head(zp_rows_) = z_p;
  QpSolution sol = qp_->solve(q, beq, lb_, ub_vec_);
  check_solution(sol, "rddpc");
  PlanResult out;
  const VectorXd g = sol.x.head(nb);
  out.u_f = sol.x.segment(3 * nb, m_lf_);
  out.y_f = sol.x.segment(3 * nb + m_lf_, p_lf_);
  out.g = g;
  out.iterations = sol.iterations;
  out.cost = plan_cost(task_, out.u_f, out.y_f, y_ref);
  out.objective = out.cost + lambda_ * regularizer(g);
  return out;
}

PlanResult predictor_step(const InstrumentSet& iv, const VectorXd& z_p, const ControlTask& task,
                          Eigen::Index t, const SolverSettings& settings) {
  PredictorPolicy policy(iv, task, settings);
  return policy.plan(z_p, task.reference_window(t));
}

PlanResult rddpc_step(const HankelBundle& bundle, const InstrumentSet& iv, const ControlTask& task,
                      const VectorXd& z_p, Eigen::Index t, double lambda, int norm_order,
                      const SolverSettings& settings) {
  RddpcPolicy policy(bundle, iv, task, lambda, norm_order, settings);
  return policy.plan(z_p, task.reference_window(t));
}

PlanResult oracle_step(const StateSpaceModel& model, const KalmanState& state,
                       const ControlTask& task, Eigen::Index t, const SolverSettings& settings) {
  OraclePolicy policy(model, task, settings);
  policy.set_state(state);
  return policy.plan(VectorXd(), task.reference_window(t));
}

// ------------------------------------------------------------- executive

double cost_index(const MatrixXd& y, const MatrixXd& r, const MatrixXd& u, const MatrixXd& Qblk,
                  const MatrixXd& Rblk) {
  if (y.cols() != r.cols() || y.cols() != u.cols()) throw DimensionError("cost_index: length mismatch");
  if (Qblk.rows() != y.rows() || Rblk.rows() != u.rows()) throw DimensionError("cost_index: weight shape");
  double J = 0.0;
  for (Eigen::Index t = 0; t < y.cols(); ++t) {
    const VectorXd dy = y.col(t) - r.col(t);
    J += dy.dot(Qblk * dy) + u.col(t).dot(Rblk * u.col(t));
  }
  return J;
}

double cost_index(const RunRecord& rec, const MatrixXd& Qblk, const MatrixXd& Rblk) {
  const Eigen::Index n = rec.traj.length() - rec.warmup;
  return cost_index(rec.traj.y.rightCols(n), rec.traj.r.rightCols(n), rec.traj.u.rightCols(n),
                    Qblk, Rblk);
}

RunRecord receding_horizon_run(const StateSpaceModel& plant, Policy* policy,
                               const ControlTask& task, const MatrixXd& noise,
                               const ControllerModel& warmup_ctrl, const std::string& label) {
  task.validate();
  plant.validate();
  const Eigen::Index m = plant.inputs(), p = plant.outputs();
  if (task.inputs() != m || task.outputs() != p) throw DimensionError("receding_horizon_run: task does not match plant");
  const Eigen::Index total = task.past + task.steps;
  if (noise.rows() != p || noise.cols() != total) throw DimensionError("receding_horizon_run: noise must be p x (past + steps)");

  RunRecord rec;
  rec.variant = label;
  rec.warmup = task.past;
  Trajectory& tr = rec.traj;
  tr.u = MatrixXd::Zero(m, total);
  tr.y = MatrixXd::Zero(p, total);
  tr.r.resize(p, total);
  tr.r << task.warmup_reference, task.reference.leftCols(task.steps);
  tr.e = noise;
  rec.plan_cost.assign(static_cast<size_t>(total), std::numeric_limits<double>::quiet_NaN());
  rec.iterations.assign(static_cast<size_t>(total), 0);

  ClosedLoopStepper loop(plant, warmup_ctrl, VectorXd::Zero(plant.states()),
                         VectorXd::Zero(warmup_ctrl.states()));
  const MatrixXd K = plant.gain_or_zero();
  VectorXd x;
  Eigen::Index t = 0;
  try {
    for (; t < task.past; ++t) {
      auto s = loop.step(tr.r.col(t), noise.col(t));
      tr.u.col(t) = s.u;
      tr.y.col(t) = s.y;
      if (policy) policy->observe(s.u, s.y);
    }
    x = loop.plant_state();
    for (; t < total; ++t) {
      const Eigen::Index k = t - task.past;
      VectorXd u;
      if (!policy) {
        auto s = loop.step(tr.r.col(t), noise.col(t));
        tr.u.col(t) = s.u;
        tr.y.col(t) = s.y;
        continue;
      }
      const VectorXd z_p = past_window(tr.u, tr.y, t + 1, task.past);
      PlanResult plan = policy->plan(z_p, task.reference_window(k));
      u = plan.u_f.head(m).cwiseMax(task.u_min).cwiseMin(task.u_max);
      rec.plan_cost[static_cast<size_t>(t)] = plan.cost;
      rec.iterations[static_cast<size_t>(t)] = plan.iterations;
      const VectorXd y = plant.C * x + plant.D * u + noise.col(t);
      x = plant.A * x + plant.B * u + K * noise.col(t);
      tr.u.col(t) = u;
      tr.y.col(t) = y;
      policy->observe(u, y);
    }
  } catch (const std::exception& ex) {
    rec.failed = true;
    rec.error = ex.what();
    tr.u.conservativeResize(Eigen::NoChange, t);
    tr.y.conservativeResize(Eigen::NoChange, t);
    tr.r.conservativeResize(Eigen::NoChange, t);
    tr.e.conservativeResize(Eigen::NoChange, t);
    rec.plan_cost.resize(static_cast<size_t>(t));
    rec.iterations.resize(static_cast<size_t>(t));
    rec.J = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }
  rec.J = cost_index(rec, task.q_block(), task.r_block());
  return rec;
}

}  // namespace ivddpc
