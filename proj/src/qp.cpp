#include "ivddpc/qp.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ivddpc/error.hpp"

namespace ivddpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqRhoScale = 1e3;

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace

void QuadraticProgram::normalize() {
  const Eigen::Index n = P.rows();
  if (P.cols() != n) throw DimensionError("QuadraticProgram: P must be square");
  if (q.size() != n) throw DimensionError("QuadraticProgram: q length");
  if (Aeq.size() == 0) Aeq.resize(0, n);
  if (Aeq.cols() != n) throw DimensionError("QuadraticProgram: Aeq column count");
  if (beq.size() != Aeq.rows()) throw DimensionError("QuadraticProgram: beq length");
  if (lb.size() == 0) lb = VectorXd::Constant(n, -kInf);
  if (ub.size() == 0) ub = VectorXd::Constant(n, kInf);
  if (lb.size() != n || ub.size() != n) throw DimensionError("QuadraticProgram: bound lengths");
  const double scale = std::max(1.0, P.norm());
  if ((P - P.transpose()).norm() > 1e-10 * scale) {
    throw std::invalid_argument("QuadraticProgram: P is not symmetric");
  }
  if ((lb.array() > ub.array()).any()) throw std::invalid_argument("QuadraticProgram: lb > ub");
}

double QuadraticProgram::objective(const VectorXd& x) const {
  return 0.5 * x.dot(P * x) + q.dot(x);
}

void SolverSettings::validate() const {
  if (!(eps_abs > 0 && eps_rel > 0 && eps_infeasible > 0)) {
    throw std::invalid_argument("SolverSettings: tolerances must be positive");
  }
  if (max_iter < 1) throw std::invalid_argument("SolverSettings: max_iter must be at least 1");
  if (!(rho > 0 && sigma > 0)) throw std::invalid_argument("SolverSettings: rho and sigma must be positive");
  if (!(alpha > 0 && alpha < 2)) throw std::invalid_argument("SolverSettings: alpha must lie in (0, 2)");
  if (check_every < 1 || adapt_every < 1) throw std::invalid_argument("SolverSettings: check intervals must be positive");
}

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIterations: return "max_iter";
    case QpStatus::PrimalInfeasible: return "primal_infeasible";
  }
  return "unknown";
}

// ------------------------------------------------------------- workspace

QpWorkspace::QpWorkspace(MatrixXd P, MatrixXd Aeq, SolverSettings settings)
    : P_(std::move(P)), Aeq_(std::move(Aeq)), settings_(settings) {
  settings_.validate();
  n_ = P_.rows();
  if (P_.cols() != n_) throw DimensionError("QpWorkspace: P must be square");
  if (Aeq_.size() == 0) Aeq_.resize(0, n_);
  if (Aeq_.cols() != n_) throw DimensionError("QpWorkspace: Aeq column count");
  k_ = Aeq_.rows();
  rho_eq_ = VectorXd::Constant(k_, kEqRhoScale * settings_.rho);
  rho_box_ = VectorXd::Zero(n_);
}

void QpWorkspace::set_rho(const VectorXd& lb, const VectorXd& ub, double rho) {
  rho_ = rho;
  rho_eq_.setConstant(kEqRhoScale * rho);
  for (Eigen::Index i = 0; i < n_; ++i) {
    if (std::isinf(lb(i)) && std::isinf(ub(i))) {
      rho_box_(i) = kRhoMin;
    } else if (lb(i) == ub(i)) {
      rho_box_(i) = kEqRhoScale * rho;
    } else {
      rho_box_(i) = rho;
    }
  }
}

void QpWorkspace::factorize() {
  MatrixXd M = P_;
  M.diagonal().array() += settings_.sigma;
  M.diagonal() += rho_box_;
  if (k_ > 0) M.noalias() += Aeq_.transpose() * rho_eq_.asDiagonal() * Aeq_;
  kkt_.compute(M);
  if (kkt_.info() != Eigen::Success) throw QpError("QpWorkspace: KKT factorization failed");
}

QpSolution QpWorkspace::solve(const VectorXd& q, const VectorXd& beq, const VectorXd& lb_in,
                              const VectorXd& ub_in) {
  if (q.size() != n_ || beq.size() != k_) throw DimensionError("QpWorkspace::solve: q/beq length");
  const VectorXd lb = lb_in.size() ? lb_in : VectorXd::Constant(n_, -kInf);
  const VectorXd ub = ub_in.size() ? ub_in : VectorXd::Constant(n_, kInf);
  if (lb.size() != n_ || ub.size() != n_) throw DimensionError("QpWorkspace::solve: bound lengths");
  if ((lb.array() > ub.array()).any()) throw std::invalid_argument("QpWorkspace::solve: lb > ub");

  const SolverSettings& s = settings_;
  const double start_rho = (s.warm_start && rho_ > 0.0) ? rho_ : s.rho;
  {
    const VectorXd old_box = rho_box_;
    const double old_rho = rho_;
    set_rho(lb, ub, start_rho);
    if (old_rho != rho_ || old_box != rho_box_ || kkt_.rows() != n_) factorize();
  }

  VectorXd x = VectorXd::Zero(n_);
  VectorXd z_eq = VectorXd::Zero(k_), z_box = VectorXd::Zero(n_);
  VectorXd y_eq = VectorXd::Zero(k_), y_box = VectorXd::Zero(n_);
  if (s.warm_start && x_prev_) {
    x = *x_prev_;
    z_eq = z_prev_->head(k_);
    z_box = z_prev_->tail(n_);
    y_eq = y_prev_->head(k_);
    y_box = y_prev_->tail(n_);
  }

  QpSolution sol;
  sol.status = QpStatus::MaxIterations;
  double prim = kInf, dual = kInf;
  int it = 0;
  for (it = 1; it <= s.max_iter; ++it) {
    const VectorXd y_eq_old = y_eq, y_box_old = y_box;

    VectorXd rhs = s.sigma * x - q + (rho_box_.cwiseProduct(z_box) - y_box);
    if (k_ > 0) rhs.noalias() += Aeq_.transpose() * (rho_eq_.cwiseProduct(z_eq) - y_eq);
    const VectorXd xt = kkt_.solve(rhs);
    const VectorXd zt_eq = Aeq_ * xt;

    x = s.alpha * xt + (1.0 - s.alpha) * x;
    const VectorXd zh_eq = s.alpha * zt_eq + (1.0 - s.alpha) * z_eq;
    const VectorXd zh_box = s.alpha * xt + (1.0 - s.alpha) * z_box;
    z_eq = beq;
    z_box = (zh_box + y_box.cwiseQuotient(rho_box_)).cwiseMax(lb).cwiseMin(ub);
    y_eq += rho_eq_.cwiseProduct(zh_eq - z_eq);
    y_box += rho_box_.cwiseProduct(zh_box - z_box);

    if (!x.allFinite()) break;
    if (it % s.check_every != 0 && it != s.max_iter) continue;

    const VectorXd Ax_eq = Aeq_ * x;
    const VectorXd Px = P_ * x;
    VectorXd Aty = y_box;
    if (k_ > 0) Aty.noalias() += Aeq_.transpose() * y_eq;
    prim = std::max(inf_norm(Ax_eq - z_eq), inf_norm(x - z_box));
    dual = inf_norm(Px + q + Aty);
    const double ax_norm = std::max(inf_norm(Ax_eq), inf_norm(x));
    const double z_norm = std::max(inf_norm(z_eq), inf_norm(z_box));
    const double dual_scale = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(q)});
    const double eps_prim = s.eps_abs + s.eps_rel * std::max(ax_norm, z_norm);
    const double eps_dual = s.eps_abs + s.eps_rel * dual_scale;
    if (prim <= eps_prim && dual <= eps_dual) {
      sol.status = QpStatus::Solved;
      break;
    }

    // Primal infeasibility certificate from the dual iterate increment.
    const VectorXd dy_eq = y_eq - y_eq_old, dy_box = y_box - y_box_old;
    const double dy_norm = std::max(inf_norm(dy_eq), inf_norm(dy_box));
    if (dy_norm > s.eps_infeasible) {
      VectorXd Atdy = dy_box;
      if (k_ > 0) Atdy.noalias() += Aeq_.transpose() * dy_eq;
      double support = dy_eq.dot(beq);
      bool finite = true;
      for (Eigen::Index i = 0; i < n_ && finite; ++i) {
        const double d = dy_box(i);
        if (d > s.eps_infeasible * dy_norm) {
          if (std::isinf(ub(i))) finite = false; else support += ub(i) * d;
        } else if (d < -s.eps_infeasible * dy_norm) {
          if (std::isinf(lb(i))) finite = false; else support += lb(i) * d;
        }
      }
      if (finite && inf_norm(Atdy) <= s.eps_infeasible * dy_norm &&
          support <= -s.eps_infeasible * dy_norm) {
        sol.status = QpStatus::PrimalInfeasible;
        break;
      }
    }

    if (s.adaptive_rho && it % s.adapt_every == 0) {
      const double pn = prim / std::max(std::max(ax_norm, z_norm), 1e-30);
      const double dn = dual / std::max(dual_scale, 1e-30);
      double rho_new = rho_ * std::sqrt(pn / std::max(dn, 1e-30));
      rho_new = std::min(std::max(rho_new, kRhoMin), kRhoMax);
      if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
        set_rho(lb, ub, rho_new);
        factorize();
      }
    }
  }
  sol.iterations = std::min(it, s.max_iter);
  sol.x = x;
  sol.y_eq = y_eq;
  sol.y_box = y_box;
  sol.primal_residual = prim;
  sol.dual_residual = dual;

  if (sol.status != QpStatus::PrimalInfeasible && s.polish && x.allFinite()) {
    // Active set from the ADMM iterate.
    QpSolution trial = sol;
    trial.x = z_box;  // projected copy, used only for active-set detection
    if (polish(q, beq, lb, ub, trial)) sol = trial;
  }
  if (s.warm_start) {
    x_prev_ = sol.x;
    VectorXd z(k_ + n_), y(k_ + n_);
    z << Aeq_ * sol.x, sol.x.cwiseMax(lb).cwiseMin(ub);
    y << sol.y_eq, sol.y_box;
    z_prev_ = z;
    y_prev_ = y;
  }
  sol.objective = 0.5 * sol.x.dot(P_ * sol.x) + q.dot(sol.x);
  return sol;
}

bool QpWorkspace::polish(const VectorXd& q, const VectorXd& beq, const VectorXd& lb,
                         const VectorXd& ub, QpSolution& sol) const {
  const VectorXd& z = sol.x;
  std::vector<Eigen::Index> lower, upper;
  for (Eigen::Index i = 0; i < n_; ++i) {
    if (!std::isinf(lb(i)) && z(i) - lb(i) < -sol.y_box(i)) {
      lower.push_back(i);
    } else if (!std::isinf(ub(i)) && ub(i) - z(i) < sol.y_box(i)) {
      upper.push_back(i);
    }
  }
  const Eigen::Index a = static_cast<Eigen::Index>(lower.size() + upper.size());
  const Eigen::Index dim = n_ + k_ + a;
  MatrixXd K = MatrixXd::Zero(dim, dim);
  VectorXd rhs(dim);
  K.topLeftCorner(n_, n_) = P_;
  if (k_ > 0) {
    K.block(0, n_, n_, k_) = Aeq_.transpose();
    K.block(n_, 0, k_, n_) = Aeq_;
  }
  rhs.head(n_) = -q;
  rhs.segment(n_, k_) = beq;
  Eigen::Index row = n_ + k_;
  for (Eigen::Index i : lower) {
    K(row, i) = 1.0;
    K(i, row) = 1.0;
    rhs(row++) = lb(i);
  }
  for (Eigen::Index i : upper) {
    K(row, i) = 1.0;
    K(i, row) = 1.0;
    rhs(row++) = ub(i);
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(K);
  VectorXd sol_kkt = cod.solve(rhs);
  // One step of iterative refinement.
  sol_kkt += cod.solve(rhs - K * sol_kkt);
  if (!sol_kkt.allFinite()) return false;

  const VectorXd x = sol_kkt.head(n_);
  const VectorXd y_eq = sol_kkt.segment(n_, k_);
  VectorXd y_box = VectorXd::Zero(n_);
  row = n_ + k_;
  for (Eigen::Index i : lower) y_box(i) = sol_kkt(row++);
  for (Eigen::Index i : upper) y_box(i) = sol_kkt(row++);

  const double tol = settings_.eps_abs;
  for (Eigen::Index i : lower) if (y_box(i) > tol) return false;
  for (Eigen::Index i : upper) if (y_box(i) < -tol) return false;
  const double bound_violation =
      std::max(inf_norm((lb - x).cwiseMax(0.0)), inf_norm((x - ub).cwiseMax(0.0)));
  const double prim = std::max(k_ > 0 ? inf_norm(Aeq_ * x - beq) : 0.0, bound_violation);
  VectorXd Aty = y_box;
  if (k_ > 0) Aty.noalias() += Aeq_.transpose() * y_eq;
  const double dual = inf_norm(P_ * x + q + Aty);
  const bool better = prim <= std::max(sol.primal_residual, tol) && dual <= std::max(sol.dual_residual, tol);
  if (!better) return false;
  sol.x = x;
  sol.y_eq = y_eq;
  sol.y_box = y_box;
  sol.primal_residual = prim;
  sol.dual_residual = dual;
  sol.polished = true;
  sol.status = QpStatus::Solved;
  return true;
}

QpSolution solve(const QuadraticProgram& qp_in, const SolverSettings& settings) {
  QuadraticProgram qp = qp_in;
  qp.normalize();
  QpWorkspace ws(qp.P, qp.Aeq, settings);
  return ws.solve(qp.q, qp.beq, qp.lb, qp.ub);
}

// -------------------------------------------------------- equality-only

EqualityQp::EqualityQp(const MatrixXd& P, const MatrixXd& Aeq) : n_(P.rows()), P_(P), Aeq_(Aeq) {
  if (P.cols() != n_) throw DimensionError("EqualityQp: P must be square");
  if (Aeq_.size() == 0) Aeq_.resize(0, n_);
  if (Aeq_.cols() != n_) throw DimensionError("EqualityQp: Aeq column count");
  if (Aeq_.rows() > 0) {
    cod_.emplace(Aeq_);
    Eigen::JacobiSVD<MatrixXd> svd(Aeq_, Eigen::ComputeFullV);
    const VectorXd& s = svd.singularValues();
    Eigen::Index r = 0;
    if (s.size() && s(0) > 0.0) {
      while (r < s.size() && s(r) > 1e-12 * s(0)) ++r;
    }
    Z_ = svd.matrixV().rightCols(n_ - r);
  } else {
    Z_ = MatrixXd::Identity(n_, n_);
  }
  reduced_ = symmetrized(Z_.transpose() * P_ * Z_);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(reduced_);
  const VectorXd& ev = es.eigenvalues();
  const double emax = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  VectorXd inv = VectorXd::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-9 * std::max(emax, 1.0)) {
      throw QpError("EqualityQp: objective is not convex on the feasible set");
    }
    if (ev(i) > 100.0 * std::numeric_limits<double>::epsilon() * emax) inv(i) = 1.0 / ev(i);
  }
  reduced_pinv_ = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  emax_ = emax;
}

VectorXd EqualityQp::solve(const VectorXd& q, const VectorXd& beq) const {
  if (q.size() != n_ || beq.size() != Aeq_.rows()) throw DimensionError("EqualityQp::solve: q/beq length");
  VectorXd x0 = VectorXd::Zero(n_);
  if (cod_) {
    x0 = cod_->solve(beq);
    const double err = (Aeq_ * x0 - beq).norm();
    if (err > 1e-8 * (1.0 + beq.norm())) {
      std::ostringstream os;
      os << "EqualityQp: inconsistent equality constraints (residual " << err << ")";
      throw QpError(os.str());
    }
  }
  const VectorXd g = Z_.transpose() * (P_ * x0 + q);
  const VectorXd w = -(reduced_pinv_ * g);
  const double stat = (reduced_ * w + g).norm();
  if (stat > 1e-8 * (1.0 + g.norm() + emax_ * w.norm())) {
    throw QpError("EqualityQp: singular KKT system (objective unbounded on the feasible set)");
  }
  return x0 + Z_ * w;
}

EqualityLsq::EqualityLsq(const MatrixXd& A, const MatrixXd& C) : A_(A), C_(C) {
  const Eigen::Index n = A_.cols();
  if (C_.size() == 0) C_.resize(0, n);
  if (C_.cols() != n) throw DimensionError("EqualityLsq: C column count");
  if (C_.rows() > 0) {
    c_cod_.emplace(C_);
    Eigen::JacobiSVD<MatrixXd> svd(C_, Eigen::ComputeFullV);
    const VectorXd& s = svd.singularValues();
    Eigen::Index r = 0;
    if (s.size() && s(0) > 0.0) {
      while (r < s.size() && s(r) > 1e-12 * s(0)) ++r;
    }
    Z_ = svd.matrixV().rightCols(n - r);
  } else {
    Z_ = MatrixXd::Identity(n, n);
  }
  if (Z_.cols() > 0) az_cod_.emplace(A_ * Z_);
}

VectorXd EqualityLsq::solve(const VectorXd& b, const VectorXd& d) const {
  if (b.size() != A_.rows() || d.size() != C_.rows()) throw DimensionError("EqualityLsq::solve: b/d length");
  VectorXd x0 = VectorXd::Zero(A_.cols());
  if (c_cod_) {
    x0 = c_cod_->solve(d);
    const double err = (C_ * x0 - d).norm();
    if (err > 1e-8 * (1.0 + d.norm())) {
      std::ostringstream os;
      os << "EqualityLsq: inconsistent equality constraints (residual " << err << ")";
      throw QpError(os.str());
    }
  }
  if (!az_cod_) return x0;
  return x0 + Z_ * az_cod_->solve(b - A_ * x0);
}

VectorXd solve_equality_ls(const MatrixXd& P, const VectorXd& q, const MatrixXd& Aeq,
                           const VectorXd& beq) {
  return EqualityQp(P, Aeq).solve(q, beq);
}

}  // namespace ivddpc
