#include "ivddpc/iv.hpp"

#include <sstream>
#include <stdexcept>

#include "ivddpc/error.hpp"

namespace ivddpc {

StateSpaceModel CoprimeFactors::quotient() const {
  // V^-1 = (A_v - B_v C_v, B_v, -C_v, I) since D_v = I; then cascade after U.
  const Eigen::Index nv = V.states(), nu = U.states();
  const MatrixXd Ainv = V.A - V.B * V.C;
  MatrixXd A = MatrixXd::Zero(nv + nu, nv + nu);
  A.topLeftCorner(nu, nu) = U.A;
  A.bottomLeftCorner(nv, nu) = V.B * U.C;
  A.bottomRightCorner(nv, nv) = Ainv;
  MatrixXd B(nu + nv, U.inputs());
  B << U.B, V.B * U.D;
  MatrixXd C(V.outputs(), nu + nv);
  C << U.C, -V.C;
  return StateSpaceModel{A, B, C, U.D, std::nullopt};
}

CoprimeFactors lcf(const ControllerModel& ctrl) {
  ctrl.validate();
  CoprimeFactors f;
  f.Lc = stabilizing_output_injection(ctrl.Ac, ctrl.Cc);
  const MatrixXd AL = ctrl.Ac + f.Lc * ctrl.Cc;
  const Eigen::Index m = ctrl.outputs();
  f.V = StateSpaceModel{AL, f.Lc, ctrl.Cc, MatrixXd::Identity(m, m), std::nullopt};
  f.U = StateSpaceModel{AL, ctrl.Bc + f.Lc * ctrl.Dc, ctrl.Cc, ctrl.Dc, std::nullopt};
  if (!(spectral_radius(AL) < 1.0)) {
    throw std::runtime_error("lcf: output injection did not stabilize the controller");
  }
  return f;
}

MatrixXd xi_f(const CoprimeFactors& factors, const HankelBundle& bundle) {
  const int s = bundle.future;
  const MatrixXd Hv = toeplitz(factors.V.A, factors.V.B, factors.V.C, factors.V.D, s);
  const MatrixXd Hu = toeplitz(factors.U.A, factors.U.B, factors.U.C, factors.U.D, s);
  if (Hv.cols() != bundle.Uf.rows() || Hu.cols() != bundle.Yf.rows()) {
    throw DimensionError("xi_f: factor dimensions do not match the bundle");
  }
  return Hv * bundle.Uf + Hu * bundle.Yf;
}

std::string to_string(IvVariant v) {
  switch (v) {
    case IvVariant::OpenLoop: return "open_loop";
    case IvVariant::RefOnly: return "ref_only";
    case IvVariant::LcfOnly: return "lcf_only";
    case IvVariant::Combined: return "combined";
    case IvVariant::PastOnly: return "past_only";
  }
  return "unknown";
}

IvVariant iv_variant_from_string(const std::string& s) {
  if (s == "open_loop") return IvVariant::OpenLoop;
  if (s == "ref_only") return IvVariant::RefOnly;
  if (s == "lcf_only") return IvVariant::LcfOnly;
  if (s == "combined") return IvVariant::Combined;
  if (s == "past_only") return IvVariant::PastOnly;
  throw std::invalid_argument("unknown IV variant '" + s + "'");
}

MatrixXd InstrumentSet::omega_past() const {
  if (!Omega) throw std::logic_error("InstrumentSet: predictor not computed");
  return Omega->leftCols(past_rows);
}

MatrixXd InstrumentSet::omega_future() const {
  if (!Omega) throw std::logic_error("InstrumentSet: predictor not computed");
  return Omega->rightCols(Omega->cols() - past_rows);
}

InstrumentSet build_iv(const HankelBundle& bundle, IvVariant variant,
                       const std::optional<CoprimeFactors>& factors, double svd_tol) {
  const bool need_ref = variant == IvVariant::RefOnly || variant == IvVariant::Combined;
  const bool need_lcf = variant == IvVariant::LcfOnly || variant == IvVariant::Combined;
  if (need_ref && !bundle.closed_loop()) {
    throw std::invalid_argument("build_iv: variant " + to_string(variant) + " needs R_f");
  }
  if (need_lcf && !factors) {
    throw std::invalid_argument("build_iv: variant " + to_string(variant) + " needs controller factors");
  }
  MatrixXd Xi;
  if (need_lcf) Xi = xi_f(*factors, bundle);

  const Eigen::Index cols = bundle.columns();
  Eigen::Index rows = bundle.Zp.rows();
  if (variant == IvVariant::OpenLoop) rows += bundle.Uf.rows();
  if (need_lcf) rows += Xi.rows();
  if (need_ref) rows += bundle.Rf.rows();

  InstrumentSet iv;
  iv.variant = variant;
  iv.svd_tol = svd_tol;
  iv.past_rows = bundle.Zp.rows();
  iv.Phi.resize(rows, cols);
  Eigen::Index at = 0;
  auto put = [&](const MatrixXd& block) {
    iv.Phi.middleRows(at, block.rows()) = block;
    at += block.rows();
  };
  put(bundle.Zp);
  if (variant == IvVariant::OpenLoop) put(bundle.Uf);
  if (need_lcf) put(Xi);
  if (need_ref) put(bundle.Rf);
  iv.Phi /= static_cast<double>(cols);
  if (factors) iv.Lc = factors->Lc;
  return iv;
}

const MatrixXd& predictor(const HankelBundle& bundle, InstrumentSet& iv) {
  if (iv.Phi.cols() != bundle.columns()) {
    throw DimensionError("predictor: instrument column count differs from the bundle");
  }
  const MatrixXd PhiT = iv.Phi.transpose();
  const MatrixXd WPhi = bundle.regressor() * PhiT;
  PseudoInverse pi = pseudo_inverse(WPhi, iv.svd_tol);
  const Eigen::Index expected = std::min(WPhi.rows(), WPhi.cols());
  if (pi.rank < expected) {
    const Eigen::Index zr = numerical_rank(bundle.Zp * PhiT, iv.svd_tol);
    const char* block = zr < std::min<Eigen::Index>(bundle.Zp.rows(), PhiT.cols()) ? "Z_p" : "U_f";
    std::ostringstream os;
    os << "predictor: [Z_p; U_f] Phi' has rank " << pi.rank << " < " << expected
       << " (deficient block: " << block << ")";
    throw IllPosedError(os.str());
  }
  iv.rank = pi.rank;
  iv.weighted_pinv = std::move(pi.pinv);
  iv.Omega = (bundle.Yf * PhiT) * (*iv.weighted_pinv);
  iv.past_rows = bundle.Zp.rows();
  return *iv.Omega;
}

const MatrixXd& projection(const HankelBundle& bundle, InstrumentSet& iv) {
  if (!iv.weighted_pinv) predictor(bundle, iv);
  iv.Pi = iv.Phi.transpose() * ((*iv.weighted_pinv) * bundle.regressor());
  return *iv.Pi;
}

Annihilator annihilator(const ControllerModel& ctrl, int future) {
  ctrl.validate();
  if (future < 1 || future * ctrl.outputs() <= ctrl.states()) {
    std::ostringstream os;
    os << "annihilator: L_f * m = " << future * ctrl.outputs()
       << " must exceed the controller order " << ctrl.states();
    throw std::invalid_argument(os.str());
  }
  Annihilator out;
  const MatrixXd Gc = extended_observability(ctrl.Ac, ctrl.Cc, future);
  out.GammaPerp = left_null_space(Gc);
  out.Hc = toeplitz(ctrl.Ac, ctrl.Bc, ctrl.Cc, ctrl.Dc, future);
  MatrixXd IH(Gc.rows(), Gc.rows() + out.Hc.cols());
  IH << MatrixXd::Identity(Gc.rows(), Gc.rows()), out.Hc;
  out.Theta = out.GammaPerp * IH;
  return out;
}

double restriction_residual(const MatrixXd& Theta, const VectorXd& u_f, const VectorXd& y_f) {
  if (Theta.cols() != u_f.size() + y_f.size()) {
    throw DimensionError("restriction_residual: window length does not match Theta");
  }
  return (Theta.leftCols(u_f.size()) * u_f + Theta.rightCols(y_f.size()) * y_f).norm();
}

double iv_noise_correlation(const MatrixXd& Ef, const MatrixXd& Phi) {
  if (Ef.cols() != Phi.cols()) throw DimensionError("iv_noise_correlation: column counts differ");
  return (Ef * Phi.transpose()).norm();
}

}  // namespace ivddpc
