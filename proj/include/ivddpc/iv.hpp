#pragma once

#include <optional>
#include <string>

#include "ivddpc/hankel.hpp"

namespace ivddpc {

/// Observer-form left coprime factorization C(z) = V_c(z)^-1 U_c(z) of a
/// controller acting on w = r - y, so that V_c u = U_c (r - y).
///   V_c = (A_c + L C_c, L,             C_c, I)
///   U_c = (A_c + L C_c, B_c + L D_c,  C_c, D_c)
struct CoprimeFactors {
  StateSpaceModel V;
  StateSpaceModel U;
  MatrixXd Lc;

  /// Realization of V^-1 U (same input/output map as the controller).
  StateSpaceModel quotient() const;
};

CoprimeFactors lcf(const ControllerModel& ctrl);

/// Xi_f = T(V_c) U_f + T(U_c) Y_f at depth L_f.
MatrixXd xi_f(const CoprimeFactors& factors, const HankelBundle& bundle);

enum class IvVariant {
  OpenLoop,  ///< col(Z_p, U_f)
  RefOnly,   ///< col(Z_p, R_f)
  LcfOnly,   ///< col(Z_p, Xi_f)
  Combined,  ///< col(Z_p, Xi_f, R_f)
  PastOnly,  ///< col(Z_p); reference-independent instrument for diagnostics
};

std::string to_string(IvVariant v);
IvVariant iv_variant_from_string(const std::string& s);

/// Instrument matrix (already scaled by 1/N̄) and the objects derived from it.
struct InstrumentSet {
  IvVariant variant = IvVariant::OpenLoop;
  MatrixXd Phi;
  double svd_tol = 1e-10;
  std::optional<MatrixXd> Lc;

  /// (W Phi')^+ with W = col(Z_p, U_f); filled by `predictor`.
  std::optional<MatrixXd> weighted_pinv;
  std::optional<MatrixXd> Omega;
  std::optional<MatrixXd> Pi;
  Eigen::Index rank = 0;

  /// Omega split into the z_p and u_f column blocks.
  MatrixXd omega_past() const;
  MatrixXd omega_future() const;
  Eigen::Index past_rows = 0;
};

InstrumentSet build_iv(const HankelBundle& bundle, IvVariant variant,
                       const std::optional<CoprimeFactors>& factors = std::nullopt,
                       double svd_tol = 1e-10);

/// Omega* = Y_f Phi' (W Phi')^+, the weighted least-squares multi-step
/// predictor. Stored in `iv` and returned. Throws IllPosedError when
/// W Phi' loses rank beyond the tolerance.
const MatrixXd& predictor(const HankelBundle& bundle, InstrumentSet& iv);

/// Pi = Phi' (W Phi')^+ W (N̄ x N̄). Computes the predictor first if needed.
const MatrixXd& projection(const HankelBundle& bundle, InstrumentSet& iv);

/// Theta_c = Gamma_c^perp [I  H_c] where the rows of Gamma_c^perp are an
/// orthonormal basis of the left null space of Gamma_{L_f}(A_c, C_c).
/// For exact closed-loop windows, Theta_c col(u_f, y_f) = Gamma_c^perp H_c r_f.
struct Annihilator {
  MatrixXd Theta;
  MatrixXd GammaPerp;
  MatrixXd Hc;
};

Annihilator annihilator(const ControllerModel& ctrl, int future);

/// ||Theta_c col(u_f, y_f)||_2
double restriction_residual(const MatrixXd& Theta, const VectorXd& u_f, const VectorXd& y_f);

/// ||E_f Phi'||_F
double iv_noise_correlation(const MatrixXd& Ef, const MatrixXd& Phi);

}  // namespace ivddpc
