#pragma once

#include <random>

#include "ivddpc/control.hpp"

namespace fixture {

using ivddpc::ControllerModel;
using ivddpc::MatrixXd;
using ivddpc::StateSpaceModel;
using ivddpc::VectorXd;

inline StateSpaceModel siso_plant() {
  MatrixXd A(2, 2), B(2, 1), C(1, 2), D(1, 1);
  A << 0.7326, -0.0861, 0.1722, 0.9909;
  B << 0.0609, 0.0064;
  C << 0, 1.4142;
  D << 1;
  return StateSpaceModel{A, B, C, D, std::nullopt};
}

inline ControllerModel siso_controller() {
  MatrixXd Ac(2, 2), Bc(2, 1), Cc(1, 2), Dc(1, 1);
  Ac << 1, 0, 0.0722, 1;
  Bc << 0.2609, 0.164;
  Cc << 0.8, 0.2142;
  Dc << -0.07;
  return ControllerModel{Ac, Bc, Cc, Dc};
}

inline ControllerModel mimo_controller() {
  MatrixXd Ac = MatrixXd::Zero(4, 4), Bc(4, 2), Cc(2, 4), Dc = MatrixXd::Zero(2, 2);
  Ac(1, 1) = 1;
  Ac(3, 3) = 1;
  Bc << 0, 0.3260, 0, 0.0802, 0.6250, 0, 0.2990, 0;
  Cc << 1, 1, 0, 0, 0, 0, 1, 1;
  return ControllerModel{Ac, Bc, Cc, Dc};
}

inline MatrixXd randn(std::mt19937_64& g, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = n(g);
  return m;
}

/// Random Schur matrix with spectral radius `rho`.
inline MatrixXd random_stable(std::mt19937_64& g, Eigen::Index n, double rho) {
  MatrixXd A = randn(g, n, n);
  return A * (rho / ivddpc::spectral_radius(A));
}

/// Random plant with a stabilizing predictor gain (A - K C Schur).
inline StateSpaceModel random_plant(std::mt19937_64& g, Eigen::Index n, Eigen::Index m,
                                    Eigen::Index p, bool with_d = true) {
  for (;;) {
    StateSpaceModel s;
    s.A = random_stable(g, n, 0.8);
    s.B = randn(g, n, m);
    s.C = randn(g, p, n);
    s.D = with_d ? MatrixXd(0.3 * randn(g, p, m)) : MatrixXd::Zero(p, m);
    s.K = 0.2 * randn(g, n, p);
    if (ivddpc::spectral_radius(s.A - *s.K * s.C) < 0.9) return s;
  }
}

/// Random controller whose loop with `plant` is stable; small gains keep the
/// search short.
inline ControllerModel random_controller(std::mt19937_64& g, const StateSpaceModel& plant,
                                         Eigen::Index nc, bool with_d = true) {
  const Eigen::Index m = plant.inputs(), p = plant.outputs(), n = plant.states();
  for (;;) {
    ControllerModel c;
    c.Ac = random_stable(g, nc, 0.7);
    c.Bc = 0.3 * randn(g, nc, p);
    c.Cc = 0.3 * randn(g, m, nc);
    c.Dc = with_d ? MatrixXd(0.1 * randn(g, m, p)) : MatrixXd::Zero(m, p);
    // Lifted closed-loop state matrix with w = r - y.
    const MatrixXd M = (MatrixXd::Identity(m, m) + c.Dc * plant.D).inverse();
    MatrixXd Acl(n + nc, n + nc);
    Acl.topLeftCorner(n, n) = plant.A - plant.B * M * c.Dc * plant.C;
    Acl.topRightCorner(n, nc) = plant.B * M * c.Cc;
    const MatrixXd Cu_x = -M * c.Dc * plant.C, Cu_xc = M * c.Cc;
    Acl.bottomLeftCorner(nc, n) = -c.Bc * (plant.C + plant.D * Cu_x);
    Acl.bottomRightCorner(nc, nc) = c.Ac - c.Bc * plant.D * Cu_xc;
    if (ivddpc::spectral_radius(Acl) < 0.95) return c;
  }
}

}  // namespace fixture
