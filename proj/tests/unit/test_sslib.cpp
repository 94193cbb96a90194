#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "ivddpc/error.hpp"

using namespace ivddpc;

namespace {

// Lifted (n + n_c)-state model of the loop with inputs [r; e] and outputs [u; y],
// built directly from the loop equations.
struct Lifted {
  MatrixXd A, B, C, D;
};

Lifted lift(const StateSpaceModel& P, const ControllerModel& Cc) {
  const Eigen::Index n = P.states(), nc = Cc.states(), m = P.inputs(), p = P.outputs();
  const MatrixXd K = P.K ? *P.K : MatrixXd::Zero(n, p);
  const MatrixXd M = (MatrixXd::Identity(m, m) + Cc.Dc * P.D).inverse();
  // u = M (-Dc C x + Cc xc + Dc r - Dc e)
  MatrixXd Cu(m, n + nc), Du(m, 2 * p);
  Cu << -M * Cc.Dc * P.C, M * Cc.Cc;
  Du << M * Cc.Dc, -M * Cc.Dc;
  // y = C x + D u + e
  MatrixXd Cy(p, n + nc), Dy(p, 2 * p);
  Cy << P.C, MatrixXd::Zero(p, nc);
  Cy += P.D * Cu;
  Dy << MatrixXd::Zero(p, p), MatrixXd::Identity(p, p);
  Dy += P.D * Du;
  Lifted L;
  L.A.resize(n + nc, n + nc);
  L.A << P.A, MatrixXd::Zero(n, nc), MatrixXd::Zero(nc, n), Cc.Ac;
  L.A.topRows(n) += P.B * Cu;
  L.A.bottomRows(nc) -= Cc.Bc * Cy;
  L.B.resize(n + nc, 2 * p);
  L.B << P.B * Du + (MatrixXd(n, 2 * p) << MatrixXd::Zero(n, p), K).finished(),
      Cc.Bc * ((MatrixXd(p, 2 * p) << MatrixXd::Identity(p, p), MatrixXd::Zero(p, p)).finished() - Dy);
  L.C.resize(m + p, n + nc);
  L.C << Cu, Cy;
  L.D.resize(m + p, 2 * p);
  L.D << Du, Dy;
  return L;
}

}  // namespace

TEST(SimulateOpenLoop, OneStepDelayChain) {
  StateSpaceModel s = StateSpaceModel::make(MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1),
                                            MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1),
                                            MatrixXd::Zero(1, 1));
  MatrixXd u(1, 2);
  u << 1, 0;
  const Trajectory t = simulate_open_loop(s, u, MatrixXd::Zero(1, 2), VectorXd::Zero(1));
  EXPECT_DOUBLE_EQ(t.y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(t.y(0, 1), 1.0);
}

TEST(SimulateOpenLoop, ZeroInputZeroStateExamplePlant) {
  const StateSpaceModel s = fixture::siso_plant();
  const Trajectory t = simulate_open_loop(s, MatrixXd::Zero(1, 100), MatrixXd::Zero(1, 100), VectorXd::Zero(2));
  EXPECT_EQ(t.y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulateOpenLoop, MatchesScalarRecursion) {
  std::mt19937_64 g(1);
  const StateSpaceModel s = fixture::random_plant(g, 3, 2, 2);
  const MatrixXd u = fixture::randn(g, 2, 50), e = fixture::randn(g, 2, 50);
  const VectorXd x0 = fixture::randn(g, 3, 1);
  const Trajectory t = simulate_open_loop(s, u, e, x0);
  std::vector<double> x(x0.data(), x0.data() + 3);
  for (int k = 0; k < 50; ++k) {
    for (int i = 0; i < 2; ++i) {
      double y = e(i, k);
      for (int j = 0; j < 3; ++j) y += s.C(i, j) * x[j];
      for (int j = 0; j < 2; ++j) y += s.D(i, j) * u(j, k);
      EXPECT_NEAR(t.y(i, k), y, 1e-12);
    }
    std::vector<double> xn(3, 0.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) xn[i] += s.A(i, j) * x[j];
      for (int j = 0; j < 2; ++j) xn[i] += s.B(i, j) * u(j, k) + (*s.K)(i, j) * e(j, k);
    }
    x = xn;
  }
}

TEST(SimulateOpenLoop, AbsentGainEqualsZeroGain) {
  std::mt19937_64 g(2);
  StateSpaceModel s = fixture::random_plant(g, 3, 1, 2);
  const MatrixXd u = fixture::randn(g, 1, 40), e = fixture::randn(g, 2, 40);
  StateSpaceModel zero = s;
  zero.K = MatrixXd::Zero(3, 2);
  s.K.reset();
  const Trajectory a = simulate_open_loop(s, u, e, VectorXd::Zero(3));
  const Trajectory b = simulate_open_loop(zero, u, e, VectorXd::Zero(3));
  EXPECT_EQ((a.y - b.y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(StateSpaceModel, RejectsBadShapesAndUnstablePredictor) {
  EXPECT_THROW(StateSpaceModel::make(MatrixXd::Zero(2, 2), MatrixXd::Zero(3, 1), MatrixXd::Zero(1, 2),
                                     MatrixXd::Zero(1, 1)),
               DimensionError);
  EXPECT_THROW(StateSpaceModel::make(MatrixXd::Constant(1, 1, 2.0), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1),
                                     MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1)),
               std::invalid_argument);
}

TEST(ClosedLoop, ZeroEquilibrium) {
  std::mt19937_64 g(3);
  const StateSpaceModel s = fixture::random_plant(g, 2, 1, 1, false);
  ControllerModel c = fixture::random_controller(g, s, 2, false);
  const Trajectory t = simulate_closed_loop(s, c, MatrixXd::Zero(1, 30), MatrixXd::Zero(1, 30),
                                            VectorXd::Zero(2), VectorXd::Zero(2));
  EXPECT_EQ(t.u.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(t.y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ClosedLoop, ExampleStepSettlesAtDcGain) {
  // The controller has integrating states: at rest (A_c - I) x_c + B_c (r - y) = 0
  // and the first row of A_c - I vanishes, so 0.2609 (r - y) = 0 and y = r.
  const StateSpaceModel s = fixture::siso_plant();
  const ControllerModel c = fixture::siso_controller();
  const int N = 3000;
  const Trajectory t = simulate_closed_loop(s, c, MatrixXd::Ones(1, N), MatrixXd::Zero(1, N),
                                            VectorXd::Zero(2), VectorXd::Zero(2));
  EXPECT_NEAR(t.y(0, N - 1), 1.0, 1e-9);
  EXPECT_NEAR(t.y(0, N - 1), t.y(0, N - 2), 1e-12);
  // And the steady input is P(1)^-1.
  const double P1 = (s.C * (MatrixXd::Identity(2, 2) - s.A).inverse() * s.B + s.D)(0, 0);
  EXPECT_NEAR(t.u(0, N - 1), 1.0 / P1, 1e-8);
}

TEST(ClosedLoop, MatchesLiftedSystem) {
  std::mt19937_64 g(4);
  for (int trial = 0; trial < 5; ++trial) {
    const StateSpaceModel s = fixture::random_plant(g, 3, 2, 2);
    const ControllerModel c = fixture::random_controller(g, s, 2);
    const int N = 500;
    const MatrixXd r = fixture::randn(g, 2, N), e = 0.1 * fixture::randn(g, 2, N);
    const VectorXd x0 = fixture::randn(g, 3, 1), xc0 = fixture::randn(g, 2, 1);
    const Trajectory t = simulate_closed_loop(s, c, r, e, x0, xc0);
    const Lifted L = lift(s, c);
    VectorXd z(5);
    z << x0, xc0;
    for (int k = 0; k < N; ++k) {
      VectorXd w(4);
      w << r.col(k), e.col(k);
      const VectorXd out = L.C * z + L.D * w;
      ASSERT_LT((out.head(2) - t.u.col(k)).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial << " k " << k;
      ASSERT_LT((out.tail(2) - t.y.col(k)).cwiseAbs().maxCoeff(), 1e-10);
      z = L.A * z + L.B * w;
    }
  }
}

TEST(ClosedLoop, ExampleLoopIsStable) {
  StateSpaceModel s = fixture::siso_plant();
  const Lifted L = lift(s, fixture::siso_controller());
  EXPECT_LT(spectral_radius(L.A), 1.0);
}

TEST(ClosedLoop, SingularAlgebraicLoopIsRejected) {
  StateSpaceModel s = StateSpaceModel::make(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1),
                                            MatrixXd::Ones(1, 1));
  ControllerModel c = ControllerModel::make(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1),
                                            MatrixXd::Constant(1, 1, -1.0));
  EXPECT_THROW(simulate_closed_loop(s, c, MatrixXd::Zero(1, 3), MatrixXd::Zero(1, 3), VectorXd::Zero(1),
                                    VectorXd::Zero(1)),
               WellPosednessError);
}

TEST(SquareWave, Basic) {
  const VectorXd w = square_wave(4, 0.5, 1.0, 8);
  VectorXd expect(8);
  expect << 1, 1, -1, -1, 1, 1, -1, -1;
  EXPECT_EQ(w, expect);
}

TEST(SquareWave, DutyCountPerPeriod) {
  for (auto [period, duty] : {std::pair{600, 0.7}, {60, 0.5}, {7, 0.3}, {10, 0.95}, {5, 0.999}}) {
    const VectorXd w = square_wave(period, duty, 2.5, 3 * period);
    for (int k = 0; k < 3; ++k) {
      int high = 0, low = 0;
      for (int i = 0; i < period; ++i) {
        if (w(k * period + i) == 2.5) ++high;
        if (w(k * period + i) == -2.5) ++low;
      }
      EXPECT_EQ(high, std::lround(duty * period)) << period << " " << duty;
      EXPECT_EQ(high + low, period);
    }
  }
  // Four of five samples high leaves a single low sample.
  const VectorXd w = square_wave(5, 0.8, 1.0, 5);
  EXPECT_EQ((w.array() < 0).count(), 1);
  EXPECT_EQ(square_wave(600, 0.7, 1.0, 600).head(420).minCoeff(), 1.0);
  EXPECT_THROW(square_wave(4, 1.0, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(square_wave(0, 0.5, 1.0, 4), std::invalid_argument);
}

TEST(ExcitationReference, Lengths) {
  EXPECT_EQ(excitation_reference(600, 0.7, {-3, -2, -1, 0, 1, 2, 3}).size(), 4200);
  EXPECT_EQ(excitation_reference(600, 0.7, {0}).cwiseAbs().maxCoeff(), 0.0);
  const VectorXd r = excitation_reference(4, 0.5, {1, 2});
  VectorXd expect(8);
  expect << 1, 1, -1, -1, 2, 2, -2, -2;
  EXPECT_EQ(r, expect);
  EXPECT_EQ(r.cwiseAbs().maxCoeff(), 2.0);
}

TEST(GaussianNoise, ZeroSigmaAndDeterminism) {
  EXPECT_EQ(gaussian_noise(7, VectorXd::Zero(2), 100).cwiseAbs().maxCoeff(), 0.0);
  const MatrixXd a = gaussian_noise(7, VectorXd::Ones(2), 100);
  const MatrixXd b = gaussian_noise(7, VectorXd::Ones(2), 100);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 200), 0);
  EXPECT_NE(a(0, 0), gaussian_noise(8, VectorXd::Ones(2), 1)(0, 0));
}

TEST(GaussianNoise, SampleMoments) {
  const MatrixXd x = gaussian_noise(11, VectorXd::Ones(1), 100000);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (x.size() - 1));
  EXPECT_GE(sd, 0.99);
  EXPECT_LE(sd, 1.01);
  EXPECT_LT(std::abs(mean), 0.01);
}

TEST(Dare, ZeroDynamicsGivesQw) {
  MatrixXd Qw(2, 2);
  Qw << 2, 0.5, 0.5, 1;
  const MatrixXd P = dare_solve(MatrixXd::Zero(2, 2), MatrixXd::Ones(1, 2), Qw, MatrixXd::Ones(1, 1));
  EXPECT_LT((P - Qw).norm(), 1e-12);
}

TEST(Dare, ScalarMatchesBisection) {
  // P = a^2 P + q - a^2 P^2 / (P + r) with a = 0.5, q = r = 1.
  auto f = [](double P) { return 0.25 * P + 1.0 - 0.25 * P * P / (P + 1.0) - P; };
  double lo = 0.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? lo : hi) = mid;
  }
  const MatrixXd P = dare_solve(MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1),
                                MatrixXd::Ones(1, 1));
  EXPECT_NEAR(P(0, 0), 0.5 * (lo + hi), 1e-10);
  EXPECT_NEAR(P(0, 0), 1.1328, 1e-4);
}

TEST(Dare, RandomResidualSymmetricPsd) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd A = fixture::randn(g, 4, 4) * 0.6;  // possibly unstable, still detectable generically
    const MatrixXd C = fixture::randn(g, 2, 4);
    const MatrixXd G = fixture::randn(g, 4, 4);
    const MatrixXd Qw = G * G.transpose() + 0.1 * MatrixXd::Identity(4, 4);
    const MatrixXd Rv = MatrixXd::Identity(2, 2) * 0.5;
    const MatrixXd P = dare_solve(A, C, Qw, Rv);
    EXPECT_LE(dare_residual(P, A, C, Qw, Rv), 1e-10);
    EXPECT_LT((P - P.transpose()).norm(), 1e-10 * P.norm());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(symmetrized(P)).eigenvalues().minCoeff(), -1e-10);
    const MatrixXd K = (A * P * C.transpose()) * (C * P * C.transpose() + Rv).inverse();
    EXPECT_LT(spectral_radius(A - K * C), 1.0);
  }
}

TEST(KalmanGain, ZeroDynamics) {
  StateSpaceModel s = StateSpaceModel::make(MatrixXd::Zero(2, 2), MatrixXd::Ones(2, 1), MatrixXd::Identity(2, 2),
                                            MatrixXd::Zero(2, 1));
  EXPECT_EQ(kalman_gain(s, MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)).norm(), 0.0);
}

TEST(KalmanGain, ExamplePlantPredictorStable) {
  StateSpaceModel s = fixture::siso_plant();
  for (double sigma : {0.01, 0.07, 0.3}) {
    const MatrixXd K = kalman_gain(s, 0.01 * MatrixXd::Identity(2, 2), MatrixXd::Constant(1, 1, sigma * sigma));
    EXPECT_LT(spectral_radius(s.A - K * s.C), 1.0);
    s.K = K;
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(OutputInjection, StableFastPathAndExampleControllers) {
  std::mt19937_64 g(6);
  const MatrixXd As = fixture::random_stable(g, 3, 0.5);
  EXPECT_EQ(stabilizing_output_injection(As, fixture::randn(g, 1, 3)).norm(), 0.0);
  for (const ControllerModel& c : {fixture::siso_controller(), fixture::mimo_controller()}) {
    const MatrixXd L = stabilizing_output_injection(c.Ac, c.Cc);
    EXPECT_LT(spectral_radius(c.Ac + L * c.Cc), 1.0);
  }
}

TEST(MarkovParameters, ImpulseResponse) {
  std::mt19937_64 g(7);
  const StateSpaceModel s = fixture::random_plant(g, 3, 2, 2);
  const MatrixXd h = markov_parameters(s.A, s.B, s.C, s.D, 6);
  ASSERT_EQ(h.rows(), 12);
  // Column j of the impulse response: simulate with u = unit pulse on input j.
  for (int j = 0; j < 2; ++j) {
    MatrixXd u = MatrixXd::Zero(2, 6);
    u(j, 0) = 1.0;
    StateSpaceModel noK = s;
    noK.K.reset();
    const Trajectory t = simulate_open_loop(noK, u, MatrixXd::Zero(2, 6), VectorXd::Zero(3));
    for (int k = 0; k < 6; ++k) EXPECT_LT((h.block(2 * k, j, 2, 1) - t.y.col(k)).norm(), 1e-12);
  }
}

TEST(Dare, TinyMeasurementNoiseOnMimoPlant) {
  std::mt19937_64 g(77);
  const StateSpaceModel s = fixture::random_plant(g, 4, 2, 2, false);
  const MatrixXd Qw = 0.01 * MatrixXd::Identity(4, 4);
  for (double rv : {1e-8, 1e-10, 1e-12}) {
    const MatrixXd Rv = rv * MatrixXd::Identity(2, 2);
    const MatrixXd P = dare_solve(s.A, s.C, Qw, Rv);
    EXPECT_LE(dare_residual(P, s.A, s.C, Qw, Rv), 1e-10) << rv;
  }
}
