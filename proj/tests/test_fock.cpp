#include "doctest.h"
#include "oracles.hpp"
#include "qfb/errors.hpp"
#include "qfb/fock.hpp"
#include "qfb/rng.hpp"
#include "qfb/verify.hpp"

#include <cmath>
#include <complex>
#include <numbers>

using namespace qfb;

namespace {

PhysicalParams unit_params(double k = 0.1, double eta = 1.0) {
  PhysicalParams p;
  p.k = k;
  p.eta = eta;
  return p;
}

GaussianState coherent(const PhysicalParams& p, double x0, double p0 = 0.0) {
  const Covariances g = ground_covariances(p);
  return {x0, p0, g.v_x, g.v_p, g.c, 0.0};
}

}  // namespace

TEST_CASE("number-basis operators") {
  PhysicalParams p = unit_params();
  p.m = 2.0;
  p.omega = 0.5;
  p.hbar = 0.7;
  const int n = 12;
  const OperatorSet ops = build_operators(n, p);
  CHECK(ops.x_op.isApprox(ops.x_op.adjoint()));
  CHECK(ops.p_op.isApprox(ops.p_op.adjoint()));
  const Eigen::MatrixXcd x2 = ops.x_op * ops.x_op;
  CHECK(x2(0, 0).real() == doctest::Approx(p.hbar / (2.0 * p.m * p.omega)));
  const Eigen::MatrixXcd comm = ops.x_op * ops.p_op - ops.p_op * ops.x_op;
  const Eigen::MatrixXcd inner = comm.topLeftCorner(n - 1, n - 1);
  const Eigen::MatrixXcd expect =
      std::complex<double>(0.0, p.hbar) * Eigen::MatrixXcd::Identity(n - 1, n - 1);
  CHECK((inner - expect).cwiseAbs().maxCoeff() < 1e-12);
  // Kinetic plus potential energy reproduces the spectrum away from the edge.
  const Eigen::MatrixXcd h =
      ops.p_op * ops.p_op / (2.0 * p.m) + 0.5 * p.m * p.omega * p.omega * x2;
  for (int k = 0; k < n - 2; ++k) {
    CHECK(h(k, k).real() == doctest::Approx(p.hbar * p.omega * (k + 0.5)));
    CHECK(ops.hamiltonian(k, k).real() ==
          doctest::Approx(p.hbar * p.omega * (k + 0.5)));
  }
  CHECK_THROWS_AS(build_operators(3, p), ParameterError);
}

TEST_CASE("moments of standard states") {
  const PhysicalParams p = unit_params();
  const OperatorSet ops = build_operators(30, p);
  const FockMoments g = moments(fock_ground_state(30), ops);
  CHECK(std::abs(g.mean_x) < 1e-15);
  CHECK(g.v_x == doctest::Approx(0.5));
  CHECK(g.v_p == doctest::Approx(0.5));
  CHECK(std::abs(g.c) < 1e-15);
  CHECK(g.purity == doctest::Approx(1.0));

  const FockMoments c = moments(gaussian_fock_state(30, p, coherent(p, 1.5)), ops);
  CHECK(c.mean_x == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(c.v_x == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(c.v_p == doctest::Approx(0.5).epsilon(1e-9));

  // Squeezed, correlated, mixed.
  const GaussianState s{0.2, -0.3, 0.9, 1.1, 0.35, 0.0};
  const FockState rho = gaussian_fock_state(60, p, s);
  const FockMoments m = moments(rho, build_operators(60, p));
  CHECK(m.mean_x == doctest::Approx(s.mean_x).epsilon(1e-8));
  CHECK(m.mean_p == doctest::Approx(s.mean_p).epsilon(1e-8));
  CHECK(m.v_x == doctest::Approx(s.v_x).epsilon(1e-8));
  CHECK(m.v_p == doctest::Approx(s.v_p).epsilon(1e-8));
  CHECK(m.c == doctest::Approx(s.c).epsilon(1e-8));
  CHECK(m.purity == doctest::Approx(purity(s.covariances(), p.hbar)).epsilon(1e-6));
  CHECK(rho.rho.trace().real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(min_eigenvalue(rho) > -1e-12);
}

TEST_CASE("unmeasured evolution rotates a coherent state") {
  const PhysicalParams p = unit_params(0.0);
  const SmeIntegrator integ(build_operators(30, p), p);
  FockState s = gaussian_fock_state(30, p, coherent(p, 1.0));
  const double dt = 1e-3;
  const int n = static_cast<int>(std::lround(std::numbers::pi / 2.0 / dt));
  for (int i = 0; i < n; ++i) s = sme_step(s, integ, dt, 0.3);  // dw irrelevant
  const FockMoments m = integ.moments(s);
  CHECK(std::abs(m.mean_x - std::cos(n * dt)) < 1e-9);
  CHECK(m.mean_p == doctest::Approx(-std::sin(n * dt)).epsilon(1e-9));
}

TEST_CASE("unobserved measurement decoheres") {
  const PhysicalParams p = unit_params(0.5, 1e-9);
  const SmeIntegrator integ(build_operators(30, p), p);
  FockState s = fock_ground_state(30);
  double prev = 1.0;
  for (int i = 0; i < 200; ++i) {
    s = sme_step(s, integ, 1e-3, 0.0);
    const double pur = integ.moments(s).purity;
    CHECK(pur < prev);
    prev = pur;
  }
}

TEST_CASE("efficient measurement keeps a pure state pure") {
  const PhysicalParams p = unit_params(0.1);
  const SmeIntegrator integ(build_operators(40, p), p);
  FockState s = fock_ground_state(40);
  NoiseStream noise(5);
  for (int i = 0; i < 10000; ++i) {
    s = sme_step(s, integ, 1e-4, noise.wiener(1e-4));
    CHECK(std::abs(s.rho.trace().real() - 1.0) < 1e-9);
    CHECK((s.rho - s.rho.adjoint()).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(integ.moments(s).purity == doctest::Approx(1.0).epsilon(5e-3));
}

TEST_CASE("zero direct gains reduce to the plain step") {
  const PhysicalParams p = unit_params(0.3, 0.8);
  for (SmeScheme scheme : {SmeScheme::MeasurementOperator, SmeScheme::EulerMaruyama}) {
    const SmeIntegrator integ(build_operators(20, p), p, scheme);
    const FockState s = gaussian_fock_state(20, p, coherent(p, 0.5));
    const FockState a = sme_step(s, integ, 1e-4, 0.01);
    const FockState b = direct_feedback_sme_step(s, integ, 0.0, 0.0, 1e-4, 0.01);
    CHECK(a.rho == b.rho);
  }
}

TEST_CASE("covariances follow the Riccati flow") {
  // Deterministic covariances: compare with an independent RK4 solution.
  const PhysicalParams p = unit_params(0.1);
  const SmeIntegrator integ(build_operators(40, p), p);
  FockState s = fock_ground_state(40);
  NoiseStream noise(9);
  const double dt = 1e-4;
  oracle::Triple ref{0.5, 0.5, 0.0};
  for (int block = 0; block < 10; ++block) {
    for (int i = 0; i < 1000; ++i) s = sme_step(s, integ, dt, noise.wiener(dt));
    ref = oracle::rk4([&](const oracle::Triple& v) {
      return oracle::covariance_flow(v, 1.0, 1.0, 1.0, p.k, p.eta);
    }, ref, 0.1, 1e-3);
    const FockMoments m = integ.moments(s);
    CHECK(m.v_x == doctest::Approx(ref[0]).epsilon(1e-3));
    CHECK(m.v_p == doctest::Approx(ref[1]).epsilon(1e-3));
    CHECK(std::abs(m.c - ref[2]) < 1e-3 * 0.5);
  }
}

TEST_CASE("oracle and filter agree with and without direct feedback") {
  const PhysicalParams p = unit_params(0.1, 0.7);
  const SmeIntegrator integ(build_operators(40, p), p);
  const GaussianState init = coherent(p, 0.5, -0.2);
  const std::vector<double> dw = wiener_path(21, 1e-4, 10000);
  const OracleComparison plain = compare_with_filter(integ, init, 1e-4, dw);
  CHECK(plain.max_rel_error < 1e-3);
  ControllerSpec direct;
  direct.mode = FeedbackMode::Direct;
  direct.alpha = 0.4;
  direct.beta = -0.3;
  const OracleComparison fb = compare_with_filter(integ, init, 1e-4, dw, direct);
  CHECK(fb.max_rel_error < 1e-3);
  direct.alpha = direct.beta = 0.0;
  direct.cancel_noise = true;
  const OracleComparison cancel = compare_with_filter(integ, init, 1e-4, dw, direct);
  CHECK(cancel.max_rel_error < 1e-3);
  CHECK(cancel.min_eigenvalue > -1e-8);
}

TEST_CASE("literal Euler-Maruyama scheme is first-order consistent") {
  const PhysicalParams p = unit_params(0.1);
  const SmeIntegrator integ(build_operators(30, p), p, SmeScheme::EulerMaruyama);
  const std::vector<double> dw = wiener_path(4, 1e-4, 5000);
  const OracleComparison c =
      compare_with_filter(integ, coherent(p, 0.3), 1e-4, dw);
  CHECK(c.max_rel_error < 2e-2);
  CHECK(c.max_trace_error < 1e-12);
}

TEST_CASE("ensemble of conditioned states averages to the master equation") {
  const PhysicalParams p = unit_params(0.5, 0.8);
  const int n = 24;
  const SmeIntegrator integ(build_operators(n, p), p);
  const FockState init = gaussian_fock_state(n, p, coherent(p, 1.0));
  const double dt = 2e-3;
  const int steps = 250;
  FockState avg{Eigen::MatrixXcd::Zero(n, n), 0.0};
  const int n_traj = 1000;
  std::vector<double> xs;
  for (int t = 0; t < n_traj; ++t) {
    NoiseStream noise(trajectory_seed(500, t));
    FockState s = init;
    for (int i = 0; i < steps; ++i) s = sme_step(s, integ, dt, noise.wiener(dt));
    avg.rho += s.rho / n_traj;
    xs.push_back(integ.moments(s).mean_x);
  }
  FockState ref = init;
  for (int i = 0; i < steps; ++i) ref = integ.step_unconditioned(ref, dt);
  double mean = 0.0, var = 0.0;
  for (double x : xs) mean += x / n_traj;
  for (double x : xs) var += (x - mean) * (x - mean) / (n_traj - 1);
  const double se = std::sqrt(var / n_traj);
  CHECK(std::abs(mean - integ.moments(ref).mean_x) < 4.0 * se);
  CHECK((avg.rho - ref.rho).norm() < 0.05);
}

TEST_CASE("truncation breach names the dimension") {
  const PhysicalParams p = unit_params(0.1);
  try {
    (void)gaussian_fock_state(8, p, coherent(p, 4.0));
    FAIL("expected LeakageError");
  } catch (const LeakageError& e) {
    CHECK(e.dim() == 8);
  }
  const SmeIntegrator integ(build_operators(10, p), p, SmeScheme::MeasurementOperator,
                            1e-6);
  FockState s{Eigen::MatrixXcd::Zero(10, 10), 0.0};
  s.rho(9, 9) = 1.0;
  CHECK(top_population(s) == doctest::Approx(1.0));
  CHECK_THROWS_AS(sme_step(s, integ, 1e-4, 0.0), LeakageError);
}
