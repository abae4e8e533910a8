#include "doctest.h"
#include "oracles.hpp"
#include "qfb/errors.hpp"
#include "qfb/feedback.hpp"

#include <cmath>
#include <random>

using namespace qfb;

namespace {

PhysicalParams unit_params(double k = 0.5, double eta = 1.0) {
  PhysicalParams p;
  p.k = k;
  p.eta = eta;
  return p;
}

GaussianState steady_state(const PhysicalParams& p, double x = 0.0,
                           double px = 0.0) {
  const Covariances c = steady_state_covariances(p);
  return {x, px, c.v_x, c.v_p, c.c, 0.0};
}

ControllerSpec damping(double gamma) {
  ControllerSpec c;
  c.mode = FeedbackMode::Estimation;
  c.gamma_x = c.gamma_p = gamma;
  return c;
}

oracle::Triple as_triple(const Covariances& c) { return {c.v_x, c.v_p, c.c}; }

}  // namespace

TEST_CASE("direct feedback mean terms") {
  const PhysicalParams p = unit_params(1.0);
  const Covariances cov{0.5, 0.7, 0.3};
  DirectFeedbackTerms t = direct_feedback_mean_terms(0.0, 0.0, p, cov);
  CHECK(t.drift.isZero(0.0));
  CHECK(t.diffusion(0) == doctest::Approx(2.0 * std::sqrt(2.0) * 0.5));
  CHECK(t.diffusion(1) == doctest::Approx(2.0 * std::sqrt(2.0) * 0.3));

  t = direct_feedback_mean_terms(0.0, 0.25, p, cov);
  CHECK(t.drift(0, 0) == doctest::Approx(1.0));  // 4 eta k beta
  CHECK(t.drift.col(1).isZero(0.0));

  t = direct_feedback_mean_terms(0.4, 0.0, p, cov);
  CHECK(t.drift(1, 0) == doctest::Approx(-1.6));
}

TEST_CASE("cancelling gains remove the mean diffusion exactly") {
  CHECK(noise_cancelling_gains({0.5, 1.0, 0.3}).alpha == doctest::Approx(0.6));
  CHECK(noise_cancelling_gains({0.5, 1.0, 0.3}).beta == doctest::Approx(-1.0));
  CHECK(noise_cancelling_gains({0.5, 1.0, 0.0}).alpha == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.01, 5.0);
  for (int i = 0; i < 1000; ++i) {
    PhysicalParams p = unit_params(uni(rng), std::min(1.0, uni(rng) / 5.0));
    const Covariances cov{uni(rng), uni(rng), uni(rng) - 2.5};
    const DirectGains g = noise_cancelling_gains(cov);
    const DirectFeedbackTerms t = direct_feedback_mean_terms(g.alpha, g.beta, p, cov);
    CHECK(t.diffusion(0) == 0.0);
    CHECK(t.diffusion(1) == 0.0);
  }

  const PhysicalParams p = unit_params(0.5);
  const Covariances ss = steady_state_covariances(p);
  const DirectGains g = noise_cancelling_gains(ss);
  CHECK(g.alpha == doctest::Approx(p.hbar * 0.6180340).epsilon(1e-6));
  CHECK(g.beta == doctest::Approx(-2.0 * ss.v_x));
}

TEST_CASE("excess covariance closed forms") {
  const PhysicalParams p = unit_params(0.5);
  const Covariances cond = to_tilde(steady_state_covariances(p), p);
  const double r = 1.0, w = 1.0;

  SUBCASE("full damping is a fixed point and matches the integrated flow") {
    for (double q : {0.05, 0.5, 2.0}) {
      const double gamma = w / (2.0 * q);
      const ExcessCovariances e =
          excess_cov_steady_state(cond, q, r, DampingVariant::FullDamping).value;
      const ExcessCovariances d = excess_cov_derivative(e, cond, gamma, gamma, w, r);
      CHECK(std::abs(d.ve_x) < 1e-12);
      CHECK(std::abs(d.ve_p) < 1e-12);
      CHECK(std::abs(d.ce) < 1e-12);
      const oracle::Triple rest = oracle::rk4(
          [&](const oracle::Triple& x) {
            return oracle::excess_flow(x, as_triple(cond), gamma, gamma, w, r);
          },
          {0.0, 0.0, 0.0}, 40.0 / gamma + 40.0, 1e-3);
      CHECK(e.ve_x == doctest::Approx(rest[0]).epsilon(1e-9));
      CHECK(e.ve_p == doctest::Approx(rest[1]).epsilon(1e-9));
      CHECK(e.ce == doctest::Approx(rest[2]).epsilon(1e-9));
    }
    const ExcessCovariances half =
        excess_cov_steady_state(cond, 0.5, r, DampingVariant::FullDamping).value;
    CHECK(half.ve_x == doctest::Approx(0.801951).epsilon(1e-6));
    CHECK(half.ve_p == doctest::Approx(0.198049).epsilon(1e-6));
    CHECK(half.ce == doctest::Approx(0.183917).epsilon(1e-6));
  }

  SUBCASE("strong damping suppresses the excess") {
    const ExcessCovariances e =
        excess_cov_steady_state(cond, 1e-9, r, DampingVariant::FullDamping).value;
    CHECK(std::abs(e.ve_x) < 1e-8);
    CHECK(std::abs(e.ve_p) < 1e-8);
    CHECK(std::abs(e.ce) < 1e-8);
  }

  SUBCASE("derivative limits") {
    const ExcessCovariances d = excess_cov_derivative({}, cond, 1e9, 1e9, w, r);
    CHECK(d.ve_x == doctest::Approx(2.0 * w / r * cond.v_x * cond.v_x));
    CHECK(d.ve_p == doctest::Approx(2.0 * w / r * cond.c * cond.c));
    CHECK(d.ce == doctest::Approx(2.0 * w / r * cond.c * cond.v_x));
    const ExcessCovariances none = excess_cov_derivative({}, cond, 1.0, 1.0, w, 1e300);
    CHECK(std::abs(none.ve_x) < 1e-290);
    CHECK(std::abs(none.ce) < 1e-290);
  }

  SUBCASE("position-only forms") {
    const ExcessSteadyState zero =
        excess_cov_steady_state(cond, 0.0, r, DampingVariant::PositionOnly);
    const double s = cond.v_x * cond.v_x / r;
    CHECK(zero.value.ve_x == doctest::Approx(s));
    CHECK(zero.value.ve_p == doctest::Approx(s));
    CHECK(zero.value.ce == doctest::Approx(-s));
    CHECK_FALSE(zero.warning.has_value());
    CHECK(excess_cov_steady_state(cond, 0.2, r, DampingVariant::PositionOnly)
              .warning.has_value());
    CHECK_THROWS_AS(
        excess_cov_steady_state(cond, -1.0, r, DampingVariant::PositionOnly),
        ParameterError);
  }
}

TEST_CASE("total covariances") {
  for (double eta : {0.3, 1.0}) {
    const PhysicalParams p = unit_params(0.5, eta);
    const Covariances cond = to_tilde(steady_state_covariances(p), p);
    const TotalCovariances none = total_covariances(cond, {});
    CHECK(none.purity == doctest::Approx(std::sqrt(eta)).epsilon(1e-12));
    const ExcessCovariances ex =
        excess_cov_steady_state(cond, 0.5, regime_numbers(p).r,
                                DampingVariant::FullDamping).value;
    const TotalCovariances tot = total_covariances(cond, ex);
    CHECK(tot.purity <= none.purity);
    if (eta == 1.0) CHECK(tot.tilde.v_x == doctest::Approx(1.588102).epsilon(1e-6));
  }
}

TEST_CASE("free deterministic motion without measurement or feedback") {
  PhysicalParams p = unit_params(0.0);
  const GaussianState init{1.0, 0.0, 0.5, 0.5, 0.0, 0.0};
  const double dt = 1e-4;
  const TrajectoryRecord a = simulate_trajectory(p, {}, init, 1.0, dt, 1);
  const TrajectoryRecord b = simulate_trajectory(p, {}, init, 1.0, dt, 99);
  REQUIRE(a.states.size() == 10001);
  for (std::size_t i = 0; i < a.states.size(); i += 1000) {
    CHECK(a.states[i].mean_x == b.states[i].mean_x);
    CHECK(a.states[i].mean_x == doctest::Approx(std::cos(a.times[i])).epsilon(1e-3));
    CHECK(a.states[i].v_x == 0.5);
  }
}

TEST_CASE("trajectories are reproducible and ordered") {
  const PhysicalParams p = unit_params(0.5);
  const ControllerSpec ctl = damping(2.0);
  const GaussianState init = thermal_state(p, 2.0, 0.3, -0.1);
  const TrajectoryRecord a = simulate_trajectory(p, ctl, init, 2.0, 1e-3, 42);
  const TrajectoryRecord b = simulate_trajectory(p, ctl, init, 2.0, 1e-3, 42);
  const TrajectoryRecord c = simulate_trajectory(p, ctl, init, 2.0, 1e-3, 43);
  REQUIRE(a.states.size() == b.states.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    CHECK(a.states[i].mean_x == b.states[i].mean_x);
    CHECK(a.records[i] == b.records[i]);
    differs |= a.states[i].mean_x != c.states[i].mean_x;
    // The control applied over step i is computed from the estimate after
    // the step-i measurement update.
    const ControlInput expect = -ctl.estimation_gain() * a.states[i].mean();
    CHECK(a.controls[i] == expect);
  }
  CHECK(differs);
  CHECK(a.cost.total() == b.cost.total());
  for (std::size_t i = 1; i < a.times.size(); ++i) CHECK(a.times[i] > a.times[i - 1]);
}

TEST_CASE("linear feedback leaves the covariance flow untouched") {
  const PhysicalParams p = unit_params(0.5, 0.7);
  const GaussianState init = thermal_state(p, 3.0, 0.5, 0.2);
  ControllerSpec direct;
  direct.mode = FeedbackMode::Direct;
  direct.alpha = 0.3;
  direct.beta = -0.2;
  ControllerSpec combined = damping(1.0);
  combined.mode = FeedbackMode::Combined;
  combined.cancel_noise = true;
  const TrajectoryRecord ref = simulate_trajectory(p, {}, init, 3.0, 1e-3, 5);
  for (const ControllerSpec& ctl : {damping(3.0), direct, combined}) {
    const TrajectoryRecord t = simulate_trajectory(p, ctl, init, 3.0, 1e-3, 5);
    for (std::size_t i = 0; i < ref.states.size(); ++i) {
      CHECK(t.states[i].v_x == ref.states[i].v_x);
      CHECK(t.states[i].v_p == ref.states[i].v_p);
      CHECK(t.states[i].c == ref.states[i].c);
    }
  }
}

TEST_CASE("estimates forget their initial value") {
  const PhysicalParams p = unit_params(0.5);
  const ControllerSpec ctl = damping(1.0);
  GaussianState a = steady_state(p, 1.0, 0.0);
  GaussianState b = steady_state(p, -0.5, 0.8);
  NoiseStream noise(17);
  const double dt = 1e-3;
  const double d0 = (a.mean() - b.mean()).norm();
  double dq_gap = 0.0;
  for (int i = 0; i < 20000; ++i) {
    // Both filters read the same record, generated from filter a.
    const double dw = noise.wiener(dt);
    const double dq = record_increment(a, p, dt, dw).dq;
    const ControlInput u = control_from_estimate(ctl, a);
    a = innovation_step(a, p, dt, dq, u);
    b = innovation_step(b, p, dt, dq, u);
    dq_gap = (a.mean() - b.mean()).norm();
  }
  CHECK(dq_gap < 1e-6 * d0);
}

TEST_CASE("ensemble statistics") {
  SUBCASE("no noise, no spread") {
    const PhysicalParams p = unit_params(0.0);
    const GaussianState init{0.3, 0.0, 0.5, 0.5, 0.0, 0.0};
    EnsembleOptions opts;
    opts.tail_start = 1.0;
    // Identical trajectories: no spread across the ensemble at any time.
    const EnsembleStats st = run_ensemble(p, {}, init, 2.0, 1e-3, 8, 0, opts);
    CHECK(std::abs(st.final_excess.ve_x) < 1e-12);
    CHECK(std::abs(st.final_excess.ve_p) < 1e-12);
    // The tail estimator pools over time as well, so only a resting mean
    // gives exactly zero there.
    GaussianState rest = init;
    rest.mean_x = 0.0;
    const EnsembleStats still = run_ensemble(p, {}, rest, 2.0, 1e-3, 8, 0, opts);
    CHECK(still.excess.ve_x == 0.0);
    CHECK(still.excess.ve_p == 0.0);
    CHECK(still.excess.ce == 0.0);
  }
  SUBCASE("single trajectory has no standard error") {
    const PhysicalParams p = unit_params(0.5);
    const EnsembleStats st =
        run_ensemble(p, damping(1.0), steady_state(p), 6.0, 1e-3, 1, 3);
    CHECK_FALSE(st.standard_error.has_value());
    CHECK_FALSE(st.cost_standard_error.has_value());
  }
  SUBCASE("results do not depend on the worker count") {
    const PhysicalParams p = unit_params(0.5);
    EnsembleOptions one, four;
    four.jobs = 4;
    const EnsembleStats a =
        run_ensemble(p, damping(1.0), steady_state(p), 8.0, 1e-3, 24, 11, one);
    const EnsembleStats b =
        run_ensemble(p, damping(1.0), steady_state(p), 8.0, 1e-3, 24, 11, four);
    CHECK(a.excess.ve_x == b.excess.ve_x);
    CHECK(a.excess.ce == b.excess.ce);
    CHECK(a.mean_cost.total() == b.mean_cost.total());
    CHECK(a.standard_error->ve_p == b.standard_error->ve_p);
  }
  SUBCASE("cancelling direct feedback leaves no excess") {
    const PhysicalParams p = unit_params(0.5);
    ControllerSpec ctl;
    ctl.mode = FeedbackMode::Direct;
    ctl.cancel_noise = true;
    const EnsembleStats st = run_ensemble(p, ctl, steady_state(p), 10.0, 1e-3, 20, 0);
    CHECK(std::abs(st.excess.ve_x) < 1e-20);
    CHECK(std::abs(st.excess.ve_p) < 1e-20);
  }
  SUBCASE("full damping excess against the closed form") {
    // Gamma = 2, r = 1: Q = 1/4. Moderate ensemble; the full check lives in
    // the acceptance suite.
    const PhysicalParams p = unit_params(0.5);
    const Covariances cond = to_tilde(steady_state_covariances(p), p);
    const ExcessCovariances ref =
        excess_cov_steady_state(cond, 0.25, 1.0, DampingVariant::FullDamping).value;
    const EnsembleStats st =
        run_ensemble(p, damping(2.0), steady_state(p), 30.0, 1e-3, 200, 123);
    CHECK(std::abs(st.excess.ve_x - ref.ve_x) <= 4.0 * st.standard_error->ve_x);
    CHECK(std::abs(st.excess.ve_p - ref.ve_p) <= 4.0 * st.standard_error->ve_p);
    CHECK(std::abs(st.excess.ce - ref.ce) <= 4.0 * st.standard_error->ce);
  }
}

TEST_CASE("run preconditions") {
  const PhysicalParams p = unit_params(0.5);
  ControllerSpec bad = damping(1.0);
  bad.mode = FeedbackMode::Combined;  // no direct gains
  CHECK_THROWS_AS(simulate_trajectory(p, bad, steady_state(p), 1.0, 1e-3, 0),
                  ParameterError);
  ControllerSpec neg = damping(-1.0);
  CHECK_THROWS_AS(neg.validate(), ParameterError);
  const double limit = max_stable_dt(p, damping(1.0), steady_state(p));
  try {
    simulate_trajectory(p, damping(1.0), steady_state(p), 10.0, 2.0 * limit, 0);
    FAIL("expected a step-size rejection");
  } catch (const ParameterError& e) {
    CHECK(e.field() == "dt");
  }
}

TEST_CASE("classical twin") {
  SUBCASE("identical innovations give identical estimates") {
    const PhysicalParams p = unit_params(0.5, 0.6);
    const ControllerSpec ctl = damping(1.5);
    const GaussianState init = thermal_state(p, 2.0, 0.4, -0.2);
    ClassicalTwin twin(0.1, 0.0, init, 77);
    GaussianState quantum = init;
    const double dt = 1e-3;
    for (int i = 0; i < 20000; ++i) {
      twin = classical_twin_step(twin, p, dt, ctl);
      quantum = step_conditioned(quantum, p, dt, twin.last_innovation,
                                 control_from_estimate(ctl, quantum));
      CHECK(twin.estimate.mean_x == doctest::Approx(quantum.mean_x).epsilon(1e-12));
      CHECK(twin.estimate.v_x == quantum.v_x);
    }
  }
  SUBCASE("noise-free twin tracks the truth") {
    const PhysicalParams p = unit_params(0.5);
    const GaussianState init = steady_state(p, 0.7, -0.4);
    ClassicalTwin twin(0.7, -0.4, init, 1);
    for (int i = 0; i < 5000; ++i) {
      twin = classical_twin_step(twin, p, 1e-3, damping(1.0), 0.0, 0.0);
      CHECK(twin.estimate.mean_x == doctest::Approx(twin.x_c).epsilon(1e-12));
      CHECK(twin.estimate.mean_p == doctest::Approx(twin.p_c).epsilon(1e-12));
    }
  }
  SUBCASE("estimation error matches the conditional covariances") {
    for (double eta : {1.0, 0.5}) {
      const PhysicalParams p = unit_params(0.5, eta);
      const Covariances ss = steady_state_covariances(p);
      double exx = 0.0, epp = 0.0, exp = 0.0;
      long count = 0;
      for (int run = 0; run < 100; ++run) {
        ClassicalTwin twin(0.0, 0.0, steady_state(p), 1000 + run);
        for (int i = 0; i < 10000; ++i) {
          twin = classical_twin_step(twin, p, 1e-3, {});
          if (i >= 2000) {
            const double ex = twin.x_c - twin.estimate.mean_x;
            const double ep = twin.p_c - twin.estimate.mean_p;
            exx += ex * ex;
            epp += ep * ep;
            exp += ex * ep;
            ++count;
          }
        }
      }
      CHECK(exx / count == doctest::Approx(ss.v_x).epsilon(0.05));
      CHECK(epp / count == doctest::Approx(ss.v_p).epsilon(0.05));
      CHECK(exp / count == doctest::Approx(ss.c).epsilon(0.05));
    }
  }
  SUBCASE("direct feedback has no classical twin") {
    ControllerSpec ctl;
    ctl.mode = FeedbackMode::Direct;
    ctl.alpha = 1.0;
    const PhysicalParams p = unit_params(0.5);
    ClassicalTwin twin(0.0, 0.0, steady_state(p), 0);
    CHECK_THROWS_AS(classical_twin_step(twin, p, 1e-3, ctl), ParameterError);
  }
}
