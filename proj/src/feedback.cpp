#include "qfb/feedback.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "qfb/errors.hpp"

namespace qfb {

namespace {

bool finite(const Eigen::Matrix2d& m) { return m.allFinite(); }

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double value) {
    const double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      comp_ += (sum_ - t) + value;
    } else {
      comp_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double spectral_radius(const Eigen::Matrix2d& m) {
  Eigen::EigenSolver<Eigen::Matrix2d> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

Eigen::Matrix2d ControllerSpec::estimation_gain() const {
  if (!uses_estimation()) return Eigen::Matrix2d::Zero();
  if (!k_gain.isZero(0.0)) return k_gain;
  return Eigen::Vector2d(gamma_x, gamma_p).asDiagonal();
}

void ControllerSpec::validate() const {
  if (!std::isfinite(gamma_x) || gamma_x < 0.0) {
    throw ParameterError("gamma_x", "damping rate must be non-negative");
  }
  if (!std::isfinite(gamma_p) || gamma_p < 0.0) {
    throw ParameterError("gamma_p", "damping rate must be non-negative");
  }
  if (!finite(k_gain)) throw ParameterError("k_gain", "gain must be finite");
  if (!std::isfinite(alpha)) throw ParameterError("alpha", "must be finite");
  if (!std::isfinite(beta)) throw ParameterError("beta", "must be finite");

  if (uses_estimation() && !k_gain.isZero(0.0) &&
      (gamma_x != 0.0 || gamma_p != 0.0)) {
    const double tol = 1e-12 * std::max(1.0, k_gain.cwiseAbs().maxCoeff());
    if (std::abs(k_gain(0, 0) - gamma_x) > tol ||
        std::abs(k_gain(1, 1) - gamma_p) > tol) {
      throw ParameterError("gamma_x",
                           "damping rates disagree with the diagonal of k_gain");
    }
  }
  if (uses_direct() && cancel_noise && (alpha != 0.0 || beta != 0.0)) {
    throw ParameterError("alpha",
                         "explicit direct gains conflict with cancel_noise");
  }
  if (mode == FeedbackMode::Combined) {
    if (estimation_gain().isZero(0.0)) {
      throw ParameterError("k_gain", "combined mode needs an estimation gain");
    }
    if (!cancel_noise && alpha == 0.0 && beta == 0.0) {
      throw ParameterError("alpha", "combined mode needs direct gains");
    }
  }
}

DirectFeedbackTerms direct_feedback_mean_terms(double alpha, double beta,
                                               const PhysicalParams& p,
                                               const Covariances& cov) {
  DirectFeedbackTerms out;
  const double rate = 4.0 * p.eta * p.k;
  out.drift(0, 0) = rate * beta;
  out.drift(1, 0) = -rate * alpha;
  const double amp = std::sqrt(2.0 * p.eta * p.k);
  out.diffusion << amp * (2.0 * cov.v_x + beta), amp * (2.0 * cov.c - alpha);
  return out;
}

DirectFeedbackTerms direct_feedback_mean_terms(const ControllerSpec& controller,
                                               const PhysicalParams& p,
                                               const Covariances& cov) {
  if (!controller.uses_direct()) {
    return direct_feedback_mean_terms(0.0, 0.0, p, cov);
  }
  if (controller.cancel_noise) {
    const DirectGains g = noise_cancelling_gains(cov);
    return direct_feedback_mean_terms(g.alpha, g.beta, p, cov);
  }
  return direct_feedback_mean_terms(controller.alpha, controller.beta, p, cov);
}

DirectGains noise_cancelling_gains(const Covariances& cov) {
  return {2.0 * cov.c, -2.0 * cov.v_x};
}

ExcessCovariances excess_cov_derivative(const ExcessCovariances& ex,
                                        const Covariances& cond,
                                        double gamma_x, double gamma_p,
                                        double omega, double r) {
  if (!(r > 0.0)) throw ParameterError("r", "r must be positive");
  const double source = 2.0 * omega / r;
  return {-2.0 * gamma_x * ex.ve_x + 2.0 * omega * ex.ce +
              source * cond.v_x * cond.v_x,
          -2.0 * gamma_p * ex.ve_p - 2.0 * omega * ex.ce +
              source * cond.c * cond.c,
          -(gamma_x + gamma_p) * ex.ce - omega * (ex.ve_x - ex.ve_p) +
              source * cond.c * cond.v_x};
}

ExcessSteadyState excess_cov_steady_state(const Covariances& cond,
                                          double q_factor, double r,
                                          DampingVariant variant) {
  if (!(q_factor >= 0.0) || !std::isfinite(q_factor)) {
    throw ParameterError("q_factor", "quality factor must be non-negative");
  }
  if (!(r > 0.0)) throw ParameterError("r", "r must be positive");
  const double vx = cond.v_x;
  const double c = cond.c;
  const double q = q_factor;
  ExcessSteadyState out;
  if (variant == DampingVariant::FullDamping) {
    const double pre = 2.0 * q / (r * (1.0 + 4.0 * q * q));
    const double a = 1.0 + 2.0 * q * q;
    out.value.ve_x = pre * (a * vx * vx + 2.0 * q * q * c * c + 2.0 * q * c * vx);
    out.value.ve_p = pre * (2.0 * q * q * vx * vx + a * c * c - 2.0 * q * c * vx);
    out.value.ce = pre * (-q * vx * vx + q * c * c + c * vx);
    return out;
  }
  out.value.ve_x = (vx * vx + 4.0 * q * q * c * c + 4.0 * q * c * vx) / r;
  out.value.ve_p = (vx * vx + 2.0 * q * c * c) / r;
  out.value.ce = -vx * vx / r;
  if (q > 0.1) {
    out.warning =
        "position-only closed forms are leading order in q omega / 2; "
        "q_factor > 0.1 is outside their range of validity";
  }
  return out;
}

TotalCovariances total_covariances(const Covariances& cond,
                                   const ExcessCovariances& ex) {
  TotalCovariances out;
  out.tilde = {cond.v_x + ex.ve_x, cond.v_p + ex.ve_p, cond.c + ex.ce};
  // In tilde units the ground state has unit determinant.
  out.purity = purity(out.tilde, 2.0);
  return out;
}

Eigen::Matrix2d closed_loop_drift(const PhysicalParams& params,
                                  const ControllerSpec& controller,
                                  const Covariances& cov) {
  return harmonic_drift(params) - controller.estimation_gain() +
         direct_feedback_mean_terms(controller, params, cov).drift;
}

double max_stable_dt(const PhysicalParams& params,
                     const ControllerSpec& controller,
                     const GaussianState& init) {
  std::vector<Covariances> probes{init.covariances()};
  double v_x_max = init.v_x;
  if (params.k > 0.0 && params.omega > 0.0) {
    const Covariances ss = steady_state_covariances(params);
    probes.push_back(ss);
    v_x_max = std::max(v_x_max, ss.v_x);
  }
  double gain_rate = 0.0;
  for (const Covariances& cov : probes) {
    gain_rate = std::max(
        gain_rate, spectral_radius(closed_loop_drift(params, controller, cov)));
  }
  return 100.0 * recommended_dt(params, v_x_max, gain_rate);
}

ControlInput control_from_estimate(const ControllerSpec& controller,
                                   const GaussianState& estimate) {
  if (!controller.uses_estimation()) return ControlInput::Zero();
  return -controller.estimation_gain() * estimate.mean();
}

LoopStep loop_step(const GaussianState& state, const ControlInput& u,
                   const PhysicalParams& params,
                   const ControllerSpec& controller, double dt, double dw) {
  LoopStep out;
  out.dq = record_increment(state, params, dt, dw).dq;
  if (!controller.uses_direct()) {
    out.state = innovation_step(state, params, dt, out.dq, u);
    return out;
  }
  const Covariances cov = state.covariances();
  const DirectFeedbackTerms terms =
      direct_feedback_mean_terms(controller, params, cov);
  const Eigen::Vector2d mean = state.mean();
  const Eigen::Vector2d drift =
      (harmonic_drift(params) + terms.drift) * mean + u;
  const Eigen::Vector2d next = mean + drift * dt + terms.diffusion * dw;
  const Covariances next_cov = step_covariances(cov, params, dt);
  out.state = {next.x(), next.y(), next_cov.v_x, next_cov.v_p, next_cov.c,
               state.t + dt};
  check_state(out.state, params, dt);
  return out;
}

namespace {

std::int64_t step_count(double horizon, double dt) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ParameterError("horizon", "horizon must be positive");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ParameterError("dt", "time step must be positive");
  }
  const auto n = static_cast<std::int64_t>(std::floor(horizon / dt + 1e-9));
  if (n < 1) throw ParameterError("dt", "time step exceeds the horizon");
  return n;
}

void validate_run(const PhysicalParams& params,
                  const ControllerSpec& controller, const GaussianState& init,
                  double dt) {
  params.validate();
  controller.validate();
  check_state(init, params, 0.0);
  const double limit = max_stable_dt(params, controller, init);
  if (dt > limit * (1.0 + 1e-12)) {
    throw ParameterError("dt", "time step " + std::to_string(dt) +
                                   " exceeds the stability limit " +
                                   std::to_string(limit));
  }
}

ControlDesign default_cost_weights(const PhysicalParams& params) {
  ControlDesign d;
  d.a = harmonic_drift(params);
  d.p_weight = energy_weight(params);
  d.q_weight = energy_weight(params);
  d.q_scalar = 1.0;
  return d;
}

}  // namespace

TrajectoryRecord simulate_trajectory(const PhysicalParams& params,
                                     const ControllerSpec& controller,
                                     const GaussianState& init, double horizon,
                                     double dt, std::uint64_t seed,
                                     const ControlDesign& weights) {
  const std::int64_t n = step_count(horizon, dt);
  validate_run(params, controller, init, dt);

  TrajectoryRecord rec;
  rec.seed = seed;
  const auto size = static_cast<std::size_t>(n + 1);
  rec.times.reserve(size);
  rec.states.reserve(size);
  rec.records.reserve(size);
  rec.controls.reserve(size);
  rec.costs.reserve(size);

  NoiseStream noise(seed);
  GaussianState state = init;
  ControlInput u = control_from_estimate(controller, state);
  rec.times.push_back(init.t);
  rec.states.push_back(state);
  rec.records.push_back(0.0);
  rec.controls.push_back(u);
  rec.costs.push_back(rec.cost);

  for (std::int64_t i = 1; i <= n; ++i) {
    const double dw = noise.wiener(dt);
    rec.cost += cost_increment(state, u, weights, dt);
    LoopStep step;
    try {
      step = loop_step(state, u, params, controller, dt, dw);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (step " +
                               std::to_string(i) + ")",
                           i);
    }
    state = step.state;
    state.t = init.t + static_cast<double>(i) * dt;
    u = control_from_estimate(controller, state);
    rec.times.push_back(state.t);
    rec.states.push_back(state);
    rec.records.push_back(step.dq);
    rec.controls.push_back(u);
    rec.costs.push_back(rec.cost);
  }
  return rec;
}

TrajectoryRecord simulate_trajectory(const PhysicalParams& params,
                                     const ControllerSpec& controller,
                                     const GaussianState& init, double horizon,
                                     double dt, std::uint64_t seed) {
  return simulate_trajectory(params, controller, init, horizon, dt, seed,
                             default_cost_weights(params));
}

double default_tail_start(const PhysicalParams& params,
                          const ControllerSpec& controller,
                          const GaussianState& init, double dt) {
  double start = 0.0;
  if (params.omega > 0.0) start = std::max(start, 5.0 / params.omega);
  Covariances cov = init.covariances();
  if (params.k > 0.0 && params.omega > 0.0) {
    const Covariances ss = steady_state_covariances(params);
    // Settling time of the deterministic covariance flow.
    double t = 0.0;
    const double limit = 1e7 * dt;
    auto far = [&](const Covariances& c) {
      return std::abs(c.v_x - ss.v_x) > 1e-3 * ss.v_x ||
             std::abs(c.v_p - ss.v_p) > 1e-3 * ss.v_p ||
             std::abs(c.c - ss.c) > 1e-3 * std::sqrt(ss.v_x * ss.v_p);
    };
    while (far(cov) && t < limit) {
      cov = step_covariances(cov, params, dt);
      t += dt;
    }
    start = std::max(start, t);
    cov = ss;
  }
  Eigen::EigenSolver<Eigen::Matrix2d> es(
      closed_loop_drift(params, controller, cov), false);
  const double damping = -es.eigenvalues().real().maxCoeff();
  if (damping > 0.0) start = std::max(start, 5.0 / damping);
  return start;
}

namespace {

struct TrajectorySummary {
  double sx = 0.0, sp = 0.0, sxx = 0.0, spp = 0.0, sxp = 0.0;  // tail means
  double final_x = 0.0, final_p = 0.0;
  Covariances final_cov;
  CostAccumulator cost;
};

TrajectorySummary run_one(const PhysicalParams& params,
                          const ControllerSpec& controller,
                          const GaussianState& init, std::int64_t n_steps,
                          std::int64_t tail_index, double dt,
                          std::uint64_t seed, const ControlDesign& weights) {
  NoiseStream noise(seed);
  GaussianState state = init;
  ControlInput u = control_from_estimate(controller, state);
  TrajectorySummary s;
  CompensatedSum sx, sp, sxx, spp, sxp;
  std::int64_t count = 0;
  auto sample = [&](const GaussianState& g) {
    sx.add(g.mean_x);
    sp.add(g.mean_p);
    sxx.add(g.mean_x * g.mean_x);
    spp.add(g.mean_p * g.mean_p);
    sxp.add(g.mean_x * g.mean_p);
    ++count;
  };
  if (tail_index == 0) sample(state);
  for (std::int64_t i = 1; i <= n_steps; ++i) {
    const double dw = noise.wiener(dt);
    s.cost += cost_increment(state, u, weights, dt);
    try {
      state = loop_step(state, u, params, controller, dt, dw).state;
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (step " +
                               std::to_string(i) + ", seed " +
                               std::to_string(seed) + ")",
                           i);
    }
    u = control_from_estimate(controller, state);
    if (i >= tail_index) sample(state);
  }
  const double inv = 1.0 / static_cast<double>(count);
  s.sx = sx.value() * inv;
  s.sp = sp.value() * inv;
  s.sxx = sxx.value() * inv;
  s.spp = spp.value() * inv;
  s.sxp = sxp.value() * inv;
  s.final_x = state.mean_x;
  s.final_p = state.mean_p;
  s.final_cov = state.covariances();
  return s;
}

ExcessCovariances tilde_excess(const Covariances& raw, const PhysicalParams& p) {
  if (!(p.omega > 0.0)) return {raw.v_x, raw.v_p, raw.c};
  const Covariances t = to_tilde(raw, p);
  return {t.v_x, t.v_p, t.c};
}

}  // namespace

EnsembleStats run_ensemble(const PhysicalParams& params,
                           const ControllerSpec& controller,
                           const GaussianState& init, double horizon,
                           double dt, std::size_t n_traj,
                           std::uint64_t base_seed,
                           const EnsembleOptions& options) {
  if (n_traj < 1) throw ParameterError("n_traj", "need at least one trajectory");
  const std::int64_t n_steps = step_count(horizon, dt);
  validate_run(params, controller, init, dt);
  const double tail_start = options.tail_start.value_or(
      default_tail_start(params, controller, init, dt));
  if (!(tail_start >= 0.0)) {
    throw ParameterError("tail_start", "must be non-negative");
  }
  const auto tail_index =
      static_cast<std::int64_t>(std::ceil(tail_start / dt - 1e-9));
  if (tail_index > n_steps) {
    throw ParameterError("horizon",
                         "horizon ends before the stationary tail starts at t=" +
                             std::to_string(tail_start));
  }
  const ControlDesign weights =
      options.cost_weights.value_or(default_cost_weights(params));

  std::vector<TrajectorySummary> results(n_traj);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_traj) return;
      try {
        results[i] = run_one(params, controller, init, n_steps, tail_index, dt,
                             trajectory_seed(base_seed, i), weights);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_traj);
        return;
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(
                                         options.jobs,
                                         static_cast<unsigned>(n_traj)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Reduction in index order.
  CompensatedSum mx, mp, mxx, mpp, mxp, fx, fp, fxx, fpp, fxp;
  CompensatedSum cs, cc, cf, ct, ct2;
  CompensatedSum qxx, qpp, qxp;  // squares of per-trajectory tail moments
  for (const TrajectorySummary& s : results) {
    mx.add(s.sx);
    mp.add(s.sp);
    mxx.add(s.sxx);
    mpp.add(s.spp);
    mxp.add(s.sxp);
    qxx.add(s.sxx * s.sxx);
    qpp.add(s.spp * s.spp);
    qxp.add(s.sxp * s.sxp);
    fx.add(s.final_x);
    fp.add(s.final_p);
    fxx.add(s.final_x * s.final_x);
    fpp.add(s.final_p * s.final_p);
    fxp.add(s.final_x * s.final_p);
    cs.add(s.cost.j_state);
    cc.add(s.cost.j_control);
    cf.add(s.cost.j_floor);
    ct.add(s.cost.total());
    ct2.add(s.cost.total() * s.cost.total());
  }
  const double n = static_cast<double>(n_traj);
  EnsembleStats out;
  out.n_traj = n_traj;
  out.tail_start = tail_start;
  out.horizon = static_cast<double>(n_steps) * dt;
  out.mean_x = mx.value() / n;
  out.mean_p = mp.value() / n;
  out.excess_raw = {mxx.value() / n - out.mean_x * out.mean_x,
                    mpp.value() / n - out.mean_p * out.mean_p,
                    mxp.value() / n - out.mean_x * out.mean_p};
  out.excess = tilde_excess(out.excess_raw, params);
  const double fmx = fx.value() / n;
  const double fmp = fp.value() / n;
  out.final_excess = tilde_excess({fxx.value() / n - fmx * fmx,
                                   fpp.value() / n - fmp * fmp,
                                   fxp.value() / n - fmx * fmp},
                                  params);
  out.conditional = results.back().final_cov;
  out.mean_cost = {cs.value() / n, cc.value() / n, cf.value() / n};
  if (n_traj >= 2) {
    auto se = [&](const CompensatedSum& sq, const CompensatedSum& s) {
      const double mean = s.value() / n;
      const double var = std::max(0.0, (sq.value() / n - mean * mean) * n / (n - 1.0));
      return std::sqrt(var / n);
    };
    const Covariances se_raw{se(qxx, mxx), se(qpp, mpp), se(qxp, mxp)};
    ExcessCovariances se_t = tilde_excess(se_raw, params);
    out.standard_error = ExcessCovariances{std::abs(se_t.ve_x),
                                           std::abs(se_t.ve_p),
                                           std::abs(se_t.ce)};
    out.cost_standard_error = se(ct2, ct);
  }
  return out;
}

ClassicalTwin classical_twin_step(ClassicalTwin twin,
                                  const PhysicalParams& params, double dt,
                                  const ControllerSpec& controller) {
  const double dz1 = twin.zeta1.wiener(dt);
  const double dz2 = twin.zeta2.wiener(dt);
  return classical_twin_step(std::move(twin), params, dt, controller, dz1, dz2);
}

ClassicalTwin classical_twin_step(ClassicalTwin twin,
                                  const PhysicalParams& p, double dt,
                                  const ControllerSpec& controller,
                                  double dzeta1, double dzeta2) {
  if (controller.uses_direct()) {
    throw ParameterError("mode", "the classical twin models estimation feedback only");
  }
  const ControlInput u = control_from_estimate(controller, twin.estimate);
  const double amp = std::sqrt(2.0 * p.eta * p.k);
  const double dq = 4.0 * p.eta * p.k * twin.x_c * dt + amp * dzeta2;
  twin.last_record = dq;
  twin.last_innovation =
      amp > 0.0 ? (dq - 4.0 * p.eta * p.k * twin.estimate.mean_x * dt) / amp
                : 0.0;
  twin.estimate = innovation_step(twin.estimate, p, dt, dq, u);
  const double x = twin.x_c;
  twin.x_c = x + (twin.p_c / p.m + u.x()) * dt;
  // Momentum diffusion 2k hbar^2 matches the backaction term of the quantum
  // covariance flow for any eta (the two agree with sqrt(2 eta k) at eta = 1).
  twin.p_c = twin.p_c + (-p.m * p.omega * p.omega * x + u.y()) * dt +
             std::sqrt(2.0 * p.k) * p.hbar * dzeta1;
  return twin;
}

}  // namespace qfb
