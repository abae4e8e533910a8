#pragma once

// Closed-loop simulation of the measured oscillator under estimation
// feedback, direct (record) feedback, or both; excess covariances of the
// conditional means; and the classical Kalman twin.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qfb/gaussian_filter.hpp"
#include "qfb/lqg.hpp"
#include "qfb/model.hpp"
#include "qfb/rng.hpp"

namespace qfb {

enum class FeedbackMode { None, Estimation, Direct, Combined };

/// Estimation feedback applies u = -K (<x>, <p>). Direct feedback adds the
/// Hamiltonian H_D = I(t) (alpha x + beta p) driven by the record current.
struct ControllerSpec {
  FeedbackMode mode = FeedbackMode::None;
  Eigen::Matrix2d k_gain = Eigen::Matrix2d::Zero();
  double alpha = 0.0;
  double beta = 0.0;
  /// Damping rates; when k_gain is zero they define K = diag(gamma_x, gamma_p).
  double gamma_x = 0.0;
  double gamma_p = 0.0;
  /// Direct gains follow (2C, -2V_x) of the current conditional covariances.
  bool cancel_noise = false;

  bool uses_estimation() const {
    return mode == FeedbackMode::Estimation || mode == FeedbackMode::Combined;
  }
  bool uses_direct() const {
    return mode == FeedbackMode::Direct || mode == FeedbackMode::Combined;
  }

  /// The gain actually applied to the estimates (zero unless estimation is
  /// active).
  Eigen::Matrix2d estimation_gain() const;

  /// Throws ParameterError on negative damping, non-finite gains, or
  /// inconsistent gain specifications.
  void validate() const;
};

/// Additional drift on the means from direct feedback (both columns act on
/// <x>, the second column is always zero) and the total diffusion vector of
/// the means.
struct DirectFeedbackTerms {
  Eigen::Matrix2d drift = Eigen::Matrix2d::Zero();
  Eigen::Vector2d diffusion = Eigen::Vector2d::Zero();
};

DirectFeedbackTerms direct_feedback_mean_terms(double alpha, double beta,
                                               const PhysicalParams& params,
                                               const Covariances& cov);

/// Uses the controller's gains, or the cancelling gains when cancel_noise.
DirectFeedbackTerms direct_feedback_mean_terms(const ControllerSpec& controller,
                                               const PhysicalParams& params,
                                               const Covariances& cov);

struct DirectGains {
  double alpha = 0.0;
  double beta = 0.0;
};

/// (alpha, beta) = (2C, -2V_x): removes the noise driving the means.
DirectGains noise_cancelling_gains(const Covariances& cov);

/// Ensemble covariances of the conditional means, tilde-scaled.
struct ExcessCovariances {
  double ve_x = 0.0;
  double ve_p = 0.0;
  double ce = 0.0;
};

/// d/dt of the tilde excess covariances for damping rates (gamma_x, gamma_p)
/// with the conditional covariances `cond` (tilde) held fixed.
ExcessCovariances excess_cov_derivative(const ExcessCovariances& ex,
                                        const Covariances& cond,
                                        double gamma_x, double gamma_p,
                                        double omega, double r);

enum class DampingVariant { FullDamping, PositionOnly };

struct ExcessSteadyState {
  ExcessCovariances value;
  std::optional<std::string> warning;
};

/// Closed-form stationary excess covariances. q_factor is omega/(2 Gamma)
/// for FullDamping and q omega / 2 for PositionOnly; the PositionOnly forms
/// are leading order in small q_factor and carry a warning above 0.1.
ExcessSteadyState excess_cov_steady_state(const Covariances& cond,
                                          double q_factor, double r,
                                          DampingVariant variant);

struct TotalCovariances {
  Covariances tilde;
  double purity = 1.0;
};

/// Conditional plus excess covariances (both tilde) and the purity of the
/// resulting unconditioned state.
TotalCovariances total_covariances(const Covariances& cond,
                                   const ExcessCovariances& ex);

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<GaussianState> states;
  std::vector<double> records;            // dq of the step ending at times[i]
  std::vector<ControlInput> controls;     // u computed from states[i]
  std::vector<CostAccumulator> costs;     // running cost at times[i]
  CostAccumulator cost;
  std::uint64_t seed = 0;
};

/// Largest step simulate_trajectory accepts: 0.1 min(1/omega,
/// 1/(8 eta k V_x^max), 1/closed-loop rate). recommended_dt() is 100x finer.
double max_stable_dt(const PhysicalParams& params,
                     const ControllerSpec& controller,
                     const GaussianState& init);

/// Combined drift matrix of the means: harmonic part, minus B K, plus the
/// direct-feedback drift at covariances `cov`.
Eigen::Matrix2d closed_loop_drift(const PhysicalParams& params,
                                  const ControllerSpec& controller,
                                  const Covariances& cov);

/// One closed-loop step: forms the record increment from dw, updates the
/// conditioned state, and returns the record increment. `u` is the control
/// computed from `state`.
struct LoopStep {
  GaussianState state;
  double dq = 0.0;
};
LoopStep loop_step(const GaussianState& state, const ControlInput& u,
                   const PhysicalParams& params,
                   const ControllerSpec& controller, double dt, double dw);

/// Control computed from a post-measurement estimate.
ControlInput control_from_estimate(const ControllerSpec& controller,
                                   const GaussianState& estimate);

/// Runs one trajectory of floor(horizon/dt) steps. Record index 0 holds the
/// initial state. Deterministic given all inputs and the seed.
TrajectoryRecord simulate_trajectory(const PhysicalParams& params,
                                     const ControllerSpec& controller,
                                     const GaussianState& init, double horizon,
                                     double dt, std::uint64_t seed,
                                     const ControlDesign& cost_weights);

TrajectoryRecord simulate_trajectory(const PhysicalParams& params,
                                     const ControllerSpec& controller,
                                     const GaussianState& init, double horizon,
                                     double dt, std::uint64_t seed);

struct EnsembleOptions {
  unsigned jobs = 1;
  /// Start of the stationary tail; default max(5/Gamma, 5/omega,
  /// covariance settling time).
  std::optional<double> tail_start;
  /// Cost weights; default energy weights with q = 1.
  std::optional<ControlDesign> cost_weights;
};

struct EnsembleStats {
  std::size_t n_traj = 0;
  double tail_start = 0.0;
  double horizon = 0.0;
  /// Tail-pooled ensemble covariances of the conditional means.
  ExcessCovariances excess;   // tilde-scaled
  Covariances excess_raw;     // physical units
  std::optional<ExcessCovariances> standard_error;  // tilde; needs n >= 2
  /// Cross-sectional covariances of the means at the final time.
  ExcessCovariances final_excess;
  double mean_x = 0.0;  // ensemble mean of tail-averaged <x>
  double mean_p = 0.0;
  Covariances conditional;  // conditional covariances at the final time
  CostAccumulator mean_cost;
  std::optional<double> cost_standard_error;
};

/// Runs n_traj independent trajectories with seeds base_seed + index.
/// Statistics are reduced in index order with compensated sums, so results
/// do not depend on `jobs`.
EnsembleStats run_ensemble(const PhysicalParams& params,
                           const ControllerSpec& controller,
                           const GaussianState& init, double horizon,
                           double dt, std::size_t n_traj,
                           std::uint64_t base_seed,
                           const EnsembleOptions& options = {});

/// Default start of the stationary tail for statistics.
double default_tail_start(const PhysicalParams& params,
                          const ControllerSpec& controller,
                          const GaussianState& init, double dt);

/// Classical oscillator whose Kalman filter coincides with the quantum
/// conditional moment equations.
struct ClassicalTwin {
  double x_c = 0.0;
  double p_c = 0.0;
  GaussianState estimate;
  NoiseStream zeta1;  // process noise sqrt(2k) hbar on p_c
  NoiseStream zeta2;  // measurement noise
  double last_record = 0.0;      // classical record increment dQ_c
  double last_innovation = 0.0;  // dW = (dQ_c - 4 eta k <x_c> dt)/sqrt(2 eta k)

  ClassicalTwin(double x, double p, const GaussianState& est,
                std::uint64_t seed)
      : x_c(x),
        p_c(p),
        estimate(est),
        zeta1(splitmix64(seed ^ 0x1111)),
        zeta2(splitmix64(seed ^ 0x2222)) {}
};

/// Advances the twin with freshly drawn noise increments.
ClassicalTwin classical_twin_step(ClassicalTwin twin,
                                  const PhysicalParams& params, double dt,
                                  const ControllerSpec& controller);

/// Advances the twin with explicit noise increments d(zeta1), d(zeta2)
/// (each ~ N(0, dt)).
ClassicalTwin classical_twin_step(ClassicalTwin twin,
                                  const PhysicalParams& params, double dt,
                                  const ControllerSpec& controller,
                                  double dzeta1, double dzeta2);

}  // namespace qfb
