#pragma once

// Conditioned Gaussian state of the position-measured oscillator: the
// quantum analogue of a Kalman filter.

#include <Eigen/Core>

#include "qfb/model.hpp"

namespace qfb {

struct GaussianState {
  double mean_x = 0.0;
  double mean_p = 0.0;
  double v_x = 0.0;
  double v_p = 0.0;
  double c = 0.0;  // symmetrized covariance <xp + px>/2 - <x><p>
  double t = 0.0;

  Covariances covariances() const { return {v_x, v_p, c}; }
  Eigen::Vector2d mean() const { return {mean_x, mean_p}; }
  Eigen::Matrix2d covariance_matrix() const {
    Eigen::Matrix2d v;
    v << v_x, c, c, v_p;
    return v;
  }
};

/// One increment of the scaled record dq = 4 eta k <x> dt + sqrt(2 eta k) dw.
struct RecordIncrement {
  double dq = 0.0;
  double dw = 0.0;
};

/// Force-and-velocity control pair: u_x enters the <x> drift, u_p the <p>
/// drift.
using ControlInput = Eigen::Vector2d;

/// Time derivative of (V_x, V_p, C) for the harmonically trapped particle
/// under continuous position measurement. Independent of the means.
Covariances covariance_derivative(const Covariances& cov,
                                  const PhysicalParams& params);

inline Covariances covariance_derivative(const GaussianState& state,
                                         const PhysicalParams& params) {
  return covariance_derivative(state.covariances(), params);
}

/// Deterministic Euler step of the covariance flow.
Covariances step_covariances(const Covariances& cov,
                             const PhysicalParams& params, double dt);

/// Euler-Maruyama step driven by the Wiener increment dw.
///
/// Throws NumericalError if a variance turns non-positive or the
/// uncertainty relation is violated beyond `uncertainty_tolerance`.
GaussianState step_conditioned(const GaussianState& state,
                               const PhysicalParams& params, double dt,
                               double dw,
                               const ControlInput& u = ControlInput::Zero());

/// The same update written in terms of the measured record increment dq.
GaussianState innovation_step(const GaussianState& state,
                              const PhysicalParams& params, double dt,
                              double dq,
                              const ControlInput& u = ControlInput::Zero());

RecordIncrement record_increment(const GaussianState& state,
                                 const PhysicalParams& params, double dt,
                                 double dw);

/// Fixed point of the covariance flow. Throws ParameterError for k == 0 or
/// omega == 0; use ground_covariances() in the unmeasured case.
Covariances steady_state_covariances(const PhysicalParams& params);

/// Tr[rho^2] = (hbar/2) (v_x v_p - c^2)^(-1/2).
double purity(double v_x, double v_p, double c, double hbar);

inline double purity(const Covariances& cov, double hbar) {
  return purity(cov.v_x, cov.v_p, cov.c, hbar);
}

/// Thermal-like prior with V_x = nbar hbar/(m omega), V_p = nbar hbar m omega.
GaussianState thermal_state(const PhysicalParams& params, double nbar,
                            double mean_x = 0.0, double mean_p = 0.0);

/// Relative slack allowed on v_x v_p - c^2 >= hbar^2/4 after a step of size
/// dt: 10 dt (8 eta k V_x + omega + sqrt(V_p/V_x)/m).
double uncertainty_tolerance(const Covariances& cov,
                             const PhysicalParams& params, double dt);

/// Throws NumericalError when the state violates positivity or the
/// Schroedinger-Robertson bound beyond uncertainty_tolerance().
void check_state(const GaussianState& state, const PhysicalParams& params,
                 double dt);

/// Step-size rule: 1e-3 min(1/omega, 1/(8 eta k V_x^max), 1/gain_rate).
/// Terms that vanish (omega = 0, k = 0, gain_rate = 0) are skipped.
double recommended_dt(const PhysicalParams& params, double v_x_max,
                      double gain_rate = 0.0);

/// Integrates the covariance flow for `duration` with classical RK4 using
/// steps no larger than `max_step` and shrinking with the local stiffness.
Covariances integrate_covariances(const Covariances& cov,
                                  const PhysicalParams& params,
                                  double duration, double max_step = 1e-2);

/// Runs the covariance flow until the relative derivative falls below
/// `tolerance` (per unit time scale 1/rate) or `max_time` elapses.
Covariances relax_covariances(const Covariances& cov,
                              const PhysicalParams& params,
                              double tolerance = 1e-14,
                              double max_time = 1e4);

}  // namespace qfb
