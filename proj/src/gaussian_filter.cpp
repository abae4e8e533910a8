#include "qfb/gaussian_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qfb/errors.hpp"

namespace qfb {

Covariances covariance_derivative(const Covariances& cov,
                                  const PhysicalParams& p) {
  const double gain = 8.0 * p.k * p.eta;
  const double mw2 = p.m * p.omega * p.omega;
  return {2.0 * cov.c / p.m - gain * cov.v_x * cov.v_x,
          -2.0 * mw2 * cov.c - gain * cov.c * cov.c + 2.0 * p.k * p.hbar * p.hbar,
          cov.v_p / p.m - mw2 * cov.v_x - gain * cov.c * cov.v_x};
}

Covariances step_covariances(const Covariances& cov, const PhysicalParams& p,
                             double dt) {
  const Covariances d = covariance_derivative(cov, p);
  return {cov.v_x + d.v_x * dt, cov.v_p + d.v_p * dt, cov.c + d.c * dt};
}

namespace {

void require_dt(double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ParameterError("dt", "time step must be positive and finite");
  }
}

GaussianState advance(const GaussianState& s, const PhysicalParams& p,
                      double dt, double dx, double dp) {
  GaussianState out;
  out.mean_x = s.mean_x + dx;
  out.mean_p = s.mean_p + dp;
  const Covariances cov = step_covariances(s.covariances(), p, dt);
  out.v_x = cov.v_x;
  out.v_p = cov.v_p;
  out.c = cov.c;
  out.t = s.t + dt;
  check_state(out, p, dt);
  return out;
}

}  // namespace

GaussianState step_conditioned(const GaussianState& s, const PhysicalParams& p,
                               double dt, double dw, const ControlInput& u) {
  require_dt(dt);
  const double kick = 2.0 * std::sqrt(2.0 * p.eta * p.k) * dw;
  const double dx = (s.mean_p / p.m + u.x()) * dt + kick * s.v_x;
  const double dp =
      (-p.m * p.omega * p.omega * s.mean_x + u.y()) * dt + kick * s.c;
  return advance(s, p, dt, dx, dp);
}

GaussianState innovation_step(const GaussianState& s, const PhysicalParams& p,
                              double dt, double dq, const ControlInput& u) {
  require_dt(dt);
  const double correction = 8.0 * p.eta * p.k * s.mean_x * dt;
  const double dx = (s.mean_p / p.m + u.x()) * dt - correction * s.v_x +
                    2.0 * s.v_x * dq;
  const double dp = (-p.m * p.omega * p.omega * s.mean_x + u.y()) * dt -
                    correction * s.c + 2.0 * s.c * dq;
  return advance(s, p, dt, dx, dp);
}

RecordIncrement record_increment(const GaussianState& s,
                                 const PhysicalParams& p, double dt,
                                 double dw) {
  require_dt(dt);
  return {4.0 * p.eta * p.k * s.mean_x * dt + std::sqrt(2.0 * p.eta * p.k) * dw,
          dw};
}

Covariances steady_state_covariances(const PhysicalParams& p) {
  const RegimeNumbers rn = regime_numbers(p);
  const double root = std::sqrt(rn.xi + 1.0);
  const double sqrt_2eta = std::sqrt(2.0 * p.eta);
  // xi - 1 without cancellation in the weak-measurement regime.
  const double xi_minus_1 = 4.0 / (p.eta * rn.r * rn.r) / (rn.xi + 1.0);
  return {p.hbar / (sqrt_2eta * p.m * p.omega) / root,
          p.hbar * p.m * p.omega / sqrt_2eta * rn.xi / root,
          p.hbar / (2.0 * std::sqrt(p.eta)) * std::sqrt(xi_minus_1) / root};
}

double purity(double v_x, double v_p, double c, double hbar) {
  const double det = v_x * v_p - c * c;
  if (!(det > 0.0)) {
    throw ParameterError("covariances",
                         "v_x v_p - c^2 must be positive for a valid state");
  }
  return 0.5 * hbar / std::sqrt(det);
}

GaussianState thermal_state(const PhysicalParams& p, double nbar,
                            double mean_x, double mean_p) {
  if (!(nbar > 0.0)) throw ParameterError("nbar", "nbar must be positive");
  if (!(p.omega > 0.0)) {
    throw ParameterError("omega", "thermal prior needs omega > 0");
  }
  GaussianState s;
  s.mean_x = mean_x;
  s.mean_p = mean_p;
  s.v_x = nbar * p.hbar / (p.m * p.omega);
  s.v_p = nbar * p.hbar * p.m * p.omega;
  s.c = 0.0;
  return s;
}

double uncertainty_tolerance(const Covariances& cov, const PhysicalParams& p,
                             double dt) {
  const double rate = 8.0 * p.eta * p.k * cov.v_x + p.omega +
                      std::sqrt(std::max(cov.v_p, 0.0) / cov.v_x) / p.m;
  return 10.0 * dt * rate;
}

void check_state(const GaussianState& s, const PhysicalParams& p, double dt) {
  if (!(s.v_x > 0.0) || !(s.v_p > 0.0) || !std::isfinite(s.c) ||
      !std::isfinite(s.mean_x) || !std::isfinite(s.mean_p)) {
    throw NumericalError(
        "non-positive or non-finite variance after step at t=" +
        std::to_string(s.t) + "; reduce dt");
  }
  const double bound = 0.25 * p.hbar * p.hbar;
  const double det = s.v_x * s.v_p - s.c * s.c;
  const double tol = uncertainty_tolerance(s.covariances(), p, dt);
  // Round-off slack so exactly pure states pass with dt = 0.
  constexpr double kRoundoff = 64.0 * std::numeric_limits<double>::epsilon();
  if (det < bound * (1.0 - tol - kRoundoff)) {
    throw NumericalError("uncertainty relation violated at t=" +
                         std::to_string(s.t) + " (v_x v_p - c^2 = " +
                         std::to_string(det) + "); reduce dt");
  }
}

double recommended_dt(const PhysicalParams& p, double v_x_max,
                      double gain_rate) {
  double shortest = std::numeric_limits<double>::infinity();
  if (p.omega > 0.0) shortest = std::min(shortest, 1.0 / p.omega);
  const double meas_rate = 8.0 * p.eta * p.k * v_x_max;
  if (meas_rate > 0.0) shortest = std::min(shortest, 1.0 / meas_rate);
  if (gain_rate > 0.0) shortest = std::min(shortest, 1.0 / gain_rate);
  if (!std::isfinite(shortest)) return std::numeric_limits<double>::infinity();
  return 1e-3 * shortest;
}

namespace {

double stiffness(const Covariances& c, const PhysicalParams& p) {
  const double g = 8.0 * p.eta * p.k;
  return g * (c.v_x + c.c * c.c / c.v_p + std::abs(c.c)) + p.omega +
         std::sqrt(c.v_p / c.v_x) / p.m;
}

Covariances axpy(const Covariances& a, double h, const Covariances& d) {
  return {a.v_x + h * d.v_x, a.v_p + h * d.v_p, a.c + h * d.c};
}

Covariances rk4(const Covariances& y, const PhysicalParams& p, double h) {
  const Covariances k1 = covariance_derivative(y, p);
  const Covariances k2 = covariance_derivative(axpy(y, 0.5 * h, k1), p);
  const Covariances k3 = covariance_derivative(axpy(y, 0.5 * h, k2), p);
  const Covariances k4 = covariance_derivative(axpy(y, h, k3), p);
  return {y.v_x + h / 6.0 * (k1.v_x + 2.0 * k2.v_x + 2.0 * k3.v_x + k4.v_x),
          y.v_p + h / 6.0 * (k1.v_p + 2.0 * k2.v_p + 2.0 * k3.v_p + k4.v_p),
          y.c + h / 6.0 * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c)};
}

}  // namespace

Covariances integrate_covariances(const Covariances& cov,
                                  const PhysicalParams& p, double duration,
                                  double max_step) {
  p.validate();
  Covariances y = cov;
  double elapsed = 0.0;
  while (elapsed < duration) {
    double h = std::min(max_step, 0.05 / stiffness(y, p));
    h = std::min(h, duration - elapsed);
    y = rk4(y, p, h);
    elapsed += h;
    if (!(y.v_x > 0.0) || !(y.v_p > 0.0)) {
      throw NumericalError("covariance integration lost positivity");
    }
  }
  return y;
}

Covariances relax_covariances(const Covariances& cov, const PhysicalParams& p,
                              double tolerance, double max_time) {
  p.validate();
  Covariances y = cov;
  double elapsed = 0.0;
  while (elapsed < max_time) {
    const double rate = stiffness(y, p);
    const Covariances d = covariance_derivative(y, p);
    const double residual = (std::abs(d.v_x) / y.v_x + std::abs(d.v_p) / y.v_p +
                             std::abs(d.c) / std::sqrt(y.v_x * y.v_p)) /
                            rate;
    if (residual < tolerance) return y;
    const double chunk = 1.0 / rate;
    y = integrate_covariances(y, p, chunk);
    elapsed += chunk;
  }
  return y;
}

}  // namespace qfb
