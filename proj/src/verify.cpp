#include "qfb/verify.hpp"

#include <algorithm>
#include <cmath>

#include "qfb/rng.hpp"

namespace qfb {

std::array<double, 5> moment_relative_errors(const FockMoments& f,
                                             const GaussianState& g,
                                             const PhysicalParams& p) {
  const double sx = std::sqrt(p.hbar / (2.0 * p.m * p.omega));
  const double sp = std::sqrt(p.hbar * p.m * p.omega / 2.0);
  auto rel = [](double a, double b, double scale) {
    return std::abs(a - b) / std::max(std::abs(b), scale);
  };
  return {rel(f.mean_x, g.mean_x, sx), rel(f.mean_p, g.mean_p, sp),
          rel(f.v_x, g.v_x, sx * sx), rel(f.v_p, g.v_p, sp * sp),
          rel(f.c, g.c, 0.5 * p.hbar)};
}

OracleComparison compare_with_filter(const SmeIntegrator& integrator,
                                     const GaussianState& init, double dt,
                                     const std::vector<double>& dw,
                                     const ControllerSpec& direct,
                                     std::size_t sample_every) {
  const PhysicalParams& p = integrator.params();
  if (sample_every == 0) sample_every = 1;
  ControllerSpec ctl = direct;
  if (ctl.uses_estimation()) {
    throw ParameterError("mode", "oracle comparison supports direct feedback only");
  }
  ctl.validate();

  FockState rho = gaussian_fock_state(integrator.dim(), p, init);
  GaussianState g = init;
  OracleComparison out;
  out.min_eigenvalue = min_eigenvalue(rho);

  auto record = [&](const FockState& s, const GaussianState& gs) {
    const FockMoments m = integrator.moments(s);
    const auto e = moment_relative_errors(m, gs, p);
    for (int i = 0; i < 5; ++i) {
      out.moment_errors[i] = std::max(out.moment_errors[i], e[i]);
    }
    out.min_eigenvalue = std::min(out.min_eigenvalue, min_eigenvalue(s));
    out.max_leakage = std::max(out.max_leakage, top_population(s));
    out.max_trace_error =
        std::max(out.max_trace_error, std::abs(s.rho.trace().real() - 1.0));
    out.final_purity = m.purity;
  };
  record(rho, g);

  const ControlInput zero = ControlInput::Zero();
  for (std::size_t n = 0; n < dw.size(); ++n) {
    if (ctl.uses_direct()) {
      const DirectGains gains =
          ctl.cancel_noise ? noise_cancelling_gains(g.covariances())
                           : DirectGains{ctl.alpha, ctl.beta};
      const FeedbackGenerator gen =
          integrator.feedback_generator(gains.alpha, gains.beta);
      rho = integrator.step_direct(rho, gen, dt, dw[n]);
    } else {
      rho = integrator.step(rho, dt, dw[n]);
    }
    g = loop_step(g, zero, p, ctl, dt, dw[n]).state;
    if ((n + 1) % sample_every == 0 || n + 1 == dw.size()) record(rho, g);
  }
  out.steps = dw.size();
  out.max_rel_error =
      *std::max_element(out.moment_errors.begin(), out.moment_errors.end());
  return out;
}

std::vector<double> wiener_path(std::uint64_t seed, double dt, std::size_t n) {
  NoiseStream noise(seed);
  std::vector<double> dw(n);
  for (double& w : dw) w = noise.wiener(dt);
  return dw;
}

std::vector<double> coarsen_path(const std::vector<double>& fine) {
  std::vector<double> coarse(fine.size() / 2);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    coarse[i] = fine[2 * i] + fine[2 * i + 1];
  }
  return coarse;
}

OrderCheck order_check(const SmeIntegrator& integrator,
                       const GaussianState& init, double dt, double horizon,
                       std::uint64_t seed, const ControllerSpec& direct) {
  const auto n = static_cast<std::size_t>(std::llround(horizon / dt));
  const std::vector<double> fine = wiener_path(seed, 0.5 * dt, 2 * n);
  const std::vector<double> coarse = coarsen_path(fine);
  OrderCheck oc;
  oc.coarse = compare_with_filter(integrator, init, dt, coarse, direct, 10);
  oc.fine = compare_with_filter(integrator, init, 0.5 * dt, fine, direct, 20);
  oc.ratio = oc.coarse.max_rel_error > 0.0
                 ? oc.fine.max_rel_error / oc.coarse.max_rel_error
                 : 0.0;
  return oc;
}

}  // namespace qfb
