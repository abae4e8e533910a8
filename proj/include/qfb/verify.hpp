#pragma once

// Cross-representation comparison: the number-basis master equation against
// the Gaussian moment equations on a shared noise path.

#include <array>
#include <cstdint>
#include <vector>

#include "qfb/feedback.hpp"
#include "qfb/fock.hpp"

namespace qfb {

struct OracleComparison {
  /// Max over time and moment of |fock - gaussian| / max(|gaussian|, scale),
  /// with ground-state widths as the scales for quantities that cross zero.
  double max_rel_error = 0.0;
  /// Order: mean_x, mean_p, v_x, v_p, c.
  std::array<double, 5> moment_errors{};
  double min_eigenvalue = 0.0;  // over sampled steps
  double max_leakage = 0.0;
  double max_trace_error = 0.0;
  double final_purity = 1.0;
  std::size_t steps = 0;
};

/// Relative error of `fock` moments against `gaussian`, per moment.
std::array<double, 5> moment_relative_errors(const FockMoments& fock,
                                             const GaussianState& gaussian,
                                             const PhysicalParams& params);

/// Runs both representations on the increments `dw` (one per step) from the
/// Gaussian initial state `init`. Direct feedback uses constant (alpha, beta)
/// or, with cancel_noise, gains following the filter covariances.
OracleComparison compare_with_filter(const SmeIntegrator& integrator,
                                     const GaussianState& init, double dt,
                                     const std::vector<double>& dw,
                                     const ControllerSpec& direct = {},
                                     std::size_t sample_every = 1);

/// Wiener increments at step dt/2^levels, and the same path coarsened to dt.
std::vector<double> wiener_path(std::uint64_t seed, double dt, std::size_t n);
std::vector<double> coarsen_path(const std::vector<double>& fine);

struct OrderCheck {
  OracleComparison coarse;   // step dt
  OracleComparison fine;     // step dt/2, same Brownian path
  double ratio = 0.0;        // fine.max_rel_error / coarse.max_rel_error
};

/// Runs the comparison at dt and dt/2 on one Brownian path.
OrderCheck order_check(const SmeIntegrator& integrator,
                       const GaussianState& init, double dt, double horizon,
                       std::uint64_t seed, const ControllerSpec& direct = {});

}  // namespace qfb
