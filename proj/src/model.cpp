#include "qfb/model.hpp"

#include <cmath>

#include "qfb/errors.hpp"

namespace qfb {

namespace {

void require(bool ok, const char* field, const char* message) {
  if (!ok) throw ParameterError(field, message);
}

}  // namespace

void PhysicalParams::validate() const {
  require(std::isfinite(m) && m > 0.0, "m", "mass must be positive");
  require(std::isfinite(omega) && omega >= 0.0, "omega",
          "trap frequency must be non-negative");
  require(std::isfinite(hbar) && hbar > 0.0, "hbar", "hbar must be positive");
  require(std::isfinite(k) && k >= 0.0, "k",
          "measurement constant must be non-negative");
  require(std::isfinite(eta) && eta > 0.0 && eta <= 1.0, "eta",
          "detection efficiency must lie in (0, 1]");
}

void CavitySetup::validate() const {
  require(std::isfinite(gamma) && gamma > 0.0, "gamma",
          "cavity decay rate must be positive");
  require(std::isfinite(omega0) && omega0 > 0.0, "omega0",
          "optical frequency must be positive");
  require(std::isfinite(laser_power) && laser_power >= 0.0, "laser_power",
          "laser power must be non-negative");
  if (kind == CavityKind::Mirror) {
    require(std::isfinite(g_m), "g_m", "mirror coupling must be finite");
  } else {
    require(std::isfinite(g0), "g0", "atom coupling must be finite");
    require(std::isfinite(k0), "k0", "optical wavenumber must be finite");
    require(std::isfinite(delta) && delta != 0.0, "delta",
            "atom-cavity detuning must be non-zero");
  }
}

double intracavity_photon_number(const CavitySetup& setup, double hbar) {
  setup.validate();
  if (!(hbar > 0.0)) throw ParameterError("hbar", "hbar must be positive");
  const double drive = std::sqrt(setup.gamma * setup.laser_power /
                                 (hbar * setup.omega0));
  const double amplitude = 2.0 * drive / setup.gamma;
  return amplitude * amplitude;
}

double measurement_constant(const CavitySetup& setup, double hbar) {
  const double photons = intracavity_photon_number(setup, hbar);
  if (setup.kind == CavityKind::Mirror) {
    return 2.0 * setup.g_m * setup.g_m * photons / setup.gamma;
  }
  const double g0_sq = setup.g0 * setup.g0;
  return 2.0 * setup.k0 * setup.k0 * g0_sq * g0_sq * photons /
         (setup.gamma * setup.delta * setup.delta);
}

RegimeNumbers regime_numbers(const PhysicalParams& params) {
  params.validate();
  if (params.k <= 0.0) {
    throw ParameterError("k", "regime numbers need k > 0");
  }
  if (params.omega <= 0.0) {
    throw ParameterError("omega", "regime numbers need omega > 0");
  }
  RegimeNumbers out;
  out.r = params.m * params.omega * params.omega /
          (2.0 * params.hbar * params.eta * params.k);
  out.xi = std::sqrt(1.0 + 4.0 / (params.eta * out.r * out.r));
  return out;
}

double scale_homodyne_increment(double raw_increment, const CavitySetup& setup,
                                double k) {
  setup.validate();
  if (setup.beta_homodyne == 0.0) {
    throw ParameterError("beta_homodyne", "homodyne gain must be non-zero");
  }
  return raw_increment *
         std::sqrt(2.0 * k / (setup.beta_homodyne * setup.beta_homodyne *
                              setup.gamma));
}

Covariances to_tilde(const Covariances& cov, const PhysicalParams& p) {
  return {2.0 * p.m * p.omega / p.hbar * cov.v_x,
          2.0 / (p.hbar * p.m * p.omega) * cov.v_p, 2.0 / p.hbar * cov.c};
}

Covariances from_tilde(const Covariances& t, const PhysicalParams& p) {
  return {p.hbar / (2.0 * p.m * p.omega) * t.v_x,
          p.hbar * p.m * p.omega / 2.0 * t.v_p, p.hbar / 2.0 * t.c};
}

Covariances ground_covariances(const PhysicalParams& p) {
  if (p.omega <= 0.0) {
    throw ParameterError("omega", "ground state needs omega > 0");
  }
  return from_tilde({1.0, 1.0, 0.0}, p);
}

}  // namespace qfb
