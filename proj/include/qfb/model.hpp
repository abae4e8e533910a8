#pragma once

// Physical parameters of the position-measured oscillator and the conversion
// from cavity drive parameters to the measurement constant k.

namespace qfb {

/// Oscillator and measurement constants. Values carry units; nothing in the
/// library assumes hbar = m = omega = 1.
struct PhysicalParams {
  double m = 1.0;      // mass
  double omega = 1.0;  // trap angular frequency
  double hbar = 1.0;   // action quantum
  double k = 0.0;      // measurement constant, 1/(length^2 time)
  double eta = 1.0;    // detection efficiency in (0, 1]

  /// Throws ParameterError naming the first invalid field.
  void validate() const;
};

enum class CavityKind { Mirror, Atom };

/// Experimental cavity parameters. Mirror uses g_m; Atom uses g0, k0, delta.
struct CavitySetup {
  CavityKind kind = CavityKind::Mirror;
  double gamma = 1.0;        // cavity decay rate
  double omega0 = 1.0;       // optical mode frequency
  double laser_power = 0.0;  // drive power
  double g_m = 0.0;          // optomechanical coupling omega0 / L
  double g0 = 0.0;           // cavity-QED coupling
  double k0 = 0.0;           // optical wavenumber
  double delta = 0.0;        // atom-cavity detuning
  double beta_homodyne = 1.0;

  void validate() const;
};

/// Dimensionless measurement strength r = m omega^2 / (2 hbar eta k) and the
/// squeezing parameter xi = sqrt(1 + 4 / (eta r^2)).
struct RegimeNumbers {
  double r = 0.0;
  double xi = 1.0;
};

/// Mean intracavity photon number |alpha|^2 = (2E/gamma)^2 with
/// E = sqrt(gamma P / (hbar omega0)).
double intracavity_photon_number(const CavitySetup& setup, double hbar);

/// k_mirror = 2 g_m^2 |alpha|^2 / gamma, k_atom = 2 k0^2 g0^4 |alpha|^2 /
/// (gamma delta^2).
double measurement_constant(const CavitySetup& setup, double hbar);

/// Throws ParameterError when k == 0 or omega == 0 (r is then undefined).
RegimeNumbers regime_numbers(const PhysicalParams& params);

/// Rescales a raw homodyne increment dQ~ to the record dQ = 4 eta k <x> dt +
/// sqrt(2 eta k) dW used everywhere else.
double scale_homodyne_increment(double raw_increment, const CavitySetup& setup,
                                double k);

/// Tilde scaling to dimensionless covariances: the ground state maps to
/// (1, 1, 0).
struct Covariances {
  double v_x = 0.0;
  double v_p = 0.0;
  double c = 0.0;
};

Covariances to_tilde(const Covariances& cov, const PhysicalParams& params);
Covariances from_tilde(const Covariances& tilde, const PhysicalParams& params);

/// Ground-state covariances (hbar/(2 m omega), hbar m omega / 2, 0).
Covariances ground_covariances(const PhysicalParams& params);

}  // namespace qfb
