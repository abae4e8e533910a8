#pragma once

// LQG controller synthesis: continuous algebraic Riccati equation, optimal
// gain, and the per-trajectory quadratic cost.

#include <Eigen/Core>

#include "qfb/gaussian_filter.hpp"
#include "qfb/model.hpp"

namespace qfb {

/// Result of a Riccati solve: the stabilizing solution U of
///   0 = P + A^T U + U A - U B R^-1 B^T U
/// together with diagnostics.
struct CareSolution {
  Eigen::MatrixXd u;
  Eigen::VectorXcd closed_loop_eigenvalues;
  double residual = 0.0;  // ||residual||_F / ||P||_F (absolute when P = 0)
  /// ||residual||_F / (||P|| + 2||A^T U|| + ||U S U||): the backward error,
  /// which stays at roundoff level even when U is ill-conditioned.
  double scaled_residual = 0.0;
  /// True when every closed-loop eigenvalue has a strictly negative real
  /// part; the stabilizing solution is then the unique one with that
  /// property. False means the returned U is only marginally stabilizing and
  /// other positive semidefinite solutions may exist.
  bool unique = true;
};

/// Solves the CARE via the stable invariant subspace of the Hamiltonian
/// matrix [[A, -B R^-1 B^T], [-P, -A^T]] followed by Newton refinement.
///
/// Throws ParameterError for malformed weights and NumericalError when no
/// stabilizing solution exists.
CareSolution solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::MatrixXd& p_weight,
                        const Eigen::MatrixXd& r_weight);

/// Frobenius norm of P + A^T U + U A - U B R^-1 B^T U.
double care_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                     const Eigen::MatrixXd& p_weight,
                     const Eigen::MatrixXd& r_weight,
                     const Eigen::MatrixXd& u);

/// Solves A^T X + X A = -Y for symmetric Y by Kronecker vectorization.
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& y);

bool is_stabilizable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
bool is_detectable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c);

enum class ActuationStructure { Full, PositionOnly };

/// Two-dimensional LQG design for the harmonic oscillator. The effective
/// control weight is q_scalar^2 q_weight.
struct ControlDesign {
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d b = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d p_weight = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d q_weight = Eigen::Matrix2d::Identity();
  double q_scalar = 1.0;
  Eigen::Matrix2d u_care = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d k_gain = Eigen::Matrix2d::Zero();
  double residual = 0.0;
  bool unique = true;

  Eigen::Matrix2d effective_control_weight() const {
    return q_scalar * q_scalar * q_weight;
  }
};

/// Drift matrix [[0, 1/m], [-m omega^2, 0]] of the means.
Eigen::Matrix2d harmonic_drift(const PhysicalParams& params);

/// Energy weights P = Q = diag(m omega^2, 1/m).
Eigen::Matrix2d energy_weight(const PhysicalParams& params);

/// Solves the CARE for `design` and fills u_care, residual, unique.
void solve_design(ControlDesign& design);

/// K = Q_eff^-1 B^T U; stores it in design.k_gain and verifies the closed loop
/// A - B K has no eigenvalue with positive real part.
Eigen::Matrix2d feedback_gain(ControlDesign& design);

/// Harmonic design with energy weights and the given actuation structure,
/// fully solved.
ControlDesign harmonic_design(const PhysicalParams& params, double q_scalar,
                              ActuationStructure structure =
                                  ActuationStructure::Full);

/// Position-only (B = diag(0, 1)) optimal gain. First row is exactly zero.
Eigen::Matrix2d position_only_gain(const PhysicalParams& params,
                                   double q_scalar);

/// Running components of the per-trajectory quadratic cost.
struct CostAccumulator {
  double j_state = 0.0;    // integral of <x>^T P <x>
  double j_control = 0.0;  // integral of q^2 u^T Q u
  double j_floor = 0.0;    // integral of Tr(P V)

  double total() const { return j_state + j_control + j_floor; }
  CostAccumulator& operator+=(const CostAccumulator& other) {
    j_state += other.j_state;
    j_control += other.j_control;
    j_floor += other.j_floor;
    return *this;
  }
};

/// Cost accrued over one step of length dt at the given state and control.
CostAccumulator cost_increment(const GaussianState& state,
                               const ControlInput& u,
                               const ControlDesign& design, double dt);

}  // namespace qfb
