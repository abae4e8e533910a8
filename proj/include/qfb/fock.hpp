#pragma once

// Exact reference: the position-measurement stochastic master equation for
// the full density matrix on a truncated number basis.

#include <Eigen/Core>

#include "qfb/errors.hpp"
#include "qfb/gaussian_filter.hpp"
#include "qfb/model.hpp"

namespace qfb {

struct FockState {
  Eigen::MatrixXcd rho;  // number basis, dim x dim
  double t = 0.0;

  int dim() const { return static_cast<int>(rho.rows()); }
};

struct OperatorSet {
  Eigen::MatrixXcd x_op;
  Eigen::MatrixXcd p_op;
  Eigen::MatrixXcd hamiltonian;
};

/// Truncated ladder-operator construction of x, p and the oscillator
/// Hamiltonian. Throws ParameterError for dim < 4 or omega <= 0.
OperatorSet build_operators(int dim, const PhysicalParams& params);

/// Raised when population reaches the top of the truncated basis.
class LeakageError : public NumericalError {
 public:
  LeakageError(int dim, double population)
      : NumericalError("truncation dim=" + std::to_string(dim) +
                       " too small: top-level population " +
                       std::to_string(population)),
        dim_(dim),
        population_(population) {}

  int dim() const noexcept { return dim_; }
  double population() const noexcept { return population_; }

 private:
  int dim_;
  double population_;
};

enum class SmeScheme {
  /// Literal Euler-Maruyama update of rho followed by renormalization.
  EulerMaruyama,
  /// Gaussian measurement operator exp(x dq - 2 eta k x^2 dt) for the
  /// observed part, exact dephasing for the unobserved part, exact free
  /// rotation. Positivity preserving; covariance update is noise-free.
  MeasurementOperator,
};

struct FockMoments {
  double mean_x = 0.0;
  double mean_p = 0.0;
  double v_x = 0.0;
  double v_p = 0.0;
  double c = 0.0;
  double purity = 1.0;
};

/// Eigen-decomposition of the direct-feedback generator alpha x + beta p.
struct FeedbackGenerator {
  double alpha = 0.0;
  double beta = 0.0;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXcd eigenvectors;
};

/// Steps the stochastic master equation
///   d rho = -(i/hbar)[H, rho] dt + 2k D[x] rho dt + sqrt(2 eta k) H[x] rho dW
/// and its direct-feedback extension. Holds precomputed operator data; const
/// member functions are safe to call concurrently.
class SmeIntegrator {
 public:
  SmeIntegrator(OperatorSet ops, const PhysicalParams& params,
                SmeScheme scheme = SmeScheme::MeasurementOperator,
                double leak_tol = 1e-6);

  const OperatorSet& operators() const { return ops_; }
  const PhysicalParams& params() const { return params_; }
  SmeScheme scheme() const { return scheme_; }
  int dim() const { return static_cast<int>(energies_.size()); }

  /// Conditioned step with Wiener increment dw.
  FockState step(const FockState& state, double dt, double dw) const;

  /// Conditioned step with direct feedback H_D = I(t)(alpha x + beta p).
  FockState step_direct(const FockState& state,
                        const FeedbackGenerator& generator, double dt,
                        double dw) const;

  /// Unconditioned (ensemble-average) master equation step.
  FockState step_unconditioned(const FockState& state, double dt) const;

  FeedbackGenerator feedback_generator(double alpha, double beta) const;

  FockMoments moments(const FockState& state) const;

 private:
  FockState euler_maruyama(const FockState& state, const Eigen::MatrixXcd* f,
                           double dt, double dw) const;
  FockState measurement_operator(const FockState& state,
                                 const FeedbackGenerator* generator, double dt,
                                 double dw) const;
  void finish(FockState& out) const;
  Eigen::MatrixXcd to_x_basis(const Eigen::MatrixXcd& rho) const;
  Eigen::MatrixXcd from_x_basis(const Eigen::MatrixXcd& rho_x) const;

  OperatorSet ops_;
  PhysicalParams params_;
  SmeScheme scheme_;
  double leak_tol_;
  Eigen::VectorXd energies_;     // diagonal of H
  Eigen::VectorXd x_eigenvalues_;
  Eigen::MatrixXd x_eigenvectors_;  // x is real symmetric in the number basis
  Eigen::MatrixXcd x2_, p2_, xp_sym_;
};

FockState sme_step(const FockState& state, const SmeIntegrator& integrator,
                   double dt, double dw);

FockState direct_feedback_sme_step(const FockState& state,
                                   const SmeIntegrator& integrator,
                                   double alpha, double beta, double dt,
                                   double dw);

/// Means, symmetrized covariances, and Tr[rho^2].
FockMoments moments(const FockState& state, const OperatorSet& ops);

/// Population in the top `levels` number states.
double top_population(const FockState& state, int levels = 2);

double min_eigenvalue(const FockState& state);

FockState fock_ground_state(int dim);

/// Displaced squeezed thermal state with the given means and covariances,
/// built on an enlarged basis and truncated to `dim`. Requires
/// v_x v_p - c^2 >= hbar^2/4.
FockState gaussian_fock_state(int dim, const PhysicalParams& params,
                              const GaussianState& gaussian);

}  // namespace qfb
