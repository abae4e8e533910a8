#include "qfb/fock.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>

namespace qfb {

namespace {

using cd = std::complex<double>;
constexpr cd kI{0.0, 1.0};

Eigen::MatrixXcd annihilation(int dim) {
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

/// Tr(A rho) for the real part of an observable expectation.
double expect(const Eigen::MatrixXcd& op, const Eigen::MatrixXcd& rho) {
  return (op.transpose().cwiseProduct(rho)).sum().real();
}

/// exp(i G) for Hermitian G.
Eigen::MatrixXcd exp_i_hermitian(const Eigen::MatrixXcd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(g);
  const Eigen::VectorXcd phases =
      (kI * es.eigenvalues().cast<cd>()).array().exp();
  return es.eigenvectors() * phases.asDiagonal() *
         es.eigenvectors().adjoint();
}

void require_dim(int dim) {
  if (dim < 4) throw ParameterError("dim", "truncation must be at least 4");
}

}  // namespace

OperatorSet build_operators(int dim, const PhysicalParams& p) {
  require_dim(dim);
  p.validate();
  if (!(p.omega > 0.0)) {
    throw ParameterError("omega", "number basis needs omega > 0");
  }
  const Eigen::MatrixXcd a = annihilation(dim);
  const Eigen::MatrixXcd ad = a.adjoint();
  OperatorSet ops;
  ops.x_op = std::sqrt(p.hbar / (2.0 * p.m * p.omega)) * (a + ad);
  ops.p_op = kI * std::sqrt(p.hbar * p.m * p.omega / 2.0) * (ad - a);
  ops.hamiltonian = Eigen::MatrixXcd::Zero(dim, dim);
  for (int n = 0; n < dim; ++n) {
    ops.hamiltonian(n, n) = p.hbar * p.omega * (n + 0.5);
  }
  return ops;
}

SmeIntegrator::SmeIntegrator(OperatorSet ops, const PhysicalParams& params,
                             SmeScheme scheme, double leak_tol)
    : ops_(std::move(ops)), params_(params), scheme_(scheme), leak_tol_(leak_tol) {
  params_.validate();
  const Eigen::Index n = ops_.x_op.rows();
  require_dim(static_cast<int>(n));
  if (!ops_.hamiltonian.isDiagonal(0.0)) {
    throw ParameterError("hamiltonian", "expected the number-basis Hamiltonian");
  }
  energies_ = ops_.hamiltonian.diagonal().real();
  if (!ops_.x_op.imag().isZero(0.0)) {
    throw ParameterError("x_op", "expected a real position operator");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ops_.x_op.real());
  x_eigenvalues_ = es.eigenvalues();
  x_eigenvectors_ = es.eigenvectors();
  x2_ = ops_.x_op * ops_.x_op;
  p2_ = ops_.p_op * ops_.p_op;
  xp_sym_ = 0.5 * (ops_.x_op * ops_.p_op + ops_.p_op * ops_.x_op);
}

FeedbackGenerator SmeIntegrator::feedback_generator(double alpha,
                                                    double beta) const {
  FeedbackGenerator g;
  g.alpha = alpha;
  g.beta = beta;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(alpha * ops_.x_op +
                                                     beta * ops_.p_op);
  g.eigenvalues = es.eigenvalues();
  g.eigenvectors = es.eigenvectors();
  return g;
}

// Real basis change applied to real and imaginary parts separately: half the
// work of a complex product.
Eigen::MatrixXcd SmeIntegrator::to_x_basis(const Eigen::MatrixXcd& rho) const {
  const Eigen::MatrixXd& v = x_eigenvectors_;
  Eigen::MatrixXcd out(rho.rows(), rho.cols());
  out.real().noalias() = v.transpose() * rho.real() * v;
  out.imag().noalias() = v.transpose() * rho.imag() * v;
  return out;
}

Eigen::MatrixXcd SmeIntegrator::from_x_basis(const Eigen::MatrixXcd& rho_x) const {
  const Eigen::MatrixXd& v = x_eigenvectors_;
  Eigen::MatrixXcd out(rho_x.rows(), rho_x.cols());
  out.real().noalias() = v * rho_x.real() * v.transpose();
  out.imag().noalias() = v * rho_x.imag() * v.transpose();
  return out;
}

FockMoments SmeIntegrator::moments(const FockState& s) const {
  FockMoments m;
  m.mean_x = expect(ops_.x_op, s.rho);
  m.mean_p = expect(ops_.p_op, s.rho);
  m.v_x = expect(x2_, s.rho) - m.mean_x * m.mean_x;
  m.v_p = expect(p2_, s.rho) - m.mean_p * m.mean_p;
  m.c = expect(xp_sym_, s.rho) - m.mean_x * m.mean_p;
  m.purity = s.rho.cwiseAbs2().sum();
  return m;
}

void SmeIntegrator::finish(FockState& out) const {
  out.rho = 0.5 * (out.rho + out.rho.adjoint()).eval();
  const double tr = out.rho.trace().real();
  if (!(tr > 0.0) || !std::isfinite(tr)) {
    throw NumericalError("density matrix lost its trace");
  }
  out.rho /= tr;
  const double top = top_population(out);
  if (top > leak_tol_) throw LeakageError(out.dim(), top);
}

FockState SmeIntegrator::euler_maruyama(const FockState& s,
                                        const Eigen::MatrixXcd* f, double dt,
                                        double dw) const {
  const PhysicalParams& p = params_;
  const Eigen::MatrixXcd& x = ops_.x_op;
  const Eigen::MatrixXcd& rho = s.rho;
  const Eigen::MatrixXcd xr = x * rho;
  const Eigen::MatrixXcd rx = rho * x;
  Eigen::MatrixXcd drho =
      (-kI / p.hbar) * (ops_.hamiltonian * rho - rho * ops_.hamiltonian) * dt +
      2.0 * p.k * (xr * x - 0.5 * (x2_ * rho + rho * x2_)) * dt;
  const double amp = std::sqrt(2.0 * p.eta * p.k);
  if (f == nullptr) {
    const double mean_x = expect(x, rho);
    drho += amp * (xr + rx - 2.0 * mean_x * rho) * dw;
  } else {
    const Eigen::MatrixXcd& F = *f;
    const Eigen::MatrixXcd f2 = F * F;
    // (1/eta) D[F] rho
    drho += (1.0 / p.eta) * (F * rho * F - 0.5 * (f2 * rho + rho * f2)) * dt;
    // -i sqrt(2k) [F, x rho + rho x]
    const Eigen::MatrixXcd sym = xr + rx;
    drho += -kI * std::sqrt(2.0 * p.k) * (F * sym - sym * F) * dt;
    // H[c] rho with c = sqrt(2 eta k) x - (i / sqrt(eta)) F
    const Eigen::MatrixXcd c = amp * x - (kI / std::sqrt(p.eta)) * F;
    const Eigen::MatrixXcd crc = c * rho + rho * c.adjoint();
    drho += (crc - crc.trace().real() * rho) * dw;
  }
  FockState out{rho + drho, s.t + dt};
  const double drift = std::abs(out.rho.trace().real() - 1.0);
  if (drift > 1e-6) {
    throw NumericalError("trace drift " + std::to_string(drift) +
                         " before renormalization; reduce dt");
  }
  finish(out);
  return out;
}

FockState SmeIntegrator::measurement_operator(
    const FockState& s, const FeedbackGenerator* generator, double dt,
    double dw) const {
  const PhysicalParams& p = params_;
  const double mean_x = expect(ops_.x_op, s.rho);
  const double dq = 4.0 * p.eta * p.k * mean_x * dt +
                    std::sqrt(2.0 * p.eta * p.k) * dw;

  // Observed part: Kraus operator exp(x dq - 2 eta k x^2 dt), diagonal in the
  // x eigenbasis. Unobserved part: exact dephasing with rate 2k(1 - eta).
  const Eigen::VectorXd& lam = x_eigenvalues_;
  Eigen::VectorXd log_m =
      (lam * dq).array() - 2.0 * p.eta * p.k * dt * lam.array().square();
  log_m.array() -= log_m.maxCoeff();
  const Eigen::VectorXd kraus = log_m.array().exp();
  Eigen::MatrixXcd rho_x = to_x_basis(s.rho);
  const double dephase = p.k * (1.0 - p.eta) * dt;
  for (Eigen::Index j = 0; j < rho_x.cols(); ++j) {
    for (Eigen::Index i = 0; i < rho_x.rows(); ++i) {
      const double gap = lam(i) - lam(j);
      rho_x(i, j) *= kraus(i) * kraus(j) * std::exp(-dephase * gap * gap);
    }
  }
  Eigen::MatrixXcd rho = from_x_basis(rho_x);

  if (generator != nullptr) {
    // Feedback unitary exp(-(i/hbar) (alpha x + beta p) dq), applied after
    // the measurement with the same record increment.
    const Eigen::MatrixXcd& v = generator->eigenvectors;
    Eigen::MatrixXcd rho_z = v.adjoint() * rho * v;
    const Eigen::VectorXcd phase =
        (-kI * dq / p.hbar * generator->eigenvalues.cast<cd>()).array().exp();
    rho_z = phase.asDiagonal() * rho_z * phase.conjugate().asDiagonal();
    rho = v * rho_z * v.adjoint();
  }

  const Eigen::VectorXcd rot =
      (-kI * dt / p.hbar * energies_.cast<cd>()).array().exp();
  FockState out{rot.asDiagonal() * rho * rot.conjugate().asDiagonal(),
                s.t + dt};
  finish(out);
  return out;
}

FockState SmeIntegrator::step(const FockState& state, double dt,
                              double dw) const {
  if (!(dt > 0.0)) throw ParameterError("dt", "time step must be positive");
  if (state.dim() != dim()) throw ParameterError("dim", "state/operator mismatch");
  return scheme_ == SmeScheme::EulerMaruyama
             ? euler_maruyama(state, nullptr, dt, dw)
             : measurement_operator(state, nullptr, dt, dw);
}

FockState SmeIntegrator::step_direct(const FockState& state,
                                     const FeedbackGenerator& g, double dt,
                                     double dw) const {
  if (g.alpha == 0.0 && g.beta == 0.0) return step(state, dt, dw);
  if (!(dt > 0.0)) throw ParameterError("dt", "time step must be positive");
  if (state.dim() != dim()) throw ParameterError("dim", "state/operator mismatch");
  if (scheme_ == SmeScheme::EulerMaruyama) {
    const Eigen::MatrixXcd f = std::sqrt(2.0 * params_.k) * params_.eta *
                               (g.alpha * ops_.x_op + g.beta * ops_.p_op) /
                               params_.hbar;
    return euler_maruyama(state, &f, dt, dw);
  }
  return measurement_operator(state, &g, dt, dw);
}

FockState SmeIntegrator::step_unconditioned(const FockState& s,
                                            double dt) const {
  const PhysicalParams& p = params_;
  const Eigen::VectorXd& lam = x_eigenvalues_;
  Eigen::MatrixXcd rho_x = to_x_basis(s.rho);
  for (Eigen::Index j = 0; j < rho_x.cols(); ++j) {
    for (Eigen::Index i = 0; i < rho_x.rows(); ++i) {
      const double gap = lam(i) - lam(j);
      rho_x(i, j) *= std::exp(-p.k * dt * gap * gap);
    }
  }
  const Eigen::MatrixXcd rho = from_x_basis(rho_x);
  const Eigen::VectorXcd rot =
      (-kI * dt / p.hbar * energies_.cast<cd>()).array().exp();
  FockState out{rot.asDiagonal() * rho * rot.conjugate().asDiagonal(),
                s.t + dt};
  finish(out);
  return out;
}

FockState sme_step(const FockState& state, const SmeIntegrator& integrator,
                   double dt, double dw) {
  return integrator.step(state, dt, dw);
}

FockState direct_feedback_sme_step(const FockState& state,
                                   const SmeIntegrator& integrator,
                                   double alpha, double beta, double dt,
                                   double dw) {
  return integrator.step_direct(
      state, integrator.feedback_generator(alpha, beta), dt, dw);
}

FockMoments moments(const FockState& s, const OperatorSet& ops) {
  FockMoments m;
  m.mean_x = expect(ops.x_op, s.rho);
  m.mean_p = expect(ops.p_op, s.rho);
  m.v_x = expect(ops.x_op * ops.x_op, s.rho) - m.mean_x * m.mean_x;
  m.v_p = expect(ops.p_op * ops.p_op, s.rho) - m.mean_p * m.mean_p;
  const Eigen::MatrixXcd sym =
      0.5 * (ops.x_op * ops.p_op + ops.p_op * ops.x_op);
  m.c = expect(sym, s.rho) - m.mean_x * m.mean_p;
  m.purity = s.rho.cwiseAbs2().sum();
  return m;
}

double top_population(const FockState& s, int levels) {
  double pop = 0.0;
  for (int n = std::max(0, s.dim() - levels); n < s.dim(); ++n) {
    pop += s.rho(n, n).real();
  }
  return pop;
}

double min_eigenvalue(const FockState& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(s.rho,
                                                     Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

FockState fock_ground_state(int dim) {
  require_dim(dim);
  FockState s;
  s.rho = Eigen::MatrixXcd::Zero(dim, dim);
  s.rho(0, 0) = 1.0;
  return s;
}

FockState gaussian_fock_state(int dim, const PhysicalParams& p,
                              const GaussianState& g) {
  require_dim(dim);
  p.validate();
  if (!(p.omega > 0.0)) throw ParameterError("omega", "needs omega > 0");
  const Covariances t = to_tilde(g.covariances(), p);
  const double det = t.v_x * t.v_p - t.c * t.c;
  if (!(t.v_x > 0.0) || !(det >= 1.0 - 1e-9)) {
    throw ParameterError("covariances",
                         "violates the uncertainty relation");
  }
  const double nu = std::sqrt(std::max(det, 1.0));
  const double nbar = 0.5 * (nu - 1.0);

  // Squeezing (r, theta) of the normalized covariance: cosh 2r = (sx+sp)/2,
  // sinh 2r cos(theta) = (sp-sx)/2, sinh 2r sin(theta) = -sc.
  const double sx = t.v_x / nu;
  const double sp = t.v_p / nu;
  const double sc = t.c / nu;
  const double ch = std::max(1.0, 0.5 * (sx + sp));
  const double r = 0.5 * std::acosh(ch);
  const double theta = std::atan2(-sc, 0.5 * (sp - sx));

  const double x_unit = std::sqrt(p.hbar / (2.0 * p.m * p.omega));
  const double p_unit = std::sqrt(p.hbar * p.m * p.omega / 2.0);
  const cd alpha{0.5 * g.mean_x / x_unit, 0.5 * g.mean_p / p_unit};

  const int big = std::max(2 * dim, dim + 40);
  const Eigen::MatrixXcd a = annihilation(big);
  const Eigen::MatrixXcd ad = a.adjoint();

  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(big, big);
  for (int n = 0; n < big; ++n) {
    rho(n, n) = nbar > 0.0 ? std::pow(nbar, n) / std::pow(nbar + 1.0, n + 1)
                           : (n == 0 ? 1.0 : 0.0);
  }
  const cd zeta = std::polar(r, theta);
  // S = exp((zeta* a^2 - zeta a+^2)/2) = exp(i G) with G Hermitian.
  const Eigen::MatrixXcd squeeze = exp_i_hermitian(
      -kI * 0.5 * (std::conj(zeta) * a * a - zeta * ad * ad));
  const Eigen::MatrixXcd displace =
      exp_i_hermitian(-kI * (alpha * ad - std::conj(alpha) * a));
  const Eigen::MatrixXcd u = displace * squeeze;
  rho = u * rho * u.adjoint();

  FockState out;
  out.rho = rho.topLeftCorner(dim, dim);
  out.t = g.t;
  const double kept = out.rho.trace().real();
  if (1.0 - kept > 1e-8) throw LeakageError(dim, 1.0 - kept);
  out.rho = 0.5 * (out.rho + out.rho.adjoint()).eval();
  out.rho /= out.rho.trace().real();
  return out;
}

}  // namespace qfb
