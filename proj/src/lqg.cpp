#include "qfb/lqg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "qfb/errors.hpp"

namespace qfb {

namespace {

constexpr double kMarginTol = 1e-9;

double scale_of(const Eigen::MatrixXd& m) {
  return std::max(m.norm(), 1e-300);
}

bool full_rank(const Eigen::MatrixXcd& m, Eigen::Index needed) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  const auto& s = svd.singularValues();
  const double cut = 1e-10 * std::max(1.0, s(0));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) rank += s(i) > cut ? 1 : 0;
  return rank >= needed;
}

Eigen::MatrixXd control_metric(const Eigen::MatrixXd& b,
                               const Eigen::MatrixXd& r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("q_weight", "control weight must be positive definite");
  }
  return b * llt.solve(b.transpose());
}

}  // namespace

double care_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                     const Eigen::MatrixXd& p, const Eigen::MatrixXd& r,
                     const Eigen::MatrixXd& u) {
  const Eigen::MatrixXd s = control_metric(b, r);
  return (p + a.transpose() * u + u * a - u * s * u).norm();
}

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& y) {
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  // vec(A^T X + X A) = (I kron A^T + A^T kron I) vec(X)
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      op.block(i * n, j * n, n, n) += id(i, j) * a.transpose();
      op.block(i * n, j * n, n, n) += a(j, i) * id;
    }
  }
  const Eigen::VectorXd rhs =
      -Eigen::Map<const Eigen::VectorXd>(y.data(), n * n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(op);
  if (!lu.isInvertible()) {
    throw NumericalError("Lyapunov operator is singular");
  }
  Eigen::VectorXd vec = lu.solve(rhs);
  Eigen::MatrixXd x = Eigen::Map<Eigen::MatrixXd>(vec.data(), n, n);
  return 0.5 * (x + x.transpose());
}

bool is_stabilizable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::Index n = a.rows();
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lambda = es.eigenvalues()(i);
    if (lambda.real() < -kMarginTol) continue;
    Eigen::MatrixXcd pbh(n, n + b.cols());
    pbh << a.cast<std::complex<double>>() -
               lambda * Eigen::MatrixXcd::Identity(n, n),
        b.cast<std::complex<double>>();
    if (!full_rank(pbh, n)) return false;
  }
  return true;
}

bool is_detectable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
  return is_stabilizable(a.transpose(), c.transpose());
}

CareSolution solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::MatrixXd& p, const Eigen::MatrixXd& r) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || p.rows() != n || p.cols() != n ||
      r.rows() != b.cols() || r.cols() != b.cols()) {
    throw ParameterError("design", "inconsistent matrix dimensions");
  }
  if ((p - p.transpose()).norm() > 1e-12 * scale_of(p)) {
    throw ParameterError("p_weight", "state weight must be symmetric");
  }
  if ((r - r.transpose()).norm() > 1e-12 * scale_of(r)) {
    throw ParameterError("q_weight", "control weight must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> p_eigs(p);
  if (p_eigs.eigenvalues().minCoeff() < -1e-12 * scale_of(p)) {
    throw ParameterError("p_weight", "state weight must be positive semidefinite");
  }
  const Eigen::MatrixXd s = control_metric(b, r);

  CareSolution out;
  Eigen::EigenSolver<Eigen::MatrixXd> a_eigs(a, false);
  const double a_max_real = a_eigs.eigenvalues().real().maxCoeff();

  if (p.norm() == 0.0 && a_max_real <= kMarginTol) {
    // Nothing to penalize and nothing unstable: U = 0 is the minimal solution.
    out.u = Eigen::MatrixXd::Zero(n, n);
    out.closed_loop_eigenvalues = a_eigs.eigenvalues();
    out.residual = 0.0;
    out.unique = a_max_real < -kMarginTol;
    return out;
  }
  if (!is_stabilizable(a, b)) {
    throw NumericalError("CARE: (A, B) is not stabilizable");
  }
  if (!is_detectable(a, p)) {
    throw NumericalError("CARE: (P, A) is not detectable");
  }

  Eigen::MatrixXcd ham(2 * n, 2 * n);
  ham << a.cast<std::complex<double>>(), -s.cast<std::complex<double>>(),
      -p.cast<std::complex<double>>(), -a.transpose().cast<std::complex<double>>();
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> ces(ham);
  if (ces.info() != Eigen::Success) {
    throw NumericalError("CARE: Hamiltonian eigen-decomposition failed");
  }
  std::vector<Eigen::Index> order(2 * n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return ces.eigenvalues()(i).real() < ces.eigenvalues()(j).real();
  });
  const double h_scale = std::max(1.0, ham.norm());
  if (ces.eigenvalues()(order[n - 1]).real() > kMarginTol * h_scale) {
    throw NumericalError("CARE: Hamiltonian has too few stable eigenvalues");
  }

  Eigen::MatrixXcd basis(2 * n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    basis.col(j) = ces.eigenvectors().col(order[j]);
  }
  const Eigen::MatrixXcd top = basis.topRows(n);
  Eigen::FullPivLU<Eigen::MatrixXcd> top_lu(top);
  if (!top_lu.isInvertible() ||
      top_lu.rcond() < 1e-12) {
    throw NumericalError("CARE: stable subspace is not a graph; no stabilizing "
                         "solution");
  }
  Eigen::MatrixXd u = (basis.bottomRows(n) * top_lu.inverse()).real();
  u = 0.5 * (u + u.transpose());

  // Newton refinement on the residual; only valid while the closed loop is
  // strictly stable (the Lyapunov operator is then invertible).
  const double target = 1e-15 * std::max(p.norm(), 1.0);
  for (int iter = 0; iter < 20; ++iter) {
    const Eigen::MatrixXd res = p + a.transpose() * u + u * a - u * s * u;
    if (res.norm() <= target) break;
    const Eigen::MatrixXd closed = a - s * u;
    Eigen::EigenSolver<Eigen::MatrixXd> ce(closed, false);
    if (ce.eigenvalues().real().maxCoeff() >= -kMarginTol) break;
    Eigen::MatrixXd step;
    try {
      step = solve_lyapunov(closed, res);
    } catch (const NumericalError&) {
      break;
    }
    const Eigen::MatrixXd candidate = u + step;
    const double before = res.norm();
    const double after =
        (p + a.transpose() * candidate + candidate * a - candidate * s * candidate)
            .norm();
    if (!(after < before)) break;
    u = 0.5 * (candidate + candidate.transpose());
  }

  out.u = u;
  Eigen::EigenSolver<Eigen::MatrixXd> closed_eigs(a - s * u, false);
  out.closed_loop_eigenvalues = closed_eigs.eigenvalues();
  const double cl_max = out.closed_loop_eigenvalues.real().maxCoeff();
  if (cl_max > 1e-7 * h_scale) {
    throw NumericalError("CARE: solution is not stabilizing");
  }
  out.unique = cl_max < -kMarginTol * h_scale;
  const double res_norm = (p + a.transpose() * u + u * a - u * s * u).norm();
  out.residual = p.norm() > 0.0 ? res_norm / p.norm() : res_norm;
  const double terms = p.norm() + 2.0 * (a.transpose() * u).norm() +
                       (u * s * u).norm();
  out.scaled_residual = terms > 0.0 ? res_norm / terms : 0.0;
  return out;
}

Eigen::Matrix2d harmonic_drift(const PhysicalParams& p) {
  Eigen::Matrix2d a;
  a << 0.0, 1.0 / p.m, -p.m * p.omega * p.omega, 0.0;
  return a;
}

Eigen::Matrix2d energy_weight(const PhysicalParams& p) {
  return Eigen::Vector2d(p.m * p.omega * p.omega, 1.0 / p.m).asDiagonal();
}

void solve_design(ControlDesign& design) {
  if (!(design.q_scalar > 0.0) || !std::isfinite(design.q_scalar)) {
    throw ParameterError("q", "control weighting q must be positive");
  }
  const CareSolution sol =
      solve_care(design.a, design.b, design.p_weight,
                 design.effective_control_weight());
  design.u_care = sol.u;
  design.residual = sol.residual;
  design.unique = sol.unique;
}

Eigen::Matrix2d feedback_gain(ControlDesign& design) {
  const Eigen::Matrix2d r = design.effective_control_weight();
  Eigen::LLT<Eigen::Matrix2d> llt(r);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("q_weight",
                         "effective control weight is singular");
  }
  design.k_gain = llt.solve(design.b.transpose() * design.u_care);
  Eigen::EigenSolver<Eigen::Matrix2d> es(design.a - design.b * design.k_gain,
                                         false);
  const double scale = std::max(1.0, design.a.norm() + design.k_gain.norm());
  if (es.eigenvalues().real().maxCoeff() > 1e-7 * scale) {
    throw NumericalError("feedback gain does not stabilize the closed loop");
  }
  return design.k_gain;
}

ControlDesign harmonic_design(const PhysicalParams& params, double q_scalar,
                              ActuationStructure structure) {
  params.validate();
  ControlDesign d;
  d.a = harmonic_drift(params);
  d.b = structure == ActuationStructure::Full
            ? Eigen::Matrix2d::Identity()
            : Eigen::Matrix2d(Eigen::Vector2d(0.0, 1.0).asDiagonal());
  d.p_weight = energy_weight(params);
  d.q_weight = energy_weight(params);
  d.q_scalar = q_scalar;
  solve_design(d);
  feedback_gain(d);
  return d;
}

Eigen::Matrix2d position_only_gain(const PhysicalParams& params,
                                   double q_scalar) {
  ControlDesign d =
      harmonic_design(params, q_scalar, ActuationStructure::PositionOnly);
  d.k_gain.row(0).setZero();
  return d.k_gain;
}

CostAccumulator cost_increment(const GaussianState& state,
                               const ControlInput& u,
                               const ControlDesign& design, double dt) {
  const Eigen::Vector2d mean = state.mean();
  CostAccumulator delta;
  delta.j_state = mean.dot(design.p_weight * mean) * dt;
  delta.j_floor = (design.p_weight * state.covariance_matrix()).trace() * dt;
  delta.j_control = design.q_scalar * design.q_scalar *
                    u.dot(design.q_weight * u) * dt;
  return delta;
}

}  // namespace qfb
