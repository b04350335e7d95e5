#pragma once

// Dense matrix equations and symmetric factorizations.

#include <Eigen/Dense>

namespace sddpc {

struct PsdRoot {
  Eigen::MatrixXd root;         // U D^{1/2} U^T, symmetric
  Eigen::VectorXd eigenvalues;  // after clamping
  double clamped = 0.0;         // largest magnitude of a clamped eigenvalue
};

/// Symmetric square root with negative eigenvalues clamped to zero. Clamping
/// more than rel_tol * max(trace, tiny) throws NumericalError.
PsdRoot psd_sqrt(const Eigen::MatrixXd& q, double rel_tol = 1e-10);

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its
/// eigendecomposition; eigenvalues below rel_tol * lambda_max are dropped.
Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& m, double rel_tol = 1e-10);

double spectral_radius(const Eigen::MatrixXd& a);

/// X solving A^T X A - X + Q = 0 for Schur-stable A (Smith doubling).
Eigen::MatrixXd solve_discrete_lyapunov(const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& q);

struct DareResult {
  Eigen::MatrixXd x;
  Eigen::MatrixXd k;  // u = K x
  int iterations = 0;
};

/// Stabilizing solution of the discrete Riccati equation for
/// sum x'Qx + u'Ru + 2 x'N u, x+ = A x + B u (structure-preserving doubling).
DareResult solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                      const Eigen::MatrixXd& n);

/// Smallest eigenvalue of the symmetric part.
double min_symmetric_eigenvalue(const Eigen::MatrixXd& m);
double max_symmetric_eigenvalue(const Eigen::MatrixXd& m);

}  // namespace sddpc
