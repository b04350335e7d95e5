#include "sddpc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sddpc/errors.hpp"

namespace sddpc {

PsdRoot psd_sqrt(const Eigen::MatrixXd& q, double rel_tol) {
  if (q.rows() != q.cols()) throw DimensionError("psd_sqrt needs a square matrix");
  PsdRoot out;
  if (q.size() == 0) {
    out.root = q;
    return out;
  }
  const Eigen::MatrixXd sym = 0.5 * (q + q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  out.eigenvalues = es.eigenvalues();
  const double scale = std::max(std::abs(sym.trace()), out.eigenvalues.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < out.eigenvalues.size(); ++i) {
    if (out.eigenvalues(i) < 0.0) {
      out.clamped = std::max(out.clamped, -out.eigenvalues(i));
      out.eigenvalues(i) = 0.0;
    }
  }
  if (out.clamped > rel_tol * scale && out.clamped > 1e-300)
    throw NumericalError("matrix is not PSD: eigenvalue -" +
                         std::to_string(out.clamped) +
                         " exceeds the clamping tolerance");
  out.root = es.eigenvectors() * out.eigenvalues.cwiseSqrt().asDiagonal() *
             es.eigenvectors().transpose();
  return out;
}

Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& m, double rel_tol) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lmax = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (lmax > 0.0 && std::abs(ev(i)) >= rel_tol * lmax) inv(i) = 1.0 / ev(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::EigenSolver<Eigen::MatrixXd>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd solve_discrete_lyapunov(const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& q) {
  if (a.rows() != a.cols() || q.rows() != a.rows() || q.cols() != a.cols())
    throw DimensionError("Lyapunov operands must be square and equal size");
  if (spectral_radius(a) >= 1.0)
    throw NumericalError("Lyapunov equation needs a Schur-stable matrix");
  Eigen::MatrixXd x = q;
  Eigen::MatrixXd ak = a;
  for (int it = 0; it < 64; ++it) {
    const Eigen::MatrixXd inc = ak.transpose() * x * ak;
    x += inc;
    ak = ak * ak;
    if (inc.cwiseAbs().maxCoeff() <= 1e-16 * x.cwiseAbs().maxCoeff()) break;
  }
  return 0.5 * (x + x.transpose());
}

DareResult solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                      const Eigen::MatrixXd& n) {
  const Eigen::Index nx = a.rows();
  if (a.cols() != nx || b.rows() != nx || q.rows() != nx || q.cols() != nx ||
      r.rows() != b.cols() || r.cols() != b.cols() || n.rows() != nx ||
      n.cols() != b.cols())
    throw DimensionError("Riccati operand shapes disagree");
  const Eigen::LLT<Eigen::MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success)
    throw ParameterError("Riccati input weight must be positive definite");
  const Eigen::MatrixXd r_inv_nt = r_llt.solve(n.transpose());
  Eigen::MatrixXd ak = a - b * r_inv_nt;
  Eigen::MatrixXd gk = b * r_llt.solve(b.transpose());
  Eigen::MatrixXd hk = q - n * r_inv_nt;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(nx, nx);
  DareResult res;
  bool converged = false;
  for (int it = 1; it <= 100; ++it) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> w(eye + gk * hk);
    const Eigen::MatrixXd w_ak = w.solve(ak);
    const Eigen::MatrixXd w_gk = w.solve(gk);
    const Eigen::MatrixXd h_next = hk + ak.transpose() * hk * w_ak;
    gk = gk + ak * w_gk * ak.transpose();
    ak = ak * w_ak;
    gk = 0.5 * (gk + gk.transpose());
    const double change = (h_next - hk).cwiseAbs().maxCoeff();
    hk = 0.5 * (h_next + h_next.transpose());
    res.iterations = it;
    if (!hk.allFinite()) break;
    if (change <= 1e-13 * std::max(1.0, hk.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw NumericalError("Riccati iteration did not converge; (A, B) may not be stabilizable");
  res.x = hk;
  const Eigen::MatrixXd s = r + b.transpose() * hk * b;
  res.k = -s.ldlt().solve(b.transpose() * hk * a + n.transpose());
  if (spectral_radius(a + b * res.k) >= 1.0)
    throw NumericalError("Riccati solution is not stabilizing; (A, B) may not be stabilizable");
  return res;
}

double min_symmetric_eigenvalue(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose()),
                                                        Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

double max_symmetric_eigenvalue(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose()),
                                                        Eigen::EigenvaluesOnly)
      .eigenvalues()
      .maxCoeff();
}

}  // namespace sddpc
