#include "sddpc/behavioral.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sddpc/errors.hpp"

namespace sddpc {

Eigen::MatrixXd hankel(const Eigen::MatrixXd& signal, int depth) {
  const int t = static_cast<int>(signal.rows());
  const int n = static_cast<int>(signal.cols());
  if (depth < 1 || depth > t)
    throw ParameterError("Hankel depth " + std::to_string(depth) +
                         " outside [1, " + std::to_string(t) + "]");
  const int cols = t - depth + 1;
  Eigen::MatrixXd h(depth * n, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < depth; ++r)
      h.block(r * n, c, n, 1) = signal.row(c + r).transpose();
  return h;
}

RankReport is_persistently_exciting(const Eigen::MatrixXd& u,
                                    const Eigen::MatrixXd& w, int order) {
  RankReport rep;
  if (u.rows() != w.rows())
    throw DimensionError("input and disturbance records differ in length");
  Eigen::MatrixXd joint(u.rows(), u.cols() + w.cols());
  joint << u, w;
  rep.rows = order * static_cast<int>(joint.cols());
  rep.cols = static_cast<int>(joint.rows()) - order + 1;
  if (order < 1 || rep.cols < 1) {
    rep.cols = std::max(rep.cols, 0);
    return rep;
  }
  const Eigen::MatrixXd h = hankel(joint, order);
  rep.singular_values = Eigen::BDCSVD<Eigen::MatrixXd>(h).singularValues();
  const double smax = rep.singular_values.size() ? rep.singular_values(0) : 0.0;
  for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i)
    if (smax > 0.0 && rep.singular_values(i) > 1e-9 * smax) ++rep.rank;
  rep.full_row_rank = rep.rows <= rep.cols && rep.rank == rep.rows;
  return rep;
}

HankelStack HankelStack::build(const DataArchive& archive, int horizon,
                               int t_ini) {
  if (horizon < 1 || t_ini < 1)
    throw ParameterError("Hankel stack needs N >= 1 and T_ini >= 1");
  const int t = archive.length();
  if (t < horizon + t_ini)
    throw ParameterError("archive of length " + std::to_string(t) +
                         " is shorter than N + T_ini");
  HankelStack s;
  s.horizon = horizon;
  s.t_ini = t_ini;
  s.n_u = static_cast<int>(archive.u.cols());
  s.n_y = static_cast<int>(archive.y.cols());
  s.n_w = static_cast<int>(archive.w.cols());
  s.hu = hankel(archive.u, horizon + t_ini);
  s.hy = hankel(archive.y, horizon + t_ini);
  s.hw = hankel(archive.w.bottomRows(t - t_ini), horizon);
  return s;
}

Eigen::MatrixXd accurate_residual(const Eigen::MatrixXd& a,
                                  const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& b) {
  if (a.cols() != x.rows() || a.rows() != b.rows() || x.cols() != b.cols())
    throw DimensionError("accurate_residual operand shapes disagree");
  Eigen::MatrixXd r(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      long double acc = 0.0L;
      for (Eigen::Index k = 0; k < a.cols(); ++k)
        acc += static_cast<long double>(a(i, k)) * x(k, c);
      r(i, c) = static_cast<double>(acc - static_cast<long double>(b(i, c)));
    }
  return r;
}

EquilibratedSolver::EquilibratedSolver(const Eigen::MatrixXd& a) : a_(a) {
  row_scale_ = Eigen::VectorXd::Ones(a.rows());
  col_scale_ = Eigen::VectorXd::Ones(a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double n = a.row(r).norm();
    if (n > 0.0) row_scale_(r) = 1.0 / n;
  }
  Eigen::MatrixXd scaled = row_scale_.asDiagonal() * a;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double n = scaled.col(c).norm();
    if (n > 0.0) col_scale_(c) = 1.0 / n;
  }
  scaled = scaled * col_scale_.asDiagonal();
  cod_.setThreshold(1e-11);
  cod_.compute(scaled);
  rank_ = static_cast<int>(cod_.rank());
}

Eigen::MatrixXd EquilibratedSolver::solve(const Eigen::MatrixXd& rhs) const {
  if (rhs.rows() != a_.rows())
    throw DimensionError("EquilibratedSolver rhs has wrong row count");
  Eigen::MatrixXd x =
      col_scale_.asDiagonal() * cod_.solve(row_scale_.asDiagonal() * rhs);
  for (int it = 0; it < 2; ++it) {
    const Eigen::MatrixXd r = accurate_residual(a_, x, rhs);
    x -= col_scale_.asDiagonal() * cod_.solve(row_scale_.asDiagonal() * r);
  }
  return x;
}

Eigen::MatrixXd EquilibratedSolver::generalized_inverse() const {
  return col_scale_.asDiagonal() * cod_.pseudoInverse() *
         row_scale_.asDiagonal();
}

double verify_realization_lemma(const HankelStack& stack,
                                const Eigen::MatrixXd& u,
                                const Eigen::MatrixXd& w,
                                const Eigen::MatrixXd& y) {
  const int depth = stack.horizon + stack.t_ini;
  if (u.rows() != depth || y.rows() != depth || w.rows() != stack.horizon ||
      u.cols() != stack.n_u || y.cols() != stack.n_y || w.cols() != stack.n_w)
    throw DimensionError("candidate trajectory shape does not match the stack");
  Eigen::MatrixXd h(stack.hu.rows() + stack.hw.rows() + stack.hy.rows(),
                    stack.columns());
  h << stack.hu, stack.hw, stack.hy;
  Eigen::VectorXd v(h.rows());
  Eigen::Index off = 0;
  for (int i = 0; i < depth; ++i, off += stack.n_u)
    v.segment(off, stack.n_u) = u.row(i).transpose();
  for (int i = 0; i < stack.horizon; ++i, off += stack.n_w)
    v.segment(off, stack.n_w) = w.row(i).transpose();
  for (int i = 0; i < depth; ++i, off += stack.n_y)
    v.segment(off, stack.n_y) = y.row(i).transpose();
  const EquilibratedSolver solver(h);
  const Eigen::MatrixXd g = solver.solve(v);
  return accurate_residual(h, g, v).norm();
}

HankelPredictor::HankelPredictor(const HankelStack& stack) : stack_(stack) {
  const auto up = stack_.u_past();
  const auto yp = stack_.y_past();
  const auto uf = stack_.u_future();
  pinning_.resize(up.rows() + yp.rows() + uf.rows() + stack_.hw.rows(),
                  stack_.columns());
  pinning_ << up, yp, uf, stack_.hw;
  solver_ = EquilibratedSolver(pinning_);
  if (solver_.rank() < pinning_.rows())
    throw NumericalError(
        "data matrix [U_p; Y_p; U_f; W_f] has rank " +
        std::to_string(solver_.rank()) + " < " +
        std::to_string(pinning_.rows()) +
        "; the recorded data is not persistently exciting enough");
  const Eigen::MatrixXd yf = stack_.y_future();
  const Eigen::MatrixXd ginv = solver_.generalized_inverse();
  pi_ = yf * ginv;
  for (int it = 0; it < 2; ++it) {
    // Pi M = Y_f holds exactly in exact arithmetic; refine in long double.
    const Eigen::MatrixXd e =
        accurate_residual(pinning_.transpose(), pi_.transpose(), yf.transpose());
    pi_ -= e.transpose() * ginv;
  }
}

Eigen::MatrixXd HankelPredictor::solve_g(const Eigen::MatrixXd& rhs) const {
  return solver_.solve(rhs);
}

PcePrediction predict_pce_trajectory(const HankelPredictor& predictor,
                                     const PceTargets& targets) {
  const HankelStack& s = predictor.stack();
  const Eigen::Index L = targets.u_past.cols();
  if (targets.u_past.rows() != s.t_ini * s.n_u ||
      targets.y_past.rows() != s.t_ini * s.n_y ||
      targets.u_future.rows() != s.horizon * s.n_u ||
      targets.w_future.rows() != s.horizon * s.n_w ||
      targets.y_past.cols() != L || targets.u_future.cols() != L ||
      targets.w_future.cols() != L)
    throw DimensionError("PCE targets do not match the Hankel stack");
  Eigen::MatrixXd rhs(predictor.pinning().rows(), L);
  rhs << targets.u_past, targets.y_past, targets.u_future, targets.w_future;
  PcePrediction p;
  p.g = predictor.solve_g(rhs);
  p.y_future = accurate_residual(s.y_future(), p.g,
                                 Eigen::MatrixXd::Zero(s.horizon * s.n_y, L));
  const Eigen::MatrixXd r = accurate_residual(predictor.pinning(), p.g, rhs);
  p.pinning_residual = r.cwiseAbs().maxCoeff();
  p.consistent =
      p.pinning_residual <= 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff());
  return p;
}

}  // namespace sddpc
