#pragma once

// Hankel matrices of recorded data, persistency-of-excitation checks, and
// trajectory / PCE-coefficient prediction through the data matrices.

#include <Eigen/Dense>

#include "sddpc/lti.hpp"

namespace sddpc {

/// signal is T x n; column c stacks rows c .. c+depth-1.
Eigen::MatrixXd hankel(const Eigen::MatrixXd& signal, int depth);

struct RankReport {
  bool full_row_rank = false;
  int rank = 0;
  int rows = 0;
  int cols = 0;
  Eigen::VectorXd singular_values;
};

/// Rank of the depth-`order` Hankel of the joint signal [u, w], relative
/// tolerance 1e-9 of the largest singular value.
RankReport is_persistently_exciting(const Eigen::MatrixXd& u,
                                    const Eigen::MatrixXd& w, int order);

/// H_u, H_y at depth N + T_ini over the whole archive; H_w at depth N over
/// w[T_ini .. T-1]. All three share M = T - N - T_ini + 1 columns.
struct HankelStack {
  Eigen::MatrixXd hu;
  Eigen::MatrixXd hy;
  Eigen::MatrixXd hw;
  int horizon = 0;
  int t_ini = 0;
  int n_u = 0;
  int n_y = 0;
  int n_w = 0;

  static HankelStack build(const DataArchive& archive, int horizon, int t_ini);

  int columns() const { return static_cast<int>(hu.cols()); }
  auto u_past() const { return hu.topRows(t_ini * n_u); }
  auto u_future() const { return hu.bottomRows(horizon * n_u); }
  auto y_past() const { return hy.topRows(t_ini * n_y); }
  auto y_future() const { return hy.bottomRows(horizon * n_y); }
};

/// Minimum-residual solve of an underdetermined data system A g = v with row
/// and column equilibration, complete orthogonal decomposition, and two steps
/// of extended-precision iterative refinement.
class EquilibratedSolver {
 public:
  EquilibratedSolver() = default;
  explicit EquilibratedSolver(const Eigen::MatrixXd& a);

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  /// Right inverse used as a generalized inverse (column-scaled).
  Eigen::MatrixXd generalized_inverse() const;
  int rank() const { return rank_; }
  const Eigen::MatrixXd& matrix() const { return a_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd row_scale_;
  Eigen::VectorXd col_scale_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod_;
  int rank_ = 0;
};

/// Residual A x - b evaluated in long double.
Eigen::MatrixXd accurate_residual(const Eigen::MatrixXd& a,
                                  const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& b);

/// min_g || [H_u; H_w; H_y] g - [u; w; y] ||_2 for a candidate trajectory
/// (u, y of N + T_ini rows, w of N rows).
double verify_realization_lemma(const HankelStack& stack,
                                const Eigen::MatrixXd& u,
                                const Eigen::MatrixXd& w,
                                const Eigen::MatrixXd& y);

/// Future outputs implied by pinned past window, future inputs and future
/// disturbances: y_f = Pi [u_p; y_p; u_f; w_f]. Exact for every consistent
/// right-hand side under persistency of excitation.
class HankelPredictor {
 public:
  HankelPredictor() = default;
  explicit HankelPredictor(const HankelStack& stack);

  const HankelStack& stack() const { return stack_; }
  const Eigen::MatrixXd& pi() const { return pi_; }
  auto pi_u_past() const { return pi_.leftCols(stack_.t_ini * stack_.n_u); }
  auto pi_y_past() const {
    return pi_.middleCols(stack_.t_ini * stack_.n_u, stack_.t_ini * stack_.n_y);
  }
  auto pi_u_future() const {
    return pi_.middleCols(stack_.t_ini * (stack_.n_u + stack_.n_y),
                          stack_.horizon * stack_.n_u);
  }
  auto pi_w_future() const {
    return pi_.rightCols(stack_.horizon * stack_.n_w);
  }

  /// Stacked pinning matrix [U_p; Y_p; U_f; W_f].
  const Eigen::MatrixXd& pinning() const { return pinning_; }
  int pinning_rank() const { return solver_.rank(); }

  /// g for each column of rhs (pinning rows).
  Eigen::MatrixXd solve_g(const Eigen::MatrixXd& rhs) const;

 private:
  HankelStack stack_;
  Eigen::MatrixXd pinning_;
  EquilibratedSolver solver_;
  Eigen::MatrixXd pi_;
};

/// Per-basis-index targets, each stored as (rows) x L: column j holds the
/// j-th coefficient of the stacked window.
struct PceTargets {
  Eigen::MatrixXd u_past;    // T_ini n_u x L
  Eigen::MatrixXd y_past;    // T_ini n_y x L
  Eigen::MatrixXd u_future;  // N n_u x L
  Eigen::MatrixXd w_future;  // N n_w x L
};

struct PcePrediction {
  Eigen::MatrixXd y_future;  // N n_y x L
  Eigen::MatrixXd g;         // M x L
  double pinning_residual = 0.0;
  bool consistent = true;
};

/// Solves H g^j = targets^j independently per j. Inconsistent pinning is
/// reported through `consistent` (residual above 1e-8 relative).
PcePrediction predict_pce_trajectory(const HankelPredictor& predictor,
                                     const PceTargets& targets);

}  // namespace sddpc
