#pragma once

// Stochastic data-driven optimal control problem over PCE coefficients:
// objective, Hankel dynamics, interpolated initial condition, tightened chance
// constraints, causality and terminal constraints, assembled as a conic
// program and decoded back into coefficient trajectories.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sddpc/behavioral.hpp"
#include "sddpc/conic.hpp"
#include "sddpc/pce.hpp"
#include "sddpc/terminal.hpp"

namespace sddpc {

enum class CausalityMode { Strict, Literal };
enum class MuMode { Free, Zero, One };
enum class Formulation { Condensed, Full };

std::string to_string(CausalityMode m);
std::string to_string(MuMode m);
CausalityMode causality_from_string(const std::string& s);
MuMode mu_mode_from_string(const std::string& s);

/// sigma = sqrt((2 - eps) / eps) for 0 < eps <= 1.
double tightening_sigma(double eps);

struct OcpConfig {
  int horizon = 10;
  Eigen::MatrixXd q;  // n_y x n_y
  Eigen::MatrixXd r;  // n_u x n_u
  double eps_u = 1.0;
  double eps_y = 0.1;
  std::vector<Interval> output_bounds;  // empty or n_y entries
  std::vector<Interval> input_bounds;   // empty or n_u entries
  CausalityMode causality = CausalityMode::Strict;
  PceBasisPtr basis;
  TerminalIngredients terminal;
  /// Disables the chance-constraint rows entirely.
  bool tighten = true;

  /// Checks shapes, definiteness, epsilon ranges and interval emptiness.
  void validate(int n_u, int n_y, int t_ini) const;
};

/// True when input coefficient j may be nonzero at prediction step i.
bool input_coefficient_allowed(const PceBasis& basis, CausalityMode mode,
                               int j, int step);

struct InitialConditionData {
  Eigen::VectorXd z_k;        // measured extended state
  Eigen::VectorXd mean_pred;  // z^0 of the previous prediction one step ahead
  Eigen::MatrixXd q_rhs;      // sum_{j>=1} z^j z^j'
  Eigen::MatrixXd root;       // symmetric S with S S' = q_rhs
  double clamped = 0.0;
};

/// Covariance-matching data from the previous solution's one-step-ahead
/// extended-state coefficients (n_z x L).
InitialConditionData prepare_initial(const Eigen::VectorXd& z_k,
                                     const Eigen::MatrixXd& z_next);
/// First step: mean_pred = z_0 and zero covariance.
InitialConditionData bootstrap_initial(const Eigen::VectorXd& z_0);

/// Exact coefficients of the future disturbances, (N n_w) x L, column j.
Eigen::MatrixXd disturbance_coefficients(const std::vector<GermFamily>& families,
                                         const PceBasisPtr& basis);

/// offset + coeff * x(columns).
struct AffineMap {
  Eigen::VectorXd offset;
  Eigen::MatrixXd coeff;
  std::vector<int> columns;

  int rows() const { return static_cast<int>(offset.size()); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
  AffineMap rows_slice(int first, int count) const;
};

/// Where each quantity of the OCP lives in the program.
struct OcpLayout {
  Formulation formulation = Formulation::Condensed;
  MuMode mu_mode = MuMode::Free;
  CausalityMode causality = CausalityMode::Strict;
  int n_u = 0, n_y = 0, n_w = 0, n_z = 0, t_ini = 0, horizon = 0;
  int dimension = 0;  // L
  int initial_dimension = 0;  // L_ini
  int disturbance_germs = 0;  // L_w - 1
  int columns = 0;    // Hankel columns M
  int mu_index = 0;
  /// Full input / output coefficient trajectories over [-T_ini, N-1], one
  /// map per basis index.
  std::vector<AffineMap> u_traj;
  std::vector<AffineMap> y_traj;
  /// Full formulation only: g^j = g_basis * x(g_offset[j] ...), with u^j and
  /// y^j the Hankel images of g^j.
  std::vector<int> g_offset;
  Eigen::MatrixXd g_basis;
  Eigen::MatrixXd w_coeffs;   // (N n_w) x L
  double objective_constant = 0.0;
  int terminal_soc_row = -1;
  int terminal_soc_size = 0;
};

struct OcpProblem {
  ConicProgram program;
  OcpLayout layout;
};

OcpProblem assemble(const OcpConfig& config, const HankelPredictor& predictor,
                    const InitialConditionData& init,
                    const Eigen::MatrixXd& w_coeffs,
                    MuMode mu_mode = MuMode::Free,
                    Formulation formulation = Formulation::Condensed);

struct OcpSolution {
  double mu = 0.0;
  Eigen::MatrixXd u;  // (T_ini + N) n_u x L, column j
  Eigen::MatrixXd y;  // (T_ini + N) n_y x L
  Eigen::MatrixXd g;  // M x L
  Eigen::MatrixXd z_initial;   // n_z x L at step 0
  Eigen::MatrixXd z_next;      // n_z x L at step 1
  Eigen::MatrixXd z_terminal;  // n_z x L at step N
  double value = 0.0;          // V_N
  double hankel_residual = 0.0;
  double causality_residual = 0.0;
  SolveStatus status = SolveStatus::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
  bool inexact = false;  // accepted from MaxIter with small residuals

  /// Input coefficients at future step i, n_u x L.
  Eigen::MatrixXd input_at(int step, int n_u, int t_ini) const;
};

/// Extended-state coefficients z^j_i from trajectory columns, i in [0, N].
Eigen::MatrixXd extended_state_coefficients(const Eigen::MatrixXd& u,
                                            const Eigen::MatrixXd& y,
                                            int step, int n_u, int n_y,
                                            int t_ini);

/// Rebuilds coefficient trajectories and V_N; allow_inexact admits MaxIter
/// results whose residuals are below 1e-4. Throws NumericalError when the
/// Hankel consistency or the causality pattern fails by more than 1e-7.
OcpSolution decode(const OcpProblem& problem, const ConicSolution& raw,
                   const HankelPredictor& predictor, bool allow_inexact = false);

/// Variables of a full-formulation program reproducing a decoded solution:
/// g^j mapped onto the row-space coordinates, and mu.
Eigen::VectorXd lift_to_full(const OcpProblem& full, const OcpSolution& sol);

/// Assembles, solves and decodes, keeping a solver cache and the previous raw
/// solution as warm start.
class OcpSolver {
 public:
  explicit OcpSolver(SolverSettings settings = {});

  /// Returns the solution, or the non-optimal status in `status` with empty
  /// trajectories.
  OcpSolution solve(const OcpConfig& config, const HankelPredictor& predictor,
                    const InitialConditionData& init,
                    const Eigen::MatrixXd& w_coeffs,
                    MuMode mu_mode = MuMode::Free,
                    Formulation formulation = Formulation::Condensed);
  const ConicSolution& last_raw() const { return last_; }
  const OcpProblem& last_problem() const { return problem_; }
  SolverSettings& settings() { return solver_.settings(); }
  bool warm_start = true;

 private:
  ConicSolver solver_;
  OcpProblem problem_;
  ConicSolution last_;
  bool have_last_ = false;
};

}  // namespace sddpc
