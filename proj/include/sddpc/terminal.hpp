#pragma once

// Terminal cost, terminal feedback, covariance level set and terminal set,
// synthesized from a model identified on the offline archive.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sddpc/io.hpp"
#include "sddpc/lti.hpp"

namespace sddpc {

struct IdentifiedArx {
  Eigen::MatrixXd phi;  // n_y x n_z
  Eigen::MatrixXd d;    // n_y x n_u
  double max_residual = 0.0;
  double condition = 0.0;  // of the equilibrated regressor
};

/// Least squares of y_t - w_t on (z_t, u_t) over t >= T_ini.
IdentifiedArx identify_arx(const DataArchive& archive, int t_ini);

/// Per-component interval; infinite ends are unbounded sides.
struct Interval {
  double low = -std::numeric_limits<double>::infinity();
  double high = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(low) || std::isfinite(high); }
  /// Distance from the origin to the nearest finite end.
  double reach() const;
};

struct TerminalOptions {
  std::vector<Interval> output_bounds;  // empty or n_y entries
  std::vector<Interval> input_bounds;   // empty or n_u entries
  double sigma_y = 1.0;
  double sigma_u = 1.0;
  /// Required stationary slack of every tightened bound, as a fraction of
  /// the interval reach.
  double margin_fraction = 0.1;
  /// Coordinate box of the terminal set in stationary standard deviations.
  double box_scale = 10.0;
  double ridge = 1e-8;
  /// Negative: search {0, 10^(k/2)} for the smallest admissible weight.
  double beta = -1.0;
  int verification_samples = 10000;
  std::uint64_t seed = 12345;
  int max_horizon = 500;
};

struct TerminalIngredients {
  Eigen::MatrixXd p;      // n_z x n_z
  Eigen::MatrixXd k;      // n_u x n_z, u = K z
  Eigen::MatrixXd gamma;  // n_z x n_z
  double gamma_level = 0.0;
  double delta = 0.0;
  Eigen::MatrixXd f;      // rows of Z_f = {z : F z <= f}
  Eigen::VectorXd f_rhs;
  Eigen::VectorXd box;    // coordinate half-widths contained in the F rows
  double beta = 0.0;
  int set_horizon = 0;
  /// Stationary standard deviations of the constrained outputs under the
  /// terminal law, and the tightened slack left for the mean.
  Eigen::VectorXd output_std;
  Eigen::VectorXd output_margin;
  /// Tightened constraints on the mean under the terminal law: H z <= h.
  Eigen::MatrixXd tight_h;
  Eigen::VectorXd tight_rhs;
  double ridge = 1e-8;
  double shrink = 1.0;

  Json to_json() const;
  static TerminalIngredients from_json(const Json& j);
  void save_json(const std::string& path) const;
  static TerminalIngredients load_json(const std::string& path);
};

/// P with A_K' P A_K - P = -(K'RK + C_K'QC_K) - ridge I.
Eigen::MatrixXd terminal_cost_matrix(const Eigen::MatrixXd& a_k,
                                     const Eigen::MatrixXd& k,
                                     const Eigen::MatrixXd& c_k,
                                     const Eigen::MatrixXd& q,
                                     const Eigen::MatrixXd& r,
                                     double ridge = 1e-8);

TerminalIngredients synthesize(const Eigen::MatrixXd& phi,
                               const Eigen::MatrixXd& d, int t_ini,
                               const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& r,
                               const Eigen::MatrixXd& sigma_w,
                               const TerminalOptions& options);

/// trace(Sigma_W (Q + E'PE)); E'PE is the trailing n_y x n_y block of P.
double alpha_bound(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                   const Eigen::MatrixXd& sigma_w);

struct TerminalCheck {
  double lyapunov_residual = 0.0;  // of the P equation
  double decrease_margin = 0.0;    // -lambda_max(A_K'PA_K - P + K'RK + C_K'QC_K)
  double contraction_margin = 0.0; // -lambda_max(A_K'GA_K - G + delta G)
  int invariance_violations = 0;
  int constraint_violations = 0;
};

/// Decrease, contraction and sampled invariance of Z_f for the given model.
TerminalCheck check_terminal(const TerminalIngredients& t,
                             const Eigen::MatrixXd& phi,
                             const Eigen::MatrixXd& d, int t_ini,
                             const Eigen::MatrixXd& q,
                             const Eigen::MatrixXd& r, int samples,
                             std::uint64_t seed);

}  // namespace sddpc
