#pragma once

// Ground-truth ARX plant, realization dynamics, extended state and offline
// data collection.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sddpc/pce.hpp"

namespace sddpc {

/// y_k = Phi z_k + D u_k + w_k with z_k the last T_ini inputs and outputs.
struct ArxModel {
  Eigen::MatrixXd phi;  // n_y x n_z
  Eigen::MatrixXd d;    // n_y x n_u
  int t_ini = 1;
  std::vector<GermFamily> disturbance;  // one per output component

  int n_u() const { return static_cast<int>(d.cols()); }
  int n_y() const { return static_cast<int>(phi.rows()); }
  int n_w() const { return n_y(); }
  int n_z() const { return t_ini * (n_u() + n_y()); }

  void validate() const;
  Eigen::MatrixXd disturbance_covariance() const;  // diagonal Sigma_W
  std::string hash() const;
};

/// [u_{k-T_ini} .. u_{k-1}, y_{k-T_ini} .. y_{k-1}], oldest first per signal.
struct ExtendedState {
  Eigen::VectorXd values;

  ExtendedState() = default;
  explicit ExtendedState(Eigen::VectorXd v) : values(std::move(v)) {}

  static ExtendedState from_window(const Eigen::MatrixXd& u_rows,
                                   const Eigen::MatrixXd& y_rows);
  Eigen::VectorXd input(int lag_index, int n_u) const;
  Eigen::VectorXd output(int lag_index, int n_u, int n_y, int t_ini) const;
};

struct StepResult {
  Eigen::VectorXd y;
  ExtendedState z_next;
};

StepResult realization_step(const ArxModel& model, const ExtendedState& z,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& w);

/// Shift-and-append written as z_{k+1} = A z_k + B u_k + E w_k.
struct ExtendedStateMatrices {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd e;
};

ExtendedStateMatrices extended_state_matrices(const ArxModel& model);

/// Same structure for an arbitrary (Phi, D) pair.
ExtendedStateMatrices extended_state_matrices(const Eigen::MatrixXd& phi,
                                              const Eigen::MatrixXd& d,
                                              int t_ini);

Eigen::VectorXd draw_disturbance(const ArxModel& model, std::mt19937_64& rng);

struct DataArchive {
  Eigen::MatrixXd u;  // T x n_u
  Eigen::MatrixXd w;  // T x n_w
  Eigen::MatrixXd y;  // T x n_y
  std::uint64_t seed = 0;
  std::string model_hash;

  int length() const { return static_cast<int>(u.rows()); }

  /// Max |y_t - Phi z_t - D u_t - w_t| over t >= T_ini.
  double consistency_residual(const ArxModel& model) const;

  std::string to_json() const;
  static DataArchive from_json(const std::string& text);
  void save_json(const std::string& path) const;
  static DataArchive load_json(const std::string& path);
  void save_csv(const std::string& path) const;
};

struct CollectOptions {
  int length = 90;
  double input_low = -1.0;
  double input_high = 1.0;
  std::uint64_t seed = 1;
  bool disturbance = true;
  /// Hankel depth whose (u, w) persistency the length must allow; 0 skips.
  int required_pe_order = 0;
};

/// Simulates from a random initial window drawn from the excitation box.
DataArchive collect_data(const ArxModel& model, const CollectOptions& options);

ArxModel aircraft_model();

struct OrderEstimate {
  int n_x = 0;
  /// Estimate at the coarse tolerance 1e-5; differs from n_x when weakly
  /// observable modes sit between the two tolerances.
  int coarse_n_x = 0;
  bool ill_conditioned = false;
  bool overridden = false;
  Eigen::VectorXd singular_values;
};

/// rank H(u,w,y) - rank H(u,w) at depth T_ini + 1, row-equilibrated, with
/// singular values counted above rel_tol times the largest.
OrderEstimate minimal_order_estimate(const DataArchive& archive, int t_ini,
                                     std::optional<int> override_n_x = {},
                                     double rel_tol = 1e-9);

}  // namespace sddpc
