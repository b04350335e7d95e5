#pragma once

// Receding-horizon loop: per-step OCP solve, affine feedback realization,
// closed-loop propagation of the plant, cost bookkeeping and the Monte-Carlo
// experiment harness.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sddpc/behavioral.hpp"
#include "sddpc/conic.hpp"
#include "sddpc/io.hpp"
#include "sddpc/lti.hpp"
#include "sddpc/ocp.hpp"

namespace sddpc {

/// Everything a closed loop needs besides its initial state and seed.
struct ControllerSetup {
  ArxModel plant;
  HankelPredictor predictor;
  OcpConfig ocp;
  Eigen::MatrixXd w_coeffs;  // (N n_w) x L
  double alpha = 0.0;        // trace(Sigma_W (Q + E'PE))
  SolverSettings solver;
  MuMode mu_mode = MuMode::Free;
  Formulation formulation = Formulation::Condensed;
};

/// Builds the joint basis (when ocp.basis is empty), the Hankel predictor
/// from the archive, the disturbance coefficients and alpha. ocp.terminal
/// must already hold the terminal ingredients.
ControllerSetup make_setup(const ArxModel& plant, const DataArchive& archive,
                           OcpConfig ocp, SolverSettings solver = {});

/// Minimum-norm phi with M phi = z_k - z^0 for M = [z^1 .. z^{n_z}] of the
/// initial coefficients (n_z x L, columns 0 .. n_z used). Eigenvalues below
/// 1e-10 lambda_max are treated as zero; M = 0 gives phi = 0. Throws
/// NumericalError when the residual exceeds 1e-6 max(|z_k|, |z^0|).
Eigen::VectorXd recover_germ_realization(const Eigen::MatrixXd& z_initial,
                                         const Eigen::VectorXd& z_k);

/// u = u^0 + sum_{j=1}^{n_z} u^j phi^j with the first-step coefficients.
Eigen::VectorXd feedback_input(const OcpSolution& solution,
                               const Eigen::VectorXd& phi, int n_u, int t_ini);

struct TraceRow {
  int k = 0;
  Eigen::VectorXd z;    // extended state before the step
  Eigen::VectorXd u;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  Eigen::VectorXd phi;  // recovered initial-germ realization
  double mu = 0.0;
  double value = 0.0;   // V_{N,k}
  double stage_cost = 0.0;
  bool feasible = true;
  bool inexact = false;
  int iterations = 0;
};

struct ClosedLoopTrace {
  std::vector<TraceRow> rows;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  bool aborted = false;
  std::string diagnostic;

  int infeasible_steps() const;
  /// k, u*, y*, w*, mu, V_N, stage_cost, feasible.
  std::string to_csv() const;
};

class ControllerState {
 public:
  ControllerState(const ControllerSetup& setup, const Eigen::VectorXd& z_0,
                  std::uint64_t disturbance_seed);

  /// One closed-loop step. A non-optimal OCP yields a row with
  /// feasible = false and leaves the state unchanged.
  TraceRow step();

  const ExtendedState& z() const { return z_; }
  int k() const { return k_; }
  bool bootstrap() const { return bootstrap_; }
  /// Initial-condition data of the most recent solve.
  const InitialConditionData& last_initial() const { return last_init_; }
  const OcpSolution& last_solution() const { return previous_; }
  double accumulated_cost() const { return cost_sum_; }

 private:
  const ControllerSetup* setup_;
  ExtendedState z_;
  OcpSolution previous_;
  InitialConditionData last_init_;
  bool bootstrap_ = true;
  int k_ = 0;
  std::mt19937_64 rng_;
  double cost_sum_ = 0.0;
  OcpSolver solver_;
};

ClosedLoopTrace run_closed_loop(const ControllerSetup& setup,
                                const Eigen::VectorXd& z_0, int steps,
                                std::uint64_t seed);

enum class SamplerKind { Center, Uniform, Gaussian };

/// Initial extended states around a nominal input/output value repeated over
/// the T_ini window. Uniform draws lie in center +- spread, Gaussian ones use
/// spread as the standard deviation. With common_offset one draw is shared by
/// all lags (a constant past window).
struct InitialSampler {
  SamplerKind kind = SamplerKind::Center;
  Eigen::VectorXd u_center;  // n_u
  Eigen::VectorXd y_center;  // n_y
  Eigen::VectorXd u_spread;
  Eigen::VectorXd y_spread;
  bool common_offset = true;

  void validate(int n_u, int n_y) const;
  Eigen::VectorXd draw(int t_ini, std::mt19937_64& rng) const;
  Json to_json() const;
  static InitialSampler from_json(const Json& j);
};

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

/// Seed of run i derived from the master seed alone.
std::uint64_t run_seed(std::uint64_t master, int run);

struct MonteCarloOptions {
  int runs = 50;
  int steps = 30;
  std::uint64_t seed = 1;
  InitialSampler sampler;
  std::vector<int> histogram_steps{0, 5, 10, 15, 20};
  int histogram_output = 1;
  int histogram_bins = 40;
  /// Zero or negative: SDDPC_WORKERS, else the hardware concurrency.
  int workers = 0;
  bool keep_traces = true;
};

struct StepStatistics {
  Eigen::MatrixXd mean;  // steps x n_y, over runs alive at k
  Eigen::MatrixXd stddev;
  Eigen::MatrixXd q05;
  Eigen::MatrixXd q50;
  Eigen::MatrixXd q95;
  Eigen::VectorXd mean_abs_output;  // |y^h| averaged, h = histogram output
  Eigen::VectorXi count;
};

struct Histogram {
  int step = 0;
  Eigen::VectorXd edges;    // bins + 1
  Eigen::VectorXd density;  // integrates to one
};

/// Per-k estimate of E[V_{k+1} - V_k] + E[stage cost_k] - alpha.
struct DecayEstimate {
  int k = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  int samples = 0;
};

struct MonteCarloSummary {
  int runs = 0;
  int steps = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<ClosedLoopTrace> traces;  // empty unless keep_traces
  std::vector<std::string> run_errors;  // one entry per run, empty when fine
  int infeasibility_events = 0;
  StepStatistics stats;
  /// Pooled frequency of bound violations per output component (NaN for
  /// unbounded components).
  Eigen::VectorXd violation_rate;
  Eigen::MatrixXd averaged_cost;  // runs x steps, (1/(k+1)) sum_{i<=k}
  std::vector<Histogram> histograms;
  std::vector<DecayEstimate> decay;

  Json to_json() const;
  std::string histogram_csv() const;
  std::string statistics_csv() const;
};

MonteCarloSummary monte_carlo(const ControllerSetup& setup,
                              const MonteCarloOptions& options);

/// Worker count from SDDPC_WORKERS, falling back to the hardware.
int default_workers();

}  // namespace sddpc
