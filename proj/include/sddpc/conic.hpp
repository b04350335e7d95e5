#pragma once

// Operator-splitting solver for
//   minimize 1/2 x'Px + q'x  subject to  Ax + s = b,  s in K,
// with K a product of zero, nonnegative and second-order cones.

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "sddpc/io.hpp"

namespace sddpc {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

enum class ConeKind { Zero, NonNeg, SecondOrder };

/// Second-order cone blocks are (t, v) with ||v||_2 <= t, t first.
struct Cone {
  ConeKind kind = ConeKind::NonNeg;
  int size = 0;
};

struct ConicProgram {
  SparseMatrix p;  // n x n, symmetric (both triangles stored)
  Eigen::VectorXd q;
  SparseMatrix a;  // m x n
  Eigen::VectorXd b;
  std::vector<Cone> cones;

  int num_variables() const { return static_cast<int>(q.size()); }
  int num_constraints() const { return static_cast<int>(b.size()); }

  /// Shapes, cone sizes, symmetry; optionally the PSD floor
  /// lambda_min(P) >= -1e-10 ||P||.
  void validate(bool check_psd = true) const;
  double objective(const Eigen::VectorXd& x) const;

  Json to_json() const;
  static ConicProgram from_json(const Json& j);
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter };

std::string to_string(SolveStatus s);

struct SolverSettings {
  double eps_p = 1e-6;
  double eps_d = 1e-6;
  double eps_gap = 1e-6;
  double eps_infeasible = 1e-8;
  int max_iter = 50000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha_relax = 1.6;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  int scaling_iterations = 10;
  int check_interval = 5;
  bool polish = true;
  /// Polishing is attempted during the iteration once the primal and dual
  /// residuals are within this factor of their tolerances, at most once per
  /// polish_interval iterations, and always after the last iteration.
  double polish_trigger = 100.0;
  int polish_interval = 100;
};

struct WarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd s;
  Eigen::VectorXd y;
};

struct ConicSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd s;
  Eigen::VectorXd y;  // dual, in the dual cone K*
  double objective = 0.0;
  SolveStatus status = SolveStatus::MaxIter;
  double primal_residual = 0.0;  // ||Ax + s - b||_inf
  double dual_residual = 0.0;    // ||Px + q + A'y||_inf
  double gap = 0.0;              // |x'Px + q'x + b'y|
  int iterations = 0;
  int rho_updates = 0;
  bool regularized = false;  // the KKT factorization needed a diagonal shift
  bool polished = false;
  /// Primal infeasibility certificate (A'd = 0, b'd < 0, d in K*) or
  /// unboundedness direction (Pd = 0, q'd < 0, -Ad in K), when certified.
  Eigen::VectorXd certificate;

  Json to_json() const;
};

/// Euclidean projection onto the product cone.
Eigen::VectorXd project_cone(const Eigen::VectorXd& s,
                             const std::vector<Cone>& cones);
/// Projection onto the dual cone (free on zero-cone rows).
Eigen::VectorXd project_dual_cone(const Eigen::VectorXd& y,
                                  const std::vector<Cone>& cones);

/// Factorization of the reduced KKT matrix P + sigma I + A' diag(rho) A,
/// reused for every iteration with unchanged rho.
class KktFactorization {
 public:
  KktFactorization() = default;
  KktFactorization(const SparseMatrix& p, const SparseMatrix& a, double sigma,
                   const Eigen::VectorXd& rho);

  /// Refactorizes with a new rho, reusing the symbolic analysis.
  void update_rho(const Eigen::VectorXd& rho);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  bool regularized() const { return regularized_; }
  int size() const { return static_cast<int>(p_.rows()); }

 private:
  void factor(const Eigen::VectorXd& rho);

  SparseMatrix p_;
  SparseMatrix a_;
  SparseMatrix at_;
  double sigma_ = 0.0;
  std::unique_ptr<Eigen::SimplicialLLT<SparseMatrix>> llt_;
  bool analyzed_ = false;
  bool regularized_ = false;
};

/// Per-row penalty: rho on inequality rows, 1e3 rho on zero-cone rows.
Eigen::VectorXd rho_vector(const std::vector<Cone>& cones, double rho);

KktFactorization factorize_kkt(const ConicProgram& program, double rho,
                               double sigma = 1e-6);

/// Stateful solver: caches the scaling and initial factorization so that
/// programs with identical P and A (only q, b differ) skip refactorization.
/// Results do not depend on whether the cache was hit.
class ConicSolver {
 public:
  explicit ConicSolver(SolverSettings settings = {});

  ConicSolution solve(const ConicProgram& program,
                      const WarmStart* warm = nullptr);
  const SolverSettings& settings() const { return settings_; }
  SolverSettings& settings() { return settings_; }
  int factorizations() const { return factorizations_; }

 private:
  struct Cache;
  bool cache_matches(const ConicProgram& program) const;
  void rebuild_cache(const ConicProgram& program);

  SolverSettings settings_;
  std::shared_ptr<Cache> cache_;
  int factorizations_ = 0;
};

ConicSolution solve(const ConicProgram& program,
                    const SolverSettings& settings = {},
                    const WarmStart* warm = nullptr);

/// Residual diagnostics of a candidate (x, s, y) in the unscaled problem.
void evaluate_residuals(const ConicProgram& program, ConicSolution& sol);

}  // namespace sddpc
