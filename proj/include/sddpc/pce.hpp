#pragma once

// Polynomial chaos machinery: orthonormal germ polynomials, the joint basis
// over an initial block and one disturbance block per prediction step, and
// coefficient-level moments and dynamics.

#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace sddpc {

enum class GermKind { GaussianHermite, UniformLegendre };

/// Scalar distribution with an exact two-term expansion in its own germ:
/// Gaussian N(mean, std_dev^2) on a Hermite germ, or uniform on [low, high]
/// on a Legendre germ.
struct GermFamily {
  GermKind kind = GermKind::GaussianHermite;
  double mean = 0.0;
  double std_dev = 1.0;
  double low = -1.0;
  double high = 1.0;

  static GermFamily gaussian(double mean, double std_dev);
  static GermFamily uniform(double low, double high);

  void validate() const;
  double expected_value() const;
  double standard_deviation() const;
};

/// Orthonormal polynomial of `degree` evaluated at a standardized germ value
/// (xi ~ N(0,1) for Hermite, xi ~ U(-1,1) for Legendre). Three-term
/// recurrences; degree 0 is the constant 1.
double orthonormal_polynomial(GermKind kind, int degree, double xi);

/// One draw of the standardized germ.
double draw_standard_germ(GermKind kind, std::mt19937_64& rng);

struct IndexRange {
  int first = 0;
  int count = 0;

  int last() const { return first + count - 1; }
  bool contains(int j) const { return j >= first && j < first + count; }
};

/// Joint orthonormal basis {1, initial germs, disturbance germs of steps
/// 0..N-1}. Every non-constant function is a degree-1 orthonormal polynomial
/// of its own independent germ, so all norms are one.
class PceBasis {
 public:
  PceBasis(std::vector<GermKind> initial_germs,
           std::vector<GermKind> disturbance_germs, int horizon);

  int dimension() const { return dimension_; }
  int initial_dimension() const { return static_cast<int>(initial_.size()) + 1; }
  int disturbance_dimension() const {
    return static_cast<int>(disturbance_.size()) + 1;
  }
  int horizon() const { return horizon_; }

  IndexRange initial_block() const;
  IndexRange disturbance_block(int step) const;
  GermKind germ_kind(int j) const;

  /// Basis-function realizations phi^1(w) .. phi^{L-1}(w) for one outcome.
  Eigen::VectorXd draw_realization(std::mt19937_64& rng) const;

  const std::vector<GermKind>& initial_germs() const { return initial_; }
  const std::vector<GermKind>& disturbance_germs() const {
    return disturbance_;
  }

 private:
  std::vector<GermKind> initial_;
  std::vector<GermKind> disturbance_;
  int horizon_ = 0;
  int dimension_ = 1;
};

using PceBasisPtr = std::shared_ptr<const PceBasis>;

/// L x n coefficient matrix; row j is the j-th coefficient vector.
class PceVector {
 public:
  PceVector(PceBasisPtr basis, Eigen::MatrixXd coefficients);

  static PceVector zero(PceBasisPtr basis, int size);

  const PceBasis& basis() const { return *basis_; }
  const PceBasisPtr& basis_ptr() const { return basis_; }
  const Eigen::MatrixXd& coefficients() const { return coefficients_; }
  Eigen::MatrixXd& coefficients() { return coefficients_; }
  Eigen::VectorXd coefficient(int j) const {
    return coefficients_.row(j).transpose();
  }
  int size() const { return static_cast<int>(coefficients_.cols()); }
  Eigen::VectorXd mean() const { return coefficient(0); }

 private:
  PceBasisPtr basis_;
  Eigen::MatrixXd coefficients_;
};

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

PceBasis build_joint_basis(int initial_dimension,
                           const std::vector<GermFamily>& disturbance_families,
                           int n_w, int horizon);

Moments moments(const PceVector& v);

/// Coefficients of the zero-mean disturbance acting at prediction step `step`:
/// component c carries its standard deviation on its own germ in block `step`.
PceVector exact_pce_of_disturbance(const std::vector<GermFamily>& families,
                                   const PceBasisPtr& basis, int step);

/// v^0 + sum_j v^j phi^j(w); `germ_draws` holds phi^1..phi^{L-1}.
Eigen::VectorXd sample_realization(const PceVector& v,
                                   const Eigen::VectorXd& germ_draws);

/// Row-wise y^j = Phi z^j + D u^j + w^j.
PceVector pce_dynamics_step(const Eigen::MatrixXd& phi,
                            const Eigen::MatrixXd& d, const PceVector& z,
                            const PceVector& u, const PceVector& w);

struct InitialBasis {
  int initial_dimension = 1;
  std::vector<GermFamily> families;
};

/// n_z i.i.d. standard normal germs for the initial condition.
InitialBasis gaussian_initial_basis(int n_z);

}  // namespace sddpc
