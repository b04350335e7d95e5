#include "sddpc/pce.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "sddpc/errors.hpp"

namespace sddpc {

GermFamily GermFamily::gaussian(double mean, double std_dev) {
  GermFamily f;
  f.kind = GermKind::GaussianHermite;
  f.mean = mean;
  f.std_dev = std_dev;
  f.validate();
  return f;
}

GermFamily GermFamily::uniform(double low, double high) {
  GermFamily f;
  f.kind = GermKind::UniformLegendre;
  f.low = low;
  f.high = high;
  f.validate();
  return f;
}

void GermFamily::validate() const {
  switch (kind) {
    case GermKind::GaussianHermite:
      if (!(std_dev > 0.0) || !std::isfinite(std_dev) || !std::isfinite(mean))
        throw ParameterError("gaussian germ family needs a finite std > 0");
      return;
    case GermKind::UniformLegendre:
      if (!(low < high) || !std::isfinite(low) || !std::isfinite(high))
        throw ParameterError("uniform germ family needs finite low < high");
      return;
  }
  throw ParameterError("unknown germ family kind");
}

double GermFamily::expected_value() const {
  return kind == GermKind::GaussianHermite ? mean : 0.5 * (low + high);
}

double GermFamily::standard_deviation() const {
  return kind == GermKind::GaussianHermite ? std_dev
                                           : (high - low) / std::sqrt(12.0);
}

double orthonormal_polynomial(GermKind kind, int degree, double xi) {
  if (degree < 0) throw ParameterError("polynomial degree must be >= 0");
  double p_prev = 0.0;
  double p = 1.0;
  if (kind == GermKind::GaussianHermite) {
    // Probabilists' Hermite: He_{n+1} = xi He_n - n He_{n-1}; norm sqrt(n!).
    double factorial = 1.0;
    for (int n = 0; n < degree; ++n) {
      const double next = xi * p - n * p_prev;
      p_prev = p;
      p = next;
      factorial *= n + 1;
    }
    return p / std::sqrt(factorial);
  }
  // Legendre: (n+1) P_{n+1} = (2n+1) xi P_n - n P_{n-1}; norm 1/sqrt(2n+1)
  // under the uniform density on [-1, 1].
  for (int n = 0; n < degree; ++n) {
    const double next = ((2.0 * n + 1.0) * xi * p - n * p_prev) / (n + 1.0);
    p_prev = p;
    p = next;
  }
  return p * std::sqrt(2.0 * degree + 1.0);
}

double draw_standard_germ(GermKind kind, std::mt19937_64& rng) {
  if (kind == GermKind::GaussianHermite) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
  }
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  return dist(rng);
}

PceBasis::PceBasis(std::vector<GermKind> initial_germs,
                   std::vector<GermKind> disturbance_germs, int horizon)
    : initial_(std::move(initial_germs)),
      disturbance_(std::move(disturbance_germs)),
      horizon_(horizon) {
  if (horizon_ < 0) throw ParameterError("basis horizon must be >= 0");
  dimension_ = initial_dimension() + horizon_ * (disturbance_dimension() - 1);
}

IndexRange PceBasis::initial_block() const {
  return {1, initial_dimension() - 1};
}

IndexRange PceBasis::disturbance_block(int step) const {
  if (step < 0 || step >= horizon_)
    throw ParameterError("disturbance block index " + std::to_string(step) +
                         " outside [0, " + std::to_string(horizon_ - 1) + "]");
  const int width = disturbance_dimension() - 1;
  return {initial_dimension() + step * width, width};
}

GermKind PceBasis::germ_kind(int j) const {
  if (j <= 0 || j >= dimension_)
    throw ParameterError("basis index " + std::to_string(j) +
                         " has no germ (valid: 1.." +
                         std::to_string(dimension_ - 1) + ")");
  if (j < initial_dimension()) return initial_[j - 1];
  const int width = disturbance_dimension() - 1;
  return disturbance_[(j - initial_dimension()) % width];
}

Eigen::VectorXd PceBasis::draw_realization(std::mt19937_64& rng) const {
  Eigen::VectorXd phi(dimension_ - 1);
  for (int j = 1; j < dimension_; ++j)
    phi(j - 1) =
        orthonormal_polynomial(germ_kind(j), 1, draw_standard_germ(germ_kind(j), rng));
  return phi;
}

PceVector::PceVector(PceBasisPtr basis, Eigen::MatrixXd coefficients)
    : basis_(std::move(basis)), coefficients_(std::move(coefficients)) {
  if (!basis_) throw ParameterError("PceVector requires a basis");
  if (coefficients_.rows() != basis_->dimension())
    throw DimensionError("PceVector has " +
                         std::to_string(coefficients_.rows()) +
                         " coefficient rows, basis dimension is " +
                         std::to_string(basis_->dimension()));
}

PceVector PceVector::zero(PceBasisPtr basis, int size) {
  if (!basis) throw ParameterError("PceVector requires a basis");
  const int rows = basis->dimension();
  return PceVector(std::move(basis), Eigen::MatrixXd::Zero(rows, size));
}

PceBasis build_joint_basis(int initial_dimension,
                           const std::vector<GermFamily>& disturbance_families,
                           int n_w, int horizon) {
  if (initial_dimension < 1) throw ParameterError("L_ini must be >= 1");
  if (horizon < 1) throw ParameterError("horizon N must be >= 1");
  if (n_w < 1) throw ParameterError("n_w must be >= 1");
  if (static_cast<int>(disturbance_families.size()) != n_w)
    throw ParameterError("expected " + std::to_string(n_w) +
                         " disturbance families, got " +
                         std::to_string(disturbance_families.size()));
  std::vector<GermKind> dist;
  for (const auto& f : disturbance_families) {
    f.validate();
    dist.push_back(f.kind);
  }
  std::vector<GermKind> init(initial_dimension - 1, GermKind::GaussianHermite);
  return PceBasis(std::move(init), std::move(dist), horizon);
}

Moments moments(const PceVector& v) {
  const auto& c = v.coefficients();
  Moments m;
  m.mean = c.row(0).transpose();
  const auto tail = c.bottomRows(c.rows() - 1);
  m.covariance = tail.transpose() * tail;
  return m;
}

PceVector exact_pce_of_disturbance(const std::vector<GermFamily>& families,
                                   const PceBasisPtr& basis, int step) {
  const int n_w = static_cast<int>(families.size());
  if (n_w != basis->disturbance_dimension() - 1)
    throw DimensionError("disturbance family count " + std::to_string(n_w) +
                         " does not match basis block width " +
                         std::to_string(basis->disturbance_dimension() - 1));
  const IndexRange block = basis->disturbance_block(step);
  PceVector w = PceVector::zero(basis, n_w);
  for (int c = 0; c < n_w; ++c) {
    const GermFamily& f = families[c];
    f.validate();
    const int j = block.first + c;
    if (basis->germ_kind(j) != f.kind)
      throw ParameterError("disturbance component " + std::to_string(c) +
                           " family does not match its basis germ");
    const double m = f.expected_value();
    if (std::abs(m) > 1e-12 * std::max(1.0, f.standard_deviation()))
      throw ParameterError("disturbance component " + std::to_string(c) +
                           " must be zero-mean");
    w.coefficients()(j, c) = f.standard_deviation();
  }
  return w;
}

Eigen::VectorXd sample_realization(const PceVector& v,
                                   const Eigen::VectorXd& germ_draws) {
  const auto& c = v.coefficients();
  if (germ_draws.size() != c.rows() - 1)
    throw DimensionError("germ draw vector has length " +
                         std::to_string(germ_draws.size()) + ", expected " +
                         std::to_string(c.rows() - 1));
  return c.row(0).transpose() +
         c.bottomRows(c.rows() - 1).transpose() * germ_draws;
}

PceVector pce_dynamics_step(const Eigen::MatrixXd& phi,
                            const Eigen::MatrixXd& d, const PceVector& z,
                            const PceVector& u, const PceVector& w) {
  if (phi.cols() != z.size() || d.cols() != u.size() ||
      phi.rows() != d.rows() || w.size() != phi.rows())
    throw DimensionError("pce_dynamics_step operand shapes disagree");
  const int L = z.basis().dimension();
  if (u.basis().dimension() != L || w.basis().dimension() != L)
    throw DimensionError("pce_dynamics_step operands use different bases");
  Eigen::MatrixXd y = z.coefficients() * phi.transpose() +
                      u.coefficients() * d.transpose() + w.coefficients();
  return PceVector(z.basis_ptr(), std::move(y));
}

InitialBasis gaussian_initial_basis(int n_z) {
  if (n_z < 1) throw ParameterError("n_z must be >= 1");
  InitialBasis b;
  b.initial_dimension = n_z + 1;
  b.families.assign(n_z, GermFamily::gaussian(0.0, 1.0));
  return b;
}

}  // namespace sddpc
