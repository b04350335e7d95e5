#include "sddpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "sddpc/errors.hpp"
#include "sddpc/linalg.hpp"

namespace sddpc {

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

bool is_zero(const AffineMap& m, int row) {
  if (m.offset(row) != 0.0) return false;
  for (Eigen::Index c = 0; c < m.coeff.cols(); ++c)
    if (m.coeff(row, c) != 0.0) return false;
  return true;
}

/// Rows of several maps stacked, over the union of their columns.
AffineMap concat(const std::vector<AffineMap>& parts) {
  std::map<int, int> where;
  int rows = 0;
  for (const auto& p : parts) {
    rows += p.rows();
    for (int c : p.columns) where.emplace(c, 0);
  }
  AffineMap out;
  int k = 0;
  for (auto& [col, pos] : where) {
    pos = k++;
    out.columns.push_back(col);
  }
  out.offset.resize(rows);
  out.coeff = Eigen::MatrixXd::Zero(rows, k);
  int r0 = 0;
  for (const auto& p : parts) {
    out.offset.segment(r0, p.rows()) = p.offset;
    for (std::size_t c = 0; c < p.columns.size(); ++c)
      out.coeff.block(r0, where.at(p.columns[c]), p.rows(), 1) = p.coeff.col(c);
    r0 += p.rows();
  }
  return out;
}

bool causal_allowed(int l_ini, int n_w, CausalityMode mode, int j, int step) {
  return j < l_ini + step * n_w + (mode == CausalityMode::Literal ? 1 : 0);
}

AffineMap state_map(const OcpLayout& lay, int j, int step) {
  return concat({lay.u_traj[j].rows_slice(step * lay.n_u, lay.t_ini * lay.n_u),
                 lay.y_traj[j].rows_slice(step * lay.n_y, lay.t_ini * lay.n_y)});
}

class ProgramBuilder {
 public:
  explicit ProgramBuilder(int n) : n_(n), q_(Eigen::VectorXd::Zero(n)) {}

  /// Adds (c + M x)' W (c + M x) to the objective.
  void add_quadratic(const AffineMap& e, const Eigen::MatrixXd& w) {
    const Eigen::MatrixXd wm = w * e.coeff;
    const Eigen::MatrixXd h = e.coeff.transpose() * wm;
    const Eigen::VectorXd g = wm.transpose() * e.offset;
    constant_ += e.offset.dot(w * e.offset);
    const int k = static_cast<int>(e.columns.size());
    for (int a = 0; a < k; ++a) {
      q_(e.columns[a]) += 2.0 * g(a);
      for (int b = 0; b < k; ++b)
        if (h(a, b) != 0.0) p_.emplace_back(e.columns[a], e.columns[b], 2.0 * h(a, b));
    }
  }

  /// Constraint row whose slack is offset + sign * (c + M x).
  void add_row(const AffineMap& e, int row, double sign, double offset) {
    for (std::size_t c = 0; c < e.columns.size(); ++c) {
      const double v = e.coeff(row, static_cast<Eigen::Index>(c));
      if (v != 0.0) a_.emplace_back(rows_, e.columns[c], -sign * v);
    }
    b_.push_back(offset + sign * e.offset(row));
    ++rows_;
  }

  /// Row with slack b - sum coeffs x.
  void add_raw_row(const std::vector<std::pair<int, double>>& coeffs, double b) {
    for (const auto& [col, v] : coeffs)
      if (v != 0.0) a_.emplace_back(rows_, col, v);
    b_.push_back(b);
    ++rows_;
  }

  void add_cone(ConeKind kind, int size) {
    if (size <= 0) return;
    if (!cones_.empty() && cones_.back().kind == kind && kind != ConeKind::SecondOrder)
      cones_.back().size += size;
    else
      cones_.push_back({kind, size});
  }

  int rows() const { return rows_; }
  double constant() const { return constant_; }

  ConicProgram build() const {
    ConicProgram pr;
    pr.p.resize(n_, n_);
    pr.p.setFromTriplets(p_.begin(), p_.end());
    pr.p.makeCompressed();
    pr.q = q_;
    pr.a.resize(rows_, n_);
    pr.a.setFromTriplets(a_.begin(), a_.end());
    pr.a.makeCompressed();
    pr.b = Eigen::Map<const Eigen::VectorXd>(b_.data(), static_cast<Eigen::Index>(b_.size()));
    pr.cones = cones_;
    return pr;
  }

 private:
  int n_;
  std::vector<Triplet> p_, a_;
  Eigen::VectorXd q_;
  std::vector<double> b_;
  std::vector<Cone> cones_;
  int rows_ = 0;
  double constant_ = 0.0;
};

Eigen::MatrixXd block_diag_repeat(const Eigen::MatrixXd& w, int times) {
  const Eigen::Index k = w.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k * times, k * times);
  for (int i = 0; i < times; ++i) out.block(i * k, i * k, k, k) = w;
  return out;
}

/// Tightened two-sided constraint rows for one scalar across all j.
void add_chance_rows(ProgramBuilder& pb, const std::vector<AffineMap>& traj,
                     int row, const Interval& iv, double sigma) {
  std::vector<int> spread;
  for (int j = 1; j < static_cast<int>(traj.size()); ++j)
    if (!is_zero(traj[j], row)) spread.push_back(j);
  const int size = 1 + static_cast<int>(spread.size());
  for (int side = 0; side < 2; ++side) {
    const double bound = side == 0 ? iv.high : iv.low;
    if (!std::isfinite(bound)) continue;
    // upper: high - mean ; lower: mean - low
    if (side == 0)
      pb.add_row(traj[0], row, -1.0, bound);
    else
      pb.add_row(traj[0], row, 1.0, -bound);
    for (int j : spread) pb.add_row(traj[j], row, sigma, 0.0);
    pb.add_cone(ConeKind::SecondOrder, size);
  }
}

}  // namespace

std::string to_string(CausalityMode m) {
  return m == CausalityMode::Strict ? "strict" : "literal";
}

std::string to_string(MuMode m) {
  switch (m) {
    case MuMode::Free: return "free";
    case MuMode::Zero: return "zero";
    case MuMode::One: return "one";
  }
  return "?";
}

CausalityMode causality_from_string(const std::string& s) {
  if (s == "strict") return CausalityMode::Strict;
  if (s == "literal") return CausalityMode::Literal;
  throw ParameterError("causality mode must be strict or literal, got '" + s + "'");
}

MuMode mu_mode_from_string(const std::string& s) {
  if (s == "free") return MuMode::Free;
  if (s == "zero") return MuMode::Zero;
  if (s == "one") return MuMode::One;
  throw ParameterError("mu mode must be free, zero or one, got '" + s + "'");
}

double tightening_sigma(double eps) {
  if (!(eps > 0.0 && eps <= 1.0))
    throw ParameterError("chance level must lie in (0, 1], got " + std::to_string(eps));
  return std::sqrt((2.0 - eps) / eps);
}

void OcpConfig::validate(int n_u, int n_y, int t_ini) const {
  std::vector<std::string> bad;
  if (horizon < 1) bad.push_back("horizon must be >= 1");
  if (q.rows() != n_y || q.cols() != n_y)
    bad.push_back("Q must be " + std::to_string(n_y) + "x" + std::to_string(n_y));
  else if (!q.isApprox(q.transpose(), 1e-12) || min_symmetric_eigenvalue(q) <= 0.0)
    bad.push_back("Q must be symmetric positive definite");
  if (r.rows() != n_u || r.cols() != n_u)
    bad.push_back("R must be " + std::to_string(n_u) + "x" + std::to_string(n_u));
  else if (!r.isApprox(r.transpose(), 1e-12) || min_symmetric_eigenvalue(r) <= 0.0)
    bad.push_back("R must be symmetric positive definite");
  if (!(eps_u > 0.0 && eps_u <= 1.0)) bad.push_back("eps_u must lie in (0, 1]");
  if (!(eps_y > 0.0 && eps_y <= 1.0)) bad.push_back("eps_y must lie in (0, 1]");
  auto check_bounds = [&](const std::vector<Interval>& b, int n, const char* what) {
    if (b.empty()) return;
    if (static_cast<int>(b.size()) != n) {
      bad.push_back(std::string(what) + " bounds need " + std::to_string(n) + " intervals");
      return;
    }
    for (int i = 0; i < n; ++i)
      if (!(b[i].low <= b[i].high))
        bad.push_back(std::string(what) + " interval " + std::to_string(i) + " is empty");
  };
  check_bounds(output_bounds, n_y, "output");
  check_bounds(input_bounds, n_u, "input");
  const int n_z = t_ini * (n_u + n_y);
  if (!basis) {
    bad.push_back("PCE basis missing");
  } else {
    if (basis->horizon() != horizon) bad.push_back("basis horizon differs from N");
    if (basis->initial_dimension() != n_z + 1 && basis->initial_dimension() != 1)
      bad.push_back("basis initial dimension must be 1 or n_z + 1 = " +
                    std::to_string(n_z + 1));
  }
  if (terminal.p.rows() != n_z || terminal.gamma.rows() != n_z ||
      terminal.f.cols() != n_z)
    bad.push_back("terminal ingredients do not match n_z = " + std::to_string(n_z));
  if (!bad.empty()) {
    std::string msg = "invalid OCP configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ParameterError(msg);
  }
}

bool input_coefficient_allowed(const PceBasis& basis, CausalityMode mode, int j,
                               int step) {
  return causal_allowed(basis.initial_dimension(), basis.disturbance_dimension() - 1,
                        mode, j, step);
}

InitialConditionData prepare_initial(const Eigen::VectorXd& z_k,
                                     const Eigen::MatrixXd& z_next) {
  if (z_next.rows() != z_k.size() || z_next.cols() < 1)
    throw DimensionError("previous prediction must be n_z x L");
  InitialConditionData d;
  d.z_k = z_k;
  d.mean_pred = z_next.col(0);
  const auto tail = z_next.rightCols(z_next.cols() - 1);
  d.q_rhs = tail * tail.transpose();
  const PsdRoot root = psd_sqrt(d.q_rhs);
  d.root = root.root;
  d.clamped = root.clamped;
  return d;
}

InitialConditionData bootstrap_initial(const Eigen::VectorXd& z_0) {
  InitialConditionData d;
  d.z_k = z_0;
  d.mean_pred = z_0;
  d.q_rhs = Eigen::MatrixXd::Zero(z_0.size(), z_0.size());
  d.root = d.q_rhs;
  return d;
}

Eigen::MatrixXd disturbance_coefficients(const std::vector<GermFamily>& families,
                                         const PceBasisPtr& basis) {
  const int n_w = static_cast<int>(families.size());
  const int n = basis->horizon();
  Eigen::MatrixXd w(n * n_w, basis->dimension());
  for (int i = 0; i < n; ++i)
    w.middleRows(i * n_w, n_w) =
        exact_pce_of_disturbance(families, basis, i).coefficients().transpose();
  return w;
}

Eigen::VectorXd AffineMap::evaluate(const Eigen::VectorXd& x) const {
  Eigen::VectorXd v = offset;
  for (std::size_t c = 0; c < columns.size(); ++c)
    v += coeff.col(static_cast<Eigen::Index>(c)) * x(columns[c]);
  return v;
}

AffineMap AffineMap::rows_slice(int first, int count) const {
  AffineMap out;
  out.offset = offset.segment(first, count);
  out.coeff = coeff.middleRows(first, count);
  out.columns = columns;
  return out;
}

OcpProblem assemble(const OcpConfig& cfg, const HankelPredictor& predictor,
                    const InitialConditionData& init,
                    const Eigen::MatrixXd& w_coeffs, MuMode mu_mode,
                    Formulation formulation) {
  const HankelStack& hs = predictor.stack();
  const int n_u = hs.n_u, n_y = hs.n_y, n_w = hs.n_w, t_ini = hs.t_ini;
  const int n = cfg.horizon;
  cfg.validate(n_u, n_y, t_ini);
  if (hs.horizon != n) throw DimensionError("Hankel depth does not match the horizon");
  const PceBasis& basis = *cfg.basis;
  const int big_l = basis.dimension();
  const int n_z = t_ini * (n_u + n_y);
  const int n_wg = basis.disturbance_dimension() - 1;
  if (n_wg != n_w && n_wg != 0)
    throw DimensionError("basis disturbance block must be empty or n_w sized");
  if (init.z_k.size() != n_z || init.mean_pred.size() != n_z ||
      init.root.rows() != n_z || init.root.cols() != n_z)
    throw DimensionError("initial-condition data must be n_z sized");
  if (w_coeffs.rows() != n * n_w || w_coeffs.cols() != big_l)
    throw DimensionError("disturbance coefficients must be (N n_w) x L");

  OcpLayout lay;
  lay.formulation = formulation;
  lay.mu_mode = mu_mode;
  lay.causality = cfg.causality;
  lay.n_u = n_u;
  lay.n_y = n_y;
  lay.n_w = n_w;
  lay.n_z = n_z;
  lay.t_ini = t_ini;
  lay.horizon = n;
  lay.dimension = big_l;
  lay.initial_dimension = basis.initial_dimension();
  lay.disturbance_germs = n_wg;
  lay.columns = hs.columns();
  lay.w_coeffs = w_coeffs;

  // Initial extended-state coefficients, affine in mu: zc + mu * zm.
  Eigen::MatrixXd zc = Eigen::MatrixXd::Zero(n_z, big_l);
  Eigen::MatrixXd zm = Eigen::MatrixXd::Zero(n_z, big_l);
  zc.col(0) = init.mean_pred;
  zm.col(0) = init.z_k - init.mean_pred;
  const int n_init = basis.initial_dimension() - 1;
  if (n_init == 0 && init.root.cwiseAbs().maxCoeff() > 0.0)
    throw ParameterError("a basis without initial germs needs zero initial covariance");
  for (int j = 1; j <= n_init; ++j) {
    zc.col(j) = init.root.col(j - 1);
    zm.col(j) = -init.root.col(j - 1);
  }
  const int pu = t_ini * n_u, py = t_ini * n_y;
  const int tu = (t_ini + n) * n_u, ty = (t_ini + n) * n_y;

  std::vector<std::vector<int>> free_rows(big_l);  // future input rows allowed
  for (int j = 0; j < big_l; ++j)
    for (int i = 0; i < n; ++i)
      if (input_coefficient_allowed(basis, cfg.causality, j, i))
        for (int c = 0; c < n_u; ++c) free_rows[j].push_back(i * n_u + c);

  int num_vars = 0;
  lay.u_traj.resize(big_l);
  lay.y_traj.resize(big_l);
  if (formulation == Formulation::Condensed) {
    std::vector<int> first(big_l);
    for (int j = 0; j < big_l; ++j) {
      first[j] = num_vars;
      num_vars += static_cast<int>(free_rows[j].size());
    }
    lay.mu_index = num_vars++;
    const Eigen::MatrixXd& pi = predictor.pi();
    const auto pi_z = pi.leftCols(n_z);
    const auto pi_u = predictor.pi_u_future();
    const auto pi_w = predictor.pi_w_future();
    for (int j = 0; j < big_l; ++j) {
      const int nf = static_cast<int>(free_rows[j].size());
      AffineMap& u = lay.u_traj[j];
      u.offset = Eigen::VectorXd::Zero(tu);
      u.coeff = Eigen::MatrixXd::Zero(tu, nf + 1);
      for (int k = 0; k < nf; ++k) {
        u.columns.push_back(first[j] + k);
        u.coeff(pu + free_rows[j][k], k) = 1.0;
      }
      u.columns.push_back(lay.mu_index);
      u.offset.head(pu) = zc.col(j).head(pu);
      u.coeff.col(nf).head(pu) = zm.col(j).head(pu);

      AffineMap& y = lay.y_traj[j];
      y.columns = u.columns;
      y.offset = Eigen::VectorXd::Zero(ty);
      y.coeff = Eigen::MatrixXd::Zero(ty, nf + 1);
      y.offset.head(py) = zc.col(j).tail(py);
      y.coeff.col(nf).head(py) = zm.col(j).tail(py);
      y.offset.tail(n * n_y) = pi_z * zc.col(j) + pi_w * w_coeffs.col(j);
      y.coeff.col(nf).tail(n * n_y) = pi_z * zm.col(j);
      for (int k = 0; k < nf; ++k)
        y.coeff.col(k).tail(n * n_y) = pi_u.col(free_rows[j][k]);
    }
  } else {
    // g = T g_hat with T = V_r diag(1/s_r) from the SVD of the
    // row-equilibrated stacked Hankel matrix: g_hat spans its row space, which
    // reaches every trajectory H g, and whitens the equality block.
    Eigen::MatrixXd h(hs.hu.rows() + hs.hy.rows() + hs.hw.rows(), hs.columns());
    h << hs.hu, hs.hy, hs.hw;
    const Eigen::VectorXd rs = h.rowwise().norm().cwiseMax(1e-300).cwiseInverse();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rs.asDiagonal() * h, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    int rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-12 * sv(0)) ++rank;
    lay.g_basis = svd.matrixV().leftCols(rank) *
                  sv.head(rank).cwiseInverse().asDiagonal();
    const Eigen::MatrixXd hu = hs.hu * lay.g_basis, hy = hs.hy * lay.g_basis;
    lay.g_offset.resize(big_l);
    for (int j = 0; j < big_l; ++j) {
      lay.g_offset[j] = num_vars;
      std::vector<int> cols(rank);
      for (int k = 0; k < rank; ++k) cols[k] = num_vars + k;
      num_vars += rank;
      lay.u_traj[j] = {Eigen::VectorXd::Zero(tu), hu, cols};
      lay.y_traj[j] = {Eigen::VectorXd::Zero(ty), hy, cols};
    }
    lay.mu_index = num_vars++;
  }

  ProgramBuilder pb(num_vars);

  // Objective.
  const Eigen::MatrixXd wq = block_diag_repeat(cfg.q, n);
  const Eigen::MatrixXd wr = block_diag_repeat(cfg.r, n);
  for (int j = 0; j < big_l; ++j) {
    pb.add_quadratic(lay.y_traj[j].rows_slice(py, n * n_y), wq);
    pb.add_quadratic(lay.u_traj[j].rows_slice(pu, n * n_u), wr);
    pb.add_quadratic(state_map(lay, j, n), cfg.terminal.p);
  }
  lay.objective_constant = pb.constant();

  // Equalities of the full formulation: disturbance pinning, initial
  // condition and causality zeros.
  if (formulation == Formulation::Full) {
    const int mu = lay.mu_index;
    const Eigen::MatrixXd hw = hs.hw * lay.g_basis;
    const AffineMap w_map{Eigen::VectorXd::Zero(n * n_w), hw, {}};
    for (int j = 0; j < big_l; ++j) {
      AffineMap wj = w_map;
      wj.columns = lay.u_traj[j].columns;
      wj.offset = -w_coeffs.col(j);
      for (int r = 0; r < wj.rows(); ++r) pb.add_row(wj, r, 1.0, 0.0);
      AffineMap init_map = state_map(lay, j, 0);
      init_map.offset -= zc.col(j);
      init_map.columns.push_back(mu);
      init_map.coeff.conservativeResize(Eigen::NoChange, init_map.coeff.cols() + 1);
      init_map.coeff.rightCols(1) = -zm.col(j);
      for (int r = 0; r < init_map.rows(); ++r) pb.add_row(init_map, r, 1.0, 0.0);
      int zeros = 0;
      for (int r = 0; r < n * n_u; ++r)
        if (!std::binary_search(free_rows[j].begin(), free_rows[j].end(), r)) {
          pb.add_row(lay.u_traj[j], pu + r, 1.0, 0.0);
          ++zeros;
        }
      pb.add_cone(ConeKind::Zero, wj.rows() + init_map.rows() + zeros);
    }
  }

  // Interpolation weight.
  if (mu_mode == MuMode::Free) {
    pb.add_raw_row({{lay.mu_index, -1.0}}, 0.0);
    pb.add_raw_row({{lay.mu_index, 1.0}}, 1.0);
    pb.add_cone(ConeKind::NonNeg, 2);
  } else {
    pb.add_raw_row({{lay.mu_index, 1.0}}, mu_mode == MuMode::One ? 1.0 : 0.0);
    pb.add_cone(ConeKind::Zero, 1);
  }

  // Terminal set on the mean.
  const TerminalIngredients& term = cfg.terminal;
  {
    const AffineMap z0 = state_map(lay, 0, n);
    AffineMap fz;
    fz.offset = term.f * z0.offset;
    fz.coeff = term.f * z0.coeff;
    fz.columns = z0.columns;
    for (int r = 0; r < fz.rows(); ++r) pb.add_row(fz, r, -1.0, term.f_rhs(r));
    pb.add_cone(ConeKind::NonNeg, fz.rows());
  }

  // Tightened chance constraints.
  if (cfg.tighten) {
    const double sy = tightening_sigma(cfg.eps_y), su = tightening_sigma(cfg.eps_u);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < n_y && !cfg.output_bounds.empty(); ++c)
        if (cfg.output_bounds[c].bounded())
          add_chance_rows(pb, lay.y_traj, py + i * n_y + c, cfg.output_bounds[c], sy);
      for (int c = 0; c < n_u && !cfg.input_bounds.empty(); ++c)
        if (cfg.input_bounds[c].bounded())
          add_chance_rows(pb, lay.u_traj, pu + i * n_u + c, cfg.input_bounds[c], su);
    }
  }

  // Terminal covariance level: ||Gamma^{1/2} [z^1; ...; z^{L-1}]_N|| <= sqrt(gamma).
  {
    const Eigen::MatrixXd gh = psd_sqrt(term.gamma).root;
    lay.terminal_soc_row = pb.rows();
    pb.add_raw_row({}, std::sqrt(std::max(term.gamma_level, 0.0)));
    int size = 1;
    for (int j = 1; j < big_l; ++j) {
      const AffineMap zj = state_map(lay, j, n);
      bool zero = true;
      for (int r = 0; r < zj.rows() && zero; ++r) zero = is_zero(zj, r);
      if (zero) continue;
      AffineMap gz;
      gz.offset = gh * zj.offset;
      gz.coeff = gh * zj.coeff;
      gz.columns = zj.columns;
      for (int r = 0; r < gz.rows(); ++r) pb.add_row(gz, r, 1.0, 0.0);
      size += gz.rows();
    }
    pb.add_cone(ConeKind::SecondOrder, size);
    lay.terminal_soc_size = size;
  }

  OcpProblem out;
  out.program = pb.build();
  out.layout = std::move(lay);
  return out;
}

Eigen::MatrixXd OcpSolution::input_at(int step, int n_u, int t_ini) const {
  return u.middleRows((t_ini + step) * n_u, n_u);
}

Eigen::MatrixXd extended_state_coefficients(const Eigen::MatrixXd& u,
                                            const Eigen::MatrixXd& y, int step,
                                            int n_u, int n_y, int t_ini) {
  Eigen::MatrixXd z(t_ini * (n_u + n_y), u.cols());
  z.topRows(t_ini * n_u) = u.middleRows(step * n_u, t_ini * n_u);
  z.bottomRows(t_ini * n_y) = y.middleRows(step * n_y, t_ini * n_y);
  return z;
}

OcpSolution decode(const OcpProblem& problem, const ConicSolution& raw,
                   const HankelPredictor& predictor, bool allow_inexact) {
  const OcpLayout& lay = problem.layout;
  const ConicProgram& pr = problem.program;
  const bool small =
      raw.primal_residual <= 1e-4 * (1.0 + inf_norm(pr.b)) &&
      raw.dual_residual <= 1e-4 * (1.0 + inf_norm(pr.q));
  if (raw.status != SolveStatus::Optimal &&
      !(allow_inexact && raw.status == SolveStatus::MaxIter && small))
    throw NumericalError("cannot decode a solve with status " + to_string(raw.status));
  if (raw.x.size() != pr.num_variables())
    throw DimensionError("solution length does not match the program");

  const int big_l = lay.dimension, n = lay.horizon;
  const int n_u = lay.n_u, n_y = lay.n_y, t_ini = lay.t_ini;
  OcpSolution sol;
  sol.status = raw.status;
  sol.inexact = raw.status != SolveStatus::Optimal;
  sol.iterations = raw.iterations;
  sol.primal_residual = raw.primal_residual;
  sol.dual_residual = raw.dual_residual;
  sol.polished = raw.polished;
  sol.mu = raw.x(lay.mu_index);
  sol.value = raw.objective + lay.objective_constant;
  sol.u.resize((t_ini + n) * n_u, big_l);
  sol.y.resize((t_ini + n) * n_y, big_l);
  for (int j = 0; j < big_l; ++j) {
    sol.u.col(j) = lay.u_traj[j].evaluate(raw.x);
    sol.y.col(j) = lay.y_traj[j].evaluate(raw.x);
  }

  const HankelStack& hs = predictor.stack();
  if (lay.formulation == Formulation::Full) {
    sol.g.resize(hs.columns(), big_l);
    for (int j = 0; j < big_l; ++j)
      sol.g.col(j) =
          lay.g_basis * raw.x.segment(lay.g_offset[j], lay.g_basis.cols());
  } else {
    Eigen::MatrixXd rhs(predictor.pinning().rows(), big_l);
    rhs << sol.u.topRows(t_ini * n_u), sol.y.topRows(t_ini * n_y),
        sol.u.bottomRows(n * n_u), lay.w_coeffs;
    sol.g = predictor.solve_g(rhs);
  }

  Eigen::MatrixXd h(hs.hu.rows() + hs.hy.rows() + hs.hw.rows(), hs.columns());
  h << hs.hu, hs.hy, hs.hw;
  Eigen::MatrixXd target(h.rows(), big_l);
  target << sol.u, sol.y, lay.w_coeffs;
  const Eigen::MatrixXd res = accurate_residual(h, sol.g, target);
  const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
  sol.hankel_residual = res.cwiseAbs().maxCoeff() / scale;

  sol.causality_residual = 0.0;
  for (int j = 0; j < big_l; ++j)
    for (int i = 0; i < n; ++i)
      if (!causal_allowed(lay.initial_dimension, lay.disturbance_germs, lay.causality, j, i))
        for (int c = 0; c < n_u; ++c)
          sol.causality_residual = std::max(
              sol.causality_residual, std::abs(sol.u((t_ini + i) * n_u + c, j)));

  if (sol.hankel_residual > 1e-7 || sol.causality_residual > 1e-7)
    throw NumericalError("decoded solution violates the OCP structure: Hankel residual " +
                         std::to_string(sol.hankel_residual) + ", causality residual " +
                         std::to_string(sol.causality_residual));

  sol.z_initial = extended_state_coefficients(sol.u, sol.y, 0, n_u, n_y, t_ini);
  sol.z_next = extended_state_coefficients(sol.u, sol.y, 1, n_u, n_y, t_ini);
  sol.z_terminal = extended_state_coefficients(sol.u, sol.y, n, n_u, n_y, t_ini);
  return sol;
}

Eigen::VectorXd lift_to_full(const OcpProblem& full, const OcpSolution& sol) {
  const OcpLayout& lay = full.layout;
  if (lay.formulation != Formulation::Full)
    throw ParameterError("lift_to_full needs a full-formulation program");
  if (sol.g.rows() != lay.g_basis.rows() || sol.g.cols() != lay.dimension)
    throw DimensionError("solution g does not match the program");
  // Columns of g_basis are orthogonal, so the coordinates are projections.
  const Eigen::VectorXd inv_sq =
      lay.g_basis.colwise().squaredNorm().transpose().cwiseInverse();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(full.program.num_variables());
  for (int j = 0; j < lay.dimension; ++j)
    x.segment(lay.g_offset[j], lay.g_basis.cols()) =
        inv_sq.asDiagonal() * (lay.g_basis.transpose() * sol.g.col(j));
  x(lay.mu_index) = sol.mu;
  return x;
}

OcpSolver::OcpSolver(SolverSettings settings) : solver_(settings) {}

OcpSolution OcpSolver::solve(const OcpConfig& config,
                             const HankelPredictor& predictor,
                             const InitialConditionData& init,
                             const Eigen::MatrixXd& w_coeffs, MuMode mu_mode,
                             Formulation formulation) {
  problem_ = assemble(config, predictor, init, w_coeffs, mu_mode, formulation);
  const ConicProgram& pr = problem_.program;
  WarmStart warm;
  const bool use_warm = warm_start && have_last_ &&
                        last_.x.size() == pr.num_variables() &&
                        last_.y.size() == pr.num_constraints();
  if (use_warm) warm = {last_.x, last_.s, last_.y};
  last_ = solver_.solve(pr, use_warm ? &warm : nullptr);
  have_last_ = last_.status == SolveStatus::Optimal;
  try {
    return decode(problem_, last_, predictor, true);
  } catch (const NumericalError&) {
    if (last_.status == SolveStatus::Optimal) throw;
    OcpSolution failed;
    failed.status = last_.status;
    failed.iterations = last_.iterations;
    failed.primal_residual = last_.primal_residual;
    failed.dual_residual = last_.dual_residual;
    return failed;
  }
}

}  // namespace sddpc
