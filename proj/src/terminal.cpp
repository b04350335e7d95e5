#include "sddpc/terminal.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "sddpc/behavioral.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/linalg.hpp"

namespace sddpc {

namespace {

struct LawCandidate {
  Eigen::MatrixXd k, a_k, c_k, sigma_z;
  Eigen::VectorXd output_std, output_margin;
  Eigen::MatrixXd tight_h;
  Eigen::VectorXd tight_rhs;
  bool admissible = false;
};

// Tightened rows for one scalar signal s = row * z with interval iv.
void add_tightened(const Eigen::RowVectorXd& row, const Interval& iv,
                   double sigma_std, std::vector<Eigen::RowVectorXd>& rows,
                   std::vector<double>& rhs, double& margin) {
  margin = std::numeric_limits<double>::infinity();
  if (std::isfinite(iv.high)) {
    rows.push_back(row);
    rhs.push_back(iv.high - sigma_std);
    margin = std::min(margin, iv.high - sigma_std);
  }
  if (std::isfinite(iv.low)) {
    rows.push_back(-row);
    rhs.push_back(-iv.low - sigma_std);
    margin = std::min(margin, -iv.low - sigma_std);
  }
}

LawCandidate evaluate_law(const ExtendedStateMatrices& ext,
                          const Eigen::MatrixXd& phi, const Eigen::MatrixXd& d,
                          const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                          const Eigen::MatrixXd& sigma_w,
                          const TerminalOptions& opt, double beta) {
  const int n_y = static_cast<int>(phi.rows()), n_u = static_cast<int>(d.cols());
  const int n_z = static_cast<int>(phi.cols());
  Eigen::MatrixXd qk = q, rk = r;
  for (int c = 0; c < n_y; ++c)
    if (!opt.output_bounds.empty() && opt.output_bounds[c].bounded()) qk(c, c) += beta;
  for (int c = 0; c < n_u; ++c)
    if (!opt.input_bounds.empty() && opt.input_bounds[c].bounded()) rk(c, c) += beta;
  const Eigen::MatrixXd qx =
      phi.transpose() * qk * phi + opt.ridge * Eigen::MatrixXd::Identity(n_z, n_z);
  const Eigen::MatrixXd rx = rk + d.transpose() * qk * d;
  const Eigen::MatrixXd nx = phi.transpose() * qk * d;
  LawCandidate law;
  law.k = solve_dare(ext.a, ext.b, qx, rx, nx).k;
  law.a_k = ext.a + ext.b * law.k;
  law.c_k = phi + d * law.k;
  const Eigen::MatrixXd sigma_hat = ext.e * sigma_w * ext.e.transpose();
  law.sigma_z = solve_discrete_lyapunov(law.a_k.transpose(), sigma_hat);

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  law.output_std = Eigen::VectorXd::Zero(n_y);
  law.output_margin =
      Eigen::VectorXd::Constant(n_y, std::numeric_limits<double>::infinity());
  law.admissible = true;
  for (int c = 0; c < n_y; ++c) {
    const Eigen::RowVectorXd row = law.c_k.row(c);
    law.output_std(c) =
        std::sqrt(std::max(0.0, (row * law.sigma_z * row.transpose())(0) + sigma_w(c, c)));
    if (opt.output_bounds.empty() || !opt.output_bounds[c].bounded()) continue;
    double margin = 0.0;
    add_tightened(row, opt.output_bounds[c], opt.sigma_y * law.output_std(c), rows,
                  rhs, margin);
    law.output_margin(c) = margin;
    if (margin < opt.margin_fraction * opt.output_bounds[c].reach())
      law.admissible = false;
  }
  for (int c = 0; c < n_u; ++c) {
    if (opt.input_bounds.empty() || !opt.input_bounds[c].bounded()) continue;
    const Eigen::RowVectorXd row = law.k.row(c);
    const double sd = std::sqrt(std::max(0.0, (row * law.sigma_z * row.transpose())(0)));
    double margin = 0.0;
    add_tightened(row, opt.input_bounds[c], opt.sigma_u * sd, rows, rhs, margin);
    if (margin < opt.margin_fraction * opt.input_bounds[c].reach())
      law.admissible = false;
  }
  law.tight_h.resize(static_cast<Eigen::Index>(rows.size()), n_z);
  law.tight_rhs.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    law.tight_h.row(i) = rows[i];
    law.tight_rhs(i) = rhs[i];
  }
  return law;
}

// Point of {F z <= f} along the ray through a box sample, at a random radius.
Eigen::VectorXd sample_in_set(const Eigen::MatrixXd& f, const Eigen::VectorXd& rhs,
                              const Eigen::VectorXd& box, std::mt19937_64& rng,
                              bool boundary) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::VectorXd z(box.size());
  for (Eigen::Index i = 0; i < box.size(); ++i) z(i) = box(i) * unit(rng);
  const Eigen::VectorXd fz = f * z;
  double scale = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < fz.size(); ++r)
    if (fz(r) > 0.0) scale = std::min(scale, rhs(r) / fz(r));
  if (!std::isfinite(scale)) scale = 1.0;
  const double radius = boundary ? 1.0 : 0.5 * (unit(rng) + 1.0);
  return scale * radius * z;
}

}  // namespace

double Interval::reach() const {
  double r = std::numeric_limits<double>::infinity();
  if (std::isfinite(low)) r = std::min(r, std::abs(low));
  if (std::isfinite(high)) r = std::min(r, std::abs(high));
  return r;
}

IdentifiedArx identify_arx(const DataArchive& archive, int t_ini) {
  const int t = archive.length();
  const int n_u = static_cast<int>(archive.u.cols());
  const int n_y = static_cast<int>(archive.y.cols());
  const int n_z = t_ini * (n_u + n_y);
  const int rows = t - t_ini;
  if (rows <= n_z + n_u)
    throw ParameterError("archive of length " + std::to_string(t) +
                         " is too short to identify " +
                         std::to_string(n_z + n_u) + " regressors");
  Eigen::MatrixXd x(rows, n_z + n_u), target(rows, n_y);
  for (int i = 0; i < rows; ++i) {
    const int k = i + t_ini;
    const ExtendedState z = ExtendedState::from_window(
        archive.u.middleRows(k - t_ini, t_ini), archive.y.middleRows(k - t_ini, t_ini));
    x.row(i) << z.values.transpose(), archive.u.row(k);
    target.row(i) = archive.y.row(k) - archive.w.row(k);
  }
  Eigen::MatrixXd xs = x;
  Eigen::VectorXd col_scale(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double n = x.col(c).norm();
    col_scale(c) = n > 0.0 ? 1.0 / n : 1.0;
  }
  xs = x * col_scale.asDiagonal();
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(xs).singularValues();
  IdentifiedArx id;
  id.condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                         : std::numeric_limits<double>::infinity();
  if (!(id.condition < 1e12))
    throw NumericalError("identification regressors are rank deficient (condition " +
                         std::to_string(id.condition) + ")");
  const EquilibratedSolver solver(x);
  const Eigen::MatrixXd theta = solver.solve(target);  // (n_z + n_u) x n_y
  id.phi = theta.topRows(n_z).transpose();
  id.d = theta.bottomRows(n_u).transpose();
  id.max_residual = accurate_residual(x, theta, target).cwiseAbs().maxCoeff();
  return id;
}

Eigen::MatrixXd terminal_cost_matrix(const Eigen::MatrixXd& a_k,
                                     const Eigen::MatrixXd& k,
                                     const Eigen::MatrixXd& c_k,
                                     const Eigen::MatrixXd& q,
                                     const Eigen::MatrixXd& r, double ridge) {
  const Eigen::Index n = a_k.rows();
  const Eigen::MatrixXd stage = k.transpose() * r * k + c_k.transpose() * q * c_k +
                                ridge * Eigen::MatrixXd::Identity(n, n);
  return solve_discrete_lyapunov(a_k, stage);
}

TerminalIngredients synthesize(const Eigen::MatrixXd& phi,
                               const Eigen::MatrixXd& d, int t_ini,
                               const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& r,
                               const Eigen::MatrixXd& sigma_w,
                               const TerminalOptions& opt) {
  const int n_y = static_cast<int>(phi.rows()), n_u = static_cast<int>(d.cols());
  const ExtendedStateMatrices ext = extended_state_matrices(phi, d, t_ini);
  const int n_z = static_cast<int>(ext.a.rows());
  if (q.rows() != n_y || q.cols() != n_y || r.rows() != n_u || r.cols() != n_u ||
      sigma_w.rows() != n_y || sigma_w.cols() != n_y)
    throw DimensionError("terminal design weights have wrong shapes");
  if (!opt.output_bounds.empty() && static_cast<int>(opt.output_bounds.size()) != n_y)
    throw DimensionError("output bounds need one interval per output");
  if (!opt.input_bounds.empty() && static_cast<int>(opt.input_bounds.size()) != n_u)
    throw DimensionError("input bounds need one interval per input");
  if (min_symmetric_eigenvalue(q) <= 0.0 || min_symmetric_eigenvalue(r) <= 0.0)
    throw ParameterError("Q and R must be positive definite");

  std::vector<double> grid;
  if (opt.beta >= 0.0) {
    grid.push_back(opt.beta);
  } else {
    grid.push_back(0.0);
    for (int k = 0; k <= 16; ++k) grid.push_back(std::pow(10.0, 0.5 * k));
  }
  LawCandidate law;
  double beta = grid.front();
  bool found = false;
  for (double b : grid) {
    law = evaluate_law(ext, phi, d, q, r, sigma_w, opt, b);
    beta = b;
    if (law.admissible) {
      found = true;
      break;
    }
  }
  if (!found)
    throw NumericalError(
        "no terminal feedback leaves the required slack in the tightened constraints");

  TerminalIngredients t;
  t.k = law.k;
  t.beta = beta;
  t.output_std = law.output_std;
  t.output_margin = law.output_margin;
  t.tight_h = law.tight_h;
  t.tight_rhs = law.tight_rhs;
  // The decrease margin of P must reach opt.ridge in floating point; rounding
  // in A_K' P A_K can eat into it, so the ridge is raised by the deficit.
  const Eigen::MatrixXd stage = law.k.transpose() * r * law.k + law.c_k.transpose() * q * law.c_k;
  double ridge = opt.ridge;
  for (int attempt = 0; attempt < 5; ++attempt) {
    t.p = terminal_cost_matrix(law.a_k, law.k, law.c_k, q, r, ridge);
    const double margin = -max_symmetric_eigenvalue(
        law.a_k.transpose() * t.p * law.a_k - t.p + stage);
    if (margin >= opt.ridge) break;
    ridge += 2.0 * (opt.ridge - margin);
  }
  t.ridge = ridge;
  t.gamma = solve_discrete_lyapunov(law.a_k, Eigen::MatrixXd::Identity(n_z, n_z));
  // Same for the contraction A_K' G A_K - G <= -delta G; lambda_min(G) >= 1.
  t.delta = 1.0 / max_symmetric_eigenvalue(t.gamma);
  for (int attempt = 0; attempt < 5; ++attempt) {
    const double margin = -max_symmetric_eigenvalue(
        law.a_k.transpose() * t.gamma * law.a_k - t.gamma + t.delta * t.gamma);
    if (margin >= 0.0) break;
    t.delta += 2.0 * margin;
  }
  const Eigen::MatrixXd sigma_hat = ext.e * sigma_w * ext.e.transpose();
  t.gamma_level = (t.gamma * sigma_hat).trace() / t.delta;

  // Coordinate box in stationary standard deviations.
  Eigen::VectorXd sd = law.sigma_z.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double sd_max = sd.maxCoeff();
  for (int i = 0; i < n_z; ++i)
    if (!(sd(i) > 0.0)) sd(i) = sd_max > 0.0 ? sd_max : 1.0;
  t.box = opt.box_scale * sd;

  // Maximal output admissible set: rows H A_K^s z <= h for s = 0..s*, where
  // s* + 1 is the first step at which every row is implied by the box.
  const int n_tight = static_cast<int>(law.tight_h.rows());
  Eigen::MatrixXd h0(n_tight + 2 * n_z, n_z);
  Eigen::VectorXd b0(n_tight + 2 * n_z);
  h0.topRows(n_tight) = law.tight_h;
  b0.head(n_tight) = law.tight_rhs;
  for (int i = 0; i < n_z; ++i) {
    h0.row(n_tight + 2 * i) = Eigen::RowVectorXd::Unit(n_z, i);
    h0.row(n_tight + 2 * i + 1) = -Eigen::RowVectorXd::Unit(n_z, i);
    b0(n_tight + 2 * i) = t.box(i);
    b0(n_tight + 2 * i + 1) = t.box(i);
  }
  if ((b0.array() <= 0.0).any())
    throw NumericalError("terminal set would not contain the origin");

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (Eigen::Index r0 = 0; r0 < h0.rows(); ++r0) {
    rows.push_back(h0.row(r0));
    rhs.push_back(b0(r0));
  }
  Eigen::MatrixXd power = law.a_k;
  bool finished = false;
  for (int s = 1; s <= opt.max_horizon; ++s) {
    const Eigen::MatrixXd hs = h0 * power;
    bool any = false;
    for (Eigen::Index r0 = 0; r0 < hs.rows(); ++r0) {
      const double reach = hs.row(r0).cwiseAbs().dot(t.box.transpose());
      if (reach > b0(r0) * (1.0 - 1e-12)) {
        rows.push_back(hs.row(r0));
        rhs.push_back(b0(r0));
        any = true;
      }
    }
    if (!any) {
      t.set_horizon = s - 1;
      finished = true;
      break;
    }
    power = power * law.a_k;
  }
  if (!finished)
    throw NumericalError("terminal set construction did not terminate");
  t.f.resize(static_cast<Eigen::Index>(rows.size()), n_z);
  t.f_rhs.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t.f.row(i) = rows[i];
    t.f_rhs(i) = rhs[i];
  }

  // Sampled verification with shrink-and-retry.
  for (int attempt = 0; attempt < 10; ++attempt) {
    const TerminalCheck chk =
        check_terminal(t, phi, d, t_ini, q, r, opt.verification_samples, opt.seed);
    if (chk.invariance_violations == 0 && chk.constraint_violations == 0) return t;
    t.f_rhs *= 0.9;
    t.box *= 0.9;
    t.shrink *= 0.9;
  }
  throw NumericalError("terminal set failed sampled verification after shrinking");
}

double alpha_bound(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                   const Eigen::MatrixXd& sigma_w) {
  const Eigen::Index n_y = q.rows();
  if (q.cols() != n_y || sigma_w.rows() != n_y || sigma_w.cols() != n_y ||
      p.rows() < n_y || p.cols() != p.rows())
    throw DimensionError("alpha_bound operand shapes disagree");
  return (sigma_w * (q + p.bottomRightCorner(n_y, n_y))).trace();
}

TerminalCheck check_terminal(const TerminalIngredients& t,
                             const Eigen::MatrixXd& phi,
                             const Eigen::MatrixXd& d, int t_ini,
                             const Eigen::MatrixXd& q,
                             const Eigen::MatrixXd& r, int samples,
                             std::uint64_t seed) {
  const ExtendedStateMatrices ext = extended_state_matrices(phi, d, t_ini);
  const Eigen::MatrixXd a_k = ext.a + ext.b * t.k;
  const Eigen::MatrixXd c_k = phi + d * t.k;
  const Eigen::Index n = a_k.rows();
  const Eigen::MatrixXd stage = t.k.transpose() * r * t.k + c_k.transpose() * q * c_k;
  const Eigen::MatrixXd lhs = a_k.transpose() * t.p * a_k - t.p + stage;
  TerminalCheck chk;
  chk.lyapunov_residual =
      (lhs + t.ridge * Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  chk.decrease_margin = -max_symmetric_eigenvalue(lhs);
  chk.contraction_margin = -max_symmetric_eigenvalue(
      a_k.transpose() * t.gamma * a_k - t.gamma + t.delta * t.gamma);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd z = sample_in_set(t.f, t.f_rhs, t.box, rng, i % 2 == 0);
    const Eigen::VectorXd fz = t.f * (a_k * z) - t.f_rhs;
    if (fz.maxCoeff() > 1e-9 * std::max(1.0, t.f_rhs.cwiseAbs().maxCoeff()))
      ++chk.invariance_violations;
    if (t.tight_h.rows() > 0 && (t.tight_h * z - t.tight_rhs).maxCoeff() > 1e-9)
      ++chk.constraint_violations;
  }
  return chk;
}

Json TerminalIngredients::to_json() const {
  return Json{{"P", matrix_to_json(p)},
              {"K", matrix_to_json(k)},
              {"Gamma", matrix_to_json(gamma)},
              {"gamma", gamma_level},
              {"delta", delta},
              {"F", matrix_to_json(f)},
              {"f", vector_to_json(f_rhs)},
              {"box", vector_to_json(box)},
              {"beta", beta},
              {"set_horizon", set_horizon},
              {"output_std", vector_to_json(output_std)},
              {"output_margin", vector_to_json(output_margin.unaryExpr([](double v) {
                 return std::isfinite(v) ? v : -1.0;
               }))},
              {"tight_H", matrix_to_json(tight_h)},
              {"tight_h", vector_to_json(tight_rhs)},
              {"ridge", ridge},
              {"shrink", shrink}};
}

TerminalIngredients TerminalIngredients::from_json(const Json& j) {
  for (const char* key : {"P", "K", "Gamma", "gamma", "delta", "F", "f"})
    if (!j.contains(key))
      throw ParameterError(std::string("terminal JSON: missing field ") + key);
  TerminalIngredients t;
  t.p = matrix_from_json(j["P"], "terminal.P");
  t.k = matrix_from_json(j["K"], "terminal.K");
  t.gamma = matrix_from_json(j["Gamma"], "terminal.Gamma");
  t.gamma_level = j["gamma"].get<double>();
  t.delta = j["delta"].get<double>();
  t.f = matrix_from_json(j["F"], "terminal.F");
  t.f_rhs = vector_from_json(j["f"], "terminal.f");
  if (j.contains("box")) t.box = vector_from_json(j["box"], "terminal.box");
  t.beta = j.value("beta", 0.0);
  t.set_horizon = j.value("set_horizon", 0);
  if (j.contains("output_std"))
    t.output_std = vector_from_json(j["output_std"], "terminal.output_std");
  if (j.contains("output_margin"))
    t.output_margin = vector_from_json(j["output_margin"], "terminal.output_margin");
  if (j.contains("tight_H")) t.tight_h = matrix_from_json(j["tight_H"], "terminal.tight_H");
  if (j.contains("tight_h")) t.tight_rhs = vector_from_json(j["tight_h"], "terminal.tight_h");
  if (t.tight_h.rows() == 0) t.tight_h.resize(0, t.p.cols());
  t.ridge = j.value("ridge", 1e-8);
  t.shrink = j.value("shrink", 1.0);
  const Eigen::Index n = t.p.rows();
  if (t.p.cols() != n || t.gamma.rows() != n || t.gamma.cols() != n ||
      t.k.cols() != n || t.f.cols() != n || t.f.rows() != t.f_rhs.size())
    throw DimensionError("terminal JSON: inconsistent matrix sizes");
  return t;
}

void TerminalIngredients::save_json(const std::string& path) const {
  write_text_file(path, to_json().dump(1));
}

TerminalIngredients TerminalIngredients::load_json(const std::string& path) {
  return from_json(Json::parse(read_text_file(path)));
}

}  // namespace sddpc
