#include "sddpc/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "sddpc/errors.hpp"

namespace sddpc {

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

void project_soc(Eigen::Ref<Eigen::VectorXd> block) {
  const double t = block(0);
  const double nv = block.tail(block.size() - 1).norm();
  if (nv <= t) return;
  if (nv <= -t) {
    block.setZero();
    return;
  }
  const double a = 0.5 * (t + nv);
  block(0) = a;
  block.tail(block.size() - 1) *= a / nv;
}

bool same_sparse(const SparseMatrix& x, const SparseMatrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols() ||
      x.nonZeros() != y.nonZeros())
    return false;
  for (int c = 0; c < x.outerSize(); ++c) {
    SparseMatrix::InnerIterator ix(x, c), iy(y, c);
    for (; ix && iy; ++ix, ++iy)
      if (ix.index() != iy.index() || ix.value() != iy.value()) return false;
    if (ix || iy) return false;
  }
  return true;
}

/// Distance of v from the cone, in the infinity norm.
double cone_distance(const Eigen::VectorXd& v, const std::vector<Cone>& cones) {
  return inf_norm(v - project_cone(v, cones));
}

double dual_cone_distance(const Eigen::VectorXd& v,
                          const std::vector<Cone>& cones) {
  return inf_norm(v - project_dual_cone(v, cones));
}

Json sparse_to_json(const SparseMatrix& m) {
  Json t = Json::array();
  for (int c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it)
      t.push_back({it.row(), it.col(), it.value()});
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"triplets", t}};
}

SparseMatrix sparse_from_json(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") ||
      !j.contains("triplets"))
    throw ParameterError(what + ": expected {rows, cols, triplets}");
  SparseMatrix m(j["rows"].get<int>(), j["cols"].get<int>());
  std::vector<Triplet> trips;
  for (const auto& t : j["triplets"]) {
    if (!t.is_array() || t.size() != 3)
      throw ParameterError(what + ": triplet must be [row, col, value]");
    const int r = t[0].get<int>(), c = t[1].get<int>();
    if (r < 0 || r >= m.rows() || c < 0 || c >= m.cols())
      throw ParameterError(what + ": triplet index out of range");
    trips.emplace_back(r, c, t[2].get<double>());
  }
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

const char* cone_name(ConeKind k) {
  switch (k) {
    case ConeKind::Zero: return "zero";
    case ConeKind::NonNeg: return "nonneg";
    case ConeKind::SecondOrder: return "soc";
  }
  return "?";
}

ConeKind cone_from_name(const std::string& s) {
  if (s == "zero") return ConeKind::Zero;
  if (s == "nonneg") return ConeKind::NonNeg;
  if (s == "soc") return ConeKind::SecondOrder;
  throw ParameterError("unknown cone kind '" + s + "'");
}

enum class BlockState { Inactive, Linear, Boundary };

struct PolishPoint {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Newton iterations on the KKT system of the problem restricted to a guessed
/// active set. Zero rows, active nonnegative rows and second-order blocks at
/// the vertex become linear equalities; second-order blocks on the boundary
/// keep the smooth constraint t - ||v|| = 0. The guess is corrected for sign
/// and feasibility errors a few times before giving up.
std::optional<PolishPoint> polish_active_set(
    const SparseMatrix& p, const Eigen::VectorXd& q, const SparseMatrix& a,
    const Eigen::VectorXd& b, const std::vector<Cone>& cones,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& s0,
    const Eigen::VectorXd& y0) {
  const int n = static_cast<int>(q.size());
  const int m = static_cast<int>(b.size());
  struct Block {
    int offset, size;
    ConeKind kind;
    BlockState state;
  };
  std::vector<Block> blocks;
  {
    int off = 0;
    for (const auto& c : cones) {
      if (c.kind == ConeKind::Zero) {
        for (int i = 0; i < c.size; ++i)
          blocks.push_back({off + i, 1, c.kind, BlockState::Linear});
      } else if (c.kind == ConeKind::NonNeg) {
        for (int i = 0; i < c.size; ++i)
          blocks.push_back({off + i, 1, c.kind,
                            y0(off + i) > s0(off + i) ? BlockState::Linear
                                                      : BlockState::Inactive});
      } else {
        const auto sb = s0.segment(off, c.size);
        const auto yb = y0.segment(off, c.size);
        const double ms = sb(0) - sb.tail(c.size - 1).norm();
        const double my = yb(0) - yb.tail(c.size - 1).norm();
        BlockState st = BlockState::Boundary;
        if (yb(0) <= ms) st = BlockState::Inactive;
        else if (sb(0) <= my) st = BlockState::Linear;
        blocks.push_back({off, c.size, c.kind, st});
      }
      off += c.size;
    }
  }
  const SparseMatrix at = a.transpose();
  const double scale = 1.0 + std::max(inf_norm(q), inf_norm(b));
  const double tol = 1e-9 * scale;

  for (int round = 0; round < 6; ++round) {
    std::vector<int> lin_rows;
    std::vector<int> bd_blocks;
    for (int k = 0; k < static_cast<int>(blocks.size()); ++k) {
      const Block& bl = blocks[k];
      if (bl.state == BlockState::Linear)
        for (int i = 0; i < bl.size; ++i) lin_rows.push_back(bl.offset + i);
      else if (bl.state == BlockState::Boundary)
        bd_blocks.push_back(k);
    }
    const int nl = static_cast<int>(lin_rows.size());
    const int nb = static_cast<int>(bd_blocks.size());
    const int dim = n + nl + nb;
    Eigen::VectorXd x = x0;
    Eigen::VectorXd nu(nl), lam(nb);
    for (int i = 0; i < nl; ++i) nu(i) = y0(lin_rows[i]);
    for (int i = 0; i < nb; ++i) lam(i) = std::max(y0(blocks[bd_blocks[i]].offset), 0.0);

    SparseMatrix a_lin(nl, n);
    {
      std::vector<Triplet> t;
      for (int c = 0; c < a.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(a, c); it; ++it) {
          const auto pos = std::lower_bound(lin_rows.begin(), lin_rows.end(),
                                            static_cast<int>(it.row()));
          if (pos != lin_rows.end() && *pos == it.row())
            t.emplace_back(static_cast<int>(pos - lin_rows.begin()), c, it.value());
        }
      a_lin.setFromTriplets(t.begin(), t.end());
    }
    const Eigen::VectorXd b_lin = b(lin_rows);

    bool broke = false;
    double best_res = std::numeric_limits<double>::infinity();
    double prev_res = best_res;
    Eigen::VectorXd best_x = x, best_nu = nu, best_lam = lam;
    Eigen::MatrixXd g(n, nb);
    std::vector<Eigen::VectorXd> u_dir(nb);
    std::vector<double> vnorm(nb);
    for (int iter = 0; iter < 25; ++iter) {
      const Eigen::VectorXd slack = b - a * x;
      Eigen::VectorXd r1 = p * x + q + a_lin.transpose() * nu;
      Eigen::VectorXd r3(nb);
      for (int i = 0; i < nb; ++i) {
        const Block& bl = blocks[bd_blocks[i]];
        const Eigen::VectorXd sv = slack.segment(bl.offset + 1, bl.size - 1);
        vnorm[i] = sv.norm();
        if (!(vnorm[i] > 1e-14 * scale)) {
          broke = true;
          break;
        }
        u_dir[i] = sv / vnorm[i];
        Eigen::VectorXd full = Eigen::VectorXd::Zero(m);
        full(bl.offset) = 1.0;
        full.segment(bl.offset + 1, bl.size - 1) = -u_dir[i];
        g.col(i) = at * full;
        r1 += lam(i) * g.col(i);
        r3(i) = slack(bl.offset) - vnorm[i];
      }
      if (broke) break;
      const Eigen::VectorXd r2 = b_lin - a_lin * x;
      const double res = std::max({inf_norm(r1), inf_norm(r2), inf_norm(r3)});
      if (res < best_res) {
        best_res = res;
        best_x = x;
        best_nu = nu;
        best_lam = lam;
      }
      // Newton stops at the rounding floor, detected as stagnation.
      if (res <= 1e-16 * scale || iter == 24 || (iter >= 2 && res > 0.5 * prev_res))
        break;
      prev_res = res;

      // Regularized quasi-definite KKT matrix. The rank-one part of each
      // second-order Hessian, -w (A_v'u)(A_v'u)', enters through one extra
      // row and column with diagonal 1/w so the matrix stays sparse.
      const double reg = 1e-14 * scale;
      std::vector<Triplet> t;
      for (int c = 0; c < p.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(p, c); it; ++it)
          t.emplace_back(static_cast<int>(it.row()), c, it.value());
      int aux = 0;
      const int aux0 = dim;
      for (int i = 0; i < nb; ++i) {
        const Block& bl = blocks[bd_blocks[i]];
        const SparseMatrix av = a.middleRows(bl.offset + 1, bl.size - 1);
        const double w = lam(i) / vnorm[i];
        if (!(w > 0.0)) continue;
        const SparseMatrix ata = SparseMatrix(av.transpose()) * av;
        for (int c = 0; c < ata.outerSize(); ++c)
          for (SparseMatrix::InnerIterator it(ata, c); it; ++it)
            t.emplace_back(static_cast<int>(it.row()), c, w * it.value());
        const Eigen::VectorXd atu = av.transpose() * u_dir[i];
        const int row = aux0 + aux++;
        for (int j = 0; j < n; ++j)
          if (atu(j) != 0.0) {
            t.emplace_back(row, j, -atu(j));
            t.emplace_back(j, row, -atu(j));
          }
        t.emplace_back(row, row, 1.0 / w);
      }
      for (int c = 0; c < a_lin.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(a_lin, c); it; ++it) {
          t.emplace_back(n + static_cast<int>(it.row()), c, it.value());
          t.emplace_back(c, n + static_cast<int>(it.row()), it.value());
        }
      for (int i = 0; i < nb; ++i)
        for (int j = 0; j < n; ++j)
          if (g(j, i) != 0.0) {
            t.emplace_back(n + nl + i, j, g(j, i));
            t.emplace_back(j, n + nl + i, g(j, i));
          }
      const int full = dim + aux;
      SparseMatrix kkt(full, full);
      kkt.setFromTriplets(t.begin(), t.end());
      SparseMatrix reg_kkt = kkt;
      for (int i = 0; i < dim; ++i)
        reg_kkt.coeffRef(i, i) += i < n ? reg : -reg;
      Eigen::SimplicialLDLT<SparseMatrix> ldlt(reg_kkt);
      if (ldlt.info() != Eigen::Success) {
        broke = true;
        break;
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(full);
      rhs.head(dim) << -r1, r2, r3;
      Eigen::VectorXd step = ldlt.solve(rhs);
      for (int refine = 0; refine < 5; ++refine)
        step += ldlt.solve(rhs - kkt * step);
      if (!step.allFinite()) {
        broke = true;
        break;
      }
      x += step.head(n);
      nu += step.segment(n, nl);
      lam += step.segment(n + nl, nb);
    }
    if (!(best_res <= 1e-9 * scale)) return std::nullopt;
    x = best_x;
    nu = best_nu;
    lam = best_lam;

    // Sign and feasibility checks; adjust the active set on failure.
    const Eigen::VectorXd slack = b - a * x;
    bool changed = false;
    int li = 0, bi = 0;
    for (auto& bl : blocks) {
      if (bl.state == BlockState::Linear) {
        const Eigen::VectorXd yb = nu.segment(li, bl.size);
        li += bl.size;
        if (bl.kind == ConeKind::NonNeg && yb(0) < -tol) {
          bl.state = BlockState::Inactive;
          changed = true;
        } else if (bl.kind == ConeKind::SecondOrder &&
                   yb(0) - yb.tail(bl.size - 1).norm() < -tol) {
          bl.state = BlockState::Boundary;
          changed = true;
        }
      } else if (bl.state == BlockState::Boundary) {
        if (lam(bi) < -tol) {
          bl.state = BlockState::Inactive;
          changed = true;
        } else if (slack(bl.offset) < -tol) {
          bl.state = BlockState::Linear;
          changed = true;
        }
        ++bi;
      } else {
        const Eigen::VectorXd sb = slack.segment(bl.offset, bl.size);
        const bool feasible = bl.kind == ConeKind::NonNeg
                                  ? sb(0) >= -tol
                                  : sb(0) - sb.tail(bl.size - 1).norm() >= -tol;
        if (!feasible) {
          bl.state = bl.kind == ConeKind::NonNeg ? BlockState::Linear
                                                 : BlockState::Boundary;
          changed = true;
        }
      }
    }
    if (changed) continue;

    PolishPoint out;
    out.x = x;
    out.y = Eigen::VectorXd::Zero(m);
    li = 0;
    bi = 0;
    for (const auto& bl : blocks) {
      if (bl.state == BlockState::Linear) {
        out.y.segment(bl.offset, bl.size) = nu.segment(li, bl.size);
        li += bl.size;
      } else if (bl.state == BlockState::Boundary) {
        const Eigen::VectorXd sv = slack.segment(bl.offset + 1, bl.size - 1);
        out.y(bl.offset) = std::max(lam(bi), 0.0);
        out.y.segment(bl.offset + 1, bl.size - 1) =
            -std::max(lam(bi), 0.0) * sv / sv.norm();
        ++bi;
      }
    }
    return out;
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::MaxIter: return "MaxIter";
  }
  return "?";
}

void ConicProgram::validate(bool check_psd) const {
  const int n = num_variables(), m = num_constraints();
  if (p.rows() != n || p.cols() != n)
    throw DimensionError("P must be n x n with n = len(q) = " + std::to_string(n));
  if (a.rows() != m || a.cols() != n)
    throw DimensionError("A must be m x n with m = len(b) = " + std::to_string(m));
  int total = 0;
  for (const auto& c : cones) {
    if (c.size < 0 || (c.kind == ConeKind::SecondOrder && c.size < 1))
      throw ParameterError("invalid cone size");
    total += c.size;
  }
  if (total != m)
    throw DimensionError("cone sizes sum to " + std::to_string(total) +
                         ", constraint count is " + std::to_string(m));
  if (!q.allFinite() || !b.allFinite())
    throw ParameterError("q and b must be finite");
  const SparseMatrix asym = SparseMatrix(p.transpose()) - p;
  const double pnorm = p.nonZeros() ? Eigen::Map<const Eigen::VectorXd>(
                                          p.valuePtr(), p.nonZeros())
                                          .cwiseAbs()
                                          .maxCoeff()
                                    : 0.0;
  double asym_max = 0.0;
  for (int c = 0; c < asym.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(asym, c); it; ++it)
      asym_max = std::max(asym_max, std::abs(it.value()));
  if (asym_max > 1e-12 * std::max(1.0, pnorm))
    throw ParameterError("P must be symmetric");
  if (check_psd && n > 0 && pnorm > 0.0) {
    // Shifted sparse Cholesky: P + tau I succeeds iff lambda_min(P) > -tau.
    const double tau = 1e-10 * pnorm;
    SparseMatrix shifted = p;
    for (int i = 0; i < n; ++i) shifted.coeffRef(i, i) += tau;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
    bool ok = ldlt.info() == Eigen::Success;
    if (ok) ok = (ldlt.vectorD().array() >= -1e-14 * pnorm).all();
    if (!ok) throw ParameterError("P is not positive semidefinite");
  }
}

double ConicProgram::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(p * x) + q.dot(x);
}

Json ConicProgram::to_json() const {
  Json c = Json::array();
  for (const auto& cone : cones)
    c.push_back({{"kind", cone_name(cone.kind)}, {"size", cone.size}});
  return Json{{"P", sparse_to_json(p)}, {"q", vector_to_json(q)},
              {"A", sparse_to_json(a)}, {"b", vector_to_json(b)},
              {"cones", c}};
}

ConicProgram ConicProgram::from_json(const Json& j) {
  for (const char* key : {"P", "q", "A", "b", "cones"})
    if (!j.contains(key))
      throw ParameterError(std::string("program JSON: missing field ") + key);
  ConicProgram pr;
  pr.p = sparse_from_json(j["P"], "program.P");
  pr.q = vector_from_json(j["q"], "program.q");
  pr.a = sparse_from_json(j["A"], "program.A");
  pr.b = vector_from_json(j["b"], "program.b");
  for (const auto& c : j["cones"])
    pr.cones.push_back({cone_from_name(c.at("kind").get<std::string>()),
                        c.at("size").get<int>()});
  pr.validate(false);
  return pr;
}

Json ConicSolution::to_json() const {
  return Json{{"status", sddpc::to_string(status)},
              {"objective", objective},
              {"x", vector_to_json(x)},
              {"s", vector_to_json(s)},
              {"y", vector_to_json(y)},
              {"primal_residual", primal_residual},
              {"dual_residual", dual_residual},
              {"gap", gap},
              {"iterations", iterations},
              {"rho_updates", rho_updates},
              {"regularized", regularized},
              {"polished", polished}};
}

Eigen::VectorXd project_cone(const Eigen::VectorXd& s,
                             const std::vector<Cone>& cones) {
  Eigen::VectorXd out = s;
  Eigen::Index off = 0;
  for (const auto& c : cones) {
    if (off + c.size > s.size())
      throw DimensionError("cone sizes exceed vector length");
    switch (c.kind) {
      case ConeKind::Zero: out.segment(off, c.size).setZero(); break;
      case ConeKind::NonNeg:
        out.segment(off, c.size) = out.segment(off, c.size).cwiseMax(0.0);
        break;
      case ConeKind::SecondOrder: project_soc(out.segment(off, c.size)); break;
    }
    off += c.size;
  }
  if (off != s.size()) throw DimensionError("cone sizes do not match vector length");
  return out;
}

Eigen::VectorXd project_dual_cone(const Eigen::VectorXd& y,
                                  const std::vector<Cone>& cones) {
  Eigen::VectorXd out = y;
  Eigen::Index off = 0;
  for (const auto& c : cones) {
    if (off + c.size > y.size())
      throw DimensionError("cone sizes exceed vector length");
    if (c.kind == ConeKind::NonNeg)
      out.segment(off, c.size) = out.segment(off, c.size).cwiseMax(0.0);
    else if (c.kind == ConeKind::SecondOrder)
      project_soc(out.segment(off, c.size));
    off += c.size;
  }
  if (off != y.size()) throw DimensionError("cone sizes do not match vector length");
  return out;
}

Eigen::VectorXd rho_vector(const std::vector<Cone>& cones, double rho) {
  int m = 0;
  for (const auto& c : cones) m += c.size;
  Eigen::VectorXd r(m);
  int off = 0;
  for (const auto& c : cones) {
    r.segment(off, c.size).setConstant(c.kind == ConeKind::Zero ? 1e3 * rho : rho);
    off += c.size;
  }
  return r;
}

KktFactorization::KktFactorization(const SparseMatrix& p, const SparseMatrix& a,
                                   double sigma, const Eigen::VectorXd& rho)
    : p_(p),
      a_(a),
      at_(a.transpose()),
      sigma_(sigma),
      llt_(std::make_unique<Eigen::SimplicialLLT<SparseMatrix>>()) {
  if (p.rows() != p.cols() || a.cols() != p.rows() || rho.size() != a.rows())
    throw DimensionError("KKT operand shapes disagree");
  factor(rho);
}

void KktFactorization::factor(const Eigen::VectorXd& rho) {
  const int n = static_cast<int>(p_.rows());
  SparseMatrix id(n, n);
  id.setIdentity();
  SparseMatrix k = p_ + sigma_ * id;
  if (a_.rows() > 0) k += SparseMatrix(at_ * rho.asDiagonal() * a_);
  k.makeCompressed();
  if (!analyzed_) {
    llt_->analyzePattern(k);
    analyzed_ = true;
  }
  llt_->factorize(k);
  regularized_ = false;
  if (llt_->info() != Eigen::Success) {
    // The shift changes only the diagonal values, so the pattern stays valid
    // when the diagonal is structurally present (sigma I is always added).
    k += 1e-8 * id;
    llt_->factorize(k);
    regularized_ = true;
    if (llt_->info() != Eigen::Success)
      throw NumericalError("KKT matrix is singular even after a 1e-8 shift");
  }
}

void KktFactorization::update_rho(const Eigen::VectorXd& rho) {
  if (rho.size() != a_.rows()) throw DimensionError("rho length mismatch");
  factor(rho);
}

Eigen::VectorXd KktFactorization::solve(const Eigen::VectorXd& rhs) const {
  if (rhs.size() != p_.rows()) throw DimensionError("KKT rhs length mismatch");
  if (!llt_) throw NumericalError("KKT system has not been factorized");
  return llt_->solve(rhs);
}

KktFactorization factorize_kkt(const ConicProgram& program, double rho,
                               double sigma) {
  return KktFactorization(program.p, program.a, sigma,
                          rho_vector(program.cones, rho));
}

void evaluate_residuals(const ConicProgram& pr, ConicSolution& sol) {
  const Eigen::VectorXd px = pr.p * sol.x;
  sol.primal_residual =
      pr.num_constraints() ? inf_norm(pr.a * sol.x + sol.s - pr.b) : 0.0;
  sol.dual_residual = inf_norm(px + pr.q + pr.a.transpose() * sol.y);
  sol.objective = 0.5 * sol.x.dot(px) + pr.q.dot(sol.x);
  sol.gap = std::abs(sol.x.dot(px) + pr.q.dot(sol.x) + pr.b.dot(sol.y));
}

struct ConicSolver::Cache {
  SparseMatrix p_raw, a_raw;
  std::vector<Cone> cones;
  SparseMatrix p, a, at;  // scaled
  Eigen::VectorXd d, e;   // variable and constraint scaling
  double c = 1.0;         // cost scaling
  Eigen::VectorXd rho0;
  double sigma = 0.0;
  double rho_setting = 0.0;
  int scaling_iterations = 0;
  KktFactorization kkt0;
};

ConicSolver::ConicSolver(SolverSettings settings) : settings_(settings) {}

bool ConicSolver::cache_matches(const ConicProgram& pr) const {
  if (!cache_) return false;
  if (cache_->sigma != settings_.sigma || cache_->rho_setting != settings_.rho ||
      cache_->scaling_iterations != settings_.scaling_iterations)
    return false;
  if (cache_->cones.size() != pr.cones.size()) return false;
  for (std::size_t i = 0; i < pr.cones.size(); ++i)
    if (cache_->cones[i].kind != pr.cones[i].kind ||
        cache_->cones[i].size != pr.cones[i].size)
      return false;
  return same_sparse(cache_->p_raw, pr.p) && same_sparse(cache_->a_raw, pr.a);
}

void ConicSolver::rebuild_cache(const ConicProgram& pr) {
  auto cache = std::make_shared<Cache>();
  const int n = pr.num_variables(), m = pr.num_constraints();
  cache->p_raw = pr.p;
  cache->a_raw = pr.a;
  cache->p_raw.makeCompressed();
  cache->a_raw.makeCompressed();
  cache->cones = pr.cones;
  cache->sigma = settings_.sigma;
  cache->rho_setting = settings_.rho;
  cache->scaling_iterations = settings_.scaling_iterations;

  // Modified Ruiz equilibration of [P A'; A 0]; constraint scaling is made
  // uniform inside each second-order block so the cone is preserved.
  Eigen::VectorXd d = Eigen::VectorXd::Ones(n), e = Eigen::VectorXd::Ones(m);
  SparseMatrix ps = pr.p, as = pr.a;
  for (int it = 0; it < settings_.scaling_iterations; ++it) {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(n), row = Eigen::VectorXd::Zero(m);
    for (int c = 0; c < ps.outerSize(); ++c)
      for (SparseMatrix::InnerIterator i(ps, c); i; ++i)
        col(c) = std::max(col(c), std::abs(i.value()));
    for (int c = 0; c < as.outerSize(); ++c)
      for (SparseMatrix::InnerIterator i(as, c); i; ++i) {
        col(c) = std::max(col(c), std::abs(i.value()));
        row(i.row()) = std::max(row(i.row()), std::abs(i.value()));
      }
    Eigen::VectorXd dd(n), ee(m);
    for (int i = 0; i < n; ++i)
      dd(i) = col(i) > 1e-8 ? 1.0 / std::sqrt(col(i)) : 1.0;
    int off = 0;
    for (const auto& cone : pr.cones) {
      if (cone.kind == ConeKind::SecondOrder) {
        const double r = row.segment(off, cone.size).maxCoeff();
        ee.segment(off, cone.size).setConstant(r > 1e-8 ? 1.0 / std::sqrt(r) : 1.0);
      } else {
        for (int i = off; i < off + cone.size; ++i)
          ee(i) = row(i) > 1e-8 ? 1.0 / std::sqrt(row(i)) : 1.0;
      }
      off += cone.size;
    }
    dd = dd.cwiseMax(1e-4).cwiseMin(1e4);
    ee = ee.cwiseMax(1e-4).cwiseMin(1e4);
    ps = dd.asDiagonal() * ps * dd.asDiagonal();
    as = ee.asDiagonal() * as * dd.asDiagonal();
    d = d.cwiseProduct(dd);
    e = e.cwiseProduct(ee);
  }
  double c = 1.0;
  if (settings_.scaling_iterations > 0) {
    double pmean = 0.0;
    for (int col = 0; col < ps.outerSize(); ++col) {
      double mx = 0.0;
      for (SparseMatrix::InnerIterator i(ps, col); i; ++i)
        mx = std::max(mx, std::abs(i.value()));
      pmean += mx;
    }
    pmean = n ? pmean / n : 0.0;
    const double qn = inf_norm(d.cwiseProduct(pr.q));
    const double ref = std::max(pmean, qn);
    c = ref > 1e-8 ? std::clamp(1.0 / ref, 1e-4, 1e4) : 1.0;
    ps *= c;
  }
  cache->p = ps;
  cache->a = as;
  cache->p.makeCompressed();
  cache->a.makeCompressed();
  cache->at = cache->a.transpose();
  cache->d = d;
  cache->e = e;
  cache->c = c;
  cache->rho0 = rho_vector(pr.cones, settings_.rho);
  cache->kkt0 = KktFactorization(cache->p, cache->a, settings_.sigma, cache->rho0);
  ++factorizations_;
  cache_ = std::move(cache);
}

ConicSolution ConicSolver::solve(const ConicProgram& pr, const WarmStart* warm) {
  const int n = pr.num_variables(), m = pr.num_constraints();
  if (pr.p.rows() != n || pr.a.rows() != m || pr.a.cols() != n)
    throw DimensionError("program shapes disagree");
  if (!cache_matches(pr)) rebuild_cache(pr);
  const Cache& cc = *cache_;
  const SolverSettings& st = settings_;

  const Eigen::VectorXd qs = cc.c * cc.d.cwiseProduct(pr.q);
  const Eigen::VectorXd bs = cc.e.cwiseProduct(pr.b);
  Eigen::VectorXd rho = cc.rho0;
  const KktFactorization* kkt = &cc.kkt0;
  std::unique_ptr<KktFactorization> adapted;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), s = Eigen::VectorXd::Zero(m),
                  y = Eigen::VectorXd::Zero(m);
  if (warm) {
    if (warm->x.size() == n) x = warm->x.cwiseQuotient(cc.d);
    if (warm->s.size() == m) s = cc.e.cwiseProduct(warm->s);
    if (warm->y.size() == m) y = -cc.c * warm->y.cwiseQuotient(cc.e);
  }

  ConicSolution sol;
  const double bnorm = inf_norm(pr.b), qnorm = inf_norm(pr.q);
  double best_metric = std::numeric_limits<double>::infinity();
  ConicSolution best;

  auto unscaled = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& ss,
                      const Eigen::VectorXd& ys, ConicSolution& out) {
    out.x = cc.d.cwiseProduct(xs);
    out.s = ss.cwiseQuotient(cc.e);
    out.y = -cc.e.cwiseProduct(ys) / cc.c;
    evaluate_residuals(pr, out);
  };

  auto worst = [&](const ConicSolution& c) {
    const double pobj = c.objective;
    const double dobj = -0.5 * c.x.dot(pr.p * c.x) - pr.b.dot(c.y);
    return std::max({c.primal_residual / (st.eps_p * (1.0 + bnorm)),
                     c.dual_residual / (st.eps_d * (1.0 + qnorm)),
                     c.gap / (st.eps_gap * (1.0 + std::abs(pobj) + std::abs(dobj))),
                     dual_cone_distance(c.y, pr.cones) / 1e-8});
  };
  // Active-set refinement of an iterate; accepted when it meets every
  // tolerance and improves on the iterate.
  auto try_polish = [&](const ConicSolution& base) -> std::optional<ConicSolution> {
    const auto refined = polish_active_set(
        cc.p, qs, cc.a, bs, pr.cones, base.x.cwiseQuotient(cc.d),
        cc.e.cwiseProduct(base.s), cc.c * base.y.cwiseQuotient(cc.e));
    if (!refined) return std::nullopt;
    ConicSolution cand = base;
    cand.x = cc.d.cwiseProduct(refined->x);
    cand.y = cc.e.cwiseProduct(refined->y) / cc.c;
    cand.s = project_cone(pr.b - pr.a * cand.x, pr.cones);
    evaluate_residuals(pr, cand);
    const double w_new = worst(cand);
    if (!(w_new <= 1.0 && w_new <= worst(base))) return std::nullopt;
    cand.polished = true;
    cand.status = SolveStatus::Optimal;
    return cand;
  };
  int last_polish = -st.polish_interval;
  int rho_updates = 0;

  Eigen::VectorXd x_prev, y_prev;
  int it = 0;
  for (it = 1; it <= st.max_iter; ++it) {
    x_prev = x;
    y_prev = y;
    Eigen::VectorXd rhs = st.sigma * x - qs;
    if (m > 0) rhs += cc.at * (rho.cwiseProduct(bs - s) + y);
    const Eigen::VectorXd xt = kkt->solve(rhs);
    const Eigen::VectorXd st_ = bs - cc.a * xt;
    x = st.alpha_relax * xt + (1.0 - st.alpha_relax) * x;
    const Eigen::VectorXd s_relax = st.alpha_relax * st_ + (1.0 - st.alpha_relax) * s;
    s = project_cone(s_relax + y.cwiseQuotient(rho), pr.cones);
    y += rho.cwiseProduct(s_relax - s);

    const bool check = it % std::max(1, st.check_interval) == 0 || it == st.max_iter;
    if (check) {
      ConicSolution cur;
      unscaled(x, s, y, cur);
      const double pobj = cur.objective;
      const double dobj = -0.5 * cur.x.dot(pr.p * cur.x) - pr.b.dot(cur.y);
      const bool p_ok = cur.primal_residual <= st.eps_p * (1.0 + bnorm);
      const bool d_ok = cur.dual_residual <= st.eps_d * (1.0 + qnorm);
      const bool g_ok =
          cur.gap <= st.eps_gap * (1.0 + std::abs(pobj) + std::abs(dobj));
      const double metric =
          std::max(cur.primal_residual / (st.eps_p * (1.0 + bnorm)),
                   cur.dual_residual / (st.eps_d * (1.0 + qnorm)));
      if (metric < best_metric) {
        best_metric = metric;
        best = cur;
      }
      if (p_ok && d_ok && g_ok) {
        sol = cur;
        sol.status = SolveStatus::Optimal;
        break;
      }
      if (st.polish && metric <= st.polish_trigger &&
          it - last_polish >= st.polish_interval) {
        last_polish = it;
        if (auto cand = try_polish(cur)) {
          sol = std::move(*cand);
          break;
        }
      }
      // Infeasibility certificates from successive differences.
      if (m > 0) {
        const Eigen::VectorXd dy = -cc.e.cwiseProduct(y - y_prev) / cc.c;
        const double dyn = inf_norm(dy);
        if (dyn > st.eps_infeasible) {
          const Eigen::VectorXd dyh = dy / dyn;
          if (inf_norm(pr.a.transpose() * dyh) <= 1e-6 &&
              pr.b.dot(dyh) < -1e-6 &&
              dual_cone_distance(dyh, pr.cones) <= 1e-6) {
            sol = cur;
            sol.status = SolveStatus::Infeasible;
            sol.certificate = dyh;
            break;
          }
        }
      }
      const Eigen::VectorXd dx = cc.d.cwiseProduct(x - x_prev);
      const double dxn = inf_norm(dx);
      if (dxn > st.eps_infeasible) {
        const Eigen::VectorXd dxh = dx / dxn;
        if (inf_norm(pr.p * dxh) <= 1e-6 && pr.q.dot(dxh) < -1e-6 &&
            (m == 0 || cone_distance(-(pr.a * dxh), pr.cones) <= 1e-6)) {
          sol = cur;
          sol.status = SolveStatus::Unbounded;
          sol.certificate = dxh;
          break;
        }
      }
    }

    if (st.adaptive_rho && m > 0 && it % std::max(1, st.adaptive_rho_interval) == 0) {
      const Eigen::VectorXd ax = cc.a * x;
      const Eigen::VectorXd px = cc.p * x;
      const Eigen::VectorXd aty = cc.at * y;
      const double rp = inf_norm(ax + s - bs) /
                        std::max({inf_norm(ax), inf_norm(s), inf_norm(bs), 1e-12});
      const double rd = inf_norm(px + qs - aty) /
                        std::max({inf_norm(px), inf_norm(aty), inf_norm(qs), 1e-12});
      const double ratio = std::sqrt(rp / std::max(rd, 1e-300));
      const double cur_rho = rho.minCoeff();
      const double target = std::clamp(cur_rho * ratio, 1e-6, 1e6);
      if (target > 5.0 * cur_rho || target < 0.2 * cur_rho) {
        rho = rho_vector(pr.cones, target);
        if (adapted)
          adapted->update_rho(rho);
        else
          adapted = std::make_unique<KktFactorization>(cc.p, cc.a, st.sigma, rho);
        kkt = adapted.get();
        ++rho_updates;
      }
    }
  }
  if (it > st.max_iter) {
    sol = best;
    sol.status = SolveStatus::MaxIter;
    it = st.max_iter;
  }
  sol.iterations = it;
  sol.rho_updates = rho_updates;
  sol.regularized = kkt->regularized() || cc.kkt0.regularized();

  if (st.polish && !sol.polished &&
      (sol.status == SolveStatus::Optimal || sol.status == SolveStatus::MaxIter))
    if (auto cand = try_polish(sol)) sol = std::move(*cand);
  return sol;
}

ConicSolution solve(const ConicProgram& program, const SolverSettings& settings,
                    const WarmStart* warm) {
  ConicSolver solver(settings);
  return solver.solve(program, warm);
}

}  // namespace sddpc
