#include "sddpc/lti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "sddpc/behavioral.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/hash.hpp"
#include "sddpc/io.hpp"

namespace sddpc {

namespace {

std::uint64_t hash_matrix(const Eigen::MatrixXd& m, std::uint64_t h) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      h = fnv1a(std::string_view(bytes, sizeof(double)), h);
    }
  return h;
}

int numerical_rank(const Eigen::VectorXd& sv, double rel_tol) {
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rel_tol * sv(0)) ++r;
  return r;
}

// Compensated dot product (TwoSum / TwoProduct accumulation): the result is
// as accurate as if computed in twice the working precision.
double dot2(const double* a, const double* b, std::size_t n) {
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = a[i] * b[i];
    const double ep = std::fma(a[i], b[i], -p);
    const double t = s + p;
    const double z = t - s;
    const double es = (s - (t - z)) + (p - z);
    s = t;
    c += ep + es;
  }
  return s + c;
}

// y - Phi z - D u evaluated with dot2, per component.
Eigen::VectorXd exact_residual(const ArxModel& m, const Eigen::VectorXd& z,
                               const Eigen::VectorXd& u,
                               const Eigen::VectorXd& y) {
  const int nz = m.n_z(), nu = m.n_u();
  std::vector<double> coef(1 + nz + nu), val(1 + nz + nu);
  Eigen::VectorXd r(m.n_y());
  for (int c = 0; c < m.n_y(); ++c) {
    coef[0] = 1.0;
    val[0] = y(c);
    for (int j = 0; j < nz; ++j) {
      coef[1 + j] = -m.phi(c, j);
      val[1 + j] = z(j);
    }
    for (int j = 0; j < nu; ++j) {
      coef[1 + nz + j] = -m.d(c, j);
      val[1 + nz + j] = u(j);
    }
    r(c) = dot2(coef.data(), val.data(), coef.size());
  }
  return r;
}

bool near_threshold(const Eigen::VectorXd& sv, double rel_tol) {
  if (sv.size() == 0 || sv(0) <= 0.0) return false;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    const double ratio = sv(i) / sv(0);
    if (ratio > rel_tol * 1e-2 && ratio < rel_tol * 1e2) return true;
  }
  return false;
}

Eigen::MatrixXd equilibrate_rows(Eigen::MatrixXd m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
  return m;
}

}  // namespace

void ArxModel::validate() const {
  if (t_ini < 1) throw ParameterError("T_ini must be >= 1");
  if (phi.rows() < 1 || d.cols() < 1)
    throw ParameterError("model needs n_y >= 1 and n_u >= 1");
  if (d.rows() != phi.rows())
    throw DimensionError("D row count must equal Phi row count");
  if (phi.cols() != n_z())
    throw DimensionError("Phi must have T_ini (n_u + n_y) = " +
                         std::to_string(n_z()) + " columns, has " +
                         std::to_string(phi.cols()));
  if (static_cast<int>(disturbance.size()) != n_w())
    throw DimensionError("need one disturbance family per output component");
  for (const auto& f : disturbance) f.validate();
}

Eigen::MatrixXd ArxModel::disturbance_covariance() const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n_w(), n_w());
  for (int c = 0; c < n_w(); ++c) {
    const double sd = disturbance[c].standard_deviation();
    s(c, c) = sd * sd;
  }
  return s;
}

std::string ArxModel::hash() const {
  std::uint64_t h = fnv1a("arx");
  h = hash_matrix(phi, h);
  h = hash_matrix(d, h);
  h = fnv1a(std::to_string(t_ini), h);
  for (const auto& f : disturbance) {
    Eigen::MatrixXd p(1, 5);
    p << static_cast<double>(f.kind), f.mean, f.std_dev, f.low, f.high;
    h = hash_matrix(p, h);
  }
  return hex64(h);
}

ExtendedState ExtendedState::from_window(const Eigen::MatrixXd& u_rows,
                                         const Eigen::MatrixXd& y_rows) {
  if (u_rows.rows() != y_rows.rows())
    throw DimensionError("input and output windows differ in length");
  const Eigen::Index t = u_rows.rows();
  Eigen::VectorXd v(t * (u_rows.cols() + y_rows.cols()));
  for (Eigen::Index i = 0; i < t; ++i) {
    v.segment(i * u_rows.cols(), u_rows.cols()) = u_rows.row(i).transpose();
    v.segment(t * u_rows.cols() + i * y_rows.cols(), y_rows.cols()) =
        y_rows.row(i).transpose();
  }
  return ExtendedState(std::move(v));
}

Eigen::VectorXd ExtendedState::input(int lag_index, int n_u) const {
  return values.segment(lag_index * n_u, n_u);
}

Eigen::VectorXd ExtendedState::output(int lag_index, int n_u, int n_y,
                                      int t_ini) const {
  return values.segment(t_ini * n_u + lag_index * n_y, n_y);
}

StepResult realization_step(const ArxModel& model, const ExtendedState& z,
                            const Eigen::VectorXd& u,
                            const Eigen::VectorXd& w) {
  const int n_u = model.n_u(), n_y = model.n_y(), t = model.t_ini;
  if (z.values.size() != model.n_z() || u.size() != n_u || w.size() != n_y)
    throw DimensionError("realization_step operand shapes disagree");
  StepResult r;
  r.y = model.phi * z.values + model.d * u + w;
  Eigen::VectorXd next(model.n_z());
  const int nu_block = t * n_u;
  next.head(nu_block - n_u) = z.values.segment(n_u, nu_block - n_u);
  next.segment(nu_block - n_u, n_u) = u;
  next.segment(nu_block, t * n_y - n_y) =
      z.values.segment(nu_block + n_y, t * n_y - n_y);
  next.tail(n_y) = r.y;
  r.z_next = ExtendedState(std::move(next));
  return r;
}

ExtendedStateMatrices extended_state_matrices(const Eigen::MatrixXd& phi,
                                              const Eigen::MatrixXd& d,
                                              int t_ini) {
  const int n_u = static_cast<int>(d.cols());
  const int n_y = static_cast<int>(phi.rows());
  const int n_z = t_ini * (n_u + n_y);
  if (phi.cols() != n_z || d.rows() != n_y)
    throw DimensionError("extended_state_matrices operand shapes disagree");
  ExtendedStateMatrices m;
  m.a = Eigen::MatrixXd::Zero(n_z, n_z);
  m.b = Eigen::MatrixXd::Zero(n_z, n_u);
  m.e = Eigen::MatrixXd::Zero(n_z, n_y);
  const int nu_block = t_ini * n_u;
  for (int i = 0; i < nu_block - n_u; ++i) m.a(i, i + n_u) = 1.0;
  m.b.block(nu_block - n_u, 0, n_u, n_u).setIdentity();
  for (int i = nu_block; i < n_z - n_y; ++i) m.a(i, i + n_y) = 1.0;
  m.a.bottomRows(n_y) = phi;
  m.b.bottomRows(n_y) = d;
  m.e.bottomRows(n_y).setIdentity();
  return m;
}

ExtendedStateMatrices extended_state_matrices(const ArxModel& model) {
  model.validate();
  return extended_state_matrices(model.phi, model.d, model.t_ini);
}

Eigen::VectorXd draw_disturbance(const ArxModel& model, std::mt19937_64& rng) {
  Eigen::VectorXd w(model.n_w());
  for (int c = 0; c < model.n_w(); ++c) {
    const GermFamily& f = model.disturbance[c];
    const double xi = draw_standard_germ(f.kind, rng);
    w(c) = f.expected_value() +
           f.standard_deviation() * orthonormal_polynomial(f.kind, 1, xi);
  }
  return w;
}

double DataArchive::consistency_residual(const ArxModel& model) const {
  double worst = 0.0;
  const int t_ini = model.t_ini;
  for (int t = t_ini; t < length(); ++t) {
    const ExtendedState z = ExtendedState::from_window(
        u.middleRows(t - t_ini, t_ini), y.middleRows(t - t_ini, t_ini));
    const Eigen::VectorXd r =
        exact_residual(model, z.values, u.row(t).transpose(),
                       y.row(t).transpose()) -
        w.row(t).transpose();
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

std::string DataArchive::to_json() const {
  Json j;
  j["T"] = length();
  j["n_u"] = u.cols();
  j["n_w"] = w.cols();
  j["n_y"] = y.cols();
  j["u"] = matrix_to_json(u);
  j["w"] = matrix_to_json(w);
  j["y"] = matrix_to_json(y);
  j["seed"] = seed;
  j["model_hash"] = model_hash;
  return j.dump(1);
}

DataArchive DataArchive::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParameterError(std::string("archive JSON: ") + e.what());
  }
  for (const char* key : {"T", "n_u", "n_w", "n_y", "u", "w", "y"})
    if (!j.contains(key))
      throw ParameterError(std::string("archive JSON: missing field ") + key);
  DataArchive a;
  a.u = matrix_from_json(j["u"], "archive.u");
  a.w = matrix_from_json(j["w"], "archive.w");
  a.y = matrix_from_json(j["y"], "archive.y");
  a.seed = j.value("seed", std::uint64_t{0});
  a.model_hash = j.value("model_hash", std::string());
  const int t = j["T"].get<int>();
  if (a.u.rows() != t || a.w.rows() != t || a.y.rows() != t ||
      a.u.cols() != j["n_u"].get<int>() || a.w.cols() != j["n_w"].get<int>() ||
      a.y.cols() != j["n_y"].get<int>())
    throw DimensionError("archive JSON: declared sizes do not match data");
  return a;
}

void DataArchive::save_json(const std::string& path) const {
  write_text_file(path, to_json());
}

DataArchive DataArchive::load_json(const std::string& path) {
  return from_json(read_text_file(path));
}

void DataArchive::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  out << "t";
  for (Eigen::Index c = 0; c < u.cols(); ++c) out << ",u" << c + 1;
  for (Eigen::Index c = 0; c < w.cols(); ++c) out << ",w" << c + 1;
  for (Eigen::Index c = 0; c < y.cols(); ++c) out << ",y" << c + 1;
  out << "\n";
  for (int t = 0; t < length(); ++t) {
    out << t;
    for (Eigen::Index c = 0; c < u.cols(); ++c) out << "," << format_double(u(t, c));
    for (Eigen::Index c = 0; c < w.cols(); ++c) out << "," << format_double(w(t, c));
    for (Eigen::Index c = 0; c < y.cols(); ++c) out << "," << format_double(y(t, c));
    out << "\n";
  }
}

DataArchive collect_data(const ArxModel& model, const CollectOptions& options) {
  model.validate();
  if (options.input_low > options.input_high)
    throw ParameterError("excitation box needs low <= high");
  const int n_u = model.n_u(), n_w = model.n_w(), n_y = model.n_y();
  if (options.length <= model.t_ini)
    throw ParameterError("data length must exceed T_ini");
  if (options.required_pe_order > 0) {
    const int t = options.required_pe_order;
    const int needed = t * (n_u + n_w + 1) - 1;
    if (options.length < needed)
      throw ParameterError("data length " + std::to_string(options.length) +
                           " cannot be persistently exciting of order " +
                           std::to_string(t) + " (needs >= " +
                           std::to_string(needed) + ")");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> excite(options.input_low,
                                                options.input_high);
  auto draw_box = [&](int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
      v(i) = options.input_low == options.input_high ? options.input_low
                                                     : excite(rng);
    return v;
  };
  Eigen::MatrixXd u0(model.t_ini, n_u), y0(model.t_ini, n_y);
  for (int i = 0; i < model.t_ini; ++i) {
    u0.row(i) = draw_box(n_u).transpose();
    y0.row(i) = draw_box(n_y).transpose();
  }
  ExtendedState z = ExtendedState::from_window(u0, y0);

  DataArchive a;
  a.u.resize(options.length, n_u);
  a.w.resize(options.length, n_w);
  a.y.resize(options.length, n_y);
  a.seed = options.seed;
  a.model_hash = model.hash();
  for (int t = 0; t < options.length; ++t) {
    const Eigen::VectorXd u = draw_box(n_u);
    const Eigen::VectorXd w = options.disturbance
                                  ? draw_disturbance(model, rng)
                                  : Eigen::VectorXd::Zero(n_w).eval();
    StepResult s = realization_step(model, z, u, w);
    // Record the disturbance that the rounded output actually realizes, so
    // the archive is an exact plant trajectory up to rounding of w itself.
    const Eigen::VectorXd w_realized = exact_residual(model, z.values, u, s.y);
    a.u.row(t) = u.transpose();
    a.w.row(t) = w_realized.transpose();
    a.y.row(t) = s.y.transpose();
    z = std::move(s.z_next);
  }
  if (a.consistency_residual(model) > 1e-12)
    throw NumericalError("collected archive violates the generating model");
  return a;
}

ArxModel aircraft_model() {
  ArxModel m;
  m.t_ini = 2;
  m.phi.resize(3, 8);
  m.phi << -0.019, -1.440, -0.201, 0.256, 0.050, 0.160, -0.256, 0.0860,
      0.711, -1.800, -4.773, 3.6875, 0.650, 2.982, -2.688, 1.707,
      1.444, -26.922, -15.746, 12.898, 2.319, 10.461, -12.897, 5.171;
  m.d = Eigen::MatrixXd::Zero(3, 1);
  m.disturbance = {GermFamily::uniform(-0.01, 0.01),
                   GermFamily::uniform(-1.0, 1.0),
                   GermFamily::uniform(-0.1, 0.1)};
  return m;
}

OrderEstimate minimal_order_estimate(const DataArchive& archive, int t_ini,
                                     std::optional<int> override_n_x,
                                     double rel_tol) {
  if (archive.length() == 0) throw ParameterError("archive is empty");
  OrderEstimate est;
  if (override_n_x) {
    if (*override_n_x < 0) throw ParameterError("n_x override must be >= 0");
    est.n_x = *override_n_x;
    est.coarse_n_x = *override_n_x;
    est.overridden = true;
    return est;
  }
  const int depth = t_ini + 1;
  if (archive.length() < depth)
    throw ParameterError("archive too short for order estimation");
  const Eigen::MatrixXd hu = hankel(archive.u, depth);
  const Eigen::MatrixXd hw = hankel(archive.w, depth);
  const Eigen::MatrixXd hy = hankel(archive.y, depth);
  Eigen::MatrixXd exo(hu.rows() + hw.rows(), hu.cols());
  exo << hu, hw;
  Eigen::MatrixXd all(exo.rows() + hy.rows(), hu.cols());
  all << exo, hy;
  constexpr double coarse_tol = 1e-5;
  const Eigen::VectorXd sv_all =
      Eigen::BDCSVD<Eigen::MatrixXd>(equilibrate_rows(all)).singularValues();
  const Eigen::VectorXd sv_exo =
      Eigen::BDCSVD<Eigen::MatrixXd>(equilibrate_rows(exo)).singularValues();
  est.n_x = numerical_rank(sv_all, rel_tol) - numerical_rank(sv_exo, rel_tol);
  est.coarse_n_x =
      numerical_rank(sv_all, coarse_tol) - numerical_rank(sv_exo, coarse_tol);
  est.ill_conditioned = near_threshold(sv_all, rel_tol) ||
                        near_threshold(sv_exo, rel_tol) ||
                        est.coarse_n_x != est.n_x || all.rows() > all.cols();
  est.singular_values = sv_all;
  return est;
}

}  // namespace sddpc
