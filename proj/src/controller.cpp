#include "sddpc/controller.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "sddpc/errors.hpp"
#include "sddpc/hash.hpp"
#include "sddpc/linalg.hpp"
#include "sddpc/terminal.hpp"

namespace sddpc {

namespace {

double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double stage_cost(const ControllerSetup& s, const Eigen::VectorXd& u,
                  const Eigen::VectorXd& y) {
  return u.dot(s.ocp.r * u) + y.dot(s.ocp.q * y);
}

Json nan_safe(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

ControllerSetup make_setup(const ArxModel& plant, const DataArchive& archive,
                           OcpConfig ocp, SolverSettings solver) {
  plant.validate();
  ControllerSetup s;
  s.plant = plant;
  if (!ocp.basis)
    ocp.basis = std::make_shared<const PceBasis>(build_joint_basis(
        plant.n_z() + 1, plant.disturbance, plant.n_w(), ocp.horizon));
  ocp.validate(plant.n_u(), plant.n_y(), plant.t_ini);
  s.predictor = HankelPredictor(HankelStack::build(archive, ocp.horizon, plant.t_ini));
  s.w_coeffs = disturbance_coefficients(plant.disturbance, ocp.basis);
  s.alpha = alpha_bound(ocp.terminal.p, ocp.q, plant.disturbance_covariance());
  s.ocp = std::move(ocp);
  s.solver = solver;
  return s;
}

Eigen::VectorXd recover_germ_realization(const Eigen::MatrixXd& z_initial,
                                         const Eigen::VectorXd& z_k) {
  const int n_z = static_cast<int>(z_k.size());
  if (z_initial.rows() != n_z || z_initial.cols() < n_z + 1)
    throw DimensionError("initial coefficients must be n_z x (>= n_z + 1)");
  const Eigen::MatrixXd m = z_initial.middleCols(1, n_z);
  const Eigen::VectorXd rhs = z_k - z_initial.col(0);
  if (m.cwiseAbs().maxCoeff() == 0.0) return Eigen::VectorXd::Zero(n_z);
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  const Eigen::VectorXd phi = symmetric_pinv(sym, 1e-10) * rhs;
  const double residual = (m * phi - rhs).norm();
  const double scale = std::max(z_k.norm(), z_initial.col(0).norm());
  if (residual > 1e-6 * scale)
    throw NumericalError("measured state is not a realization of the initial "
                         "coefficients: residual " + std::to_string(residual));
  return phi;
}

Eigen::VectorXd feedback_input(const OcpSolution& solution,
                               const Eigen::VectorXd& phi, int n_u, int t_ini) {
  const Eigen::MatrixXd u0 = solution.input_at(0, n_u, t_ini);
  const int l_ini = static_cast<int>(phi.size()) + 1;
  if (u0.cols() < l_ini) throw DimensionError("phi longer than the initial block");
  Eigen::VectorXd u = u0.col(0);
  for (int j = 1; j < l_ini; ++j) u += u0.col(j) * phi(j - 1);
  return u;
}

int ClosedLoopTrace::infeasible_steps() const {
  return static_cast<int>(std::count_if(rows.begin(), rows.end(),
                                        [](const TraceRow& r) { return !r.feasible; }));
}

std::string ClosedLoopTrace::to_csv() const {
  std::ostringstream os;
  const int n_u = rows.empty() ? 0 : static_cast<int>(rows.front().u.size());
  const int n_y = rows.empty() ? 0 : static_cast<int>(rows.front().y.size());
  os << "k";
  for (int i = 0; i < n_u; ++i) os << ",u" << i + 1;
  for (int i = 0; i < n_y; ++i) os << ",y" << i + 1;
  for (int i = 0; i < n_y; ++i) os << ",w" << i + 1;
  os << ",mu,V_N,stage_cost,feasible\n";
  for (const auto& r : rows) {
    os << r.k;
    for (int i = 0; i < r.u.size(); ++i) os << ',' << format_double(r.u(i));
    for (int i = 0; i < r.y.size(); ++i) os << ',' << format_double(r.y(i));
    for (int i = 0; i < r.w.size(); ++i) os << ',' << format_double(r.w(i));
    os << ',' << format_double(r.mu) << ',' << format_double(r.value) << ','
       << format_double(r.stage_cost) << ',' << (r.feasible ? 1 : 0) << '\n';
  }
  return os.str();
}

ControllerState::ControllerState(const ControllerSetup& setup,
                                 const Eigen::VectorXd& z_0,
                                 std::uint64_t disturbance_seed)
    : setup_(&setup), z_(z_0), rng_(disturbance_seed), solver_(setup.solver) {
  if (z_0.size() != setup.plant.n_z())
    throw DimensionError("initial extended state must have n_z entries");
}

TraceRow ControllerState::step() {
  const ControllerSetup& s = *setup_;
  const int n_u = s.plant.n_u(), t_ini = s.plant.t_ini;
  TraceRow row;
  row.k = k_;
  row.z = z_.values;
  last_init_ = bootstrap_ ? bootstrap_initial(z_.values)
                          : prepare_initial(z_.values, previous_.z_next);
  OcpSolution sol = solver_.solve(s.ocp, s.predictor, last_init_, s.w_coeffs,
                                  s.mu_mode, s.formulation);
  row.iterations = sol.iterations;
  if (sol.u.size() == 0) {
    row.feasible = false;
    return row;
  }
  row.inexact = sol.inexact;
  row.mu = sol.mu;
  row.value = sol.value;
  row.phi = recover_germ_realization(sol.z_initial, z_.values);
  row.u = feedback_input(sol, row.phi, n_u, t_ini);
  row.w = draw_disturbance(s.plant, rng_);
  const StepResult next = realization_step(s.plant, z_, row.u, row.w);
  row.y = next.y;
  row.stage_cost = stage_cost(s, row.u, row.y);
  cost_sum_ += row.stage_cost;
  z_ = next.z_next;
  previous_ = std::move(sol);
  bootstrap_ = false;
  ++k_;
  return row;
}

ClosedLoopTrace run_closed_loop(const ControllerSetup& setup,
                                const Eigen::VectorXd& z_0, int steps,
                                std::uint64_t seed) {
  if (steps < 0) throw ParameterError("steps must be nonnegative");
  ClosedLoopTrace trace;
  trace.seed = seed;
  trace.alpha = setup.alpha;
  ControllerState state(setup, z_0, seed);
  for (int k = 0; k < steps; ++k) {
    TraceRow row = state.step();
    const bool ok = row.feasible;
    trace.rows.push_back(std::move(row));
    if (!ok) {
      trace.aborted = true;
      trace.diagnostic = "OCP not solved at step " + std::to_string(k);
      break;
    }
  }
  return trace;
}

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::Center: return "center";
    case SamplerKind::Uniform: return "uniform";
    case SamplerKind::Gaussian: return "gaussian";
  }
  return "center";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "center") return SamplerKind::Center;
  if (s == "uniform") return SamplerKind::Uniform;
  if (s == "gaussian") return SamplerKind::Gaussian;
  throw ParameterError("unknown sampler kind '" + s + "'");
}

void InitialSampler::validate(int n_u, int n_y) const {
  std::vector<std::string> bad;
  if (u_center.size() != n_u) bad.push_back("u_center");
  if (y_center.size() != n_y) bad.push_back("y_center");
  if (kind != SamplerKind::Center) {
    if (u_spread.size() != n_u || (u_spread.array() < 0).any()) bad.push_back("u_spread");
    if (y_spread.size() != n_y || (y_spread.array() < 0).any()) bad.push_back("y_spread");
  }
  if (!bad.empty()) {
    std::string msg = "invalid initial sampler fields:";
    for (const auto& b : bad) msg += " " + b;
    throw ParameterError(msg);
  }
}

Eigen::VectorXd InitialSampler::draw(int t_ini, std::mt19937_64& rng) const {
  const int n_u = static_cast<int>(u_center.size());
  const int n_y = static_cast<int>(y_center.size());
  validate(n_u, n_y);
  auto offset = [&](const Eigen::VectorXd& spread) {
    Eigen::VectorXd o = Eigen::VectorXd::Zero(spread.size());
    for (int i = 0; i < spread.size(); ++i) {
      if (kind == SamplerKind::Uniform) {
        o(i) = std::uniform_real_distribution<double>(-1.0, 1.0)(rng) * spread(i);
      } else if (kind == SamplerKind::Gaussian) {
        o(i) = std::normal_distribution<double>(0.0, 1.0)(rng) * spread(i);
      }
    }
    return o;
  };
  Eigen::MatrixXd u_rows(t_ini, n_u), y_rows(t_ini, n_y);
  Eigen::VectorXd du, dy;
  for (int l = 0; l < t_ini; ++l) {
    if (l == 0 || !common_offset) {
      du = kind == SamplerKind::Center ? Eigen::VectorXd::Zero(n_u) : offset(u_spread);
      dy = kind == SamplerKind::Center ? Eigen::VectorXd::Zero(n_y) : offset(y_spread);
    }
    u_rows.row(l) = (u_center + du).transpose();
    y_rows.row(l) = (y_center + dy).transpose();
  }
  return ExtendedState::from_window(u_rows, y_rows).values;
}

Json InitialSampler::to_json() const {
  return Json{{"kind", to_string(kind)},
              {"u_center", vector_to_json(u_center)},
              {"y_center", vector_to_json(y_center)},
              {"u_spread", vector_to_json(u_spread)},
              {"y_spread", vector_to_json(y_spread)},
              {"common_offset", common_offset}};
}

InitialSampler InitialSampler::from_json(const Json& j) {
  InitialSampler s;
  s.kind = sampler_kind_from_string(j.value("kind", std::string("center")));
  s.u_center = vector_from_json(j.at("u_center"), "u_center");
  s.y_center = vector_from_json(j.at("y_center"), "y_center");
  if (j.contains("u_spread")) s.u_spread = vector_from_json(j.at("u_spread"), "u_spread");
  if (j.contains("y_spread")) s.y_spread = vector_from_json(j.at("y_spread"), "y_spread");
  s.common_offset = j.value("common_offset", true);
  return s;
}

std::uint64_t run_seed(std::uint64_t master, int run) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(run) + 1));
}

int default_workers() {
  if (const char* env = std::getenv("SDDPC_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

MonteCarloSummary monte_carlo(const ControllerSetup& setup,
                              const MonteCarloOptions& opt) {
  if (opt.runs < 1 || opt.steps < 1)
    throw ParameterError("Monte-Carlo needs runs >= 1 and steps >= 1");
  const int n_y = setup.plant.n_y(), t_ini = setup.plant.t_ini;
  if (opt.histogram_output < 0 || opt.histogram_output >= n_y)
    throw ParameterError("histogram_output out of range");
  if (opt.histogram_bins < 1) throw ParameterError("histogram_bins must be positive");
  opt.sampler.validate(setup.plant.n_u(), n_y);

  std::vector<ClosedLoopTrace> traces(opt.runs);
  std::vector<std::string> errors(opt.runs);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next++; i < opt.runs; i = next++) {
      const std::uint64_t seed = run_seed(opt.seed, i);
      try {
        std::mt19937_64 init_rng(splitmix64(seed ^ 0x243f6a8885a308d3ULL));
        const Eigen::VectorXd z0 = opt.sampler.draw(t_ini, init_rng);
        traces[i] = run_closed_loop(setup, z0, opt.steps, seed);
        if (traces[i].aborted) errors[i] = traces[i].diagnostic;
      } catch (const std::exception& e) {
        traces[i].seed = seed;
        traces[i].aborted = true;
        traces[i].diagnostic = e.what();
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::min(opt.workers > 0 ? opt.workers : default_workers(), opt.runs);
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  MonteCarloSummary sum;
  sum.runs = opt.runs;
  sum.steps = opt.steps;
  sum.alpha = setup.alpha;
  sum.seed = opt.seed;
  sum.run_errors = errors;
  for (const auto& t : traces) sum.infeasibility_events += t.infeasible_steps();

  const int steps = opt.steps, h = opt.histogram_output;
  StepStatistics& st = sum.stats;
  st.mean = st.stddev = st.q05 = st.q50 = st.q95 =
      Eigen::MatrixXd::Constant(steps, n_y, std::numeric_limits<double>::quiet_NaN());
  st.mean_abs_output = Eigen::VectorXd::Constant(steps, std::numeric_limits<double>::quiet_NaN());
  st.count = Eigen::VectorXi::Zero(steps);
  auto feasible_row = [&](const ClosedLoopTrace& t, int k) -> const TraceRow* {
    return k < static_cast<int>(t.rows.size()) && t.rows[k].feasible ? &t.rows[k] : nullptr;
  };
  for (int k = 0; k < steps; ++k) {
    std::vector<std::vector<double>> vals(n_y);
    double abs_sum = 0.0;
    for (const auto& t : traces)
      if (const TraceRow* r = feasible_row(t, k)) {
        for (int c = 0; c < n_y; ++c) vals[c].push_back(r->y(c));
        abs_sum += std::abs(r->y(h));
      }
    const int cnt = static_cast<int>(vals[0].size());
    st.count(k) = cnt;
    if (cnt == 0) continue;
    st.mean_abs_output(k) = abs_sum / cnt;
    for (int c = 0; c < n_y; ++c) {
      double m = 0.0, v = 0.0;
      for (double x : vals[c]) m += x;
      m /= cnt;
      for (double x : vals[c]) v += (x - m) * (x - m);
      st.mean(k, c) = m;
      st.stddev(k, c) = cnt > 1 ? std::sqrt(v / (cnt - 1)) : 0.0;
      st.q05(k, c) = quantile(vals[c], 0.05);
      st.q50(k, c) = quantile(vals[c], 0.5);
      st.q95(k, c) = quantile(vals[c], 0.95);
    }
  }

  sum.violation_rate = Eigen::VectorXd::Constant(n_y, std::numeric_limits<double>::quiet_NaN());
  const auto& bounds = setup.ocp.output_bounds;
  for (int c = 0; c < n_y && !bounds.empty(); ++c) {
    if (!bounds[c].bounded()) continue;
    long total = 0, bad = 0;
    for (const auto& t : traces)
      for (const auto& r : t.rows)
        if (r.feasible) {
          ++total;
          if (r.y(c) < bounds[c].low || r.y(c) > bounds[c].high) ++bad;
        }
    sum.violation_rate(c) = total ? static_cast<double>(bad) / total : 0.0;
  }

  sum.averaged_cost = Eigen::MatrixXd::Constant(opt.runs, steps,
                                                std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < opt.runs; ++i) {
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) {
      const TraceRow* r = feasible_row(traces[i], k);
      if (!r) break;
      acc += r->stage_cost;
      sum.averaged_cost(i, k) = acc / (k + 1);
    }
  }

  for (int k : opt.histogram_steps) {
    if (k < 0 || k >= steps) continue;
    std::vector<double> v;
    for (const auto& t : traces)
      if (const TraceRow* r = feasible_row(t, k)) v.push_back(r->y(h));
    Histogram hist;
    hist.step = k;
    hist.edges = Eigen::VectorXd::Zero(opt.histogram_bins + 1);
    hist.density = Eigen::VectorXd::Zero(opt.histogram_bins);
    if (!v.empty()) {
      double lo = *std::min_element(v.begin(), v.end());
      double hi = *std::max_element(v.begin(), v.end());
      if (hi <= lo) {
        lo -= 0.5;
        hi += 0.5;
      }
      hist.edges = Eigen::VectorXd::LinSpaced(opt.histogram_bins + 1, lo, hi);
      const double width = (hi - lo) / opt.histogram_bins;
      for (double x : v) {
        int b = static_cast<int>((x - lo) / width);
        b = std::clamp(b, 0, opt.histogram_bins - 1);
        hist.density(b) += 1.0;
      }
      hist.density /= static_cast<double>(v.size()) * width;
    }
    sum.histograms.push_back(std::move(hist));
  }

  for (int k = 0; k + 1 < steps; ++k) {
    std::vector<double> d;
    for (const auto& t : traces) {
      const TraceRow* a = feasible_row(t, k);
      const TraceRow* b = feasible_row(t, k + 1);
      if (a && b) d.push_back(b->value - a->value + a->stage_cost - setup.alpha);
    }
    DecayEstimate e;
    e.k = k;
    e.samples = static_cast<int>(d.size());
    if (!d.empty()) {
      double m = 0.0, v = 0.0;
      for (double x : d) m += x;
      m /= d.size();
      for (double x : d) v += (x - m) * (x - m);
      e.mean = m;
      e.standard_error = d.size() > 1 ? std::sqrt(v / (d.size() - 1) / d.size()) : 0.0;
    }
    sum.decay.push_back(e);
  }

  if (opt.keep_traces) sum.traces = std::move(traces);
  return sum;
}

Json MonteCarloSummary::to_json() const {
  Json j;
  j["runs"] = runs;
  j["steps"] = steps;
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["infeasibility_events"] = infeasibility_events;
  Json errs = Json::array();
  for (int i = 0; i < static_cast<int>(run_errors.size()); ++i)
    if (!run_errors[i].empty()) errs.push_back({{"run", i}, {"error", run_errors[i]}});
  j["run_errors"] = errs;
  Json vr = Json::array();
  for (int c = 0; c < violation_rate.size(); ++c) vr.push_back(nan_safe(violation_rate(c)));
  j["violation_rate"] = vr;
  Json final_avg = Json::array();
  for (int i = 0; i < averaged_cost.rows(); ++i)
    final_avg.push_back(nan_safe(averaged_cost.cols() ? averaged_cost(i, averaged_cost.cols() - 1)
                                                      : std::numeric_limits<double>::quiet_NaN()));
  j["final_averaged_cost"] = final_avg;
  Json dec = Json::array();
  for (const auto& d : decay)
    dec.push_back({{"k", d.k}, {"mean", d.mean}, {"standard_error", d.standard_error},
                   {"samples", d.samples}});
  j["cost_decay"] = dec;
  Json per = Json::array();
  for (int k = 0; k < stats.count.size(); ++k) {
    Json row{{"k", k}, {"count", stats.count(k)}, {"mean_abs_output", nan_safe(stats.mean_abs_output(k))}};
    Json mean = Json::array(), sd = Json::array(), q05 = Json::array(), q50 = Json::array(),
         q95 = Json::array();
    for (int c = 0; c < stats.mean.cols(); ++c) {
      mean.push_back(nan_safe(stats.mean(k, c)));
      sd.push_back(nan_safe(stats.stddev(k, c)));
      q05.push_back(nan_safe(stats.q05(k, c)));
      q50.push_back(nan_safe(stats.q50(k, c)));
      q95.push_back(nan_safe(stats.q95(k, c)));
    }
    row["mean"] = mean;
    row["std"] = sd;
    row["q05"] = q05;
    row["q50"] = q50;
    row["q95"] = q95;
    per.push_back(row);
  }
  j["per_step"] = per;
  return j;
}

std::string MonteCarloSummary::histogram_csv() const {
  std::ostringstream os;
  os << "k,bin,left,right,density\n";
  for (const auto& h : histograms)
    for (int b = 0; b < h.density.size(); ++b)
      os << h.step << ',' << b << ',' << format_double(h.edges(b)) << ','
         << format_double(h.edges(b + 1)) << ',' << format_double(h.density(b)) << '\n';
  return os.str();
}

std::string MonteCarloSummary::statistics_csv() const {
  std::ostringstream os;
  const int n_y = static_cast<int>(stats.mean.cols());
  os << "k,count";
  for (const char* name : {"mean", "std", "q05", "q50", "q95"})
    for (int c = 0; c < n_y; ++c) os << ',' << name << "_y" << c + 1;
  os << ",mean_averaged_cost\n";
  for (int k = 0; k < stats.count.size(); ++k) {
    os << k << ',' << stats.count(k);
    for (const Eigen::MatrixXd* m : {&stats.mean, &stats.stddev, &stats.q05, &stats.q50, &stats.q95})
      for (int c = 0; c < n_y; ++c) os << ',' << format_double((*m)(k, c));
    double acc = 0.0;
    int cnt = 0;
    for (int i = 0; i < averaged_cost.rows(); ++i)
      if (std::isfinite(averaged_cost(i, k))) {
        acc += averaged_cost(i, k);
        ++cnt;
      }
    os << ',' << format_double(cnt ? acc / cnt : std::numeric_limits<double>::quiet_NaN()) << '\n';
  }
  return os.str();
}

}  // namespace sddpc
