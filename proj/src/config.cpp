#include "sddpc/config.hpp"

#include <cmath>
#include <limits>

#include "sddpc/errors.hpp"
#include "sddpc/hash.hpp"
#include "sddpc/linalg.hpp"

namespace sddpc {

namespace {

Json family_to_json(const GermFamily& f) {
  if (f.kind == GermKind::UniformLegendre)
    return Json{{"kind", "uniform"}, {"low", f.low}, {"high", f.high}};
  return Json{{"kind", "gaussian"}, {"mean", f.mean}, {"std", f.std_dev}};
}

GermFamily family_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") return GermFamily::uniform(j.at("low"), j.at("high"));
  if (kind == "gaussian") return GermFamily::gaussian(j.value("mean", 0.0), j.at("std"));
  throw ParameterError("unknown disturbance kind '" + kind + "'");
}

Json intervals_to_json(const std::vector<Interval>& v) {
  Json a = Json::array();
  for (const auto& i : v) a.push_back(interval_to_json(i));
  return a;
}

std::vector<Interval> intervals_from_json(const Json& j) {
  std::vector<Interval> v;
  for (const auto& e : j) v.push_back(interval_from_json(e));
  return v;
}

Json bound_to_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double bound_from_json(const Json& j, double inf) {
  return j.is_null() ? inf : j.get<double>();
}

bool spd(const Eigen::MatrixXd& m, int n) {
  return m.rows() == n && m.cols() == n && m.isApprox(m.transpose(), 1e-12) &&
         min_symmetric_eigenvalue(m) > 0.0;
}

}  // namespace

Json interval_to_json(const Interval& i) {
  if (!i.bounded()) return Json(nullptr);
  return Json::array({bound_to_json(i.low), bound_to_json(i.high)});
}

Interval interval_from_json(const Json& j) {
  const double inf = std::numeric_limits<double>::infinity();
  if (j.is_null()) return Interval{};
  if (!j.is_array() || j.size() != 2)
    throw ParameterError("an interval is null or [low, high]");
  return Interval{bound_from_json(j[0], -inf), bound_from_json(j[1], inf)};
}

ArxModel ModelSpec::build() const {
  if (kind == "aircraft") return aircraft_model();
  if (kind == "explicit") {
    explicit_model.validate();
    return explicit_model;
  }
  throw ParameterError("model kind must be 'aircraft' or 'explicit'");
}

ExperimentConfig ExperimentConfig::aircraft() {
  ExperimentConfig c;
  c.collect.length = 90;
  c.collect.seed = 1;
  c.q = Eigen::MatrixXd::Identity(3, 3);
  c.r = Eigen::MatrixXd::Identity(1, 1);
  c.output_bounds = {Interval{-1.0, 1.0}, Interval{}, Interval{}};
  c.simulation.sampler.kind = SamplerKind::Uniform;
  c.simulation.sampler.u_center = Eigen::VectorXd::Zero(1);
  c.simulation.sampler.y_center = Eigen::VectorXd::Zero(3);
  c.simulation.sampler.u_spread = Eigen::VectorXd::Constant(1, 0.1);
  c.simulation.sampler.y_spread = Eigen::Vector3d(0.1, 1.0, 1.0);
  return c;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  int n_u = 0, n_y = 0, t_ini = 0;
  try {
    const ArxModel m = model.build();
    m.validate();
    n_u = m.n_u();
    n_y = m.n_y();
    t_ini = m.t_ini;
  } catch (const std::exception& e) {
    bad.push_back(std::string("model: ") + e.what());
  }
  if (collect.length < 1) bad.push_back("collect.length must be positive");
  if (!(collect.input_low < collect.input_high))
    bad.push_back("collect.input_low must be below collect.input_high");
  if (horizon < 1) bad.push_back("ocp.horizon must be >= 1");
  if (n_y > 0 && !spd(q, n_y)) bad.push_back("ocp.q must be symmetric positive definite n_y x n_y");
  if (n_u > 0 && !spd(r, n_u)) bad.push_back("ocp.r must be symmetric positive definite n_u x n_u");
  if (!(eps_u > 0.0 && eps_u <= 1.0)) bad.push_back("ocp.eps_u must lie in (0, 1]");
  if (!(eps_y > 0.0 && eps_y <= 1.0)) bad.push_back("ocp.eps_y must lie in (0, 1]");
  if (n_y > 0 && !output_bounds.empty() && static_cast<int>(output_bounds.size()) != n_y)
    bad.push_back("ocp.output_bounds needs n_y entries");
  if (n_u > 0 && !input_bounds.empty() && static_cast<int>(input_bounds.size()) != n_u)
    bad.push_back("ocp.input_bounds needs n_u entries");
  for (const auto& i : output_bounds)
    if (!(i.low <= i.high)) bad.push_back("ocp.output_bounds contains an empty interval");
  for (const auto& i : input_bounds)
    if (!(i.low <= i.high)) bad.push_back("ocp.input_bounds contains an empty interval");
  if (t_ini > 0 && n_y > 0 && collect.length < (horizon + t_ini) * (n_u + n_y + 1) - 1)
    bad.push_back("collect.length too short for the Hankel depth");
  if (!(terminal.margin_fraction > 0.0 && terminal.margin_fraction < 1.0))
    bad.push_back("terminal.margin_fraction must lie in (0, 1)");
  if (!(terminal.box_scale > 0.0)) bad.push_back("terminal.box_scale must be positive");
  if (terminal.verification_samples < 0) bad.push_back("terminal.verification_samples must be >= 0");
  if (!(solver.eps_p > 0 && solver.eps_d > 0 && solver.eps_gap > 0))
    bad.push_back("solver tolerances must be positive");
  if (solver.max_iter < 1) bad.push_back("solver.max_iter must be positive");
  if (!(solver.rho > 0.0)) bad.push_back("solver.rho must be positive");
  if (simulation.runs < 1) bad.push_back("simulation.runs must be positive");
  if (simulation.steps < 1) bad.push_back("simulation.steps must be positive");
  if (n_y > 0 && (simulation.histogram_output < 0 || simulation.histogram_output >= n_y))
    bad.push_back("simulation.histogram_output out of range");
  if (simulation.histogram_bins < 1) bad.push_back("simulation.histogram_bins must be positive");
  for (int k : simulation.histogram_steps)
    if (k < 0) bad.push_back("simulation.histogram_steps must be nonnegative");
  if (n_y > 0) {
    try {
      simulation.sampler.validate(n_u, n_y);
    } catch (const std::exception& e) {
      bad.push_back(std::string("simulation.sampler: ") + e.what());
    }
  }
  if (output_dir.empty()) bad.push_back("output_dir must not be empty");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ParameterError(msg);
  }
}

Json ExperimentConfig::to_json() const {
  Json j;
  Json mj{{"kind", model.kind}};
  if (model.kind == "explicit") {
    mj["phi"] = matrix_to_json(model.explicit_model.phi);
    mj["d"] = matrix_to_json(model.explicit_model.d);
    mj["t_ini"] = model.explicit_model.t_ini;
    Json dist = Json::array();
    for (const auto& f : model.explicit_model.disturbance) dist.push_back(family_to_json(f));
    mj["disturbance"] = dist;
  }
  j["model"] = mj;
  j["collect"] = {{"length", collect.length},
                  {"input_low", collect.input_low},
                  {"input_high", collect.input_high},
                  {"seed", collect.seed},
                  {"disturbance", collect.disturbance}};
  j["ocp"] = {{"horizon", horizon},
              {"q", matrix_to_json(q)},
              {"r", matrix_to_json(r)},
              {"eps_u", eps_u},
              {"eps_y", eps_y},
              {"output_bounds", intervals_to_json(output_bounds)},
              {"input_bounds", intervals_to_json(input_bounds)},
              {"causality", to_string(causality)},
              {"mu_mode", to_string(mu_mode)}};
  j["terminal"] = {{"margin_fraction", terminal.margin_fraction},
                   {"box_scale", terminal.box_scale},
                   {"ridge", terminal.ridge},
                   {"beta", terminal.beta},
                   {"verification_samples", terminal.verification_samples},
                   {"seed", terminal.seed},
                   {"max_horizon", terminal.max_horizon}};
  j["solver"] = {{"eps_p", solver.eps_p},
                 {"eps_d", solver.eps_d},
                 {"eps_gap", solver.eps_gap},
                 {"eps_infeasible", solver.eps_infeasible},
                 {"max_iter", solver.max_iter},
                 {"rho", solver.rho},
                 {"sigma", solver.sigma},
                 {"alpha_relax", solver.alpha_relax},
                 {"adaptive_rho", solver.adaptive_rho},
                 {"polish", solver.polish}};
  j["simulation"] = {{"runs", simulation.runs},
                     {"steps", simulation.steps},
                     {"seed", simulation.seed},
                     {"sampler", simulation.sampler.to_json()},
                     {"histogram_steps", simulation.histogram_steps},
                     {"histogram_output", simulation.histogram_output},
                     {"histogram_bins", simulation.histogram_bins}};
  j["output_dir"] = output_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c = aircraft();
  try {
    if (j.contains("model")) {
      const Json& m = j.at("model");
      c.model.kind = m.value("kind", std::string("aircraft"));
      if (c.model.kind == "explicit") {
        ArxModel& e = c.model.explicit_model;
        e.phi = matrix_from_json(m.at("phi"), "model.phi");
        e.d = matrix_from_json(m.at("d"), "model.d");
        e.t_ini = m.at("t_ini");
        e.disturbance.clear();
        for (const auto& f : m.at("disturbance")) e.disturbance.push_back(family_from_json(f));
        if (!j.contains("ocp") || !j.at("ocp").contains("q"))
          c.q = Eigen::MatrixXd::Identity(e.phi.rows(), e.phi.rows());
        if (!j.contains("ocp") || !j.at("ocp").contains("r"))
          c.r = Eigen::MatrixXd::Identity(e.d.cols(), e.d.cols());
        if (!j.contains("ocp") || !j.at("ocp").contains("output_bounds"))
          c.output_bounds.clear();
        if (!j.contains("simulation") || !j.at("simulation").contains("sampler")) {
          c.simulation.sampler.u_center = Eigen::VectorXd::Zero(e.d.cols());
          c.simulation.sampler.y_center = Eigen::VectorXd::Zero(e.phi.rows());
          c.simulation.sampler.u_spread = Eigen::VectorXd::Zero(e.d.cols());
          c.simulation.sampler.y_spread = Eigen::VectorXd::Zero(e.phi.rows());
        }
      }
    }
    if (j.contains("collect")) {
      const Json& o = j.at("collect");
      c.collect.length = o.value("length", c.collect.length);
      c.collect.input_low = o.value("input_low", c.collect.input_low);
      c.collect.input_high = o.value("input_high", c.collect.input_high);
      c.collect.seed = o.value("seed", c.collect.seed);
      c.collect.disturbance = o.value("disturbance", c.collect.disturbance);
    }
    if (j.contains("ocp")) {
      const Json& o = j.at("ocp");
      c.horizon = o.value("horizon", c.horizon);
      if (o.contains("q")) c.q = matrix_from_json(o.at("q"), "ocp.q");
      if (o.contains("r")) c.r = matrix_from_json(o.at("r"), "ocp.r");
      c.eps_u = o.value("eps_u", c.eps_u);
      c.eps_y = o.value("eps_y", c.eps_y);
      if (o.contains("output_bounds")) c.output_bounds = intervals_from_json(o.at("output_bounds"));
      if (o.contains("input_bounds")) c.input_bounds = intervals_from_json(o.at("input_bounds"));
      if (o.contains("causality")) c.causality = causality_from_string(o.at("causality"));
      if (o.contains("mu_mode")) c.mu_mode = mu_mode_from_string(o.at("mu_mode"));
    }
    if (j.contains("terminal")) {
      const Json& o = j.at("terminal");
      TerminalOptions& t = c.terminal;
      t.margin_fraction = o.value("margin_fraction", t.margin_fraction);
      t.box_scale = o.value("box_scale", t.box_scale);
      t.ridge = o.value("ridge", t.ridge);
      t.beta = o.value("beta", t.beta);
      t.verification_samples = o.value("verification_samples", t.verification_samples);
      t.seed = o.value("seed", t.seed);
      t.max_horizon = o.value("max_horizon", t.max_horizon);
    }
    if (j.contains("solver")) {
      const Json& o = j.at("solver");
      SolverSettings& s = c.solver;
      s.eps_p = o.value("eps_p", s.eps_p);
      s.eps_d = o.value("eps_d", s.eps_d);
      s.eps_gap = o.value("eps_gap", s.eps_gap);
      s.eps_infeasible = o.value("eps_infeasible", s.eps_infeasible);
      s.max_iter = o.value("max_iter", s.max_iter);
      s.rho = o.value("rho", s.rho);
      s.sigma = o.value("sigma", s.sigma);
      s.alpha_relax = o.value("alpha_relax", s.alpha_relax);
      s.adaptive_rho = o.value("adaptive_rho", s.adaptive_rho);
      s.polish = o.value("polish", s.polish);
    }
    if (j.contains("simulation")) {
      const Json& o = j.at("simulation");
      SimulationSpec& s = c.simulation;
      s.runs = o.value("runs", s.runs);
      s.steps = o.value("steps", s.steps);
      s.seed = o.value("seed", s.seed);
      if (o.contains("sampler")) s.sampler = InitialSampler::from_json(o.at("sampler"));
      if (o.contains("histogram_steps"))
        s.histogram_steps = o.at("histogram_steps").get<std::vector<int>>();
      s.histogram_output = o.value("histogram_output", s.histogram_output);
      s.histogram_bins = o.value("histogram_bins", s.histogram_bins);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const Json::exception& e) {
    throw ParameterError(std::string("malformed configuration: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw ParameterError("configuration " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
  write_text_file(path, to_json().dump(2) + "\n");
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

OcpConfig ExperimentConfig::ocp_config() const {
  OcpConfig o;
  o.horizon = horizon;
  o.q = q;
  o.r = r;
  o.eps_u = eps_u;
  o.eps_y = eps_y;
  o.output_bounds = output_bounds;
  o.input_bounds = input_bounds;
  o.causality = causality;
  return o;
}

TerminalOptions ExperimentConfig::terminal_options() const {
  TerminalOptions t = terminal;
  t.output_bounds = output_bounds;
  t.input_bounds = input_bounds;
  t.sigma_y = tightening_sigma(eps_y);
  t.sigma_u = tightening_sigma(eps_u);
  return t;
}

DataArchive collect_archive(const ExperimentConfig& config) {
  const ArxModel m = config.model.build();
  CollectOptions o = config.collect;
  if (o.required_pe_order == 0) o.required_pe_order = config.horizon + m.t_ini;
  return collect_data(m, o);
}

TerminalIngredients design_terminal(const ExperimentConfig& config,
                                    const DataArchive& archive) {
  const ArxModel m = config.model.build();
  const IdentifiedArx id = identify_arx(archive, m.t_ini);
  return synthesize(id.phi, id.d, m.t_ini, config.q, config.r,
                    m.disturbance_covariance(), config.terminal_options());
}

ControllerSetup build_setup(const ExperimentConfig& config,
                            const DataArchive& archive,
                            const TerminalIngredients& terminal) {
  OcpConfig ocp = config.ocp_config();
  ocp.terminal = terminal;
  ControllerSetup s = make_setup(config.model.build(), archive, ocp, config.solver);
  s.mu_mode = config.mu_mode;
  return s;
}

MonteCarloOptions monte_carlo_options(const ExperimentConfig& config) {
  MonteCarloOptions o;
  o.runs = config.simulation.runs;
  o.steps = config.simulation.steps;
  o.seed = config.simulation.seed;
  o.sampler = config.simulation.sampler;
  o.histogram_steps = config.simulation.histogram_steps;
  o.histogram_output = config.simulation.histogram_output;
  o.histogram_bins = config.simulation.histogram_bins;
  return o;
}

}  // namespace sddpc
