// Experiment runner: data collection, terminal design, closed-loop runs,
// Monte-Carlo fleets, lemma verification and standalone conic solves.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "sddpc/behavioral.hpp"
#include "sddpc/config.hpp"
#include "sddpc/conic.hpp"
#include "sddpc/controller.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/hash.hpp"
#include "sddpc/io.hpp"
#include "sddpc/ocp.hpp"
#include "sddpc/terminal.hpp"

namespace fs = std::filesystem;
using namespace sddpc;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> steps;
  std::string out;
  std::string mu_mode;
  std::string causality;
  std::string archive;
  std::string terminal;
  std::string fixture;
  int trajectories = 100;
};

ExperimentConfig load_config(const Flags& f) {
  ExperimentConfig c = ExperimentConfig::aircraft();
  if (!f.config.empty()) {
    Json j;
    try {
      j = Json::parse(read_text_file(f.config));
    } catch (const Json::exception& e) {
      throw ParameterError("configuration " + f.config + " is not valid JSON: " + e.what());
    }
    // A manifest carries the resolved configuration under "config".
    c = ExperimentConfig::from_json(j.contains("config") ? j.at("config") : j);
  }
  if (f.seed) c.simulation.seed = *f.seed;
  if (f.runs) c.simulation.runs = *f.runs;
  if (f.steps) c.simulation.steps = *f.steps;
  if (!f.out.empty()) c.output_dir = f.out;
  if (!f.mu_mode.empty()) c.mu_mode = mu_mode_from_string(f.mu_mode);
  if (!f.causality.empty()) c.causality = causality_from_string(f.causality);
  c.validate();
  return c;
}

std::string path_in(const ExperimentConfig& c, const std::string& name) {
  fs::create_directories(c.output_dir);
  return (fs::path(c.output_dir) / name).string();
}

void write_manifest(const ExperimentConfig& c, const std::string& command,
                    const std::vector<std::string>& artifacts, Json extra = Json::object()) {
  Json m;
  m["command"] = command;
  m["config"] = c.to_json();
  m["config_hash"] = c.hash();
  m["model_hash"] = c.model.build().hash();
  m["seeds"] = {{"collect", c.collect.seed},
                {"terminal", c.terminal.seed},
                {"simulation", c.simulation.seed}};
  m["versions"] = {{"sddpc", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  m["artifacts"] = artifacts;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text_file(path_in(c, "manifest.json"), m.dump(2) + "\n");
}

DataArchive obtain_archive(const ExperimentConfig& c, const Flags& f) {
  if (!f.archive.empty()) return DataArchive::load_json(f.archive);
  return collect_archive(c);
}

TerminalIngredients obtain_terminal(const ExperimentConfig& c, const Flags& f,
                                    const DataArchive& archive) {
  if (!f.terminal.empty()) return TerminalIngredients::load_json(f.terminal);
  return design_terminal(c, archive);
}

int cmd_collect(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const DataArchive a = collect_archive(c);
  a.save_json(path_in(c, "archive.json"));
  a.save_csv(path_in(c, "archive.csv"));
  const ArxModel m = c.model.build();
  const RankReport pe = is_persistently_exciting(a.u, a.w, c.horizon + m.t_ini);
  write_manifest(c, "collect", {"archive.json", "archive.csv"},
                 {{"persistently_exciting", pe.full_row_rank}, {"pe_rank", pe.rank}});
  std::cout << "archive: " << a.length() << " samples, PE order " << c.horizon + m.t_ini
            << (pe.full_row_rank ? " satisfied" : " NOT satisfied") << "\n";
  return 0;
}

int cmd_terminal(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const DataArchive a = obtain_archive(c, f);
  const ArxModel m = c.model.build();
  const IdentifiedArx id = identify_arx(a, m.t_ini);
  const TerminalIngredients t =
      synthesize(id.phi, id.d, m.t_ini, c.q, c.r, m.disturbance_covariance(), c.terminal_options());
  t.save_json(path_in(c, "terminal.json"));
  const TerminalCheck chk = check_terminal(t, id.phi, id.d, m.t_ini, c.q, c.r,
                                           c.terminal.verification_samples, c.terminal.seed + 1);
  const double alpha = alpha_bound(t.p, c.q, m.disturbance_covariance());
  Json report{{"alpha", alpha},
              {"beta", t.beta},
              {"gamma", t.gamma_level},
              {"delta", t.delta},
              {"set_rows", t.f.rows()},
              {"set_horizon", t.set_horizon},
              {"identification_residual", id.max_residual},
              {"decrease_margin", chk.decrease_margin},
              {"contraction_margin", chk.contraction_margin},
              {"invariance_violations", chk.invariance_violations},
              {"constraint_violations", chk.constraint_violations}};
  write_text_file(path_in(c, "terminal_report.json"), report.dump(2) + "\n");
  write_manifest(c, "terminal", {"terminal.json", "terminal_report.json"});
  std::cout << report.dump(2) << "\n";
  return 0;
}

Eigen::VectorXd initial_state(const ExperimentConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed ^ 0x243f6a8885a308d3ULL));
  return c.simulation.sampler.draw(c.model.build().t_ini, rng);
}

int cmd_run(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const DataArchive a = obtain_archive(c, f);
  const ControllerSetup s = build_setup(c, a, obtain_terminal(c, f, a));
  const std::uint64_t seed = c.simulation.seed;
  const ClosedLoopTrace t = run_closed_loop(s, initial_state(c, seed), c.simulation.steps, seed);
  write_text_file(path_in(c, "trace.csv"), t.to_csv());
  double acc = 0.0;
  for (const auto& r : t.rows) acc += r.stage_cost;
  Json summary{{"seed", seed},
               {"alpha", t.alpha},
               {"steps", t.rows.size()},
               {"aborted", t.aborted},
               {"diagnostic", t.diagnostic},
               {"infeasible_steps", t.infeasible_steps()},
               {"averaged_cost", t.rows.empty() ? 0.0 : acc / t.rows.size()}};
  write_text_file(path_in(c, "trace_summary.json"), summary.dump(2) + "\n");
  write_manifest(c, "run", {"trace.csv", "trace_summary.json"});
  std::cout << summary.dump(2) << "\n";
  return t.aborted ? 3 : 0;
}

int cmd_montecarlo(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const DataArchive a = obtain_archive(c, f);
  const ControllerSetup s = build_setup(c, a, obtain_terminal(c, f, a));
  MonteCarloOptions o = monte_carlo_options(c);
  const MonteCarloSummary sum = monte_carlo(s, o);
  write_text_file(path_in(c, "summary.json"), sum.to_json().dump(2) + "\n");
  write_text_file(path_in(c, "statistics.csv"), sum.statistics_csv());
  write_text_file(path_in(c, "histogram.csv"), sum.histogram_csv());
  std::ostringstream avg;
  avg << "run,k,averaged_cost\n";
  for (int i = 0; i < sum.averaged_cost.rows(); ++i)
    for (int k = 0; k < sum.averaged_cost.cols(); ++k)
      avg << i << ',' << k << ',' << format_double(sum.averaged_cost(i, k)) << '\n';
  write_text_file(path_in(c, "averaged_cost.csv"), avg.str());
  write_manifest(c, "montecarlo",
                 {"summary.json", "statistics.csv", "histogram.csv", "averaged_cost.csv"},
                 {{"workers", o.workers > 0 ? o.workers : default_workers()}});
  Json brief{{"runs", sum.runs},
             {"steps", sum.steps},
             {"alpha", sum.alpha},
             {"infeasibility_events", sum.infeasibility_events},
             {"violation_rate", sum.to_json()["violation_rate"]}};
  std::cout << brief.dump(2) << "\n";
  return 0;
}

int cmd_verify_lemma(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const ArxModel m = c.model.build();
  const DataArchive a = obtain_archive(c, f);
  const HankelStack hs = HankelStack::build(a, c.horizon, m.t_ini);
  const int len = c.horizon + m.t_ini;
  std::mt19937_64 rng(splitmix64(c.simulation.seed ^ 0x13198a2e03707344ULL));
  std::ostringstream csv;
  csv << "trajectory,kind,residual\n";
  double worst_fresh = 0.0, best_perturbed = std::numeric_limits<double>::infinity();
  for (int i = 0; i < f.trajectories; ++i) {
    CollectOptions o = c.collect;
    o.length = len;
    o.required_pe_order = 0;
    o.seed = rng();
    const DataArchive t = collect_data(m, o);
    const Eigen::MatrixXd w = t.w.bottomRows(c.horizon);
    const double fresh = verify_realization_lemma(hs, t.u, w, t.y);
    Eigen::MatrixXd y_bad = t.y;
    y_bad(len - 1, static_cast<int>(rng() % m.n_y())) += 0.1;
    const double perturbed = verify_realization_lemma(hs, t.u, w, y_bad);
    worst_fresh = std::max(worst_fresh, fresh);
    best_perturbed = std::min(best_perturbed, perturbed);
    csv << i << ",fresh," << format_double(fresh) << '\n';
    csv << i << ",perturbed," << format_double(perturbed) << '\n';
  }
  write_text_file(path_in(c, "lemma.csv"), csv.str());
  write_manifest(c, "verify-lemma", {"lemma.csv"},
                 {{"max_fresh_residual", worst_fresh}, {"min_perturbed_residual", best_perturbed}});
  std::cout << "fresh trajectories: max residual " << worst_fresh << "\n"
            << "perturbed trajectories: min residual " << best_perturbed << "\n";
  return worst_fresh < 1e-8 ? 0 : 3;
}

int cmd_solve_fixture(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  ConicProgram program;
  std::string source;
  if (!f.fixture.empty()) {
    program = ConicProgram::from_json(Json::parse(read_text_file(f.fixture)));
    source = f.fixture;
  } else {
    const DataArchive a = obtain_archive(c, f);
    const ControllerSetup s = build_setup(c, a, obtain_terminal(c, f, a));
    const InitialConditionData init = bootstrap_initial(initial_state(c, c.simulation.seed));
    program = assemble(s.ocp, s.predictor, init, s.w_coeffs, c.mu_mode).program;
    write_text_file(path_in(c, "fixture.json"), program.to_json().dump() + "\n");
    source = "ocp";
  }
  const ConicSolution sol = solve(program, c.solver);
  write_text_file(path_in(c, "solution.json"), sol.to_json().dump(2) + "\n");
  write_manifest(c, "solve-fixture", {"solution.json"}, {{"fixture", source}});
  std::cout << "status " << to_string(sol.status) << ", objective " << sol.objective
            << ", iterations " << sol.iterations << ", primal residual " << sol.primal_residual
            << ", dual residual " << sol.dual_residual << "\n";
  return sol.status == SolveStatus::Optimal ? 0 : 3;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  Json e{{"error", kind}, {"message", message}};
  std::cerr << e.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven stochastic output-feedback predictive control"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON configuration or manifest");
    sub->add_option("--seed", f.seed, "simulation seed");
    sub->add_option("--runs", f.runs, "Monte-Carlo runs");
    sub->add_option("--steps", f.steps, "closed-loop steps");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--mu-mode", f.mu_mode, "free, zero or one")
        ->check(CLI::IsMember({"free", "zero", "one"}));
    sub->add_option("--causality", f.causality, "strict or literal")
        ->check(CLI::IsMember({"strict", "literal"}));
    sub->add_option("--archive", f.archive, "reuse an archive JSON");
    sub->add_option("--terminal", f.terminal, "reuse terminal ingredients JSON");
  };
  auto* collect = app.add_subcommand("collect", "record offline data");
  auto* terminal = app.add_subcommand("terminal", "design terminal ingredients");
  auto* run = app.add_subcommand("run", "one closed-loop run");
  auto* mc = app.add_subcommand("montecarlo", "closed-loop fleet statistics");
  auto* lemma = app.add_subcommand("verify-lemma", "Hankel representation residuals");
  auto* fixture = app.add_subcommand("solve-fixture", "solve a conic program");
  for (auto* s : {collect, terminal, run, mc, lemma, fixture}) common(s);
  lemma->add_option("--trajectories", f.trajectories, "fresh trajectories")->check(CLI::PositiveNumber);
  fixture->add_option("--fixture", f.fixture, "ConicProgram JSON (default: the OCP at the sampler center)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage", e.what(), 2);
  }
  try {
    if (collect->parsed()) return cmd_collect(f);
    if (terminal->parsed()) return cmd_terminal(f);
    if (run->parsed()) return cmd_run(f);
    if (mc->parsed()) return cmd_montecarlo(f);
    if (lemma->parsed()) return cmd_verify_lemma(f);
    if (fixture->parsed()) return cmd_solve_fixture(f);
  } catch (const ParameterError& e) {
    return report_error("parameter", e.what(), 2);
  } catch (const DimensionError& e) {
    return report_error("dimension", e.what(), 2);
  } catch (const NumericalError& e) {
    return report_error("numerical", e.what(), 4);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), 1);
  }
  return 1;
}
