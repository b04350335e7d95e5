#pragma once

// Experiment configuration: model, data collection, OCP, terminal design,
// solver and simulation settings, with JSON round-trip and the pipeline that
// turns a configuration into a ready controller.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sddpc/controller.hpp"
#include "sddpc/io.hpp"
#include "sddpc/lti.hpp"
#include "sddpc/ocp.hpp"
#include "sddpc/terminal.hpp"

namespace sddpc {

struct ModelSpec {
  /// "aircraft" or "explicit" (phi, d, t_ini, disturbance given).
  std::string kind = "aircraft";
  ArxModel explicit_model;

  ArxModel build() const;
};

struct SimulationSpec {
  int runs = 50;
  int steps = 30;
  std::uint64_t seed = 1;
  InitialSampler sampler;
  std::vector<int> histogram_steps{0, 5, 10, 15, 20};
  int histogram_output = 1;
  int histogram_bins = 40;
};

struct ExperimentConfig {
  ModelSpec model;
  CollectOptions collect;
  int horizon = 10;
  Eigen::MatrixXd q;
  Eigen::MatrixXd r;
  double eps_u = 1.0;
  double eps_y = 0.1;
  std::vector<Interval> output_bounds;
  std::vector<Interval> input_bounds;
  CausalityMode causality = CausalityMode::Strict;
  MuMode mu_mode = MuMode::Free;
  TerminalOptions terminal;  // bounds and sigmas are filled from the OCP part
  SolverSettings solver;
  SimulationSpec simulation;
  std::string output_dir = "out";

  /// Aircraft example defaults.
  static ExperimentConfig aircraft();

  /// Lists every offending field in one ParameterError.
  void validate() const;

  Json to_json() const;
  /// Missing keys keep the aircraft defaults.
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig load(const std::string& path);
  void save(const std::string& path) const;
  /// FNV-1a of the canonical JSON dump.
  std::string hash() const;

  /// OCP settings without terminal ingredients and basis.
  OcpConfig ocp_config() const;
  /// Terminal options with the OCP bounds and tightening factors.
  TerminalOptions terminal_options() const;
};

DataArchive collect_archive(const ExperimentConfig& config);

/// Identifies (Phi, D) from the archive and synthesizes the ingredients.
TerminalIngredients design_terminal(const ExperimentConfig& config,
                                    const DataArchive& archive);

ControllerSetup build_setup(const ExperimentConfig& config,
                            const DataArchive& archive,
                            const TerminalIngredients& terminal);

MonteCarloOptions monte_carlo_options(const ExperimentConfig& config);

Json interval_to_json(const Interval& i);
Interval interval_from_json(const Json& j);

}  // namespace sddpc
