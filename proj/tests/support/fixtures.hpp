#pragma once

// Shared aircraft experiment objects, built once per test process.

#include <Eigen/Dense>

#include "sddpc/config.hpp"
#include "sddpc/controller.hpp"
#include "sddpc/terminal.hpp"

namespace sddpc::testing {

struct AircraftFixture {
  ExperimentConfig config;
  ArxModel model;
  DataArchive archive;
  IdentifiedArx identified;
  TerminalIngredients terminal;
  ControllerSetup setup;
};

/// Default aircraft configuration, archive seed 1.
const AircraftFixture& aircraft();

/// Extended state with a constant past window (u = 0, y = y).
Eigen::VectorXd constant_window(const Eigen::VectorXd& y, int n_u, int t_ini);

}  // namespace sddpc::testing
