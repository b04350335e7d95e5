#include "fixtures.hpp"

namespace sddpc::testing {

const AircraftFixture& aircraft() {
  static const AircraftFixture f = [] {
    AircraftFixture a;
    a.config = ExperimentConfig::aircraft();
    a.model = a.config.model.build();
    a.archive = collect_archive(a.config);
    a.identified = identify_arx(a.archive, a.model.t_ini);
    a.terminal = design_terminal(a.config, a.archive);
    a.setup = build_setup(a.config, a.archive, a.terminal);
    return a;
  }();
  return f;
}

Eigen::VectorXd constant_window(const Eigen::VectorXd& y, int n_u, int t_ini) {
  Eigen::MatrixXd u_rows = Eigen::MatrixXd::Zero(t_ini, n_u);
  Eigen::MatrixXd y_rows = y.transpose().replicate(t_ini, 1);
  return ExtendedState::from_window(u_rows, y_rows).values;
}

}  // namespace sddpc::testing
