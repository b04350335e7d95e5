#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/ocp.hpp"

using namespace sddpc;
using sddpc::testing::aircraft;
using sddpc::testing::constant_window;

namespace {

Eigen::VectorXd realize(const Eigen::MatrixXd& coeffs, const Eigen::VectorXd& phi) {
  return coeffs.col(0) + coeffs.rightCols(coeffs.cols() - 1) * phi;
}

OcpSolution solve_at(const ControllerSetup& s, const InitialConditionData& init,
                     MuMode mode = MuMode::Free, OcpConfig cfg = {}) {
  if (!cfg.basis) cfg = s.ocp;
  OcpSolver solver(s.solver);
  return solver.solve(cfg, s.predictor, init, s.w_coeffs, mode);
}

/// Initial-condition data after `steps` closed-loop steps from z_0.
InitialConditionData advanced_initial(const ControllerSetup& s, const Eigen::VectorXd& z_0,
                                      int steps, std::uint64_t seed) {
  ControllerState state(s, z_0, seed);
  for (int k = 0; k < steps; ++k) state.step();
  return prepare_initial(state.z().values, state.last_solution().z_next);
}

/// Sum over j of the stage and terminal quadratic forms of the decoded trajectories.
double recomputed_value(const OcpSolution& sol, const OcpConfig& cfg, int n_u, int n_y, int t_ini) {
  double v = 0.0;
  const int n = cfg.horizon;
  for (int j = 0; j < sol.u.cols(); ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd y = sol.y.col(j).segment((t_ini + i) * n_y, n_y);
      const Eigen::VectorXd u = sol.u.col(j).segment((t_ini + i) * n_u, n_u);
      v += y.dot(cfg.q * y) + u.dot(cfg.r * u);
    }
    v += sol.z_terminal.col(j).dot(cfg.terminal.p * sol.z_terminal.col(j));
  }
  return v;
}

}  // namespace

TEST_CASE("tightening factor") {
  CHECK(tightening_sigma(0.1) == doctest::Approx(4.3589).epsilon(1e-5));
  CHECK(std::abs(tightening_sigma(0.1) - 4.359) <= 0.001);
  CHECK(tightening_sigma(1.0) == 1.0);
  CHECK(tightening_sigma(0.5) == doctest::Approx(std::sqrt(3.0)));
  CHECK_THROWS_AS(tightening_sigma(0.0), ParameterError);
  CHECK_THROWS_AS(tightening_sigma(1.5), ParameterError);
  CHECK_THROWS_AS(tightening_sigma(-0.1), ParameterError);
}

TEST_CASE("causality pattern") {
  const PceBasis& b = *aircraft().setup.ocp.basis;
  CHECK(b.dimension() == 39);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 39; ++j)
      CHECK(input_coefficient_allowed(b, CausalityMode::Strict, j, i) == (j < 9 + 3 * i));
  CHECK(input_coefficient_allowed(b, CausalityMode::Literal, 9, 0));
  CHECK_FALSE(input_coefficient_allowed(b, CausalityMode::Literal, 10, 0));
  CHECK(causality_from_string("literal") == CausalityMode::Literal);
  CHECK(mu_mode_from_string("one") == MuMode::One);
  CHECK_THROWS_AS(mu_mode_from_string("half"), ParameterError);
}

TEST_CASE("initial-condition data") {
  const int n_z = 8, big_l = 39;
  SUBCASE("bootstrap") {
    const Eigen::VectorXd z0 = Eigen::VectorXd::LinSpaced(n_z, -1.0, 1.0);
    const InitialConditionData d = bootstrap_initial(z0);
    CHECK(d.mean_pred == z0);
    CHECK(d.root.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.q_rhs.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity covariance") {
    Eigen::MatrixXd z_next = Eigen::MatrixXd::Zero(n_z, big_l);
    z_next.col(0).setOnes();
    z_next.middleCols(1, n_z) = Eigen::MatrixXd::Identity(n_z, n_z);
    const InitialConditionData d = prepare_initial(Eigen::VectorXd::Zero(n_z), z_next);
    CHECK((d.root - Eigen::MatrixXd::Identity(n_z, n_z)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(d.mean_pred == Eigen::VectorXd::Ones(n_z));
  }
  SUBCASE("random covariance") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::MatrixXd z_next(n_z, big_l);
      for (int k = 0; k < z_next.size(); ++k) z_next.data()[k] = nd(rng);
      if (rep % 2) z_next.rightCols(big_l - 4).setZero();  // rank-deficient
      const InitialConditionData d = prepare_initial(Eigen::VectorXd::Zero(n_z), z_next);
      const Eigen::MatrixXd q = z_next.rightCols(big_l - 1) * z_next.rightCols(big_l - 1).transpose();
      const double scale = q.norm();
      CHECK((d.q_rhs - q).norm() <= 1e-14 * scale);
      CHECK((d.root * d.root.transpose() - q).norm() <= 1e-10 * scale);
      CHECK((d.root - d.root.transpose()).norm() <= 1e-12 * scale);
    }
  }
  CHECK_THROWS_AS(prepare_initial(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(8, 39)),
                  DimensionError);
}

TEST_CASE("bootstrap and measured initialization") {
  const auto& f = aircraft();
  const ControllerSetup& s = f.setup;
  const Eigen::VectorXd z0 = constant_window(Eigen::Vector3d(0.2, -5.0, 0.3), 1, 2);

  for (MuMode mode : {MuMode::Free, MuMode::Zero, MuMode::One}) {
    const OcpSolution sol = solve_at(s, bootstrap_initial(z0), mode);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK((sol.z_initial.col(0) - z0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(sol.z_initial.rightCols(38).cwiseAbs().maxCoeff() < 1e-8);
  }

  const InitialConditionData init = advanced_initial(s, z0, 2, 5);
  REQUIRE(init.root.cwiseAbs().maxCoeff() > 1e-3);
  const OcpSolution one = solve_at(s, init, MuMode::One);
  REQUIRE(one.status == SolveStatus::Optimal);
  CHECK(one.mu == doctest::Approx(1.0));
  CHECK((one.z_initial.col(0) - init.z_k).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(one.z_initial.rightCols(38).cwiseAbs().maxCoeff() < 1e-7);

  const OcpSolution zero = solve_at(s, init, MuMode::Zero);
  REQUIRE(zero.status == SolveStatus::Optimal);
  CHECK((zero.z_initial.col(0) - init.mean_pred).cwiseAbs().maxCoeff() < 1e-7);
  CHECK((zero.z_initial.middleCols(1, 8) - init.root).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(zero.z_initial.rightCols(30).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("decoded solution contracts") {
  const auto& f = aircraft();
  const ControllerSetup& s = f.setup;
  const ArxModel& m = f.model;
  const InitialConditionData init =
      advanced_initial(s, constant_window(Eigen::Vector3d(0.0, -100.0, 0.0), 1, 2), 3, 9);
  OcpSolver solver(s.solver);
  const OcpSolution sol = solver.solve(s.ocp, s.predictor, init, s.w_coeffs);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.mu >= -1e-8);
  CHECK(sol.mu <= 1.0 + 1e-8);

  SUBCASE("value is the sum of quadratic forms") {
    const double v = recomputed_value(sol, s.ocp, 1, 3, 2);
    CHECK(std::abs(sol.value - v) <= 1e-8 * (1.0 + std::abs(v)));
    CHECK(std::abs(sol.value - solver.last_raw().objective -
                   solver.last_problem().layout.objective_constant) <= 1e-8 * (1.0 + v));
  }
  SUBCASE("causality zeros") {
    CHECK(sol.causality_residual < 1e-7);
    for (int i = 0; i < 10; ++i)
      for (int j = 9 + 3 * i; j < 39; ++j) CHECK(std::abs(sol.u(2 + i, j)) < 1e-7);
  }
  SUBCASE("terminal constraints") {
    const TerminalIngredients& t = s.ocp.terminal;
    const Eigen::VectorXd fz = t.f * sol.z_terminal.col(0) - t.f_rhs;
    CHECK(fz.maxCoeff() <= 1e-6);
    const Eigen::MatrixXd spread = sol.z_terminal.rightCols(38);
    const double level = (spread.transpose() * t.gamma * spread).trace();
    CHECK(std::sqrt(t.gamma_level) - std::sqrt(level) >= -1e-6);
  }
  SUBCASE("coefficient trajectories follow the plant") {
    double worst = 0.0;
    for (int j = 0; j < 39; ++j) {
      Eigen::MatrixXd us(12, 1), ys(12, 3);
      for (int t = 0; t < 12; ++t) {
        us(t, 0) = sol.u(t, j);
        ys.row(t) = sol.y.col(j).segment(3 * t, 3).transpose();
      }
      for (int i = 0; i < 10; ++i) {
        const Eigen::VectorXd z = ExtendedState::from_window(us.middleRows(i, 2), ys.middleRows(i, 2)).values;
        const Eigen::VectorXd yi = m.phi * z + m.d * us.row(i + 2).transpose() + s.w_coeffs.col(j).segment(3 * i, 3);
        worst = std::max(worst, (yi - ys.row(i + 2).transpose()).cwiseAbs().maxCoeff() /
                                    (1.0 + ys.cwiseAbs().maxCoeff()));
      }
    }
    CHECK(worst < 1e-6);
  }
  SUBCASE("full formulation reproduces the condensed optimum") {
    const OcpProblem full = assemble(s.ocp, s.predictor, init, s.w_coeffs, MuMode::Free, Formulation::Full);
    const Eigen::VectorXd x = lift_to_full(full, sol);
    const ConicProgram& p = full.program;
    const Eigen::VectorXd slack = p.b - p.a * x;
    const double violation = (project_cone(slack, p.cones) - slack).cwiseAbs().maxCoeff();
    CHECK(violation <= 1e-7 * (1.0 + p.b.cwiseAbs().maxCoeff()));
    const double v = p.objective(x) + full.layout.objective_constant;
    CHECK(std::abs(v - sol.value) <= 1e-8 * (1.0 + sol.value));
    CHECK_THROWS_AS(lift_to_full(solver.last_problem(), sol), ParameterError);
  }
  SUBCASE("sampled chance constraints") {
    std::mt19937_64 rng(77);
    const int samples = 100000;
    Eigen::VectorXi violations = Eigen::VectorXi::Zero(10);
    const PceBasis& basis = *s.ocp.basis;
    for (int k = 0; k < samples; ++k) {
      const Eigen::VectorXd phi = basis.draw_realization(rng);
      const Eigen::VectorXd y = realize(sol.y, phi);
      for (int i = 0; i < 10; ++i)
        if (std::abs(y(3 * (2 + i))) > 1.0) ++violations(i);
    }
    for (int i = 0; i < 10; ++i) {
      const double freq = violations(i) / double(samples);
      const double se = std::sqrt(0.1 * 0.9 / samples);
      CHECK(freq <= 0.1 + 3.0 * se);
    }
  }
}

TEST_CASE("expected cost equals the optimal value") {
  const auto& f = aircraft();
  const ControllerSetup& s = f.setup;
  const InitialConditionData init =
      advanced_initial(s, constant_window(Eigen::Vector3d(0.1, -20.0, 0.0), 1, 2), 2, 4);
  const OcpSolution sol = solve_at(s, init);
  REQUIRE(sol.status == SolveStatus::Optimal);
  std::mt19937_64 rng(101);
  const int samples = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < samples; ++k) {
    const Eigen::VectorXd phi = s.ocp.basis->draw_realization(rng);
    const Eigen::VectorXd u = realize(sol.u, phi), y = realize(sol.y, phi);
    const Eigen::VectorXd z = realize(sol.z_terminal, phi);
    double c = z.dot(s.ocp.terminal.p * z);
    for (int i = 0; i < 10; ++i) {
      const Eigen::VectorXd yi = y.segment(3 * (2 + i), 3);
      c += yi.dot(s.ocp.q * yi) + s.ocp.r(0, 0) * u(2 + i) * u(2 + i);
    }
    sum += c;
    sum2 += c * c;
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sum2 / samples - mean * mean) / samples);
  CHECK(std::abs(mean - sol.value) <= 3.0 * se);
}

TEST_CASE("scaling of the weights") {
  const auto& f = aircraft();
  const ControllerSetup& s = f.setup;
  const InitialConditionData init = bootstrap_initial(constant_window(Eigen::Vector3d(0.1, -10.0, 0.2), 1, 2));
  const OcpSolution base = solve_at(s, init);
  OcpConfig scaled = s.ocp;
  scaled.q *= 3.0;
  scaled.r *= 3.0;
  scaled.terminal.p *= 3.0;
  const OcpSolution big = solve_at(s, init, MuMode::Free, scaled);
  REQUIRE(base.status == SolveStatus::Optimal);
  REQUIRE(big.status == SolveStatus::Optimal);
  CHECK(big.value == doctest::Approx(3.0 * base.value).epsilon(1e-5));
  CHECK((big.u - base.u).cwiseAbs().maxCoeff() <= 1e-4 * (1.0 + base.u.cwiseAbs().maxCoeff()));
}

TEST_CASE("interpolation dominance") {
  const ControllerSetup& s = aircraft().setup;
  const Eigen::VectorXd z0 = constant_window(Eigen::Vector3d(0.0, -100.0, 0.0), 1, 2);
  ControllerState state(s, z0, 21);
  for (int k = 0; k < 6; ++k) {
    state.step();
    const InitialConditionData init = prepare_initial(state.z().values, state.last_solution().z_next);
    const OcpSolution free = solve_at(s, init, MuMode::Free);
    const OcpSolution zero = solve_at(s, init, MuMode::Zero);
    const OcpSolution one = solve_at(s, init, MuMode::One);
    REQUIRE(free.status == SolveStatus::Optimal);
    double bound = std::numeric_limits<double>::infinity();
    if (zero.status == SolveStatus::Optimal) bound = std::min(bound, zero.value);
    if (one.status == SolveStatus::Optimal) bound = std::min(bound, one.value);
    REQUIRE(std::isfinite(bound));
    CHECK(free.value <= bound + 1e-5 * (1.0 + bound));
  }
}

TEST_CASE("deterministic reduction") {
  const auto& f = aircraft();
  const ControllerSetup& s = f.setup;
  const ArxModel& m = f.model;
  const int n = 10;
  OcpConfig cfg = s.ocp;
  cfg.basis = std::make_shared<const PceBasis>(std::vector<GermKind>{}, std::vector<GermKind>{}, n);
  cfg.tighten = false;
  const Eigen::VectorXd z0 = constant_window(Eigen::Vector3d(0.05, -0.5, 0.02), 1, 2);
  OcpSolver solver(s.solver);
  const OcpSolution sol =
      solver.solve(cfg, s.predictor, bootstrap_initial(z0), Eigen::MatrixXd::Zero(3 * n, 1));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.u.cols() == 1);

  // Affine map u_f -> (y_f, z_N) of the true plant, built by simulation.
  auto rollout = [&](const Eigen::VectorXd& uf) {
    ExtendedState z(z0);
    Eigen::VectorXd y(3 * n);
    for (int i = 0; i < n; ++i) {
      const StepResult r = realization_step(m, z, uf.segment(i, 1), Eigen::Vector3d::Zero());
      y.segment(3 * i, 3) = r.y;
      z = r.z_next;
    }
    Eigen::VectorXd out(3 * n + 8);
    out << y, z.values;
    return out;
  };
  const Eigen::VectorXd c0 = rollout(Eigen::VectorXd::Zero(n));
  Eigen::MatrixXd g(3 * n + 8, n);
  for (int i = 0; i < n; ++i) g.col(i) = rollout(Eigen::VectorXd::Unit(n, i)) - c0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3 * n + 8, 3 * n + 8);
  for (int i = 0; i < n; ++i) w.block(3 * i, 3 * i, 3, 3) = cfg.q;
  w.bottomRightCorner(8, 8) = cfg.terminal.p;
  const Eigen::MatrixXd h = g.transpose() * w * g + cfg.r(0, 0) * Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd u = h.ldlt().solve(-g.transpose() * w * c0);
  const Eigen::VectorXd traj = c0 + g * u;
  const double v = traj.dot(w * traj) + cfg.r(0, 0) * u.squaredNorm();
  REQUIRE((cfg.terminal.f * traj.tail(8) - cfg.terminal.f_rhs).maxCoeff() < 0.0);

  CHECK((sol.u.col(0).tail(n) - u).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + u.cwiseAbs().maxCoeff()));
  CHECK(std::abs(sol.value - v) <= 1e-6 * (1.0 + v));

  OcpConfig bad = cfg;
  InitialConditionData init = bootstrap_initial(z0);
  init.root = Eigen::MatrixXd::Identity(8, 8);
  CHECK_THROWS_AS(assemble(bad, s.predictor, init, Eigen::MatrixXd::Zero(3 * n, 1)), ParameterError);
}

TEST_CASE("configuration validation") {
  OcpConfig cfg = aircraft().setup.ocp;
  cfg.q = -cfg.q;
  CHECK_THROWS_AS(cfg.validate(1, 3, 2), ParameterError);
  cfg = aircraft().setup.ocp;
  cfg.output_bounds[0] = Interval{1.0, -1.0};
  CHECK_THROWS_AS(cfg.validate(1, 3, 2), ParameterError);
  cfg = aircraft().setup.ocp;
  cfg.eps_y = 0.0;
  CHECK_THROWS_AS(cfg.validate(1, 3, 2), ParameterError);
  cfg = aircraft().setup.ocp;
  cfg.basis = nullptr;
  CHECK_THROWS_AS(cfg.validate(1, 3, 2), ParameterError);
  CHECK_NOTHROW(aircraft().setup.ocp.validate(1, 3, 2));
}
