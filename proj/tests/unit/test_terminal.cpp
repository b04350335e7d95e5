#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/terminal.hpp"

using namespace sddpc;
using sddpc::testing::aircraft;

namespace {

double min_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose())).eigenvalues().minCoeff();
}

Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd l(n, n);
  for (int k = 0; k < l.size(); ++k) l.data()[k] = nd(rng);
  return l * l.transpose();
}

}  // namespace

TEST_CASE("identification") {
  const auto& f = aircraft();
  CHECK((f.identified.phi - f.model.phi).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(f.identified.d.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(f.identified.max_residual <= 1e-8);

  DataArchive zero;
  zero.u = Eigen::MatrixXd::Zero(90, 1);
  zero.w = Eigen::MatrixXd::Zero(90, 3);
  zero.y = Eigen::MatrixXd::Zero(90, 3);
  CHECK_THROWS_AS(identify_arx(zero, 2), NumericalError);
  DataArchive shortl = f.archive;
  shortl.u.conservativeResize(8, Eigen::NoChange);
  shortl.w.conservativeResize(8, Eigen::NoChange);
  shortl.y.conservativeResize(8, Eigen::NoChange);
  CHECK_THROWS_AS(identify_arx(shortl, 2), ParameterError);
}

TEST_CASE("terminal cost of a scalar chain") {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::MatrixXd p = terminal_cost_matrix(a, Eigen::MatrixXd::Zero(1, 1), one, one, one);
  CHECK(p(0, 0) == doctest::Approx((1.0 + 1e-8) / 0.75).epsilon(1e-12));
  CHECK(p(0, 0) == doctest::Approx(1.3333).epsilon(1e-4));
}

TEST_CASE("alpha bound") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(4, 4);
  p.bottomRightCorner(2, 2) = 2.0 * Eigen::Matrix2d::Identity();
  CHECK(alpha_bound(p, Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()) == doctest::Approx(6.0));
  CHECK(alpha_bound(p, Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Zero()) == 0.0);
  CHECK_THROWS_AS(alpha_bound(p, Eigen::Matrix3d::Identity(), Eigen::Matrix2d::Identity()), DimensionError);

  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXd pp = random_psd(rng, 6), q = random_psd(rng, 3);
    const Eigen::MatrixXd s1 = random_psd(rng, 3), s2 = s1 + random_psd(rng, 3);
    CHECK(alpha_bound(pp, q, s1) <= alpha_bound(pp, q, s2) + 1e-12 * alpha_bound(pp, q, s2));
  }

  const auto& f = aircraft();
  const Eigen::MatrixXd sw = f.model.disturbance_covariance();
  const Eigen::MatrixXd e = extended_state_matrices(f.model).e;
  const double direct = (sw * (f.setup.ocp.q + e.transpose() * f.terminal.p * e)).trace();
  CHECK(f.setup.alpha == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("aircraft terminal ingredients") {
  const auto& f = aircraft();
  const TerminalIngredients& t = f.terminal;
  CHECK(min_eig(t.p) > 0.0);
  CHECK(min_eig(t.gamma) > 0.0);
  CHECK((t.p - t.p.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.delta > 0.0);
  CHECK(t.gamma_level > 0.0);
  CHECK((t.f * Eigen::VectorXd::Zero(8) - t.f_rhs).maxCoeff() < 0.0);

  const TerminalCheck c = check_terminal(t, f.identified.phi, f.identified.d, 2, f.setup.ocp.q,
                                         f.setup.ocp.r, 10000, 99);
  CHECK(c.lyapunov_residual <= 1e-6);
  CHECK(c.decrease_margin >= 1e-8);
  CHECK(c.contraction_margin >= 0.0);
  CHECK(c.invariance_violations == 0);
  CHECK(c.constraint_violations == 0);

  // Covariance contraction checked directly.
  const ExtendedStateMatrices em = extended_state_matrices(f.model);
  const Eigen::MatrixXd ak = em.a + em.b * t.k;
  CHECK(min_eig(-(ak.transpose() * t.gamma * ak - t.gamma + t.delta * t.gamma)) >= -1e-12 * t.gamma.norm());
}

TEST_CASE("zero disturbance covariance") {
  const auto& f = aircraft();
  const TerminalIngredients t =
      synthesize(f.identified.phi, f.identified.d, 2, f.setup.ocp.q, f.setup.ocp.r,
                 Eigen::Matrix3d::Zero(), f.config.terminal_options());
  CHECK(t.gamma_level == 0.0);
  CHECK(min_eig(t.p) > 0.0);
}

TEST_CASE("terminal serialization") {
  const TerminalIngredients& t = aircraft().terminal;
  const TerminalIngredients back = TerminalIngredients::from_json(t.to_json());
  CHECK(back.p == t.p);
  CHECK(back.k == t.k);
  CHECK(back.gamma == t.gamma);
  CHECK(back.gamma_level == t.gamma_level);
  CHECK(back.delta == t.delta);
  CHECK(back.f == t.f);
  CHECK(back.f_rhs == t.f_rhs);
  CHECK(back.beta == t.beta);
  Json broken = t.to_json();
  broken.erase("gamma");
  CHECK_THROWS_AS(TerminalIngredients::from_json(broken), ParameterError);
}
