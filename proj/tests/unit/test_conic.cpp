#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "brute_force_qp.hpp"
#include "sddpc/conic.hpp"
#include "sddpc/errors.hpp"

using namespace sddpc;

namespace {

ConicProgram dense_program(const Eigen::MatrixXd& p, const Eigen::VectorXd& q,
                           const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                           std::vector<Cone> cones) {
  ConicProgram prog;
  prog.p = p.sparseView();
  prog.q = q;
  prog.a = a.sparseView();
  prog.b = b;
  prog.cones = std::move(cones);
  return prog;
}

/// Feasible random QP with a strictly convex objective.
ConicProgram random_qp(std::mt19937_64& rng, int n, int m_eq, int m_ineq) {
  std::normal_distribution<double> nd;
  auto randm = [&](int r, int c) {
    Eigen::MatrixXd x(r, c);
    for (int k = 0; k < x.size(); ++k) x.data()[k] = nd(rng);
    return x;
  };
  const Eigen::MatrixXd l = randm(n, n);
  const Eigen::MatrixXd p = l * l.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd a = randm(m_eq + m_ineq, n);
  const Eigen::VectorXd x0 = randm(n, 1);
  Eigen::VectorXd slack = randm(m_eq + m_ineq, 1).cwiseAbs();
  slack.head(m_eq).setZero();
  std::vector<Cone> cones;
  if (m_eq > 0) cones.push_back({ConeKind::Zero, m_eq});
  if (m_ineq > 0) cones.push_back({ConeKind::NonNeg, m_ineq});
  return dense_program(p, randm(n, 1), a, a * x0 + slack, cones);
}

void check_kkt(const ConicProgram& prog, const ConicSolution& sol, const SolverSettings& st) {
  REQUIRE(sol.status == SolveStatus::Optimal);
  const Eigen::VectorXd rp = prog.a * sol.x + sol.s - prog.b;
  const Eigen::VectorXd rd = prog.p * sol.x + prog.q + prog.a.transpose() * sol.y;
  const double bn = prog.b.size() ? prog.b.cwiseAbs().maxCoeff() : 0.0;
  const double qn = prog.q.size() ? prog.q.cwiseAbs().maxCoeff() : 0.0;
  if (rp.size()) CHECK(rp.cwiseAbs().maxCoeff() <= st.eps_p * (1.0 + bn));
  CHECK(rd.cwiseAbs().maxCoeff() <= st.eps_d * (1.0 + qn));
  if (sol.s.size()) {
    CHECK((project_cone(sol.s, prog.cones) - sol.s).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((project_dual_cone(sol.y, prog.cones) - sol.y).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

}  // namespace

TEST_CASE("analytic programs") {
  SUBCASE("unconstrained quadratic") {
    const ConicProgram prog = dense_program(Eigen::MatrixXd::Ones(1, 1), -Eigen::VectorXd::Ones(1),
                                            Eigen::MatrixXd(0, 1), Eigen::VectorXd(0), {});
    const ConicSolution sol = solve(prog);
    CHECK(sol.status == SolveStatus::Optimal);
    CHECK(sol.x(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(sol.objective == doctest::Approx(-0.5).epsilon(1e-6));
  }
  SUBCASE("linear objective on the nonnegative ray") {
    // x >= 0 written as -x + s = 0, s >= 0.
    const ConicProgram prog =
        dense_program(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1),
                      -Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1),
                      {{ConeKind::NonNeg, 1}});
    const ConicSolution sol = solve(prog);
    CHECK(sol.status == SolveStatus::Optimal);
    CHECK(std::abs(sol.x(0)) < 1e-6);
  }
  SUBCASE("projection onto the unit ball") {
    const Eigen::Vector3d c(1.2, -1.6, 0.0);  // norm 2
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 3);
    a.bottomRows(3) = -Eigen::Matrix3d::Identity();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(4);
    b(0) = 1.0;
    const ConicProgram prog = dense_program(2.0 * Eigen::Matrix3d::Identity(), -2.0 * c, a, b,
                                            {{ConeKind::SecondOrder, 4}});
    const ConicSolution sol = solve(prog);
    CHECK(sol.status == SolveStatus::Optimal);
    CHECK((sol.x - c / c.norm()).cwiseAbs().maxCoeff() < 1e-5);
    check_kkt(prog, sol, SolverSettings{});
  }
}

TEST_CASE("cone projection") {
  Eigen::Vector2d s(-1.0, 2.0);
  CHECK(project_cone(s, {{ConeKind::NonNeg, 2}}) == Eigen::Vector2d(0.0, 2.0));
  CHECK(project_cone(s, {{ConeKind::Zero, 2}}) == Eigen::Vector2d::Zero());
  CHECK(project_dual_cone(s, {{ConeKind::Zero, 2}}) == s);

  Eigen::Vector3d boundary(0.0, 1.0, 0.0);
  const Eigen::VectorXd pb = project_cone(boundary, {{ConeKind::SecondOrder, 3}});
  CHECK((pb - Eigen::Vector3d(0.5, 0.5, 0.0)).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::Vector3d interior(5.0, 1.0, 1.0);
  CHECK(project_cone(interior, {{ConeKind::SecondOrder, 3}}) == interior);
  Eigen::Vector3d polar(-5.0, 1.0, 1.0);
  CHECK(project_cone(polar, {{ConeKind::SecondOrder, 3}}) == Eigen::Vector3d::Zero());

  // Projection properties on random mixed cones: idempotent and orthogonal residual.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const std::vector<Cone> cones{{ConeKind::Zero, 2}, {ConeKind::NonNeg, 3}, {ConeKind::SecondOrder, 4}};
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd v(9);
    for (int k = 0; k < 9; ++k) v(k) = nd(rng);
    const Eigen::VectorXd p = project_cone(v, cones);
    CHECK((project_cone(p, cones) - p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(p.dot(v - p)) < 1e-12);
  }
  CHECK_THROWS_AS(project_cone(Eigen::VectorXd::Zero(3), {{ConeKind::NonNeg, 2}}), DimensionError);
}

TEST_CASE("random QPs against active-set enumeration") {
  std::mt19937_64 rng(11);
  const SolverSettings st;
  for (int i = 0; i < 100; ++i) {
    const int m_eq = i % 3 == 0 ? 1 : 0;
    const ConicProgram prog = random_qp(rng, 2, m_eq, 3);
    const testing::BruteForceResult ref = testing::brute_force_qp(prog);
    REQUIRE(ref.status == SolveStatus::Optimal);
    const ConicSolution sol = solve(prog, st);
    check_kkt(prog, sol, st);
    CHECK(sol.objective == doctest::Approx(ref.objective).epsilon(1e-5).scale(1.0));
  }
  SUBCASE("equality-only program matches the KKT solve") {
    const ConicProgram prog = random_qp(rng, 3, 2, 0);
    const Eigen::MatrixXd p(prog.p), a(prog.a);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(5, 5);
    kkt.topLeftCorner(3, 3) = p;
    kkt.topRightCorner(3, 2) = a.transpose();
    kkt.bottomLeftCorner(2, 3) = a;
    Eigen::VectorXd rhs(5);
    rhs << -prog.q, prog.b;
    const Eigen::VectorXd x = kkt.fullPivLu().solve(rhs).head(3);
    const ConicSolution sol = solve(prog);
    CHECK((sol.x - x).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((testing::brute_force_qp(prog).x - x).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("infeasibility and unboundedness") {
  SUBCASE("x >= 1 and -x >= 0") {
    Eigen::MatrixXd a(2, 1);
    a << -1.0, 1.0;
    const ConicProgram prog = dense_program(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), a,
                                            Eigen::Vector2d(-1.0, 0.0), {{ConeKind::NonNeg, 2}});
    CHECK(testing::brute_force_qp(prog).status == SolveStatus::Infeasible);
    const ConicSolution sol = solve(prog);
    CHECK(sol.status == SolveStatus::Infeasible);
    REQUIRE(sol.certificate.size() == 2);
    const Eigen::VectorXd d = sol.certificate;
    CHECK(std::abs((a.transpose() * d)(0)) < 1e-6 * d.norm());
    CHECK(prog.b.dot(d) < 0.0);
    CHECK(d.minCoeff() >= -1e-9 * d.norm());
  }
  SUBCASE("linear objective along a free direction") {
    const ConicProgram prog = dense_program(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1),
                                            Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1),
                                            {{ConeKind::NonNeg, 1}});
    const ConicSolution sol = solve(prog);
    CHECK(sol.status == SolveStatus::Unbounded);
    CHECK(testing::brute_force_qp(prog).status == SolveStatus::Unbounded);
  }
}

TEST_CASE("KKT factorization") {
  SUBCASE("identity objective without constraints") {
    const Eigen::Vector3d q(1.0, -2.0, 0.5);
    const ConicProgram prog = dense_program(Eigen::Matrix3d::Identity(), q, Eigen::MatrixXd(0, 3),
                                            Eigen::VectorXd(0), {});
    const ConicSolution sol = solve(prog);
    CHECK((sol.x + q).cwiseAbs().maxCoeff() < 1e-8);
    const KktFactorization f = factorize_kkt(prog, 0.1, 0.0);
    CHECK((f.solve(-q) + q).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_FALSE(f.regularized());
  }
  SUBCASE("singular system is regularized and flagged") {
    const ConicProgram prog = dense_program(Eigen::Matrix2d::Zero(), Eigen::Vector2d::Zero(),
                                            Eigen::MatrixXd(0, 2), Eigen::VectorXd(0), {});
    const KktFactorization f = factorize_kkt(prog, 0.1, 0.0);
    CHECK(f.regularized());
  }
  SUBCASE("cached factorization gives the same answers") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    ConicProgram prog = random_qp(rng, 5, 1, 6);
    ConicSolver cached;
    for (int i = 0; i < 100; ++i) {
      const Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(5, [&] { return nd(rng); });
      Eigen::VectorXd slack = Eigen::VectorXd::NullaryExpr(7, [&] { return std::abs(nd(rng)); });
      slack(0) = 0.0;
      prog.b = prog.a * x0 + slack;
      const ConicSolution a = cached.solve(prog);
      const ConicSolution b = solve(prog);
      CHECK(a.status == b.status);
      CHECK((a.x - b.x).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(cached.factorizations() == 1);
  }
}

TEST_CASE("warm start, determinism and serialization") {
  std::mt19937_64 rng(23);
  const ConicProgram prog = random_qp(rng, 6, 2, 8);
  const ConicSolution first = solve(prog);
  REQUIRE(first.status == SolveStatus::Optimal);

  const WarmStart warm{first.x, first.s, first.y};
  const ConicSolution again = solve(prog, SolverSettings{}, &warm);
  CHECK(again.status == SolveStatus::Optimal);
  CHECK(again.iterations <= 10);

  const ConicSolution repeat = solve(prog);
  CHECK(repeat.iterations == first.iterations);
  CHECK(repeat.x == first.x);
  CHECK(repeat.y == first.y);

  const ConicProgram back = ConicProgram::from_json(prog.to_json());
  CHECK(Eigen::MatrixXd(back.p) == Eigen::MatrixXd(prog.p));
  CHECK(Eigen::MatrixXd(back.a) == Eigen::MatrixXd(prog.a));
  CHECK(back.q == prog.q);
  CHECK(back.b == prog.b);
  REQUIRE(back.cones.size() == prog.cones.size());
  CHECK(solve(back).x == first.x);
  CHECK(first.to_json().at("status") == "Optimal");

  ConicProgram bad = prog;
  bad.b.resize(3);
  CHECK_THROWS(bad.validate());
  ConicProgram nonpsd = prog;
  nonpsd.p = -nonpsd.p;
  CHECK_THROWS(nonpsd.validate());
}
