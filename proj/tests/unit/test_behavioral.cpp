#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "sddpc/behavioral.hpp"
#include "sddpc/errors.hpp"
#include "sddpc/lti.hpp"
#include "sddpc/pce.hpp"

using namespace sddpc;

namespace {

DataArchive aircraft_archive(std::uint64_t seed) {
  CollectOptions o;
  o.seed = seed;
  return collect_data(aircraft_model(), o);
}

/// Explicit coefficient rollout: past window pinned, then y^j_i from the model.
Eigen::MatrixXd rollout_future_outputs(const ArxModel& m, const PceTargets& t, int horizon) {
  const int big_l = static_cast<int>(t.u_past.cols());
  const int n_u = m.n_u(), n_y = m.n_y(), ti = m.t_ini;
  Eigen::MatrixXd y(horizon * n_y, big_l);
  for (int j = 0; j < big_l; ++j) {
    Eigen::MatrixXd us(ti + horizon, n_u), ys(ti + horizon, n_y);
    for (int l = 0; l < ti; ++l) {
      us.row(l) = t.u_past.col(j).segment(l * n_u, n_u).transpose();
      ys.row(l) = t.y_past.col(j).segment(l * n_y, n_y).transpose();
    }
    for (int i = 0; i < horizon; ++i) {
      us.row(ti + i) = t.u_future.col(j).segment(i * n_u, n_u).transpose();
      const Eigen::VectorXd z =
          ExtendedState::from_window(us.middleRows(i, ti), ys.middleRows(i, ti)).values;
      const Eigen::VectorXd yi = m.phi * z + m.d * us.row(ti + i).transpose() +
                                 t.w_future.col(j).segment(i * n_y, n_y);
      ys.row(ti + i) = yi.transpose();
      y.col(j).segment(i * n_y, n_y) = yi;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("hankel matrix") {
  Eigen::MatrixXd s(4, 1);
  s << 1, 2, 3, 4;
  Eigen::MatrixXd expect(2, 3);
  expect << 1, 2, 3, 2, 3, 4;
  CHECK(hankel(s, 2) == expect);
  CHECK(hankel(s, 4).cols() == 1);
  CHECK(hankel(s, 1) == s.transpose());
  CHECK_THROWS_AS(hankel(s, 5), ParameterError);
  CHECK_THROWS_AS(hankel(s, 0), ParameterError);

  const Eigen::MatrixXd sig = Eigen::MatrixXd::Random(20, 3);
  const Eigen::MatrixXd h = hankel(sig, 5);
  for (int c = 0; c < h.cols(); ++c)
    for (int r = 0; r < 5; ++r) CHECK(h.col(c).segment(3 * r, 3) == sig.row(c + r).transpose());
}

TEST_CASE("persistency of excitation") {
  const Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(90, 1);
  CHECK_FALSE(is_persistently_exciting(constant, Eigen::MatrixXd::Zero(90, 0), 2).full_row_rank);
  const ArxModel m = aircraft_model();
  const int order = 4 + 10 + m.t_ini;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const DataArchive a = aircraft_archive(seed);
    CHECK(is_persistently_exciting(a.u, a.w, order).full_row_rank);
  }
  const DataArchive a = aircraft_archive(1);
  CHECK_FALSE(is_persistently_exciting(a.u, a.w, 19).full_row_rank);  // 76 rows > 72 columns
}

TEST_CASE("realization lemma") {
  const ArxModel m = aircraft_model();
  const DataArchive a = aircraft_archive(1);
  const HankelStack hs = HankelStack::build(a, 10, m.t_ini);
  CHECK(hs.columns() == 79);
  CHECK(hs.hw.rows() == 30);

  SUBCASE("archive windows") {
    for (int c : {0, 17, 78}) {
      const double r = verify_realization_lemma(hs, a.u.middleRows(c, 12),
                                                a.w.middleRows(c + 2, 10), a.y.middleRows(c, 12));
      CHECK(r < 1e-13 * (1.0 + a.y.middleRows(c, 12).norm()));
    }
  }
  SUBCASE("fresh and perturbed trajectories") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 20; ++i) {
      CollectOptions o;
      o.length = 12;
      o.seed = rng();
      const DataArchive t = collect_data(m, o);
      CHECK(verify_realization_lemma(hs, t.u, t.w.bottomRows(10), t.y) < 1e-8);
      Eigen::MatrixXd y = t.y;
      y(11, i % 3) += 0.1;
      CHECK(verify_realization_lemma(hs, t.u, t.w.bottomRows(10), y) > 1e-3);
    }
  }
  SUBCASE("every Hankel image passes") {
    for (int i = 0; i < 10; ++i) {
      const Eigen::VectorXd g = Eigen::VectorXd::Random(hs.columns());
      const Eigen::VectorXd u = hs.hu * g, y = hs.hy * g, w = hs.hw * g;
      const double r = verify_realization_lemma(
          hs, Eigen::Map<const Eigen::MatrixXd>(u.data(), 1, 12).transpose(),
          Eigen::Map<const Eigen::MatrixXd>(w.data(), 3, 10).transpose(),
          Eigen::Map<const Eigen::MatrixXd>(y.data(), 3, 12).transpose());
      CHECK(r < 1e-13 * (u.norm() + w.norm() + y.norm()));
    }
  }
}

TEST_CASE("coefficient prediction through the data matrices") {
  const ArxModel m = aircraft_model();
  const int n = 10, ti = m.t_ini;
  const HankelPredictor pred(HankelStack::build(aircraft_archive(1), n, ti));
  const auto basis = std::make_shared<const PceBasis>(
      build_joint_basis(m.n_z() + 1, m.disturbance, m.n_w(), n));
  const int big_l = basis->dimension();
  Eigen::MatrixXd wf = Eigen::MatrixXd::Zero(n * 3, big_l);
  for (int i = 0; i < n; ++i) {
    const PceVector w = exact_pce_of_disturbance(m.disturbance, basis, i);
    wf.middleRows(i * 3, 3) = w.coefficients().transpose();
  }
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  auto fill = [&](int rows) {
    Eigen::MatrixXd x(rows, big_l);
    for (int k = 0; k < x.size(); ++k) x.data()[k] = nd(rng);
    return x;
  };

  SUBCASE("zero targets predict zero") {
    const PceTargets t{Eigen::MatrixXd::Zero(2, big_l), Eigen::MatrixXd::Zero(6, big_l),
                       Eigen::MatrixXd::Zero(10, big_l), Eigen::MatrixXd::Zero(30, big_l)};
    const PcePrediction p = predict_pce_trajectory(pred, t);
    CHECK(p.y_future.cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.consistent);
  }
  SUBCASE("matches the explicit rollout for every basis index") {
    for (int rep = 0; rep < 3; ++rep) {
      const PceTargets t{fill(2), fill(6), fill(10), wf};
      const PcePrediction p = predict_pce_trajectory(pred, t);
      CHECK(p.consistent);
      CHECK((p.y_future - rollout_future_outputs(m, t, n)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("mean trajectory is the deterministic rollout") {
    const PceTargets t{fill(2), fill(6), fill(10), wf};
    const PcePrediction p = predict_pce_trajectory(pred, t);
    ExtendedState z = ExtendedState::from_window(
        Eigen::Map<const Eigen::MatrixXd>(t.u_past.col(0).data(), 1, 2).transpose(),
        Eigen::Map<const Eigen::MatrixXd>(t.y_past.col(0).data(), 3, 2).transpose());
    for (int i = 0; i < n; ++i) {
      const StepResult r = realization_step(m, z, t.u_future.col(0).segment(i, 1), Eigen::Vector3d::Zero());
      CHECK((p.y_future.col(0).segment(3 * i, 3) - r.y).cwiseAbs().maxCoeff() < 1e-8);
      z = r.z_next;
    }
  }
  SUBCASE("pinning matrix has full row rank") {
    CHECK(pred.pinning().rows() == 48);
    CHECK(pred.pinning_rank() == 48);
    CHECK(pred.pi().rows() == 30);
  }
}
