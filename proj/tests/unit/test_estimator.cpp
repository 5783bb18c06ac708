#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <gtest/gtest.h>

#include "roslac/estimator.hpp"
#include "roslac/eval.hpp"
#include "test_util.hpp"

namespace roslac {
namespace {

using test::max_abs;
using test::Random;

GridSpec world_grid() {
  GridSpec g;
  g.resolution = 0.1;
  g.nx = 61;
  g.ny = 41;
  return g;
}

FieldModel world_field() {
  return {Vec3(28, 4, -32),
          {{Vec3(1.5, 1.5, -2.0), Vec3(300, -200, 900)},
           {Vec3(4.5, 2.5, -2.0), Vec3(-500, 300, -800)},
           {Vec3(3.0, 3.5, -2.5), Vec3(400, 500, 600)}}};
}

const MagneticGridMap& world_map() {
  static const MagneticGridMap map = rasterize(world_field(), world_grid());
  return map;
}

/// Raw readings that map exactly onto the grid map through `calib` at pose x.
std::vector<Vec3> consistent_readings(const PoseState& x, std::span<const SensorExtrinsics> rig,
                                      std::span<const CalibrationParams> calib, const MagneticGridMap& map) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const RigidTransform s = sensor_world_pose(x, rig[i]);
    const Vec3 env = s.rotation.transpose() * map.interpolate(s.translation);
    out.push_back(calib[i].c.inverse() * (env - calib[i].b));
  }
  return out;
}

struct Scene {
  std::vector<SensorExtrinsics> rig = default_rig();
  std::vector<CalibrationParams> calib;
  std::vector<PoseState> poses;
  SlidingWindow window{0.5, default_rig()};

  PoseState gt() const { return poses.back(); }
  std::vector<Vec12> thetas() const {
    std::vector<Vec12> out;
    for (const auto& c : calib) out.push_back(c.theta());
    return out;
  }
};

/// Robot driving a short curve; the window holds noise-free, map-consistent readings.
Scene make_scene(Random& rng, double window_m = 0.5, bool distort = true) {
  Scene s;
  s.window = SlidingWindow(window_m, s.rig);
  Rng d(static_cast<std::uint64_t>(rng.uniform(0, 1e6)));
  for (std::size_t i = 0; i < s.rig.size(); ++i) s.calib.push_back(distort ? random_distortion(d) : CalibrationParams{});
  PoseState x{Vec3(rng.uniform(1.5, 4.5), rng.uniform(1.2, 2.8), 0), Vec3(0, 0, rng.uniform(-3, 3))};
  const double turn = rng.uniform(-0.1, 0.1);
  for (int k = 0; k < 8; ++k) {
    const RigidTransform inc{Rotation3::about_z(turn), Vec3(0.08, 0, 0)};
    if (k > 0) {
      const RigidTransform next = compose(x.transform(), inc);
      x = PoseState::from_transform(next);
    }
    s.poses.push_back(x);
    s.window.push(0.1 * k, k == 0 ? RigidTransform::identity() : inc, consistent_readings(x, s.rig, s.calib, world_map()));
  }
  return s;
}

/// ½Σⱼ‖Hⱼθ − gⱼ‖² + ½λ‖θᶜ − I‖², with g from independently computed sensor poses.
double calib_objective(const SlidingWindow& w, std::size_t sensor, const Vec12& theta, const PoseState& x,
                       double lambda) {
  double f = 0.0;
  for (const auto& entry : w.entries()) {
    const RigidTransform s = sensor_pose(entry, w.extrinsics()[sensor], x);
    const Vec3 g = s.rotation.transpose() * world_map().interpolate(s.translation);
    const CalibrationParams p = CalibrationParams::from_theta(theta);
    f += 0.5 * (p.apply(entry.readings[sensor]) - g).squaredNorm();
  }
  return f + 0.5 * lambda * (theta.head<9>() - identity_theta().head<9>()).squaredNorm();
}

TEST(StateMask, ParseAndCount) {
  EXPECT_EQ(StateMask::parse("xy"), StateMask::xy());
  EXPECT_EQ(StateMask::parse("xyyaw"), StateMask::xy_yaw());
  EXPECT_EQ(StateMask::parse("full"), StateMask::full());
  EXPECT_THROW(StateMask::parse("xyz"), ConfigError);
  EXPECT_EQ(StateMask::xy().count(), 2);
  EXPECT_EQ(StateMask().count(), 3);
  EXPECT_EQ(StateMask::full().count(), 6);
}

TEST(SolverConfig, ValidationAndThreshold) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_NEAR(c.divergence_threshold(8, 6), 10 * 0.2 * std::sqrt(3.0 * 48), 1e-12);
  c.divergence_residual = 7.0;
  EXPECT_EQ(c.divergence_threshold(8, 6), 7.0);
  for (auto mutate : std::vector<void (*)(SolverConfig&)>{
           [](SolverConfig& s) { s.eta = 0; }, [](SolverConfig& s) { s.lambda_reg = -1; },
           [](SolverConfig& s) { s.max_alternations = 0; }, [](SolverConfig& s) { s.pose_tol_m = 0; },
           [](SolverConfig& s) { s.state_mask.enabled.fill(false); }, [](SolverConfig& s) { s.rls_prior = 0; },
           [](SolverConfig& s) { s.window_m = -0.1; }, [](SolverConfig& s) { s.divergence_residual = -1.0; }}) {
    SolverConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

TEST(CalibGradient, MatchesFiniteDifferences) {
  Random rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Scene s = make_scene(rng);
    const std::size_t sensor = trial % 8;
    const Vec12 theta = identity_theta() + rng.vec<12>(-0.1, 0.1) + (Vec12() << Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), rng.vec3(-20, 20)).finished();
    const double lambda = rng.uniform(0, 2);
    const Vec12 grad = calib_gradient(s.window, sensor, theta, s.gt(), world_map(), lambda);
    Vec12 fd;
    for (int k = 0; k < 12; ++k) {
      const double h = 1e-4 * std::max(1.0, std::abs(theta[k]));
      Vec12 tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      fd[k] = (calib_objective(s.window, sensor, tp, s.gt(), lambda) -
               calib_objective(s.window, sensor, tm, s.gt(), lambda)) / (2 * h);
    }
    EXPECT_LT((grad - fd).norm() / grad.norm(), 1e-6) << trial;
  }
}

TEST(CalibGradient, OverloadsAndMomentsAgree) {
  Random rng(2);
  const Scene s = make_scene(rng);
  const auto predicted = predicted_fields(s.window, s.gt(), world_map());
  for (RegTarget target : {RegTarget::kZero, RegTarget::kIdentity}) {
    for (std::size_t i = 0; i < 8; ++i) {
      const Vec12 theta = identity_theta() + rng.vec<12>(-0.5, 0.5);
      const Vec12 a = calib_gradient(s.window, i, theta, s.gt(), world_map(), 0.3, target);
      const Vec12 b = calib_gradient(s.window, i, theta, predicted, 0.3, target);
      CalibMoments m;
      for (std::size_t j = 0; j < s.window.size(); ++j) m.add(s.window.entries()[j].readings[i], predicted[j * 8 + i]);
      EXPECT_LT((a - b).norm(), 1e-12);
      EXPECT_LT((m.gradient(theta, 0.3, target) - a).norm(), 1e-9 * (1 + a.norm()));
    }
  }
}

TEST(CalibGradient, TruthLeavesOnlyRegularization) {
  Random rng(3);
  const Scene s = make_scene(rng);
  for (std::size_t i = 0; i < 8; ++i) {
    const Vec12 theta = s.calib[i].theta();
    const Vec12 grad = calib_gradient(s.window, i, theta, s.gt(), world_map(), 0.5);
    Vec12 reg = Vec12::Zero();
    reg.head<9>() = 0.5 * (theta.head<9>() - identity_theta().head<9>());
    EXPECT_LT((grad - reg).norm(), 1e-8);
  }
}

TEST(CalibGradient, ZeroReadingsOnlyTouchBias) {
  SlidingWindow w(1.0, default_rig());
  w.push(0.0, RigidTransform::identity(), std::vector<Vec3>(8, Vec3::Zero()));
  const PoseState x{Vec3(3, 2, 0), Vec3::Zero()};
  const Vec12 grad = calib_gradient(w, 0, identity_theta(), x, world_map(), 0.0);
  EXPECT_EQ(grad.head<9>(), (Eigen::Matrix<double, 9, 1>::Zero()));
  const RigidTransform s = sensor_pose(w.entries()[0], w.extrinsics()[0], x);
  EXPECT_LT((grad.tail<3>() + s.rotation.transpose() * world_map().interpolate(s.translation)).norm(), 1e-12);
}

TEST(SgdStep, TrivialCases) {
  Random rng(4);
  const Vec12 theta = rng.vec<12>();
  EXPECT_EQ(sgd_step(theta, Vec12::Zero(), 0.1), theta);
  EXPECT_EQ(sgd_step(theta, rng.vec<12>(), 0.0), theta);
}

TEST(SgdStep, ConvergesOnWindowQuadratic) {
  Random rng(5);
  const Scene s = make_scene(rng);
  const auto predicted = predicted_fields(s.window, s.gt(), world_map());
  // Least-squares minimizer over a well-excited window approaches the true θ.
  CalibMoments m;
  for (std::size_t j = 0; j < s.window.size(); ++j) m.add(s.window.entries()[j].readings[0], predicted[j * 8]);
  Mat12 hessian = Mat12::Zero();
  for (const auto& e : s.window.entries()) hessian += e.regressors[0].transpose() * e.regressors[0];
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Mat12>(hessian).eigenvalues().maxCoeff();
  Vec12 theta = identity_theta();
  const double start = calib_objective(s.window, 0, theta, s.gt(), 0.0);
  for (int k = 0; k < 2000; ++k) theta = sgd_step(theta, m.gradient(theta, 0.0), step);
  EXPECT_LT(calib_objective(s.window, 0, theta, s.gt(), 0.0), 1e-3 * start);
}

TEST(PoseResidual, ZeroAtTruth) {
  Random rng(6);
  const Scene s = make_scene(rng);
  for (std::size_t i = 0; i < 8; ++i) {
    const Eigen::VectorXd r = pose_residual(s.window, s.calib[i].theta(), s.gt(), world_map(), i);
    EXPECT_EQ(r.size(), static_cast<Eigen::Index>(3 * s.window.size()));
    EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-8);
  }
  EXPECT_LT(pooled_cost(s.window, s.thetas(), s.gt(), world_map()), 1e-15);
}

bool away_from_edges(const SlidingWindow& w, std::size_t sensor, const PoseState& x, double margin) {
  const GridSpec& g = world_map().spec();
  for (const auto& entry : w.entries()) {
    const Vec3 p = sensor_pose(entry, w.extrinsics()[sensor], x).translation;
    for (double f : {(p.x() - g.origin.x()) / g.resolution, (p.y() - g.origin.y()) / g.resolution}) {
      const double frac = f - std::floor(f);
      if (frac < margin || frac > 1 - margin) return false;
    }
  }
  return true;
}

TEST(PoseJacobian, MatchesBoxplusFiniteDifferences) {
  Random rng(7);
  int checked = 0;
  for (int attempt = 0; attempt < 2000 && checked < 20; ++attempt) {
    const Scene s = make_scene(rng);
    PoseState x = s.gt();
    x.phi += rng.vec3(-0.05, 0.05);  // exercise the full 6-DoF block
    const std::size_t sensor = attempt % 8;
    if (!away_from_edges(s.window, sensor, x, 0.02)) continue;
    ++checked;
    const Vec12 theta = s.calib[sensor].theta();
    const Eigen::MatrixXd j = pose_jacobian(s.window, x, world_map(), sensor);
    Eigen::MatrixXd fd(j.rows(), 6);
    const double h = 1e-6;
    for (int d = 0; d < 6; ++d) {
      Vec6 e = Vec6::Zero();
      e[d] = h;
      fd.col(d) = (pose_residual(s.window, theta, boxplus(x, PosePerturbation::from_stacked(e)), world_map(), sensor) -
                   pose_residual(s.window, theta, boxplus(x, PosePerturbation::from_stacked(-e)), world_map(), sensor)) /
                  (2 * h);
    }
    EXPECT_LT((j - fd).norm() / j.norm(), 1e-4) << attempt;
  }
  EXPECT_EQ(checked, 20);
}

TEST(PoseJacobian, ConstantMapHasOnlyRotationBlock) {
  GridSpec g = world_grid();
  const Vec3 m(20, -10, 40);
  const MagneticGridMap flat(g, std::vector<Vec3>(g.nx * g.ny, m));
  SlidingWindow w(1.0, {SensorExtrinsics{}});
  w.push(0.0, RigidTransform::identity(), std::vector<Vec3>{Vec3::Zero()});
  const PoseState x{Vec3(3, 2, 0), Vec3(0.1, -0.2, 0.7)};
  const Eigen::MatrixXd j = pose_jacobian(w, x, flat, 0);
  EXPECT_LT(j.leftCols<3>().norm(), 1e-15);
  // Residual is Hθ − RᵀM, so its rotation derivative is −[RᵀM]×.
  EXPECT_LT(max_abs(j.rightCols<3>() + skew(x.rotation().transpose() * m)), 1e-12);
}

TEST(GaussNewtonStep, ZeroResidualAndMask) {
  Random rng(8);
  std::vector<Eigen::VectorXd> r{Eigen::VectorXd::Zero(9)};
  std::vector<Eigen::MatrixXd> jac{Eigen::MatrixXd::Random(9, 6)};
  const GaussNewtonStep zero = gauss_newton_step(r, jac, StateMask::full(), 1e-6);
  EXPECT_FALSE(zero.stalled);
  EXPECT_EQ(zero.dx.stacked(), Vec6::Zero());

  r[0] = Eigen::VectorXd::Random(9);
  const GaussNewtonStep masked = gauss_newton_step(r, jac, StateMask::xy(), 0.0);
  EXPECT_FALSE(masked.stalled);
  const Vec6 dx = masked.dx.stacked();
  for (int d : {2, 3, 4, 5}) EXPECT_EQ(dx[d], 0.0);
  // Least-squares oracle over the two enabled columns.
  const Eigen::MatrixXd jm = jac[0].leftCols<2>();
  const Eigen::VectorXd expected = -(jm.transpose() * jm).inverse() * jm.transpose() * r[0];
  EXPECT_LT((dx.head<2>() - expected).norm(), 1e-10);
}

TEST(GaussNewtonStep, VanishingJacobianStalls) {
  std::vector<Eigen::VectorXd> r{Eigen::VectorXd::Ones(6)};
  std::vector<Eigen::MatrixXd> jac{Eigen::MatrixXd::Zero(6, 6)};
  EXPECT_TRUE(gauss_newton_step(r, jac, StateMask(), 1e-6).stalled);
}

TEST(GaussNewtonUpdate, AffineMapSolvedInOneStep) {
  GridSpec g = world_grid();
  Mat3 a;
  a << 8, -3, 0, 2, 6, 0, -5, 4, 0;
  const Vec3 c(20, 5, -30);
  std::vector<Vec3> values;
  for (std::uint32_t j = 0; j < g.ny; ++j)
    for (std::uint32_t i = 0; i < g.nx; ++i) values.push_back(a * g.node_position(i, j) + c);
  const MagneticGridMap affine(g, values);

  const auto rig = default_rig();
  const std::vector<CalibrationParams> calib(rig.size());
  const PoseState gt{Vec3(3, 2, 0), Vec3(0, 0, 0.4)};
  SlidingWindow w(0.5, rig);
  w.push(0.0, RigidTransform::identity(), consistent_readings(gt, rig, calib, affine));
  std::vector<Vec12> thetas(rig.size(), identity_theta());
  SolverConfig cfg;
  cfg.state_mask = StateMask::xy();
  cfg.gn_damping = 0.0;
  const PoseState start{gt.p + Vec3(0.07, -0.04, 0), gt.phi};
  const PoseUpdate upd = gauss_newton_update(w, thetas, start, affine, cfg);
  EXPECT_FALSE(upd.stalled);
  EXPECT_LT((upd.x.p - gt.p).norm(), 1e-9);
  EXPECT_LT((upd.x.phi - gt.phi).norm(), 1e-15);
}

TEST(GaussNewtonUpdate, AcceptedStepsNeverIncreaseCost) {
  Random rng(9);
  SolverConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Scene s = make_scene(rng);
    PoseState x = s.gt();
    x.p += Vec3(rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), 0);
    x.phi.z() += rng.uniform(-0.1, 0.1);
    const auto thetas = s.thetas();
    double cost = pooled_cost(s.window, thetas, x, world_map());
    for (int it = 0; it < 5; ++it) {
      const PoseUpdate upd = gauss_newton_update(s.window, thetas, x, world_map(), cfg);
      const double next = pooled_cost(s.window, thetas, upd.x, world_map());
      EXPECT_LE(next, cost);
      x = upd.x;
      cost = next;
    }
  }
}

TEST(GaussNewtonUpdate, ConstantMapStalls) {
  GridSpec g = world_grid();
  const MagneticGridMap flat(g, std::vector<Vec3>(g.nx * g.ny, Vec3(20, -10, 40)));
  Random rng(10);
  SlidingWindow w(0.5, default_rig());
  w.push(0.0, RigidTransform::identity(), std::vector<Vec3>(8, Vec3(21, -9, 41)));
  std::vector<Vec12> thetas(8, identity_theta());
  SolverConfig cfg;
  cfg.state_mask = StateMask::xy();
  const PoseState x{Vec3(3, 2, 0), Vec3::Zero()};
  const PoseUpdate upd = gauss_newton_update(w, thetas, x, flat, cfg);
  EXPECT_TRUE(upd.stalled);
  EXPECT_EQ(upd.x.p, x.p);

  const AlternationResult alt = alternate(w, thetas, x, flat, cfg);
  EXPECT_TRUE(alt.stalled);
  EXPECT_FALSE(alt.out_of_map);
  EXPECT_TRUE(alt.x.p.allFinite());
}

TEST(Alternate, FixedPointAtTruth) {
  Random rng(11);
  const Scene s = make_scene(rng);
  SolverConfig cfg;
  const auto truth = s.thetas();
  const AlternationResult alt = alternate(s.window, truth, s.gt(), world_map(), cfg);
  EXPECT_TRUE(alt.converged);
  EXPECT_EQ(alt.alternations, 1);
  EXPECT_FALSE(alt.diverged);
  EXPECT_LT((alt.x.p - s.gt().p).norm(), cfg.pose_tol_m);
  EXPECT_LT((alt.x.phi - s.gt().phi).norm(), cfg.pose_tol_rad);

  // With one SGD step per round the only force at the truth is the regularizer:
  // θᶜ moves by exactly η·λ·(θᶜ − I) and the bias not at all.
  cfg.sgd_iters_per_round = 1;
  const AlternationResult one = alternate(s.window, truth, s.gt(), world_map(), cfg);
  EXPECT_EQ(one.alternations, 1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double reg = (truth[i].head<9>() - identity_theta().head<9>()).norm();
    EXPECT_NEAR((one.thetas[i] - truth[i]).norm(), cfg.eta * cfg.lambda_reg * reg, 1e-9);
  }
}

TEST(Alternate, RecoversPerturbedPoseUnderTableDistortion) {
  Random rng(12);
  Scene s = make_scene(rng, 0.5, false);
  CalibrationParams row_one;
  row_one.c = Vec3(1.01, 0.98, 0.99).asDiagonal();
  row_one.b = Vec3(19.49, 20.60, 20.17);
  s.calib.assign(8, row_one);
  s.window = SlidingWindow(0.5, s.rig);
  for (std::size_t k = 0; k < s.poses.size(); ++k) {
    const RigidTransform inc = k == 0 ? RigidTransform::identity()
                                      : compose(inverse(s.poses[k - 1].transform()), s.poses[k].transform());
    s.window.push(0.1 * k, inc, consistent_readings(s.poses[k], s.rig, s.calib, world_map()));
  }
  // A single window from identity θ needs far more rounds than the online loop's default.
  SolverConfig cfg;
  cfg.max_alternations = 1000;
  PoseState start = s.gt();
  start.p += Vec3(0.03, -0.04, 0);
  const std::vector<Vec12> init(8, identity_theta());
  const AlternationResult alt = alternate(s.window, init, start, world_map(), cfg);
  EXPECT_FALSE(alt.out_of_map);
  EXPECT_TRUE(alt.converged);
  EXPECT_LT((alt.x.p - s.gt().p).norm(), world_map().spec().resolution);
}

TEST(Alternate, OutOfMapIsDivergence) {
  Random rng(13);
  const Scene s = make_scene(rng);
  PoseState far = s.gt();
  far.p = Vec3(-5, -5, 0);
  const AlternationResult alt = alternate(s.window, s.thetas(), far, world_map(), SolverConfig{});
  EXPECT_TRUE(alt.out_of_map);
  EXPECT_TRUE(alt.diverged);
}

TEST(Alternate, SensorPermutationIsEquivariant) {
  Random rng(14);
  Scene s = make_scene(rng);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  std::vector<SensorExtrinsics> rig_p;
  for (std::size_t i : perm) rig_p.push_back(s.rig[i]);
  SlidingWindow wp(0.5, rig_p);
  double t = 0.0;
  for (std::size_t j = 0; j < s.window.size(); ++j) {
    std::vector<Vec3> rd;
    for (std::size_t i : perm) rd.push_back(s.window.entries()[j].readings[i]);
    const RigidTransform inc =
        j == 0 ? RigidTransform::identity()
               : compose(inverse(s.window.entries()[j - 1].rel_pose), s.window.entries()[j].rel_pose);
    wp.push(t += 0.1, inc, rd);
  }
  PoseState start = s.gt();
  start.p += Vec3(0.02, 0.01, 0);
  const std::vector<Vec12> init(8, identity_theta());
  const AlternationResult a = alternate(s.window, init, start, world_map(), SolverConfig{});
  const AlternationResult b = alternate(wp, init, start, world_map(), SolverConfig{});
  EXPECT_LT((a.x.p - b.x.p).norm(), 1e-10);
  EXPECT_LT((a.x.phi - b.x.phi).norm(), 1e-10);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_LT((b.thetas[k] - a.thetas[perm[k]]).norm(), 1e-9);
}

Mat12 random_regressor_batch(Random& rng, int count, std::vector<Regressor>& hs, std::vector<Vec3>& gs,
                             const Vec12& truth) {
  Mat12 sum = Mat12::Zero();
  for (int k = 0; k < count; ++k) {
    hs.push_back(regressor(rng.vec3(-60, 60)));
    gs.push_back(hs.back() * truth + rng.vec3(-0.5, 0.5));
    sum += hs.back().transpose() * hs.back();
  }
  return sum;
}

TEST(Rls, MatchesRegularizedBatchSolve) {
  Random rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec12 truth = identity_theta() + rng.vec<12>(-0.1, 0.1);
    const Vec12 theta0 = identity_theta();
    const double eps = 1e-4;
    std::vector<Regressor> hs;
    std::vector<Vec3> gs;
    const Mat12 hth = random_regressor_batch(rng, 50, hs, gs, truth);
    RlsState st = RlsState::initial(theta0, eps);
    for (std::size_t k = 0; k < hs.size(); ++k) rls_update(st, hs[k], gs[k]);

    Vec12 rhs = eps * theta0;
    for (std::size_t k = 0; k < hs.size(); ++k) rhs += hs[k].transpose() * gs[k];
    const Mat12 normal = eps * Mat12::Identity() + hth;
    const Vec12 batch = normal.fullPivLu().solve(rhs);
    EXPECT_LT((st.theta - batch).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(max_abs(st.p - normal), 1e-10 * std::max(1.0, normal.cwiseAbs().maxCoeff()));
  }
}

TEST(Rls, ConsistentMeasurementLeavesThetaUnchanged) {
  Random rng(16);
  const Vec12 theta = identity_theta() + rng.vec<12>(-0.2, 0.2);
  RlsState st = RlsState::initial(theta);
  const Regressor h = regressor(rng.vec3(-50, 50));
  rls_update(st, h, h * theta);
  EXPECT_LT((st.theta - theta).norm(), 1e-12);
  EXPECT_THROW(RlsState::initial(theta, 0.0), ConfigError);
}

std::vector<DatasetFrame> clean_dataset(const std::vector<CalibrationParams>& calib, double meas_sigma) {
  TrajectorySpec spec;
  spec.waypoints = {{1.0, 1.0}, {5.0, 1.0}, {5.0, 3.0}, {1.5, 3.0}};
  const auto poses = generate_trajectory(spec, world_grid());
  return simulate_dataset(world_field(), poses, spec.frame_rate, default_rig(), calib,
                          {meas_sigma, 0.0, 0.0, 3});
}

double run_ate(const std::vector<DatasetFrame>& data, const EstimatorOutput& out) {
  std::vector<TimedPose> est;
  for (const auto& f : out.frames) est.push_back({f.t, f.x.transform()});
  const auto ref = reference_trajectory(data);
  return ate(TrajectoryPair(est, ref, 0.05));
}

TEST(Run, CleanDatasetIsAFixedPoint) {
  // At 0.05 m every sensor of the default rig sits on a grid node along this
  // path, so the map reproduces the field exactly and nothing should move.
  GridSpec fine = world_grid();
  fine.resolution = 0.05;
  fine.nx = 121;
  fine.ny = 81;
  const MagneticGridMap map = rasterize(world_field(), fine);
  const std::vector<CalibrationParams> calib(8);
  const auto data = clean_dataset(calib, 0.0);
  const EstimatorOutput out = run(data, map, default_rig(), SolverConfig{});
  ASSERT_EQ(out.frames.size(), data.size());
  ASSERT_EQ(out.theta_trace.size(), data.size());
  EXPECT_LT(run_ate(data, out), 1e-9);
  EXPECT_EQ(out.fallback_count, 0);
  for (const auto& th : out.final_thetas) EXPECT_LT((th - identity_theta()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Run, FallbackCountMatchesFlags) {
  const std::vector<CalibrationParams> calib(8);
  const auto data = clean_dataset(calib, 0.2);
  const EstimatorOutput out = run(data, world_map(), default_rig(), SolverConfig{});
  EXPECT_EQ(out.fallback_count, std::count_if(out.frames.begin(), out.frames.end(),
                                              [](const FrameResult& f) { return f.fallback; }));
  for (const auto& f : out.frames) EXPECT_GE(f.alternations, 1);
}

TEST(Run, DisablingCalibrationHurtsOnDistortedData) {
  Rng d(21);
  std::vector<CalibrationParams> calib;
  for (int i = 0; i < 8; ++i) calib.push_back(random_distortion(d));
  const auto data = clean_dataset(calib, 0.2);
  SolverConfig full;
  SolverConfig no_calib;
  no_calib.enable_calibration = false;
  const EstimatorOutput a = run(data, world_map(), default_rig(), full);
  const EstimatorOutput b = run(data, world_map(), default_rig(), no_calib);
  EXPECT_LT(run_ate(data, a), run_ate(data, b));
  double err = 0.0, init = 0.0;
  for (int i = 0; i < 8; ++i) {
    err += calib_error(a.final_thetas[i], calib[i].theta());
    init += calib_error(identity_theta(), calib[i].theta());
  }
  EXPECT_LT(err, 0.25 * init);
  for (const auto& th : b.final_thetas) EXPECT_EQ(th, identity_theta());
}

TEST(Run, InputErrors) {
  const std::vector<CalibrationParams> calib(8);
  auto data = clean_dataset(calib, 0.0);
  EXPECT_THROW(run({}, world_map(), default_rig(), SolverConfig{}), ConfigError);
  auto rig = default_rig();
  rig.pop_back();
  EXPECT_THROW(run(data, world_map(), rig, SolverConfig{}), ConfigError);
  data[5].gt_p = Vec3(50, 50, 0);
  EXPECT_THROW(run(data, world_map(), default_rig(), SolverConfig{}), ConfigError);
  SolverConfig bad;
  bad.eta = -1;
  EXPECT_THROW(run(clean_dataset(calib, 0.0), world_map(), default_rig(), bad), ConfigError);
}

}  // namespace
}  // namespace roslac
