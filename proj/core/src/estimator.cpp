#include "roslac/estimator.hpp"

#include <cassert>
#include <chrono>
#include <limits>
#include <optional>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "roslac/error.hpp"

namespace roslac {

namespace {

// Eigenvalue ratio of the damped masked normal matrix below which the pose
// problem is treated as singular.
constexpr double kStallConditioning = 1e-10;

const Vec12& theta_target(RegTarget target) {
  static const Vec12 zero = Vec12::Zero();
  static const Vec12 ident = identity_theta();
  return target == RegTarget::kZero ? zero : ident;
}

struct EntryGeometry {
  RigidTransform sensor;  // world pose of the sensor
  Mat3 q;                 // sensor orientation in the current body frame
  Vec3 a;                 // sensor position in the current body frame
};

EntryGeometry entry_geometry(const WindowEntry& entry, const SensorExtrinsics& e, const Rotation3& r0,
                             const Vec3& p0) {
  EntryGeometry g;
  g.q = entry.rel_pose.rotation.matrix() * e.rotation.matrix();
  g.a = entry.rel_pose.translation + entry.rel_pose.rotation * e.translation;
  g.sensor = {Rotation3::unchecked(r0.matrix() * g.q), r0 * g.a + p0};
  return g;
}

// Residual (and optionally Jacobian) blocks for one sensor over the window.
void linearize(const SlidingWindow& window, std::size_t sensor, const Vec12& theta, const PoseState& x,
               const MagneticGridMap& map, Eigen::VectorXd* residual, Eigen::MatrixXd* jacobian) {
  const auto n = static_cast<Eigen::Index>(window.size());
  if (residual) residual->resize(3 * n);
  if (jacobian) jacobian->resize(3 * n, 6);
  const Rotation3 r0 = x.rotation();
  const SensorExtrinsics& ext = window.extrinsics()[sensor];
  Eigen::Index row = 0;
  for (const auto& entry : window.entries()) {
    const EntryGeometry geo = entry_geometry(entry, ext, r0, x.p);
    const FieldSample s = map.sample(geo.sensor.translation);
    const Mat3 rt = geo.sensor.rotation.matrix().transpose();
    const Vec3 g = rt * s.value;
    if (residual) residual->segment<3>(row) = entry.regressors[sensor] * theta - g;
    if (jacobian) {
      const Mat3 rt_grad = rt * s.gradient;
      jacobian->block<3, 3>(row, 0) = -rt_grad;
      jacobian->block<3, 3>(row, 3) = -(skew(g) * geo.q.transpose() - rt_grad * r0.matrix() * skew(geo.a));
    }
    row += 3;
  }
}

double mean_reading_norm(const SlidingWindow& window, std::size_t sensor) {
  double sum = 0.0;
  for (const auto& e : window.entries()) sum += e.readings[sensor].norm();
  const double mean = sum / static_cast<double>(window.size());
  return mean > 1e-9 ? mean : 1.0;
}

}  // namespace

StateMask StateMask::parse(const std::string& name) {
  if (name == "xy") return xy();
  if (name == "xyyaw") return xy_yaw();
  if (name == "full") return full();
  throw ConfigError("unknown state mask '" + name + "' (expected xy, xyyaw or full)");
}

int StateMask::count() const {
  int c = 0;
  for (bool b : enabled) c += b ? 1 : 0;
  return c;
}

void SolverConfig::validate() const {
  if (!(eta > 0.0)) throw ConfigError("solver eta must be > 0");
  if (!(lambda_reg >= 0.0)) throw ConfigError("solver lambda_reg must be >= 0");
  if (sgd_iters_per_round < 0 || gn_iters_per_round < 0 || max_alternations < 1) {
    throw ConfigError("solver iteration counts must be non-negative (max_alternations >= 1)");
  }
  if (!(pose_tol_m > 0.0) || !(pose_tol_rad > 0.0) || !(calib_tol > 0.0)) {
    throw ConfigError("solver tolerances must be > 0");
  }
  if (state_mask.count() == 0) throw ConfigError("state mask must enable at least one dimension");
  if (!(gn_damping >= 0.0)) throw ConfigError("gn_damping must be >= 0");
  if (divergence_residual && !(*divergence_residual > 0.0)) throw ConfigError("divergence_residual must be > 0");
  if (!(meas_sigma >= 0.0)) throw ConfigError("meas_sigma must be >= 0");
  if (!(rls_prior > 0.0)) throw ConfigError("rls_prior must be > 0");
  if (!(window_m >= 0.0)) throw ConfigError("window_m must be >= 0");
}

double SolverConfig::divergence_threshold(std::size_t sensors, std::size_t window_entries) const {
  if (divergence_residual) return *divergence_residual;
  return 10.0 * meas_sigma * std::sqrt(3.0 * static_cast<double>(sensors * window_entries));
}

Vec12 identity_theta() { return CalibrationParams::identity().theta(); }

std::vector<Vec3> predicted_fields(const SlidingWindow& window, const PoseState& x, const MagneticGridMap& map) {
  std::vector<Vec3> out;
  out.reserve(window.size() * window.sensor_count());
  for (const auto& t : sensor_poses(window, x)) {
    out.push_back(t.rotation.transpose() * map.interpolate(t.translation));
  }
  return out;
}

Vec12 calib_gradient(const SlidingWindow& window, std::size_t sensor, const Vec12& theta, const PoseState& x,
                     const MagneticGridMap& map, double lambda, RegTarget target) {
  const auto predicted = predicted_fields(window, x, map);
  return calib_gradient(window, sensor, theta, predicted, lambda, target);
}

Vec12 calib_gradient(const SlidingWindow& window, std::size_t sensor, const Vec12& theta,
                     std::span<const Vec3> predicted, double lambda, RegTarget target) {
  const std::size_t n = window.sensor_count();
  Vec12 grad = Vec12::Zero();
  std::size_t j = 0;
  for (const auto& entry : window.entries()) {
    const Regressor& h = entry.regressors[sensor];
    grad += h.transpose() * (h * theta - predicted[j * n + sensor]);
    ++j;
  }
  grad.head<9>() += lambda * (theta.head<9>() - theta_target(target).head<9>());
  return grad;
}

Vec12 sgd_step(const Vec12& theta, const Vec12& grad, double eta) { return theta - eta * grad; }

Eigen::VectorXd pose_residual(const SlidingWindow& window, const Vec12& theta, const PoseState& x,
                              const MagneticGridMap& map, std::size_t sensor) {
  Eigen::VectorXd r;
  linearize(window, sensor, theta, x, map, &r, nullptr);
  return r;
}

Eigen::MatrixXd pose_jacobian(const SlidingWindow& window, const PoseState& x, const MagneticGridMap& map,
                              std::size_t sensor) {
  Eigen::MatrixXd j;
  linearize(window, sensor, identity_theta(), x, map, nullptr, &j);
  return j;
}

double pooled_cost(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x,
                   const MagneticGridMap& map) {
  double cost = 0.0;
  Eigen::VectorXd r;
  for (std::size_t i = 0; i < window.sensor_count(); ++i) {
    linearize(window, i, thetas[i], x, map, &r, nullptr);
    cost += 0.5 * r.squaredNorm();
  }
  return cost;
}

void CalibMoments::add(const Vec3& b, const Vec3& g) {
  bb.noalias() += b * b.transpose();
  b_sum += b;
  count += 1.0;
  gb.noalias() += g * b.transpose();
  g_sum += g;
}

Vec12 CalibMoments::gradient(const Vec12& theta, double lambda, RegTarget target) const {
  const CalibrationParams p = CalibrationParams::from_theta(theta);
  const Mat3 grad_c = p.c * bb + p.b * b_sum.transpose() - gb;
  const Vec3 grad_b = p.c * b_sum + count * p.b - g_sum;
  Vec12 out;
  for (int r = 0; r < 3; ++r) out.segment<3>(3 * r) = grad_c.row(r).transpose();
  out.tail<3>() = grad_b;
  out.head<9>() += lambda * (theta.head<9>() - theta_target(target).head<9>());
  return out;
}

namespace {

// Window geometry that does not depend on the current state, entry-major.
struct FrameGeometry {
  std::vector<Mat3> q;  // sensor orientation in the current body frame
  std::vector<Vec3> a;  // sensor position in the current body frame
  std::vector<Vec3> readings;
  std::size_t sensors = 0;

  explicit FrameGeometry(const SlidingWindow& window) : sensors(window.sensor_count()) {
    const std::size_t n = window.size() * sensors;
    q.reserve(n);
    a.reserve(n);
    readings.reserve(n);
    for (const auto& entry : window.entries()) {
      for (std::size_t i = 0; i < sensors; ++i) {
        const auto& e = window.extrinsics()[i];
        q.push_back(entry.rel_pose.rotation.matrix() * e.rotation.matrix());
        a.push_back(entry.rel_pose.translation + entry.rel_pose.rotation * e.translation);
        readings.push_back(entry.readings[i]);
      }
    }
  }
  std::size_t size() const { return q.size(); }
};

// Map-predicted fields and Jacobian blocks at one state.
struct Evaluation {
  PoseState x;
  std::vector<Vec3> g;
  std::vector<Eigen::Matrix<double, 3, 6>> jac;
};

Evaluation evaluate(const FrameGeometry& geo, const PoseState& x, const MagneticGridMap& map) {
  Evaluation ev;
  ev.x = x;
  ev.g.resize(geo.size());
  ev.jac.resize(geo.size());
  const Mat3 r0 = x.rotation().matrix();
  for (std::size_t k = 0; k < geo.size(); ++k) {
    const Mat3 rs = r0 * geo.q[k];
    const FieldSample s = map.sample(r0 * geo.a[k] + x.p);
    const Mat3 rt = rs.transpose();
    ev.g[k] = rt * s.value;
    const Mat3 rt_grad = rt * s.gradient;
    ev.jac[k].leftCols<3>() = -rt_grad;
    ev.jac[k].rightCols<3>() = -(skew(ev.g[k]) * geo.q[k].transpose() - rt_grad * r0 * skew(geo.a[k]));
  }
  return ev;
}

Vec3 residual(const FrameGeometry& geo, const Evaluation& ev, std::span<const CalibrationParams> calib,
              std::size_t k) {
  return calib[k % geo.sensors].apply(geo.readings[k]) - ev.g[k];
}

double cost_of(const FrameGeometry& geo, const Evaluation& ev, std::span<const CalibrationParams> calib) {
  double c = 0.0;
  for (std::size_t k = 0; k < geo.size(); ++k) c += 0.5 * residual(geo, ev, calib, k).squaredNorm();
  return c;
}

GaussNewtonStep solve_masked(const Mat6& a, const Vec6& rhs, const StateMask& mask, double damping) {
  std::array<int, 6> idx{};
  int k = 0;
  for (int d = 0; d < 6; ++d) {
    if (mask.enabled[d]) idx[k++] = d;
  }
  GaussNewtonStep out;
  if (k == 0) {
    out.stalled = true;
    return out;
  }
  Eigen::MatrixXd am(k, k);
  Eigen::VectorXd bm(k);
  for (int r = 0; r < k; ++r) {
    bm[r] = rhs[idx[r]];
    for (int c = 0; c < k; ++c) am(r, c) = a(idx[r], idx[c]);
  }
  const double largest_undamped = am.diagonal().maxCoeff();
  am.diagonal().array() += damping;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(am, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(largest_undamped > 0.0) || !(lo > kStallConditioning * hi)) {
    out.stalled = true;
    return out;
  }
  const Eigen::VectorXd dm = am.ldlt().solve(bm);
  Vec6 dx = Vec6::Zero();
  for (int r = 0; r < k; ++r) dx[idx[r]] = dm[r];
  out.dx = PosePerturbation::from_stacked(dx);
  return out;
}

struct CachedUpdate {
  PoseUpdate update;
  std::optional<Evaluation> next;  // evaluation at the accepted state
};

// One Gauss–Newton iteration from an existing evaluation; the accepted
// trial's evaluation is handed back so the next iteration can reuse it.
CachedUpdate gn_iteration(const FrameGeometry& geo, const Evaluation& ev, std::span<const CalibrationParams> calib,
                          const MagneticGridMap& map, const SolverConfig& config) {
  Mat6 a = Mat6::Zero();
  Vec6 rhs = Vec6::Zero();
  double cost = 0.0;
  for (std::size_t k = 0; k < geo.size(); ++k) {
    const Vec3 r = residual(geo, ev, calib, k);
    a.noalias() += ev.jac[k].transpose() * ev.jac[k];
    rhs.noalias() -= ev.jac[k].transpose() * r;
    cost += 0.5 * r.squaredNorm();
  }
  CachedUpdate out{{ev.x, {}, false}, std::nullopt};
  const GaussNewtonStep step = solve_masked(a, rhs, config.state_mask, config.gn_damping);
  if (step.stalled) {
    out.update.stalled = true;
    return out;
  }
  if (step.dx.stacked().isZero(0.0)) return out;

  Vec6 dx = step.dx.stacked();
  for (int halvings = 0; halvings <= 4; ++halvings, dx *= 0.5) {
    const PosePerturbation trial_dx = PosePerturbation::from_stacked(dx);
    Evaluation trial;
    try {
      trial = evaluate(geo, boxplus(ev.x, trial_dx), map);
    } catch (const OutOfBoundsError&) {
      continue;
    }
    if (cost_of(geo, trial, calib) < cost) {
      out.update.x = trial.x;
      out.update.applied = trial_dx;
      out.next = std::move(trial);
      return out;
    }
  }
  // A step below tolerance that cannot reduce the cost means convergence.
  out.update.stalled = !(step.dx.dp.norm() < config.pose_tol_m && step.dx.dphi.norm() < config.pose_tol_rad);
  return out;
}

std::vector<CalibrationParams> to_params(std::span<const Vec12> thetas) {
  std::vector<CalibrationParams> out;
  out.reserve(thetas.size());
  for (const auto& t : thetas) out.push_back(CalibrationParams::from_theta(t));
  return out;
}

}  // namespace

GaussNewtonStep gauss_newton_step(std::span<const Eigen::VectorXd> residuals,
                                  std::span<const Eigen::MatrixXd> jacobians, const StateMask& mask, double damping) {
  Mat6 a = Mat6::Zero();
  Vec6 rhs = Vec6::Zero();
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    a.noalias() += jacobians[i].transpose() * jacobians[i];
    rhs.noalias() -= jacobians[i].transpose() * residuals[i];
  }
  return solve_masked(a, rhs, mask, damping);
}

PoseUpdate gauss_newton_update(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x,
                               const MagneticGridMap& map, const SolverConfig& config) {
  const FrameGeometry geo(window);
  const auto calib = to_params(thetas);
  return gn_iteration(geo, evaluate(geo, x, map), calib, map, config).update;
}

AlternationResult alternate(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x_prior,
                            const MagneticGridMap& map, const SolverConfig& config) {
  if (window.empty()) throw Error("alternate() needs a non-empty window");
  if (thetas.size() != window.sensor_count()) throw Error("one theta per sensor required");
  const std::size_t n = window.sensor_count();
  const FrameGeometry geo(window);

  AlternationResult out;
  out.thetas.assign(thetas.begin(), thetas.end());
  out.x = x_prior;

  std::vector<double> scale(n);
  for (std::size_t i = 0; i < n; ++i) scale[i] = mean_reading_norm(window, i);

  try {
    Evaluation ev = evaluate(geo, out.x, map);
    for (int round = 0; round < config.max_alternations; ++round) {
      ++out.alternations;
      double theta_step = 0.0;
      if (config.enable_calibration && config.sgd_iters_per_round > 0) {
        std::vector<CalibMoments> moments(n);
        for (std::size_t k = 0; k < geo.size(); ++k) moments[k % n].add(geo.readings[k], ev.g[k]);
        for (std::size_t i = 0; i < n; ++i) {
          // SGD on the problem with regressor rows divided by the mean field
          // magnitude s: θᶜ moves by η/s²·∇ᶜ, the bias by η·∇ᵇ.
          const double s2 = scale[i] * scale[i];
          const Vec12 before = out.thetas[i];
          for (int it = 0; it < config.sgd_iters_per_round; ++it) {
            Vec12 grad = moments[i].gradient(out.thetas[i], config.lambda_reg * s2, config.reg_target);
            grad.head<9>() /= s2;
            out.thetas[i] = sgd_step(out.thetas[i], grad, config.eta);
          }
          Vec12 delta = out.thetas[i] - before;
          delta.tail<3>() /= scale[i];
          theta_step = std::max(theta_step, delta.norm());
        }
      }

      double step_m = 0.0, step_rad = 0.0;
      if (config.enable_localization) {
        const auto calib = to_params(out.thetas);
        for (int it = 0; it < config.gn_iters_per_round; ++it) {
          CachedUpdate upd = gn_iteration(geo, ev, calib, map, config);
          out.stalled = out.stalled || upd.update.stalled;
          if (upd.next) ev = std::move(*upd.next);
          out.x = ev.x;
          const double dm = upd.update.applied.dp.norm(), dr = upd.update.applied.dphi.norm();
          step_m += dm;
          step_rad += dr;
          if (!upd.next || (dm < config.pose_tol_m && dr < config.pose_tol_rad)) break;
        }
      }

      if (theta_step < config.calib_tol && step_m < config.pose_tol_m && step_rad < config.pose_tol_rad) {
        out.converged = true;
        break;
      }
    }
    out.residual_norm = std::sqrt(2.0 * cost_of(geo, ev, to_params(out.thetas)));
  } catch (const OutOfBoundsError&) {
    out.out_of_map = true;
    out.diverged = true;
    out.residual_norm = std::numeric_limits<double>::infinity();
    return out;
  }
  if (!std::isfinite(out.residual_norm) || !out.x.p.allFinite() || !out.x.phi.allFinite() ||
      out.residual_norm > config.divergence_threshold(n, window.size())) {
    out.diverged = true;
  }
  return out;
}

RlsState RlsState::initial(const Vec12& theta0, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("RLS prior must be > 0");
  return {epsilon * Mat12::Identity(), Mat12::Identity() / epsilon, theta0};
}

void rls_update(RlsState& state, const Regressor& h, const Vec3& g) {
  const Eigen::Matrix<double, 12, 3> ph = state.p_inv * h.transpose();
  const Mat3 s = Mat3::Identity() + h * ph;
  Eigen::FullPivLU<Mat3> lu(s);
  // Cannot fail for positive definite p_inv: s ⪰ I.
  assert(lu.isInvertible());
  const Eigen::Matrix<double, 12, 3> gain = ph * lu.inverse();
  state.theta += gain * (g - h * state.theta);
  state.p_inv -= gain * ph.transpose();
  state.p_inv = 0.5 * (state.p_inv + state.p_inv.transpose()).eval();
  state.p.noalias() += h.transpose() * h;
}

EstimatorOutput run(std::span<const DatasetFrame> dataset, const MagneticGridMap& map,
                    std::span<const SensorExtrinsics> rig, const SolverConfig& config) {
  config.validate();
  if (dataset.empty()) throw ConfigError("dataset is empty");
  const std::size_t n = rig.size();
  for (const auto& f : dataset) {
    if (f.readings.size() != n) throw ConfigError("dataset sensor count does not match the rig");
    if (!map.contains(f.gt_p)) throw ConfigError("dataset trajectory leaves the map region");
  }

  SlidingWindow window(config.window_m, {rig.begin(), rig.end()});
  std::vector<RlsState> rls(n, RlsState::initial(identity_theta(), config.rls_prior));
  std::vector<Vec12> thetas(n, identity_theta());

  EstimatorOutput out;
  out.frames.reserve(dataset.size());
  out.theta_trace.reserve(dataset.size());
  PoseState prev;
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    const DatasetFrame& frame = dataset[k];
    const auto t0 = std::chrono::steady_clock::now();

    PoseState prior;
    if (k == 0) {
      prior = frame.gt_pose();
    } else {
      const RigidTransform propagated = compose(prev.transform(), frame.odom_increment());
      prior = {propagated.translation, log_so3(propagated.rotation)};
    }
    window.push(frame);
    if (config.enable_calibration) {
      for (std::size_t i = 0; i < n; ++i) thetas[i] = rls[i].theta;
    }

    const AlternationResult alt = alternate(window, thetas, prior, map, config);
    FrameResult fr;
    fr.t = frame.t;
    fr.alternations = alt.alternations;
    fr.residual_norm = alt.residual_norm;
    fr.stalled = alt.stalled;
    fr.x = alt.out_of_map || !alt.x.p.allFinite() ? prior : alt.x;

    // A diverged frame is assigned its reference pose, as in the evaluation
    // protocol; the solver's own estimate stays in the output.
    const PoseState x_used = alt.diverged ? frame.gt_pose() : alt.x;
    if (alt.diverged) {
      fr.fallback = true;
      ++out.fallback_count;
    }
    prev = x_used;
    if (config.enable_calibration) {
      const WindowEntry& newest = window.entries().back();
      for (std::size_t i = 0; i < n; ++i) {
        const RigidTransform s = sensor_pose(newest, rig[i], x_used);
        if (!map.contains(s.translation)) continue;
        rls_update(rls[i], newest.regressors[i], s.rotation.transpose() * map.interpolate(s.translation));
      }
    }
    fr.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    std::vector<Vec12> trace(n);
    for (std::size_t i = 0; i < n; ++i) trace[i] = config.enable_calibration ? rls[i].theta : identity_theta();
    out.theta_trace.push_back(std::move(trace));
    out.frames.push_back(fr);
  }
  out.final_thetas = out.theta_trace.back();
  return out;
}

}  // namespace roslac
