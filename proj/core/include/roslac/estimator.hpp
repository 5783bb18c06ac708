#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roslac/geom.hpp"
#include "roslac/magmap.hpp"
#include "roslac/sim.hpp"
#include "roslac/window.hpp"

namespace roslac {

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Which of [px py pz φx φy φz] the pose solver may change.
struct StateMask {
  std::array<bool, 6> enabled{true, true, false, false, false, true};

  static StateMask xy() { return {{true, true, false, false, false, false}}; }
  static StateMask xy_yaw() { return {}; }
  static StateMask full() { return {{true, true, true, true, true, true}}; }
  /// Accepts "xy", "xyyaw" and "full".
  static StateMask parse(const std::string& name);

  int count() const;
  bool operator==(const StateMask&) const = default;
};

/// Target of the ℓ₂ penalty on the C block of θ.
enum class RegTarget { kZero, kIdentity };

struct SolverConfig {
  double eta = 1e-3;         ///< SGD learning rate on the normalized problem
  double lambda_reg = 1e-2;  ///< ℓ₂ weight on the C block (normalized problem)
  RegTarget reg_target = RegTarget::kIdentity;
  int sgd_iters_per_round = 5;
  int gn_iters_per_round = 3;
  int max_alternations = 10;
  double pose_tol_m = 1e-4;
  double pose_tol_rad = 1e-4;
  double calib_tol = 1e-4;
  StateMask state_mask;
  double gn_damping = 1e-6;
  /// Pooled residual norm (µT) above which a frame is declared diverged.
  /// When unset: 10·meas_sigma·√(3·N·window entries).
  std::optional<double> divergence_residual;
  double meas_sigma = 0.2;   ///< only used for the default divergence threshold
  double rls_prior = 1e-4;   ///< P₀ = ε·I
  double window_m = 0.5;     ///< accumulation horizon, m of odometry travel
  bool enable_calibration = true;
  bool enable_localization = true;

  void validate() const;
  double divergence_threshold(std::size_t sensors, std::size_t window_entries) const;
};

/// Identity-calibration vector [1 0 0 0 1 0 0 0 1 0 0 0].
Vec12 identity_theta();

/// Map-predicted field in the sensor frame, g = Rᵀ·M(p), for every
/// (entry, sensor) pair of the window at state x, entry-major.
/// Throws OutOfBoundsError if any sensor leaves the map.
std::vector<Vec3> predicted_fields(const SlidingWindow& window, const PoseState& x, const MagneticGridMap& map);

/// Gradient of ½Σⱼ‖Hⱼθ − gⱼ‖² + ½λ‖θᶜ − target‖² for one sensor over the
/// window; the bias block is not regularized.
Vec12 calib_gradient(const SlidingWindow& window, std::size_t sensor, const Vec12& theta, const PoseState& x,
                     const MagneticGridMap& map, double lambda, RegTarget target = RegTarget::kIdentity);

/// Same, with the predicted fields already evaluated (see predicted_fields()).
Vec12 calib_gradient(const SlidingWindow& window, std::size_t sensor, const Vec12& theta,
                     std::span<const Vec3> predicted, double lambda, RegTarget target = RegTarget::kIdentity);

/// Sufficient statistics of one sensor's window for the calibration
/// objective: ΣBBᵀ, ΣB, count, ΣgBᵀ and Σg. The batch gradient computed from
/// them equals calib_gradient() at a cost independent of the window length.
struct CalibMoments {
  Mat3 bb = Mat3::Zero();
  Vec3 b_sum = Vec3::Zero();
  double count = 0.0;
  Mat3 gb = Mat3::Zero();
  Vec3 g_sum = Vec3::Zero();

  /// Adds one (reading, predicted field) pair.
  void add(const Vec3& b, const Vec3& g);
  Vec12 gradient(const Vec12& theta, double lambda, RegTarget target = RegTarget::kIdentity) const;
};

/// θ − η·grad.
Vec12 sgd_step(const Vec12& theta, const Vec12& grad, double eta);

/// Stacked rⱼ = Hⱼθ − Rⱼᵀ·M(pⱼ) over window entries for one sensor (3·window).
Eigen::VectorXd pose_residual(const SlidingWindow& window, const Vec12& theta, const PoseState& x,
                              const MagneticGridMap& map, std::size_t sensor);

/// Jacobian of pose_residual() with respect to x ⊞ Δx, (3·window) × 6.
///
/// Per entry: −[Rᵀ∇M | [RᵀM]×·Qᵀ − Rᵀ∇M·R₀·[a]×], where R₀ is the robot
/// orientation, Q the entry-relative sensor orientation and a the sensor
/// position in the current body frame. With Q = I and a = 0 this is the
/// textbook block −[Rᵀ∇M | [RᵀM]×].
Eigen::MatrixXd pose_jacobian(const SlidingWindow& window, const PoseState& x, const MagneticGridMap& map,
                              std::size_t sensor);

struct GaussNewtonStep {
  PosePerturbation dx;
  bool stalled = false;
};

/// Solves (ΣJᵀJ + δI)·Δx = −ΣJᵀr over the enabled dimensions; the others are
/// zero. Flags a stall when the damped masked normal matrix is numerically
/// singular or every enabled Jacobian column vanishes.
GaussNewtonStep gauss_newton_step(std::span<const Eigen::VectorXd> residuals,
                                  std::span<const Eigen::MatrixXd> jacobians, const StateMask& mask, double damping);

/// ½·Σᵢ‖rᵢ‖² summed over sensors.
double pooled_cost(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x,
                   const MagneticGridMap& map);

struct PoseUpdate {
  PoseState x;
  PosePerturbation applied;  ///< step actually taken (after halving)
  bool stalled = false;
};

/// One Gauss–Newton iteration pooled over all sensors, with step halving (up
/// to four times) until the pooled cost decreases; otherwise a zero step with
/// the stall flag set.
PoseUpdate gauss_newton_update(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x,
                               const MagneticGridMap& map, const SolverConfig& config);

struct AlternationResult {
  std::vector<Vec12> thetas;
  PoseState x;
  int alternations = 0;
  double residual_norm = 0.0;  ///< pooled √Σ‖r‖² at the returned iterate, µT
  bool converged = false;
  bool stalled = false;
  bool diverged = false;
  bool out_of_map = false;
};

/// Alternates per-sensor SGD on θ with pooled Gauss–Newton on x until both
/// step norms fall below tolerance or max_alternations is reached.
/// Divergence (out-of-map query or residual above threshold) is reported in
/// the result, never thrown.
AlternationResult alternate(const SlidingWindow& window, std::span<const Vec12> thetas, const PoseState& x_prior,
                            const MagneticGridMap& map, const SolverConfig& config);

/// Recursive least squares with unit forgetting factor.
///
/// `p` is the accumulated normal matrix P₀ + ΣHᵀH; `p_inv` is maintained
/// alongside it through the matrix inversion lemma.
struct RlsState {
  Mat12 p;
  Mat12 p_inv;
  Vec12 theta;

  static RlsState initial(const Vec12& theta0, double epsilon = 1e-4);
};

void rls_update(RlsState& state, const Regressor& h, const Vec3& g);

struct FrameResult {
  double t = 0.0;
  PoseState x;
  bool fallback = false;
  bool stalled = false;
  int alternations = 0;
  double residual_norm = 0.0;
  double ms = 0.0;
};

struct EstimatorOutput {
  std::vector<FrameResult> frames;
  /// θ after the RLS update, per frame then per sensor.
  std::vector<std::vector<Vec12>> theta_trace;
  std::vector<Vec12> final_thetas;
  int fallback_count = 0;
};

/// The online loop: propagate by odometry, push into the window, alternate,
/// feed the current frame into RLS at the converged pose, seed the next
/// frame's θ from RLS. The first frame starts from its ground-truth pose. A
/// diverged frame is assigned its ground-truth pose for the RLS update and
/// the next prior; its solver estimate is still what the output records.
///
/// Throws ConfigError for an empty dataset, a rig/dataset mismatch or a
/// dataset that leaves the map.
EstimatorOutput run(std::span<const DatasetFrame> dataset, const MagneticGridMap& map,
                    std::span<const SensorExtrinsics> rig, const SolverConfig& config);

}  // namespace roslac
