#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roslac/geom.hpp"
#include "roslac/magmap.hpp"
#include "roslac/rng.hpp"

namespace roslac {

using Vec12 = Eigen::Matrix<double, 12, 1>;

/// Mounting of one magnetometer in the robot body frame.
struct SensorExtrinsics {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  void validate() const;
};

/// Affine distortion model B_env = C·B_raw + b.
///
/// The 12-vector layout is [c₁ c₂ c₃ b] where cᵣ is the r-th row of C.
struct CalibrationParams {
  Mat3 c = Mat3::Identity();
  Vec3 b = Vec3::Zero();

  static CalibrationParams identity() { return {}; }
  static CalibrationParams from_theta(const Vec12& theta);
  Vec12 theta() const;
  void validate() const;  ///< |det C| > 1e-6
  Vec3 apply(const Vec3& raw) const { return c * raw + b; }
};

struct NoiseConfig {
  double meas_sigma = 0.2;          ///< µT per axis
  double odom_trans_sigma = 0.01;   ///< m per m travelled
  double odom_rot_sigma = 0.005;    ///< rad per m travelled
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Uniform ranges for randomly drawn distortions.
struct DistortionRanges {
  double diag_lo = 0.9, diag_hi = 1.1;
  double offdiag_lo = -0.05, offdiag_hi = 0.05;
  double bias_lo = -20.0, bias_hi = 20.0;
};

CalibrationParams random_distortion(Rng& rng, const DistortionRanges& ranges = {});

/// Eight sensors at the corners of two 0.3 m × 0.2 m rectangles, one
/// centred 0.25 m ahead of the body origin and one 0.25 m behind it.
std::vector<SensorExtrinsics> default_rig();

/// One dataset record. Orientations are stored as unit quaternions so that
/// serialization round trips bit-exactly.
struct DatasetFrame {
  double t = 0.0;
  Eigen::Quaterniond odom_dq = Eigen::Quaterniond::Identity();
  Vec3 odom_dp = Vec3::Zero();
  std::vector<Vec3> readings;
  Vec3 gt_p = Vec3::Zero();
  Eigen::Quaterniond gt_q = Eigen::Quaterniond::Identity();

  Rotation3 odom_rotation() const { return Rotation3::from_quaternion(odom_dq); }
  RigidTransform odom_increment() const { return {odom_rotation(), odom_dp}; }
  PoseState gt_pose() const;
};

struct TrajectorySpec {
  std::vector<Eigen::Vector2d> waypoints;
  double speed = 0.5;        ///< m/s
  double frame_rate = 10.0;  ///< Hz
  double plane_height = 0.0;
};

/// Planar poses along the waypoint polyline, one per frame, yaw tangent to
/// the segment being travelled. A sample landing exactly on a corner takes
/// the heading of the outgoing segment. Throws ConfigError for waypoints
/// outside `bounds` (when given) or an invalid spec.
std::vector<PoseState> generate_trajectory(const TrajectorySpec& spec, const std::optional<GridSpec>& bounds = {});

/// Body-frame increments between consecutive poses (n − 1 of them).
/// Planar wheel-odometry noise: x/y translation and yaw, each with standard
/// deviation proportional to the step length.
std::vector<RigidTransform> simulate_odometry(std::span<const PoseState> poses, const NoiseConfig& noise, Rng& rng);

/// World pose of sensor i for the robot pose x: (R·ᵇRᵢ, R·ᵇpᵢ + p).
RigidTransform sensor_world_pose(const PoseState& x, const SensorExtrinsics& extrinsics);

/// Raw readings such that C·(reading − noise) + b = Rᵢᵀ·B(pᵢ).
/// Throws ConfigError for a singular C.
std::vector<Vec3> simulate_readings(const FieldModel& field, const PoseState& gt_pose,
                                    std::span<const SensorExtrinsics> extrinsics,
                                    std::span<const CalibrationParams> calib_true, double meas_sigma, Rng& rng);

/// Full dataset: trajectory, odometry and readings at t = k / frame_rate.
/// Odometry noise is drawn first for the whole trajectory, then readings
/// frame by frame, all from one Rng seeded with noise.rng_seed.
std::vector<DatasetFrame> simulate_dataset(const FieldModel& field, std::span<const PoseState> poses,
                                           double frame_rate, std::span<const SensorExtrinsics> extrinsics,
                                           std::span<const CalibrationParams> calib_true, const NoiseConfig& noise);

/// JSON lines: {"t", "dq"[wxyz], "dp"[3], "readings"[3N], "gt_p"[3], "gt_q"[wxyz]}.
void write_dataset(std::span<const DatasetFrame> frames, const std::filesystem::path& path);
/// Throws FormatError on schema mismatch (including inconsistent sensor
/// count) or non-monotone timestamps.
std::vector<DatasetFrame> read_dataset(const std::filesystem::path& path);

}  // namespace roslac
