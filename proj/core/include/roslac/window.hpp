#pragma once

#include <deque>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roslac/geom.hpp"
#include "roslac/sim.hpp"

namespace roslac {

using Regressor = Eigen::Matrix<double, 3, 12>;

/// h(B): row r holds Bᵀ in columns 3r..3r+2 and 1 in column 9+r, so that
/// h(B)·θ = C·B + b.
Regressor regressor(const Vec3& b);

/// One accumulated frame, expressed relative to the newest frame.
struct WindowEntry {
  double t = 0.0;
  RigidTransform rel_pose;            ///< pose of this frame in the newest frame
  std::vector<Regressor> regressors;  ///< one per sensor
  std::vector<Vec3> readings;         ///< raw, one per sensor
  double distance = 0.0;              ///< odometry path length to the newest frame, m
};

/// Distance-bounded sequence of past frames re-expressed in the current body
/// frame through backward odometry composition.
class SlidingWindow {
 public:
  static constexpr double kStationaryTranslation = 1e-4;
  static constexpr double kStationaryRotation = 1e-4;

  SlidingWindow(double horizon_m, std::vector<SensorExtrinsics> extrinsics);

  /// Adds a frame. Older entries are pre-composed with the inverse of the
  /// frame's odometry increment; entries farther than the horizon are dropped.
  /// A frame with a negligible increment replaces the newest entry.
  /// Throws Error when the timestamp does not increase or the sensor count
  /// differs from the rig.
  void push(const DatasetFrame& frame);

  /// Same as push(), with already-corrected readings and an explicit increment.
  void push(double t, const RigidTransform& increment, std::span<const Vec3> readings);

  const std::deque<WindowEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t sensor_count() const noexcept { return extrinsics_.size(); }
  const std::vector<SensorExtrinsics>& extrinsics() const noexcept { return extrinsics_; }
  double horizon() const noexcept { return horizon_; }
  void clear() { entries_.clear(); }

 private:
  double horizon_;
  std::vector<SensorExtrinsics> extrinsics_;
  std::deque<WindowEntry> entries_;
};

/// World pose of sensor `i` at the time of `entry`, given the current robot
/// state x: R = exp(φ)·relR·ᵇRᵢ, p = exp(φ)·(relp + relR·ᵇpᵢ) + p.
RigidTransform sensor_pose(const WindowEntry& entry, const SensorExtrinsics& extrinsics, const PoseState& x);

/// All (entry, sensor) poses, entry-major: result[j·N + i].
std::vector<RigidTransform> sensor_poses(const SlidingWindow& window, const PoseState& x);

}  // namespace roslac
