#include "roslac/window.hpp"

#include <cmath>
#include <string>

#include "roslac/error.hpp"

namespace roslac {

Regressor regressor(const Vec3& b) {
  Regressor h = Regressor::Zero();
  for (int r = 0; r < 3; ++r) {
    h.block<1, 3>(r, 3 * r) = b.transpose();
    h(r, 9 + r) = 1.0;
  }
  return h;
}

SlidingWindow::SlidingWindow(double horizon_m, std::vector<SensorExtrinsics> extrinsics)
    : horizon_(horizon_m), extrinsics_(std::move(extrinsics)) {
  if (!(horizon_ >= 0.0) || !std::isfinite(horizon_)) throw ConfigError("window horizon must be >= 0");
  if (extrinsics_.empty()) throw ConfigError("window needs at least one sensor");
  for (const auto& e : extrinsics_) e.validate();
}

void SlidingWindow::push(const DatasetFrame& frame) {
  push(frame.t, frame.odom_increment(), frame.readings);
}

void SlidingWindow::push(double t, const RigidTransform& increment, std::span<const Vec3> readings) {
  if (!entries_.empty() && !(t > entries_.back().t)) {
    throw Error("window push with non-increasing timestamp " + std::to_string(t));
  }
  if (readings.size() != extrinsics_.size()) {
    throw Error("frame has " + std::to_string(readings.size()) + " readings, rig has " +
                std::to_string(extrinsics_.size()) + " sensors");
  }

  const double step = increment.translation.norm();
  const double turn = log_so3(increment.rotation).norm();
  const bool stationary = step < kStationaryTranslation && turn < kStationaryRotation;

  const RigidTransform back = inverse(increment);
  for (auto& e : entries_) {
    e.rel_pose = compose(back, e.rel_pose);
    e.distance += step;
  }
  if (stationary && !entries_.empty()) entries_.pop_back();
  while (!entries_.empty() && entries_.front().distance > horizon_) entries_.pop_front();

  WindowEntry entry;
  entry.t = t;
  entry.readings.assign(readings.begin(), readings.end());
  entry.regressors.reserve(readings.size());
  for (const auto& b : readings) entry.regressors.push_back(regressor(b));
  entries_.push_back(std::move(entry));
}

RigidTransform sensor_pose(const WindowEntry& entry, const SensorExtrinsics& e, const PoseState& x) {
  const Rotation3 r = x.rotation();
  const Rotation3& rel_r = entry.rel_pose.rotation;
  return {r * rel_r * e.rotation, r * (entry.rel_pose.translation + rel_r * e.translation) + x.p};
}

std::vector<RigidTransform> sensor_poses(const SlidingWindow& window, const PoseState& x) {
  std::vector<RigidTransform> out;
  out.reserve(window.size() * window.sensor_count());
  for (const auto& entry : window.entries()) {
    for (const auto& e : window.extrinsics()) out.push_back(sensor_pose(entry, e, x));
  }
  return out;
}

}  // namespace roslac
