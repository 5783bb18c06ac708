#pragma once

#include <array>
#include <span>
#include <vector>

#include "roslac/geom.hpp"
#include "roslac/sim.hpp"

namespace roslac {

struct TimedPose {
  double t = 0.0;
  RigidTransform pose;
};

/// Estimated and reference trajectories, associated by nearest timestamp.
class TrajectoryPair {
 public:
  /// Pairs every estimated pose with the nearest reference pose within
  /// `max_dt` (normally half the frame period); unmatched poses are dropped.
  TrajectoryPair(std::span<const TimedPose> estimated, std::span<const TimedPose> reference, double max_dt);

  std::size_t size() const noexcept { return est_.size(); }
  bool empty() const noexcept { return est_.empty(); }
  const std::vector<TimedPose>& estimated() const noexcept { return est_; }
  const std::vector<TimedPose>& reference() const noexcept { return ref_; }

 private:
  std::vector<TimedPose> est_;
  std::vector<TimedPose> ref_;
};

/// Rigid S (no scale) minimizing Σ‖S·p_e − p_g‖² over associated positions.
/// S maps the estimated trajectory onto the reference: an estimate offset
/// by +d yields S.translation = −d.
/// Throws AlignmentError for fewer than 3 pairs or collinear positions.
RigidTransform align_rigid(const TrajectoryPair& pair);

/// Per-frame ‖trans(T_g⁻¹·S·T_e)‖ after alignment.
std::vector<double> frame_errors(const TrajectoryPair& pair, const RigidTransform& s);

/// RMSE of the translational alignment residuals. Throws AlignmentError when
/// nothing is associated.
double ate(const TrajectoryPair& pair);
double ate(const TrajectoryPair& pair, const RigidTransform& s);

/// ‖θ_e − θ_g‖₂, unitless C entries and µT biases mixed as they are.
double calib_error(const Vec12& theta_e, const Vec12& theta_g);

enum class FrameClass { kWell, kPoor, kFailed };

/// < 0.3 m well, 0.3–1.0 m poor, > 1.0 m failed.
FrameClass classify(double error_m);
std::vector<FrameClass> classify_frames(const TrajectoryPair& pair);

struct FrameClassCounts {
  std::size_t well = 0;
  std::size_t poor = 0;
  std::size_t failed = 0;

  std::size_t total() const { return well + poor + failed; }
  double well_fraction() const { return total() ? static_cast<double>(well) / static_cast<double>(total()) : 0.0; }
};

FrameClassCounts count_classes(std::span<const FrameClass> classes);

/// Reference poses of a dataset.
std::vector<TimedPose> reference_trajectory(std::span<const DatasetFrame> dataset);

}  // namespace roslac
