#include "roslac/eval.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "roslac/error.hpp"

namespace roslac {

namespace {

constexpr double kCollinearTol = 1e-9;

}  // namespace

TrajectoryPair::TrajectoryPair(std::span<const TimedPose> estimated, std::span<const TimedPose> reference,
                               double max_dt) {
  if (reference.empty()) return;
  std::vector<TimedPose> ref(reference.begin(), reference.end());
  std::stable_sort(ref.begin(), ref.end(), [](const TimedPose& a, const TimedPose& b) { return a.t < b.t; });
  for (const auto& e : estimated) {
    auto it = std::lower_bound(ref.begin(), ref.end(), e.t, [](const TimedPose& r, double t) { return r.t < t; });
    const TimedPose* best = nullptr;
    if (it != ref.end()) best = &*it;
    if (it != ref.begin()) {
      const TimedPose* prev = &*std::prev(it);
      if (!best || std::abs(prev->t - e.t) <= std::abs(best->t - e.t)) best = prev;
    }
    if (best && std::abs(best->t - e.t) <= max_dt) {
      est_.push_back(e);
      ref_.push_back(*best);
    }
  }
}

RigidTransform align_rigid(const TrajectoryPair& pair) {
  const auto n = pair.size();
  if (n < 3) throw AlignmentError("alignment needs at least 3 associated poses, got " + std::to_string(n));
  Eigen::Matrix3Xd e(3, n), g(3, n);
  for (std::size_t i = 0; i < n; ++i) {
    e.col(static_cast<Eigen::Index>(i)) = pair.estimated()[i].pose.translation;
    g.col(static_cast<Eigen::Index>(i)) = pair.reference()[i].pose.translation;
  }
  const Vec3 me = e.rowwise().mean(), mg = g.rowwise().mean();
  const Eigen::Matrix3Xd ec = e.colwise() - me, gc = g.colwise() - mg;

  // Collinear points leave rotation about the common line undetermined.
  const Eigen::JacobiSVD<Mat3> spread(ec * ec.transpose());
  const auto sv = spread.singularValues();
  if (!(sv[1] > kCollinearTol * std::max(1.0, sv[0]))) throw AlignmentError("estimated positions are collinear");

  const Mat3 cov = gc * ec.transpose();
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return {Rotation3::unchecked(r), mg - r * me};
}

std::vector<double> frame_errors(const TrajectoryPair& pair, const RigidTransform& s) {
  std::vector<double> out;
  out.reserve(pair.size());
  for (std::size_t i = 0; i < pair.size(); ++i) {
    const RigidTransform f = compose(inverse(pair.reference()[i].pose), compose(s, pair.estimated()[i].pose));
    out.push_back(f.translation.norm());
  }
  return out;
}

double ate(const TrajectoryPair& pair, const RigidTransform& s) {
  if (pair.empty()) throw AlignmentError("no associated poses");
  double sum = 0.0;
  for (double e : frame_errors(pair, s)) sum += e * e;
  return std::sqrt(sum / static_cast<double>(pair.size()));
}

double ate(const TrajectoryPair& pair) { return ate(pair, align_rigid(pair)); }

double calib_error(const Vec12& theta_e, const Vec12& theta_g) { return (theta_e - theta_g).norm(); }

FrameClass classify(double error_m) {
  if (error_m < 0.3) return FrameClass::kWell;
  if (error_m <= 1.0) return FrameClass::kPoor;
  return FrameClass::kFailed;
}

std::vector<FrameClass> classify_frames(const TrajectoryPair& pair) {
  std::vector<FrameClass> out;
  for (double e : frame_errors(pair, align_rigid(pair))) out.push_back(classify(e));
  return out;
}

FrameClassCounts count_classes(std::span<const FrameClass> classes) {
  FrameClassCounts c;
  for (auto k : classes) {
    switch (k) {
      case FrameClass::kWell: ++c.well; break;
      case FrameClass::kPoor: ++c.poor; break;
      case FrameClass::kFailed: ++c.failed; break;
    }
  }
  return c;
}

std::vector<TimedPose> reference_trajectory(std::span<const DatasetFrame> dataset) {
  std::vector<TimedPose> out;
  out.reserve(dataset.size());
  for (const auto& f : dataset) out.push_back({f.t, f.gt_pose().transform()});
  return out;
}

}  // namespace roslac
