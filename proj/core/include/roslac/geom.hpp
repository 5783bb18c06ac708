#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace roslac {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rotation matrix in SO(3).
///
/// Construction through `from_matrix` validates orthonormality; composition
/// does not re-orthonormalize (callers that accumulate long products re-encode
/// through log/exp instead).
class Rotation3 {
 public:
  static constexpr double kTolerance = 1e-9;

  Rotation3() : r_(Mat3::Identity()) {}

  /// Throws ConfigError unless RᵀR = I and det R = 1 within `tol`.
  static Rotation3 from_matrix(const Mat3& m, double tol = kTolerance);
  /// Wraps `m` as is. For results of products of valid rotations.
  static Rotation3 unchecked(const Mat3& m) { return Rotation3(m); }
  static Rotation3 from_quaternion(const Eigen::Quaterniond& q);
  static Rotation3 identity() { return Rotation3(); }
  static Rotation3 about_z(double yaw);

  const Mat3& matrix() const noexcept { return r_; }
  Rotation3 transpose() const { return Rotation3(r_.transpose()); }
  Rotation3 inverse() const { return transpose(); }
  Eigen::Quaterniond quaternion() const;

  /// ‖RᵀR − I‖ (Frobenius).
  double orthonormality_error() const;
  bool is_valid(double tol = kTolerance) const;

  Rotation3 operator*(const Rotation3& o) const { return Rotation3(r_ * o.r_); }
  Vec3 operator*(const Vec3& v) const { return r_ * v; }

 private:
  explicit Rotation3(const Mat3& m) : r_(m) {}
  Mat3 r_;
};

/// Rigid transform x ↦ R·x + t.
struct RigidTransform {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
};

/// Robot pose: position p and axis-angle orientation φ (map frame).
struct PoseState {
  Vec3 p = Vec3::Zero();
  Vec3 phi = Vec3::Zero();

  Rotation3 rotation() const;
  RigidTransform transform() const;
  double yaw() const;
  static PoseState from_transform(const RigidTransform& t);
};

/// Tangent-space increment Δx = [Δp; δφ].
struct PosePerturbation {
  Vec3 dp = Vec3::Zero();
  Vec3 dphi = Vec3::Zero();

  Eigen::Matrix<double, 6, 1> stacked() const;
  static PosePerturbation from_stacked(const Eigen::Matrix<double, 6, 1>& v);
  bool is_finite() const { return dp.allFinite() && dphi.allFinite(); }
};

enum class LogBranch { kSmallAngle, kRegular, kNearPi };

/// [v]× such that skew(v)·w = v × w.
Mat3 skew(const Vec3& v);

/// Rodrigues formula; second-order Taylor series below ‖φ‖ = 1e-8.
Rotation3 exp_so3(const Vec3& phi);

/// Principal-branch logarithm, ‖result‖ ≤ π. Optionally reports which
/// branch was evaluated.
Vec3 log_so3(const Rotation3& r, LogBranch* branch = nullptr);

/// Position additive, orientation right-perturbed: R ← R·exp(δφ).
PoseState boxplus(const PoseState& x, const PosePerturbation& dx);

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& a);

/// Planar yaw of a rotation matrix (atan2 of the rotated x axis).
double yaw_of(const Rotation3& r);

/// Wrap an angle to (−π, π].
double wrap_angle(double a);

}  // namespace roslac
