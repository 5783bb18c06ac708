#include "roslac/geom.hpp"

#include <cmath>
#include <numbers>

#include "roslac/error.hpp"

namespace roslac {

namespace {
constexpr double kSmallAngle = 1e-8;
// Below this value of 1 + cos θ the axis is taken from the symmetric part.
constexpr double kNearPi = 1e-6;

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }
}  // namespace

Rotation3 Rotation3::from_matrix(const Mat3& m, double tol) {
  Rotation3 r(m);
  if (!m.allFinite() || !r.is_valid(tol)) {
    throw ConfigError("matrix is not a rotation (orthonormality or determinant violated)");
  }
  return r;
}

Rotation3 Rotation3::from_quaternion(const Eigen::Quaterniond& q) {
  return Rotation3(q.normalized().toRotationMatrix());
}

Rotation3 Rotation3::about_z(double yaw) { return exp_so3(Vec3(0.0, 0.0, yaw)); }

Eigen::Quaterniond Rotation3::quaternion() const {
  Eigen::Quaterniond q(r_);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

double Rotation3::orthonormality_error() const {
  return (r_.transpose() * r_ - Mat3::Identity()).norm();
}

bool Rotation3::is_valid(double tol) const {
  return orthonormality_error() <= tol && std::abs(r_.determinant() - 1.0) <= tol;
}

Rotation3 PoseState::rotation() const { return exp_so3(phi); }

RigidTransform PoseState::transform() const { return {rotation(), p}; }

double PoseState::yaw() const { return yaw_of(rotation()); }

PoseState PoseState::from_transform(const RigidTransform& t) {
  return {t.translation, log_so3(t.rotation)};
}

Eigen::Matrix<double, 6, 1> PosePerturbation::stacked() const {
  Eigen::Matrix<double, 6, 1> v;
  v << dp, dphi;
  return v;
}

PosePerturbation PosePerturbation::from_stacked(const Eigen::Matrix<double, 6, 1>& v) {
  return {v.head<3>(), v.tail<3>()};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,   -v.z(),  v.y(),
        v.z(),  0.0,   -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

Rotation3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < kSmallAngle) {
    return Rotation3::unchecked(Mat3::Identity() + k + 0.5 * k * k);
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation3::unchecked(Mat3::Identity() + a * k + b * k * k);
}

Vec3 log_so3(const Rotation3& r, LogBranch* branch) {
  const Mat3& m = r.matrix();
  const Vec3 w = 0.5 * vee(m - m.transpose());  // sin θ · axis
  const double c = 0.5 * (m.trace() - 1.0);     // cos θ
  const double s = w.norm();
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    if (branch) *branch = LogBranch::kSmallAngle;
    return w;
  }
  if (1.0 + c > kNearPi) {
    if (branch) *branch = LogBranch::kRegular;
    return (theta / s) * w;
  }

  // θ ≈ π: sym(R) = cos θ·I + (1 − cos θ)·a·aᵀ.
  if (branch) *branch = LogBranch::kNearPi;
  const Mat3 aat = (0.5 * (m + m.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  Eigen::Index k = 0;
  aat.diagonal().maxCoeff(&k);
  Vec3 axis = aat.col(k) / std::sqrt(std::max(aat(k, k), 0.0));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

PoseState boxplus(const PoseState& x, const PosePerturbation& dx) {
  PoseState out;
  out.p = x.p + dx.dp;
  out.phi = log_so3(x.rotation() * exp_so3(dx.dphi));
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform inverse(const RigidTransform& a) {
  const Rotation3 rt = a.rotation.transpose();
  return {rt, -(rt * a.translation)};
}

double yaw_of(const Rotation3& r) { return std::atan2(r.matrix()(1, 0), r.matrix()(0, 0)); }

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

}  // namespace roslac
