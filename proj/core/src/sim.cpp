#include "roslac/sim.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/LU>
#include "json.hpp"

#include "roslac/error.hpp"

namespace roslac {

namespace {

using nlohmann::json;

json quat_json(const Eigen::Quaterniond& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

std::vector<double> numbers(const json& j, const char* key, std::size_t expected, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) {
    throw FormatError("dataset line " + std::to_string(line) + ": missing array '" + key + "'");
  }
  if (expected != 0 && it->size() != expected) {
    throw FormatError("dataset line " + std::to_string(line) + ": '" + key + "' has " +
                      std::to_string(it->size()) + " entries, expected " + std::to_string(expected));
  }
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw FormatError("dataset line " + std::to_string(line) + ": non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

Eigen::Quaterniond quat_from(const std::vector<double>& v, std::size_t line) {
  Eigen::Quaterniond q(v[0], v[1], v[2], v[3]);
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    throw FormatError("dataset line " + std::to_string(line) + ": quaternion is not unit norm");
  }
  return q;
}

}  // namespace

void SensorExtrinsics::validate() const {
  if (!rotation.is_valid(1e-9)) throw ConfigError("sensor extrinsic rotation is not a rotation");
  if (!translation.allFinite() || translation.norm() > 2.0) {
    throw ConfigError("sensor extrinsic translation must lie within 2 m of the body origin");
  }
}

CalibrationParams CalibrationParams::from_theta(const Vec12& theta) {
  CalibrationParams p;
  for (int r = 0; r < 3; ++r) p.c.row(r) = theta.segment<3>(3 * r).transpose();
  p.b = theta.tail<3>();
  return p;
}

Vec12 CalibrationParams::theta() const {
  Vec12 t;
  for (int r = 0; r < 3; ++r) t.segment<3>(3 * r) = c.row(r).transpose();
  t.tail<3>() = b;
  return t;
}

void CalibrationParams::validate() const {
  if (!c.allFinite() || !b.allFinite()) throw ConfigError("calibration parameters must be finite");
  if (std::abs(c.determinant()) <= 1e-6) throw ConfigError("calibration matrix C is singular");
}

void NoiseConfig::validate() const {
  if (!(meas_sigma >= 0.0) || !(odom_trans_sigma >= 0.0) || !(odom_rot_sigma >= 0.0)) {
    throw ConfigError("noise standard deviations must be >= 0");
  }
}

CalibrationParams random_distortion(Rng& rng, const DistortionRanges& ranges) {
  CalibrationParams p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      p.c(r, c) = r == c ? rng.uniform(ranges.diag_lo, ranges.diag_hi) : rng.uniform(ranges.offdiag_lo, ranges.offdiag_hi);
    }
  }
  for (int r = 0; r < 3; ++r) p.b[r] = rng.uniform(ranges.bias_lo, ranges.bias_hi);
  return p;
}

std::vector<SensorExtrinsics> default_rig() {
  std::vector<SensorExtrinsics> rig;
  for (double cx : {0.25, -0.25}) {
    for (double dx : {0.15, -0.15}) {
      for (double dy : {0.1, -0.1}) {
        rig.push_back({Rotation3::identity(), Vec3(cx + dx, dy, 0.0)});
      }
    }
  }
  return rig;
}

PoseState DatasetFrame::gt_pose() const {
  return {gt_p, log_so3(Rotation3::from_quaternion(gt_q))};
}

std::vector<PoseState> generate_trajectory(const TrajectorySpec& spec, const std::optional<GridSpec>& bounds) {
  if (spec.waypoints.size() < 2) throw ConfigError("trajectory needs at least 2 waypoints");
  if (!(spec.speed > 0.0)) throw ConfigError("trajectory speed must be > 0");
  if (!(spec.frame_rate > 0.0)) throw ConfigError("trajectory frame rate must be > 0");
  for (const auto& w : spec.waypoints) {
    if (!w.allFinite()) throw ConfigError("waypoint is not finite");
    if (bounds && (w.x() < bounds->origin.x() || w.y() < bounds->origin.y() || w.x() > bounds->x_max() ||
                   w.y() > bounds->y_max())) {
      throw ConfigError("waypoint outside the map bounds");
    }
  }
  std::vector<double> cum{0.0};
  for (std::size_t s = 1; s < spec.waypoints.size(); ++s) {
    const double len = (spec.waypoints[s] - spec.waypoints[s - 1]).norm();
    if (len <= 0.0) throw ConfigError("consecutive waypoints coincide");
    cum.push_back(cum.back() + len);
  }
  const double total = cum.back();
  const double step = spec.speed / spec.frame_rate;
  // Tolerance absorbs floating-point error when total is a multiple of step.
  const auto count = static_cast<std::size_t>(std::floor(total / step + 1e-9)) + 1;

  std::vector<PoseState> poses;
  poses.reserve(count);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double s = std::min(k * step, total);
    while (seg + 2 < cum.size() && s >= cum[seg + 1] - 1e-12) ++seg;
    const Eigen::Vector2d a = spec.waypoints[seg], b = spec.waypoints[seg + 1];
    const Eigen::Vector2d dir = (b - a) / (cum[seg + 1] - cum[seg]);
    const Eigen::Vector2d xy = a + dir * (s - cum[seg]);
    PoseState x;
    x.p = Vec3(xy.x(), xy.y(), spec.plane_height);
    x.phi = Vec3(0.0, 0.0, std::atan2(dir.y(), dir.x()));
    poses.push_back(x);
  }
  return poses;
}

std::vector<RigidTransform> simulate_odometry(std::span<const PoseState> poses, const NoiseConfig& noise, Rng& rng) {
  noise.validate();
  std::vector<RigidTransform> inc;
  if (poses.size() < 2) return inc;
  inc.reserve(poses.size() - 1);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    const RigidTransform rel = compose(inverse(poses[k - 1].transform()), poses[k].transform());
    const double len = rel.translation.norm();
    const double nx = rng.normal(), ny = rng.normal(), nyaw = rng.normal();
    RigidTransform noisy = rel;
    noisy.translation += Vec3(nx, ny, 0.0) * (noise.odom_trans_sigma * len);
    noisy.rotation = rel.rotation * exp_so3(Vec3(0.0, 0.0, nyaw * noise.odom_rot_sigma * len));
    inc.push_back(noisy);
  }
  return inc;
}

RigidTransform sensor_world_pose(const PoseState& x, const SensorExtrinsics& e) {
  const Rotation3 r = x.rotation();
  return {r * e.rotation, r * e.translation + x.p};
}

std::vector<Vec3> simulate_readings(const FieldModel& field, const PoseState& gt_pose,
                                    std::span<const SensorExtrinsics> extrinsics,
                                    std::span<const CalibrationParams> calib_true, double meas_sigma, Rng& rng) {
  if (extrinsics.size() != calib_true.size()) throw ConfigError("rig and calibration sizes differ");
  std::vector<Vec3> out;
  out.reserve(extrinsics.size());
  for (std::size_t i = 0; i < extrinsics.size(); ++i) {
    calib_true[i].validate();
    const RigidTransform s = sensor_world_pose(gt_pose, extrinsics[i]);
    const Vec3 env = s.rotation.transpose() * sample_field(field, s.translation);
    Vec3 reading = calib_true[i].c.inverse() * (env - calib_true[i].b);
    for (int a = 0; a < 3; ++a) reading[a] += meas_sigma * rng.normal();
    out.push_back(reading);
  }
  return out;
}

std::vector<DatasetFrame> simulate_dataset(const FieldModel& field, std::span<const PoseState> poses,
                                           double frame_rate, std::span<const SensorExtrinsics> extrinsics,
                                           std::span<const CalibrationParams> calib_true, const NoiseConfig& noise) {
  noise.validate();
  if (!(frame_rate > 0.0)) throw ConfigError("frame rate must be > 0");
  Rng rng(noise.rng_seed);
  const auto inc = simulate_odometry(poses, noise, rng);
  std::vector<DatasetFrame> frames;
  frames.reserve(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    DatasetFrame f;
    f.t = static_cast<double>(k) / frame_rate;
    if (k > 0) {
      f.odom_dq = inc[k - 1].rotation.quaternion();
      f.odom_dp = inc[k - 1].translation;
    }
    f.gt_p = poses[k].p;
    f.gt_q = poses[k].rotation().quaternion();
    f.readings = simulate_readings(field, poses[k], extrinsics, calib_true, noise.meas_sigma, rng);
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_dataset(std::span<const DatasetFrame> frames, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open dataset for writing: " + path.string());
  const std::size_t n = frames.empty() ? 0 : frames.front().readings.size();
  for (const auto& f : frames) {
    if (f.readings.size() != n) throw FormatError("frames disagree on sensor count");
    json readings = json::array();
    for (const auto& r : f.readings) {
      readings.push_back(r.x());
      readings.push_back(r.y());
      readings.push_back(r.z());
    }
    json j = {{"t", f.t},
              {"dq", quat_json(f.odom_dq)},
              {"dp", {f.odom_dp.x(), f.odom_dp.y(), f.odom_dp.z()}},
              {"readings", std::move(readings)},
              {"gt_p", {f.gt_p.x(), f.gt_p.y(), f.gt_p.z()}},
              {"gt_q", quat_json(f.gt_q)}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing dataset: " + path.string());
}

std::vector<DatasetFrame> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::vector<DatasetFrame> frames;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> sensors;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("t") || !j["t"].is_number()) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": missing numeric 't'");
    }
    DatasetFrame f;
    f.t = j["t"].get<double>();
    f.odom_dq = quat_from(numbers(j, "dq", 4, lineno), lineno);
    const auto dp = numbers(j, "dp", 3, lineno);
    f.odom_dp = Vec3(dp[0], dp[1], dp[2]);
    const auto rd = numbers(j, "readings", 0, lineno);
    if (rd.size() % 3 != 0 || rd.empty()) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": readings must be N x 3");
    }
    if (!sensors) sensors = rd.size() / 3;
    if (rd.size() / 3 != *sensors) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": frame has " + std::to_string(rd.size() / 3) +
                        " sensors, dataset has " + std::to_string(*sensors));
    }
    for (std::size_t k = 0; k < rd.size(); k += 3) f.readings.emplace_back(rd[k], rd[k + 1], rd[k + 2]);
    const auto gp = numbers(j, "gt_p", 3, lineno);
    f.gt_p = Vec3(gp[0], gp[1], gp[2]);
    f.gt_q = quat_from(numbers(j, "gt_q", 4, lineno), lineno);
    if (!frames.empty() && !(f.t > frames.back().t)) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": timestamps are not increasing");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace roslac
