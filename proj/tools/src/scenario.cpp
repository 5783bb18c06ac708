#include "roslac/cli/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "roslac/error.hpp"

namespace roslac::cli {

using nlohmann::json;

namespace {

// Object reader that remembers which keys were consumed so that unknown keys
// can be reported with their path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(key, "is required");
    return j_.at(key);
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  double number(const std::string& key, std::optional<double> def = {}) {
    const json* v = find(key);
    if (!v) {
      if (!def) fail(key, "is required");
      return *def;
    }
    if (!v->is_number()) fail(key, "must be a number");
    return v->get<double>();
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> def = {}) {
    const json* v = find(key);
    if (!v) {
      if (!def) fail(key, "is required");
      return *def;
    }
    if (!v->is_number_integer()) fail(key, "must be an integer");
    return v->get<std::int64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(key, "must be a boolean");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) fail(key, "must be a string");
    return v->get<std::string>();
  }

  Eigen::VectorXd vector(const std::string& key, int n) { return to_vector(at(key), n, child(key)); }

  std::optional<Eigen::VectorXd> vector_opt(const std::string& key, int n) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return to_vector(*v, n, child(key));
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(child(k) + ": unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError((key.empty() ? (path_.empty() ? std::string("config") : path_) : child(key)) + ": " + msg);
  }

  static Eigen::VectorXd to_vector(const json& v, int n, const std::string& where) {
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      throw ConfigError(where + ": must be an array of " + std::to_string(n) + " numbers");
    }
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
      if (!v[i].is_number()) throw ConfigError(where + ": must be an array of " + std::to_string(n) + " numbers");
      out[i] = v[i].get<double>();
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json quat_json(const Eigen::Quaterniond& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

Rotation3 rotation_from(const Eigen::VectorXd& wxyz, const std::string& where) {
  const Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  if (std::abs(q.norm() - 1.0) > 1e-6) throw ConfigError(where + ": quaternion must have unit norm");
  return Rotation3::from_quaternion(q);
}

FieldModel parse_field(const json& j, const std::string& path) {
  Reader r(j, path);
  FieldModel f;
  f.earth_field = r.vector("earth_field", 3);
  if (const json* d = r.find("dipoles")) {
    if (!d->is_array()) r.fail("dipoles", "must be an array");
    for (std::size_t i = 0; i < d->size(); ++i) {
      Reader dr((*d)[i], r.child("dipoles") + "[" + std::to_string(i) + "]");
      f.dipoles.push_back({dr.vector("position", 3), dr.vector("moment", 3)});
      dr.finish();
    }
  }
  r.finish();
  return f;
}

GridSpec parse_grid(const json& j, const std::string& path) {
  Reader r(j, path);
  GridSpec g;
  g.origin = r.vector_opt("origin", 2).value_or(Eigen::VectorXd::Zero(2));
  g.resolution = r.number("resolution", 0.1);
  const auto nx = r.integer("nx"), ny = r.integer("ny");
  if (nx < 2 || ny < 2 || nx > 1'000'000 || ny > 1'000'000) r.fail("nx", "nx and ny must be in [2, 1e6]");
  g.nx = static_cast<std::uint32_t>(nx);
  g.ny = static_cast<std::uint32_t>(ny);
  g.plane_height = r.number("plane_height", 0.0);
  r.finish();
  g.validate();
  return g;
}

std::vector<SensorExtrinsics> parse_sensors(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": must be a non-empty array");
  std::vector<SensorExtrinsics> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = path + "[" + std::to_string(i) + "]";
    Reader r(j[i], where);
    SensorExtrinsics e;
    e.translation = r.vector("translation", 3);
    if (auto q = r.vector_opt("quaternion", 4)) e.rotation = rotation_from(*q, where + ".quaternion");
    r.finish();
    e.validate();
    out.push_back(e);
  }
  return out;
}

std::vector<SensorExtrinsics> parse_rig_spec(const json& j, const std::string& path) {
  Reader r(j, path);
  std::vector<SensorExtrinsics> rig;
  const std::string preset = r.string("preset", "");
  const json* sensors = r.find("sensors");
  if (!preset.empty() && sensors) r.fail("", "give either preset or sensors, not both");
  if (sensors) {
    rig = parse_sensors(*sensors, r.child("sensors"));
  } else if (preset.empty() || preset == "default") {
    rig = default_rig();
  } else {
    r.fail("preset", "unknown preset '" + preset + "'");
  }
  r.finish();
  return rig;
}

CalibrationParams parse_calibration(const json& j, const std::string& path) {
  Reader r(j, path);
  CalibrationParams p;
  const Eigen::VectorXd c = r.vector("c", 9);
  for (int row = 0; row < 3; ++row) p.c.row(row) = c.segment<3>(3 * row).transpose();
  p.b = r.vector("b", 3);
  r.finish();
  p.validate();
  return p;
}

std::pair<double, double> parse_range(Reader& r, const std::string& key, std::pair<double, double> def) {
  auto v = r.vector_opt(key, 2);
  if (!v) return def;
  if (!((*v)[0] <= (*v)[1])) r.fail(key, "range must be [lo, hi] with lo <= hi");
  return {(*v)[0], (*v)[1]};
}

DistortionSpec parse_distortion(const json& j, const std::string& path, std::size_t sensors) {
  Reader r(j, path);
  DistortionSpec d;
  const std::string mode = r.string("mode", "random");
  if (mode == "identity") {
    d.mode = DistortionMode::kIdentity;
  } else if (mode == "random") {
    d.mode = DistortionMode::kRandom;
  } else if (mode == "explicit") {
    d.mode = DistortionMode::kExplicit;
  } else {
    r.fail("mode", "must be identity, random or explicit");
  }
  if (const json* rj = r.find("ranges")) {
    Reader rr(*rj, r.child("ranges"));
    std::tie(d.ranges.diag_lo, d.ranges.diag_hi) = parse_range(rr, "diag", {d.ranges.diag_lo, d.ranges.diag_hi});
    std::tie(d.ranges.offdiag_lo, d.ranges.offdiag_hi) =
        parse_range(rr, "offdiag", {d.ranges.offdiag_lo, d.ranges.offdiag_hi});
    std::tie(d.ranges.bias_lo, d.ranges.bias_hi) = parse_range(rr, "bias", {d.ranges.bias_lo, d.ranges.bias_hi});
    rr.finish();
    if (d.ranges.diag_lo <= 0.0) rr.fail("diag", "diagonal range must be positive");
  }
  if (const json* pj = r.find("params")) {
    if (d.mode != DistortionMode::kExplicit) r.fail("params", "only allowed with mode explicit");
    if (!pj->is_array()) r.fail("params", "must be an array");
    for (std::size_t i = 0; i < pj->size(); ++i) {
      d.params.push_back(parse_calibration((*pj)[i], r.child("params") + "[" + std::to_string(i) + "]"));
    }
  }
  if (d.mode == DistortionMode::kExplicit && d.params.size() != sensors) {
    r.fail("params", "needs one entry per sensor (" + std::to_string(sensors) + ")");
  }
  r.finish();
  return d;
}

NoiseConfig parse_noise(const json& j, const std::string& path) {
  Reader r(j, path);
  NoiseConfig n;
  n.meas_sigma = r.number("meas_sigma", n.meas_sigma);
  n.odom_trans_sigma = r.number("odom_trans_sigma", n.odom_trans_sigma);
  n.odom_rot_sigma = r.number("odom_rot_sigma", n.odom_rot_sigma);
  r.finish();
  n.validate();
  return n;
}

TrajectorySpec parse_trajectory(const json& j, const std::string& path) {
  Reader r(j, path);
  TrajectorySpec t;
  const json& w = r.at("waypoints");
  if (!w.is_array() || w.size() < 2) r.fail("waypoints", "needs at least two [x, y] points");
  for (std::size_t i = 0; i < w.size(); ++i) {
    t.waypoints.push_back(Reader::to_vector(w[i], 2, r.child("waypoints") + "[" + std::to_string(i) + "]"));
  }
  t.speed = r.number("speed", t.speed);
  t.frame_rate = r.number("frame_rate", t.frame_rate);
  r.finish();
  if (!(t.speed > 0.0)) r.fail("speed", "must be > 0");
  if (!(t.frame_rate > 0.0)) r.fail("frame_rate", "must be > 0");
  return t;
}

SurveySpec parse_survey(const json& j, const std::string& path) {
  Reader r(j, path);
  SurveySpec s;
  s.spacing = r.number("spacing", s.spacing);
  s.margin = r.number("margin", s.margin);
  s.meas_sigma = r.number("meas_sigma", s.meas_sigma);
  r.finish();
  if (!(s.spacing > 0.0)) r.fail("spacing", "must be > 0");
  if (!(s.margin >= 0.0)) r.fail("margin", "must be >= 0");
  if (!(s.meas_sigma >= 0.0)) r.fail("meas_sigma", "must be >= 0");
  return s;
}

MapSpec parse_map(const json& j, const std::string& path) {
  Reader r(j, path);
  MapSpec m;
  const std::string source = r.string("source", "gpr");
  if (source == "gpr") {
    m.source = MapSource::kGpr;
  } else if (source == "truth") {
    m.source = MapSource::kTruth;
  } else {
    r.fail("source", "must be gpr or truth");
  }
  if (const json* k = r.find("kernel")) {
    Reader kr(*k, r.child("kernel"));
    m.kernel.lengthscale = kr.number("lengthscale", m.kernel.lengthscale);
    m.kernel.signal_var = kr.number("signal_var", m.kernel.signal_var);
    m.kernel.noise_var = kr.number("noise_var", m.kernel.noise_var);
    kr.finish();
  }
  r.finish();
  m.kernel.validate();
  return m;
}

SolverConfig parse_solver(const json& j, const std::string& path) {
  Reader r(j, path);
  SolverConfig s;
  s.eta = r.number("eta", s.eta);
  s.lambda_reg = r.number("lambda_reg", s.lambda_reg);
  const std::string target = r.string("reg_target", "identity");
  if (target == "identity") {
    s.reg_target = RegTarget::kIdentity;
  } else if (target == "zero") {
    s.reg_target = RegTarget::kZero;
  } else {
    r.fail("reg_target", "must be identity or zero");
  }
  s.sgd_iters_per_round = static_cast<int>(r.integer("sgd_iters_per_round", s.sgd_iters_per_round));
  s.gn_iters_per_round = static_cast<int>(r.integer("gn_iters_per_round", s.gn_iters_per_round));
  s.max_alternations = static_cast<int>(r.integer("max_alternations", s.max_alternations));
  s.pose_tol_m = r.number("pose_tol_m", s.pose_tol_m);
  s.pose_tol_rad = r.number("pose_tol_rad", s.pose_tol_rad);
  s.calib_tol = r.number("calib_tol", s.calib_tol);
  if (const json* m = r.find("state_mask")) {
    if (m->is_string()) {
      s.state_mask = StateMask::parse(m->get<std::string>());
    } else if (m->is_array() && m->size() == 6) {
      for (int i = 0; i < 6; ++i) {
        if (!(*m)[i].is_boolean()) r.fail("state_mask", "must be xy, xyyaw, full or 6 booleans");
        s.state_mask.enabled[i] = (*m)[i].get<bool>();
      }
    } else {
      r.fail("state_mask", "must be xy, xyyaw, full or 6 booleans");
    }
  }
  s.gn_damping = r.number("gn_damping", s.gn_damping);
  if (const json* d = r.find("divergence_residual")) {
    if (!d->is_number()) r.fail("divergence_residual", "must be a number or null");
    s.divergence_residual = d->get<double>();
  }
  s.meas_sigma = r.number("meas_sigma", s.meas_sigma);
  s.rls_prior = r.number("rls_prior", s.rls_prior);
  s.window_m = r.number("window_m", s.window_m);
  s.enable_calibration = r.boolean("enable_calibration", s.enable_calibration);
  s.enable_localization = r.boolean("enable_localization", s.enable_localization);
  r.finish();
  s.validate();
  return s;
}

}  // namespace

void ScenarioConfig::validate() const {
  grid.validate();
  if (rig.empty()) throw ConfigError("rig must have at least one sensor");
  for (const auto& e : rig) e.validate();
  if (distortion.mode == DistortionMode::kExplicit && distortion.params.size() != rig.size()) {
    throw ConfigError("distortion.params needs one entry per sensor");
  }
  for (const auto& p : distortion.params) p.validate();
  noise.validate();
  if (trajectory.waypoints.size() < 2) throw ConfigError("trajectory needs at least two waypoints");
  generate_trajectory(trajectory, grid);  // checks speed, rate and that waypoints lie on the grid
  if (!(survey.spacing > 0.0)) throw ConfigError("survey.spacing must be > 0");
  map.kernel.validate();
  solver.validate();
}

ScenarioConfig parse_config(const json& j) {
  Reader r(j, "");
  ScenarioConfig c;
  const auto seed = r.integer("seed", 1);
  if (seed < 0) r.fail("seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.field = parse_field(r.at("world"), "world");
  c.grid = parse_grid(r.at("grid"), "grid");
  c.rig = r.has("rig") ? parse_rig_spec(*r.find("rig"), "rig") : (r.find("rig"), default_rig());
  c.distortion = r.has("distortion") ? parse_distortion(*r.find("distortion"), "distortion", c.rig.size())
                                     : (r.find("distortion"), DistortionSpec{});
  c.noise = r.has("noise") ? parse_noise(*r.find("noise"), "noise") : (r.find("noise"), NoiseConfig{});
  c.trajectory = parse_trajectory(r.at("trajectory"), "trajectory");
  c.trajectory.plane_height = c.grid.plane_height;
  c.survey = r.has("survey") ? parse_survey(*r.find("survey"), "survey") : (r.find("survey"), SurveySpec{});
  c.map = r.has("map") ? parse_map(*r.find("map"), "map") : (r.find("map"), MapSpec{});
  c.solver = r.has("solver") ? parse_solver(*r.find("solver"), "solver") : (r.find("solver"), SolverConfig{});
  r.finish();
  c.validate();
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const FieldModel& field) {
  json d = json::array();
  for (const auto& s : field.dipoles) d.push_back({{"position", vec_json(s.position)}, {"moment", vec_json(s.moment)}});
  return {{"earth_field", vec_json(field.earth_field)}, {"dipoles", d}};
}

json to_json(const SolverConfig& s) {
  json mask = json::array();
  for (bool b : s.state_mask.enabled) mask.push_back(b);
  return {
      {"eta", s.eta},
      {"lambda_reg", s.lambda_reg},
      {"reg_target", s.reg_target == RegTarget::kIdentity ? "identity" : "zero"},
      {"sgd_iters_per_round", s.sgd_iters_per_round},
      {"gn_iters_per_round", s.gn_iters_per_round},
      {"max_alternations", s.max_alternations},
      {"pose_tol_m", s.pose_tol_m},
      {"pose_tol_rad", s.pose_tol_rad},
      {"calib_tol", s.calib_tol},
      {"state_mask", mask},
      {"gn_damping", s.gn_damping},
      {"divergence_residual", s.divergence_residual ? json(*s.divergence_residual) : json(nullptr)},
      {"meas_sigma", s.meas_sigma},
      {"rls_prior", s.rls_prior},
      {"window_m", s.window_m},
      {"enable_calibration", s.enable_calibration},
      {"enable_localization", s.enable_localization},
  };
}

namespace {

json sensors_json(const std::vector<SensorExtrinsics>& rig) {
  json a = json::array();
  for (const auto& e : rig) {
    a.push_back({{"translation", vec_json(e.translation)}, {"quaternion", quat_json(e.rotation.quaternion())}});
  }
  return a;
}

json calibration_json(const CalibrationParams& p) {
  json c = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) c.push_back(p.c(r, k));
  }
  return {{"c", c}, {"b", vec_json(p.b)}};
}

}  // namespace

json to_json(const ScenarioConfig& c) {
  json wp = json::array();
  for (const auto& w : c.trajectory.waypoints) wp.push_back(vec_json(w));
  json distortion = {
      {"mode", c.distortion.mode == DistortionMode::kIdentity ? "identity"
               : c.distortion.mode == DistortionMode::kRandom ? "random"
                                                              : "explicit"},
      {"ranges",
       {{"diag", {c.distortion.ranges.diag_lo, c.distortion.ranges.diag_hi}},
        {"offdiag", {c.distortion.ranges.offdiag_lo, c.distortion.ranges.offdiag_hi}},
        {"bias", {c.distortion.ranges.bias_lo, c.distortion.ranges.bias_hi}}}},
  };
  if (c.distortion.mode == DistortionMode::kExplicit) {
    json p = json::array();
    for (const auto& d : c.distortion.params) p.push_back(calibration_json(d));
    distortion["params"] = p;
  }
  return {
      {"seed", c.seed},
      {"world", to_json(c.field)},
      {"grid",
       {{"origin", vec_json(c.grid.origin)},
        {"resolution", c.grid.resolution},
        {"nx", c.grid.nx},
        {"ny", c.grid.ny},
        {"plane_height", c.grid.plane_height}}},
      {"rig", {{"sensors", sensors_json(c.rig)}}},
      {"distortion", distortion},
      {"noise",
       {{"meas_sigma", c.noise.meas_sigma},
        {"odom_trans_sigma", c.noise.odom_trans_sigma},
        {"odom_rot_sigma", c.noise.odom_rot_sigma}}},
      {"trajectory", {{"waypoints", wp}, {"speed", c.trajectory.speed}, {"frame_rate", c.trajectory.frame_rate}}},
      {"survey", {{"spacing", c.survey.spacing}, {"margin", c.survey.margin}, {"meas_sigma", c.survey.meas_sigma}}},
      {"map",
       {{"source", c.map.source == MapSource::kGpr ? "gpr" : "truth"},
        {"kernel",
         {{"lengthscale", c.map.kernel.lengthscale},
          {"signal_var", c.map.kernel.signal_var},
          {"noise_var", c.map.kernel.noise_var}}}}},
      {"solver", to_json(c.solver)},
  };
}

json rig_to_json(const std::vector<SensorExtrinsics>& rig, const std::vector<CalibrationParams>& truth) {
  json t = json::array();
  for (const auto& p : truth) {
    json j = calibration_json(p);
    j["theta"] = vec_json(p.theta());
    t.push_back(j);
  }
  return {{"sensors", sensors_json(rig)}, {"truth", t}};
}

RigFile parse_rig(const json& j) {
  Reader r(j, "rig");
  RigFile f;
  f.extrinsics = parse_sensors(r.at("sensors"), "rig.sensors");
  const json& t = r.at("truth");
  if (!t.is_array() || t.size() != f.extrinsics.size()) r.fail("truth", "needs one entry per sensor");
  for (std::size_t i = 0; i < t.size(); ++i) {
    Reader tr(t[i], "rig.truth[" + std::to_string(i) + "]");
    CalibrationParams p;
    const Eigen::VectorXd c = tr.vector("c", 9);
    for (int row = 0; row < 3; ++row) p.c.row(row) = c.segment<3>(3 * row).transpose();
    p.b = tr.vector("b", 3);
    tr.find("theta");
    tr.finish();
    f.truth.push_back(p);
  }
  r.finish();
  return f;
}

}  // namespace roslac::cli
