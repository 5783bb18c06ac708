#include "roslac/cli/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "roslac/error.hpp"

namespace roslac::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_num(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("missing input " + path.string());
}

void prepare_out(const ScenarioConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_json(to_json(config), out / files::kResolvedConfig);
}

std::size_t steps(double span, double spacing) {
  return span < 0.0 ? 0 : static_cast<std::size_t>(std::floor(span / spacing + 1e-9)) + 1;
}

}  // namespace

MagneticGridMap world_map(const ScenarioConfig& config) { return rasterize(config.field, config.grid); }

std::vector<CalibrationParams> draw_distortions(const ScenarioConfig& config) {
  const std::size_t n = config.rig.size();
  switch (config.distortion.mode) {
    case DistortionMode::kIdentity:
      return std::vector<CalibrationParams>(n, CalibrationParams::identity());
    case DistortionMode::kExplicit:
      return config.distortion.params;
    case DistortionMode::kRandom:
      break;
  }
  Rng rng(derive_seed(config.seed, seed_stream::kDistortion));
  std::vector<CalibrationParams> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_distortion(rng, config.distortion.ranges));
  return out;
}

std::vector<Vec3> survey_positions(const GridSpec& grid, const SurveySpec& survey) {
  const double x0 = grid.origin.x() + survey.margin, y0 = grid.origin.y() + survey.margin;
  const std::size_t nx = steps(grid.x_max() - survey.margin - x0, survey.spacing);
  const std::size_t ny = steps(grid.y_max() - survey.margin - y0, survey.spacing);
  std::vector<Vec3> out;
  out.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t k = 0; k < nx; ++k) {
      const std::size_t i = j % 2 == 0 ? k : nx - 1 - k;
      out.emplace_back(x0 + survey.spacing * static_cast<double>(i), y0 + survey.spacing * static_cast<double>(j),
                       grid.plane_height);
    }
  }
  return out;
}

SimulatedData simulate(const ScenarioConfig& config) {
  SimulatedData d;
  d.truth = draw_distortions(config);
  const auto poses = generate_trajectory(config.trajectory, config.grid);
  NoiseConfig noise = config.noise;
  noise.rng_seed = derive_seed(config.seed, seed_stream::kDataset);
  d.dataset = simulate_dataset(config.field, poses, config.trajectory.frame_rate, config.rig, d.truth, noise);

  Rng rng(derive_seed(config.seed, seed_stream::kSurvey));
  for (const auto& p : survey_positions(config.grid, config.survey)) {
    Vec3 b = sample_field(config.field, p);
    for (int a = 0; a < 3; ++a) b[a] += config.survey.meas_sigma * rng.normal();
    d.fingerprints.push_back({p, b});
  }
  return d;
}

MagneticGridMap estimator_map(const ScenarioConfig& config, std::span<const Fingerprint> fingerprints) {
  if (config.map.source == MapSource::kTruth) return world_map(config);
  return build_grid(GprModel::fit(fingerprints, config.map.kernel), config.grid);
}

SolverConfig effective_solver(const SolverConfig& base, const RunOptions& options) {
  SolverConfig s = base;
  if (options.window_m) s.window_m = *options.window_m;
  if (options.no_window) s.window_m = 0.0;
  if (options.no_calib) s.enable_calibration = false;
  if (options.state_mask) s.state_mask = *options.state_mask;
  s.validate();
  return s;
}

std::vector<DatasetFrame> precalibrate(std::span<const DatasetFrame> dataset, std::span<const CalibrationParams> truth) {
  std::vector<DatasetFrame> out(dataset.begin(), dataset.end());
  for (auto& f : out) {
    if (f.readings.size() != truth.size()) throw ConfigError("calibration count does not match the dataset");
    for (std::size_t i = 0; i < truth.size(); ++i) f.readings[i] = truth[i].apply(f.readings[i]);
  }
  return out;
}

json Report::to_json(bool timing) const {
  json per_sensor = json::array();
  for (double e : calib_error) per_sensor.push_back(e);
  json elements = json::array();
  for (const auto& e : abs_theta_error) {
    json row = json::array();
    for (int k = 0; k < 12; ++k) row.push_back(e[k]);
    elements.push_back(row);
  }
  json j = {
      {"ate_m", ate_m},
      {"calib_error_uT", {{"per_sensor", per_sensor}, {"mean", calib_error_mean}, {"initial_mean", initial_calib_error_mean}}},
      {"theta_abs_error", elements},
      {"frame_class_counts", {{"well", classes.well}, {"poor", classes.poor}, {"failed", classes.failed}}},
      {"well_fraction", classes.well_fraction()},
      {"frames", frames},
      {"fallback_count", fallback_count},
  };
  if (timing) j["mean_frame_ms"] = mean_frame_ms;
  return j;
}

Report evaluate(std::span<const DatasetFrame> dataset, std::span<const FrameResult> frames,
                std::span<const Vec12> final_thetas, std::span<const CalibrationParams> truth, double frame_rate) {
  if (final_thetas.size() != truth.size()) throw ConfigError("θ count does not match the calibration truth");
  std::vector<TimedPose> est;
  est.reserve(frames.size());
  for (const auto& f : frames) est.push_back({f.t, f.x.transform()});
  const auto ref = reference_trajectory(dataset);
  const TrajectoryPair pair(est, ref, 0.5 / frame_rate);

  Report r;
  const RigidTransform s = align_rigid(pair);
  r.ate_m = ate(pair, s);
  std::vector<FrameClass> classes;
  for (double e : frame_errors(pair, s)) classes.push_back(classify(e));
  r.classes = count_classes(classes);
  r.frames = frames.size();

  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Vec12 t = truth[i].theta();
    r.calib_error.push_back(calib_error(final_thetas[i], t));
    r.abs_theta_error.push_back((final_thetas[i] - t).cwiseAbs());
    r.initial_calib_error_mean += calib_error(identity_theta(), t);
  }
  const double n = static_cast<double>(truth.size());
  r.calib_error_mean = std::accumulate(r.calib_error.begin(), r.calib_error.end(), 0.0) / n;
  r.initial_calib_error_mean /= n;

  for (const auto& f : frames) {
    r.fallback_count += f.fallback ? 1 : 0;
    r.mean_frame_ms += f.ms;
  }
  if (!frames.empty()) r.mean_frame_ms /= static_cast<double>(frames.size());
  return r;
}

RunResult run_on(const ScenarioConfig& config, const SimulatedData& data, const MagneticGridMap& map,
                 const RunOptions& options) {
  const SolverConfig solver = effective_solver(config.solver, options);
  RunResult r;
  std::vector<DatasetFrame> calibrated;
  std::span<const DatasetFrame> dataset = data.dataset;
  if (options.precalibrated) {
    calibrated = precalibrate(data.dataset, data.truth);
    dataset = calibrated;
    r.truth.assign(data.truth.size(), CalibrationParams::identity());
  } else {
    r.truth = data.truth;
  }
  r.output = run(dataset, map, config.rig, solver);
  r.report = evaluate(data.dataset, r.output.frames, r.output.final_thetas, r.truth, config.trajectory.frame_rate);
  return r;
}

RunResult run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  const SimulatedData data = simulate(config);
  const MagneticGridMap map = estimator_map(config, data.fingerprints);
  return run_on(config, data, map, options);
}

void cmd_gen_world(const ScenarioConfig& config, const fs::path& out) {
  const MagneticGridMap map = world_map(config);
  prepare_out(config, out);
  save_map(map, out / files::kWorldMap);
  write_json(to_json(config.field), out / files::kField);
}

void cmd_gen_dataset(const ScenarioConfig& config, const fs::path& out) {
  const SimulatedData data = simulate(config);
  prepare_out(config, out);
  write_dataset(data.dataset, out / files::kDataset);
  write_fingerprints(data.fingerprints, out / files::kFingerprints);
  write_json(rig_to_json(config.rig, data.truth), out / files::kRig);
}

void cmd_build_map(const ScenarioConfig& config, const fs::path& out) {
  MagneticGridMap map = [&] {
    if (config.map.source == MapSource::kTruth) return world_map(config);
    require_file(out / files::kFingerprints);
    const auto fps = read_fingerprints(out / files::kFingerprints);
    if (fps.empty()) throw ConfigError("fingerprint file has no samples");
    return estimator_map(config, fps);
  }();
  prepare_out(config, out);
  save_map(map, out / files::kMap);
}

void cmd_run(const ScenarioConfig& config, const fs::path& out, const RunOptions& options) {
  const SolverConfig solver = effective_solver(config.solver, options);
  for (const char* f : {files::kDataset, files::kMap, files::kRig}) require_file(out / f);
  const auto dataset = read_dataset(out / files::kDataset);
  const MagneticGridMap map = load_map(out / files::kMap);
  const RigFile rig = parse_rig(read_json(out / files::kRig));
  if (rig.extrinsics.size() != config.rig.size()) throw ConfigError("rig file does not match the config");

  const auto input = options.precalibrated ? precalibrate(dataset, rig.truth) : dataset;
  const EstimatorOutput result = run(input, map, rig.extrinsics, solver);

  const fs::path dir = out / files::kRunDir;
  fs::create_directories(dir);
  {
    std::ofstream f(dir / files::kPoses);
    f << "t,px,py,pz,yaw,fallback,iters,resid,ms\n";
    for (const auto& r : result.frames) {
      f << num(r.t) << ',' << num(r.x.p.x()) << ',' << num(r.x.p.y()) << ',' << num(r.x.p.z()) << ','
        << num(r.x.yaw()) << ',' << (r.fallback ? 1 : 0) << ',' << r.alternations << ',' << num(r.residual_norm)
        << ',' << num(r.ms) << '\n';
    }
    if (!f) throw IoError("failed writing poses");
  }
  {
    std::ofstream f(dir / files::kTheta);
    f << "t,sensor";
    for (int k = 0; k < 12; ++k) f << ",theta_" << k;
    f << '\n';
    for (std::size_t k = 0; k < result.frames.size(); ++k) {
      for (std::size_t i = 0; i < result.theta_trace[k].size(); ++i) {
        f << num(result.frames[k].t) << ',' << i;
        for (int e = 0; e < 12; ++e) f << ',' << num(result.theta_trace[k][i][e]);
        f << '\n';
      }
    }
    if (!f) throw IoError("failed writing theta trace");
  }
  json thetas = json::array();
  for (const auto& t : result.final_thetas) {
    json row = json::array();
    for (int e = 0; e < 12; ++e) row.push_back(t[e]);
    thetas.push_back(row);
  }
  int stalled = 0;
  for (const auto& r : result.frames) stalled += r.stalled ? 1 : 0;
  write_json({{"frames", result.frames.size()},
              {"fallback_count", result.fallback_count},
              {"stalled_frames", stalled},
              {"final_theta", thetas},
              {"options",
               {{"no_calib", options.no_calib},
                {"no_window", options.no_window},
                {"precalibrated", options.precalibrated}}},
              {"solver", to_json(solver)}},
             dir / files::kSummary);
}

Report cmd_eval(const ScenarioConfig& config, const fs::path& out) {
  const fs::path dir = out / files::kRunDir;
  for (const fs::path& f : {out / files::kDataset, out / files::kRig, dir / files::kPoses, dir / files::kSummary}) {
    require_file(f);
  }
  const auto dataset = read_dataset(out / files::kDataset);
  const RigFile rig = parse_rig(read_json(out / files::kRig));
  json summary = read_json(dir / files::kSummary);

  std::vector<FrameResult> frames;
  {
    std::ifstream f(dir / files::kPoses);
    std::string line;
    std::getline(f, line);
    if (line != "t,px,py,pz,yaw,fallback,iters,resid,ms") throw FormatError("poses.csv: unexpected header");
    std::size_t row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      const auto cols = split(line);
      const std::string where = "poses.csv:" + std::to_string(row);
      if (cols.size() != 9) throw FormatError(where + ": expected 9 columns");
      FrameResult r;
      r.t = parse_num(cols[0], where);
      const Vec3 p(parse_num(cols[1], where), parse_num(cols[2], where), parse_num(cols[3], where));
      r.x = {p, Vec3(0.0, 0.0, parse_num(cols[4], where))};
      r.fallback = parse_num(cols[5], where) != 0.0;
      r.alternations = static_cast<int>(parse_num(cols[6], where));
      r.residual_norm = parse_num(cols[7], where);
      r.ms = parse_num(cols[8], where);
      frames.push_back(r);
    }
  }

  std::vector<Vec12> thetas;
  try {
    for (const auto& row : summary.at("final_theta")) {
      Vec12 t;
      for (int e = 0; e < 12; ++e) t[e] = row.at(static_cast<std::size_t>(e)).get<double>();
      thetas.push_back(t);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("summary.json: ") + e.what());
  }
  const bool precal = summary.value("/options/precalibrated"_json_pointer, false);
  const std::vector<CalibrationParams> truth =
      precal ? std::vector<CalibrationParams>(rig.truth.size(), CalibrationParams::identity()) : rig.truth;

  const Report report = evaluate(dataset, frames, thetas, truth, config.trajectory.frame_rate);
  write_json(report.to_json(), out / files::kReport);
  summary["ate_m"] = report.ate_m;
  write_json(summary, dir / files::kSummary);
  return report;
}

Report cmd_pipeline(const ScenarioConfig& config, const fs::path& out, const RunOptions& options) {
  effective_solver(config.solver, options);
  world_map(config);
  cmd_gen_world(config, out);
  cmd_gen_dataset(config, out);
  cmd_build_map(config, out);
  cmd_run(config, out, options);
  return cmd_eval(config, out);
}

}  // namespace roslac::cli
