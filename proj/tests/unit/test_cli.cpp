#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "roslac/cli/app.hpp"
#include "roslac/cli/pipeline.hpp"
#include "test_util.hpp"

namespace roslac::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using test::TempDir;

const fs::path kConfigs = fs::path(ROSLAC_SOURCE_DIR) / "configs";

json minimal_json() {
  std::ifstream in(kConfigs / "minimal.json");
  return json::parse(in);
}

fs::path write_config(const TempDir& dir, const json& j, const std::string& name = "cfg.json") {
  std::ofstream(dir / name) << j.dump(2);
  return dir / name;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "roslac");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

TEST(Config, MaterializedRoundTrip) {
  const ScenarioConfig c = parse_config(minimal_json());
  const json once = to_json(c);
  EXPECT_EQ(to_json(parse_config(once)), once);
  EXPECT_EQ(c.rig.size(), 8u);
  EXPECT_EQ(c.solver.window_m, 0.5);
  EXPECT_TRUE(once.contains("solver"));
}

TEST(Config, UnknownKeysAndBadValuesAreConfigErrors) {
  json j = minimal_json();
  j["grid"]["resoltion"] = 0.2;
  try {
    parse_config(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("resoltion"), std::string::npos);
  }
  j = minimal_json();
  j["solver"] = {{"state_mask", "xyz"}};
  EXPECT_THROW(parse_config(j), ConfigError);
  j = minimal_json();
  j["grid"]["nx"] = 1;
  EXPECT_THROW(parse_config(j), ConfigError);
  j = minimal_json();
  j["trajectory"]["waypoints"] = {{1.0, 1.5}, {40.0, 1.5}};
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Cli, ExitCodesForBadInvocations) {
  TempDir dir("cli");
  EXPECT_EQ(cli({"gen-world", "--config", (dir / "missing.json").string()}), kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}), kExitConfig);
  EXPECT_EQ(cli({"--help"}), kExitOk);

  json inside = minimal_json();
  inside["world"]["dipoles"][0]["position"] = {2.0, 1.5, 0.0};
  const fs::path out = dir / "out";
  EXPECT_EQ(cli({"gen-world", "--config", write_config(dir, inside).string(), "--out", out.string()}), kExitConfig);
  EXPECT_FALSE(fs::exists(out));

  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(cli({"gen-world", "--config", (dir / "broken.json").string()}), kExitConfig);

  const std::string cfg = write_config(dir, minimal_json()).string();
  EXPECT_EQ(cli({"run", "--config", cfg, "--no-window", "--window-m", "1.0"}), kExitConfig);
  EXPECT_EQ(cli({"run", "--config", cfg, "--state-mask", "xyz"}), kExitConfig);
}

TEST(Cli, GenWorldIsLoadableAndDeterministic) {
  TempDir dir("cli");
  const std::string cfg = write_config(dir, minimal_json()).string();
  ASSERT_EQ(cli({"gen-world", "--config", cfg, "--out", (dir / "a").string()}), kExitOk);
  ASSERT_EQ(cli({"gen-world", "--config", cfg, "--out", (dir / "b").string()}), kExitOk);
  const MagneticGridMap map = load_map(dir / "a" / files::kWorldMap);
  EXPECT_EQ(map.spec().nx, 41u);
  EXPECT_EQ(slurp(dir / "a" / files::kWorldMap), slurp(dir / "b" / files::kWorldMap));
  EXPECT_TRUE(fs::exists(dir / "a" / files::kResolvedConfig));
  EXPECT_EQ(parse_config(json::parse(slurp(dir / "a" / files::kResolvedConfig))).seed, 1u);
}

TEST(Cli, GenDatasetCountsAndReseeding) {
  TempDir dir("cli");
  json j = minimal_json();
  j["trajectory"]["waypoints"] = {{1.0, 1.5}, {1.3, 1.5}, {1.3, 1.65}};  // 0.45 m at 0.05 m per frame
  const std::string cfg = write_config(dir, j).string();
  ASSERT_EQ(cli({"gen-dataset", "--config", cfg, "--out", (dir / "a").string()}), kExitOk);
  ASSERT_EQ(cli({"gen-dataset", "--config", cfg, "--out", (dir / "b").string(), "--seed", "99"}), kExitOk);
  EXPECT_EQ(line_count(dir / "a" / files::kDataset), 10u);

  // 4.0 m × 3.0 m at 0.25 m spacing: 17 × 13 survey points.
  EXPECT_EQ(line_count(dir / "a" / files::kFingerprints), 1u + 17 * 13);
  const ScenarioConfig c = parse_config(j);
  EXPECT_EQ(survey_positions(c.grid, c.survey).size(), 17u * 13u);

  const auto a = read_dataset(dir / "a" / files::kDataset);
  const auto b = read_dataset(dir / "b" / files::kDataset);
  ASSERT_EQ(a.size(), b.size());
  bool readings_differ = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].gt_p, b[k].gt_p);
    EXPECT_EQ(a[k].gt_q.coeffs(), b[k].gt_q.coeffs());
    EXPECT_EQ(a[k].t, b[k].t);
    readings_differ |= a[k].readings != b[k].readings;
  }
  EXPECT_TRUE(readings_differ);
}

TEST(SurveyPositions, SerpentineCoverage) {
  GridSpec g;
  g.resolution = 0.1;
  g.nx = 11;
  g.ny = 6;
  SurveySpec s;
  s.spacing = 0.5;
  const auto pts = survey_positions(g, s);
  ASSERT_EQ(pts.size(), 3u * 2u);
  EXPECT_EQ(pts[0].x(), 0.0);
  EXPECT_NEAR(pts[2].x(), 1.0, 1e-12);
  EXPECT_NEAR(pts[3].x(), 1.0, 1e-12);  // second row runs back
  EXPECT_NEAR(pts[3].y(), 0.5, 1e-12);
}

TEST(Cli, BuildMapMatchesGprAndRejectsEmptySurvey) {
  TempDir dir("cli");
  const json j = minimal_json();
  const std::string cfg = write_config(dir, j).string();
  const std::string out = (dir / "o").string();
  EXPECT_EQ(cli({"build-map", "--config", cfg, "--out", out}), kExitRuntime);  // no fingerprints yet
  ASSERT_EQ(cli({"gen-dataset", "--config", cfg, "--out", out}), kExitOk);
  ASSERT_EQ(cli({"build-map", "--config", cfg, "--out", out}), kExitOk);

  const ScenarioConfig c = parse_config(j);
  const auto fps = read_fingerprints(dir / "o" / files::kFingerprints);
  const GprModel gpr = GprModel::fit(fps, c.map.kernel);
  const MagneticGridMap map = load_map(dir / "o" / files::kMap);
  for (std::uint32_t jj = 0; jj < map.spec().ny; jj += 7)
    for (std::uint32_t i = 0; i < map.spec().nx; i += 5)
      EXPECT_EQ(map.node(i, jj), gpr.predict(map.spec().node_position(i, jj)));

  std::ofstream(dir / "o" / files::kFingerprints) << "x,y,z,bx,by,bz\n";
  EXPECT_EQ(cli({"build-map", "--config", cfg, "--out", out}), kExitConfig);
}

TEST(Cli, PipelineOutputsAndEvalAgree) {
  TempDir dir("cli");
  const std::string cfg = write_config(dir, minimal_json()).string();
  const fs::path out = dir / "o";
  ASSERT_EQ(cli({"pipeline", "--config", cfg, "--out", out.string()}), kExitOk);
  const fs::path run = out / files::kRunDir;
  for (const fs::path& f : {out / files::kWorldMap, out / files::kField, out / files::kDataset, out / files::kMap,
                            out / files::kRig, run / files::kPoses, run / files::kTheta, run / files::kSummary,
                            out / files::kReport}) {
    EXPECT_TRUE(fs::exists(f)) << f;
  }
  EXPECT_EQ(line_count(run / files::kPoses), 12u);
  EXPECT_EQ(line_count(run / files::kTheta), 1u + 11 * 8);
  const json report = json::parse(slurp(out / files::kReport));
  const json summary = json::parse(slurp(run / files::kSummary));
  EXPECT_EQ(report.at("ate_m"), summary.at("ate_m"));
  EXPECT_EQ(report.at("frames"), 11);
  EXPECT_EQ(report.at("calib_error_uT").at("per_sensor").size(), 8u);
  EXPECT_LT(report.at("ate_m").get<double>(), 0.1);

  // The file-based result matches the in-memory evaluation.
  const ScenarioConfig c = parse_config(minimal_json());
  const RunResult mem = run_scenario(c);
  EXPECT_NEAR(mem.report.ate_m, report.at("ate_m").get<double>(), 1e-9);
  EXPECT_NEAR(mem.report.calib_error_mean, report.at("calib_error_uT").at("mean").get<double>(), 1e-9);
}

TEST(Cli, EvalOfGroundTruthIsZero) {
  const ScenarioConfig c = parse_config(minimal_json());
  const SimulatedData data = simulate(c);
  std::vector<FrameResult> frames;
  for (const auto& f : data.dataset) frames.push_back({f.t, f.gt_pose()});
  std::vector<Vec12> thetas;
  for (const auto& t : data.truth) thetas.push_back(t.theta());
  const Report r = evaluate(data.dataset, frames, thetas, data.truth, c.trajectory.frame_rate);
  EXPECT_LT(r.ate_m, 1e-12);
  EXPECT_EQ(r.calib_error_mean, 0.0);
  EXPECT_EQ(r.classes.well, data.dataset.size());
  EXPECT_GT(r.initial_calib_error_mean, 0.0);
  EXPECT_FALSE(r.to_json(false).contains("mean_frame_ms"));
  EXPECT_TRUE(r.to_json(true).contains("mean_frame_ms"));
}

TEST(Cli, RunRejectsRegionMismatch) {
  TempDir dir("cli");
  const std::string cfg = write_config(dir, minimal_json()).string();
  const fs::path out = dir / "o";
  ASSERT_EQ(cli({"pipeline", "--config", cfg, "--out", out.string()}), kExitOk);
  auto data = read_dataset(out / files::kDataset);
  for (auto& f : data) f.gt_p.x() += 100.0;
  write_dataset(data, out / files::kDataset);
  EXPECT_NE(cli({"run", "--config", cfg, "--out", out.string()}), kExitOk);
}

TEST(Cli, PipelineIsDeterministic) {
  TempDir dir("cli");
  const std::string cfg = write_config(dir, minimal_json()).string();
  ASSERT_EQ(cli({"pipeline", "--config", cfg, "--out", (dir / "a").string()}), kExitOk);
  ASSERT_EQ(cli({"pipeline", "--config", cfg, "--out", (dir / "b").string()}), kExitOk);
  for (const char* f : {files::kWorldMap, files::kDataset, files::kFingerprints, files::kMap, files::kRig,
                        files::kResolvedConfig}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "a" / files::kRunDir / files::kTheta), slurp(dir / "b" / files::kRunDir / files::kTheta));
  json ra = json::parse(slurp(dir / "a" / files::kReport)), rb = json::parse(slurp(dir / "b" / files::kReport));
  ra.erase("mean_frame_ms");
  rb.erase("mean_frame_ms");
  EXPECT_EQ(ra, rb);
}

TEST(Cli, AblationFlagsReachTheSolver) {
  RunOptions o;
  o.no_window = true;
  o.no_calib = true;
  o.state_mask = StateMask::full();
  const SolverConfig s = effective_solver(SolverConfig{}, o);
  EXPECT_EQ(s.window_m, 0.0);
  EXPECT_FALSE(s.enable_calibration);
  EXPECT_EQ(s.state_mask, StateMask::full());
  RunOptions w;
  w.window_m = 1.25;
  EXPECT_EQ(effective_solver(SolverConfig{}, w).window_m, 1.25);
}

}  // namespace
}  // namespace roslac::cli
