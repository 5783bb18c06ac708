#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "roslac/cli/scenario.hpp"
#include "roslac/estimator.hpp"
#include "roslac/eval.hpp"

namespace roslac::cli {

/// Ablation and override switches of the `run` step.
struct RunOptions {
  bool no_calib = false;       ///< θ fixed at identity
  bool no_window = false;      ///< single-frame window
  bool precalibrated = false;  ///< true θ applied to readings beforehand
  std::optional<double> window_m;
  std::optional<StateMask> state_mask;
};

struct SimulatedData {
  std::vector<DatasetFrame> dataset;
  std::vector<CalibrationParams> truth;
  std::vector<Fingerprint> fingerprints;
};

/// Ground-truth field rasterized on the scenario grid.
MagneticGridMap world_map(const ScenarioConfig& config);

std::vector<CalibrationParams> draw_distortions(const ScenarioConfig& config);

/// Lawnmower survey over the grid at the configured spacing, rows along x.
std::vector<Vec3> survey_positions(const GridSpec& grid, const SurveySpec& survey);

SimulatedData simulate(const ScenarioConfig& config);

/// Map used by the estimator: GPR over the fingerprints or the rasterized
/// truth, per config.map.source.
MagneticGridMap estimator_map(const ScenarioConfig& config, std::span<const Fingerprint> fingerprints);

SolverConfig effective_solver(const SolverConfig& base, const RunOptions& options);

/// Readings mapped through the true calibration, B = C·raw + b.
std::vector<DatasetFrame> precalibrate(std::span<const DatasetFrame> dataset, std::span<const CalibrationParams> truth);

struct Report {
  double ate_m = 0.0;
  std::vector<double> calib_error;  ///< per sensor, mixed-unit ℓ₂
  double calib_error_mean = 0.0;
  double initial_calib_error_mean = 0.0;  ///< identity vs truth
  std::vector<Vec12> abs_theta_error;     ///< per sensor, per element
  FrameClassCounts classes;
  std::size_t frames = 0;
  int fallback_count = 0;
  double mean_frame_ms = 0.0;

  /// `timing` false drops the wall-clock fields (for determinism checks).
  nlohmann::json to_json(bool timing = true) const;
};

Report evaluate(std::span<const DatasetFrame> dataset, std::span<const FrameResult> frames,
                std::span<const Vec12> final_thetas, std::span<const CalibrationParams> truth, double frame_rate);

struct RunResult {
  EstimatorOutput output;
  Report report;
  std::vector<CalibrationParams> truth;  ///< what θ is compared against
};

/// Simulate, build the map and run the estimator entirely in memory.
RunResult run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

/// Same, reusing simulated data and a map.
RunResult run_on(const ScenarioConfig& config, const SimulatedData& data, const MagneticGridMap& map,
                 const RunOptions& options = {});

// File-based steps. Each validates its inputs before creating any output.

void cmd_gen_world(const ScenarioConfig& config, const std::filesystem::path& out);
void cmd_gen_dataset(const ScenarioConfig& config, const std::filesystem::path& out);
void cmd_build_map(const ScenarioConfig& config, const std::filesystem::path& out);
void cmd_run(const ScenarioConfig& config, const std::filesystem::path& out, const RunOptions& options);
Report cmd_eval(const ScenarioConfig& config, const std::filesystem::path& out);
Report cmd_pipeline(const ScenarioConfig& config, const std::filesystem::path& out, const RunOptions& options);

namespace files {
inline constexpr const char* kResolvedConfig = "config.resolved.json";
inline constexpr const char* kWorldMap = "world.magmap";
inline constexpr const char* kField = "field.json";
inline constexpr const char* kDataset = "dataset.jsonl";
inline constexpr const char* kFingerprints = "fingerprints.csv";
inline constexpr const char* kRig = "rig.json";
inline constexpr const char* kMap = "map.magmap";
inline constexpr const char* kRunDir = "run";
inline constexpr const char* kPoses = "poses.csv";
inline constexpr const char* kTheta = "theta.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kReport = "report.json";
}  // namespace files

}  // namespace roslac::cli
