#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roslac/estimator.hpp"
#include "roslac/gpr.hpp"
#include "roslac/magmap.hpp"
#include "roslac/sim.hpp"

namespace roslac::cli {

enum class DistortionMode { kIdentity, kRandom, kExplicit };
enum class MapSource { kGpr, kTruth };

struct DistortionSpec {
  DistortionMode mode = DistortionMode::kRandom;
  DistortionRanges ranges;
  std::vector<CalibrationParams> params;  ///< kExplicit only, one per sensor
};

/// Coverage survey used to collect fingerprints for the map.
struct SurveySpec {
  double spacing = 0.3;     ///< m between samples and between rows
  double margin = 0.0;      ///< m kept clear of the grid border
  double meas_sigma = 0.2;  ///< µT per axis
};

struct MapSpec {
  MapSource source = MapSource::kGpr;
  KernelParams kernel;
};

/// Everything a pipeline run depends on. All randomness is derived from
/// `seed`: distortions, dataset noise and survey noise use separate streams.
struct ScenarioConfig {
  std::uint64_t seed = 1;
  FieldModel field;
  GridSpec grid;
  std::vector<SensorExtrinsics> rig;
  DistortionSpec distortion;
  NoiseConfig noise;  ///< rng_seed is ignored; the dataset stream is derived from `seed`
  TrajectorySpec trajectory;
  SurveySpec survey;
  MapSpec map;
  SolverConfig solver;

  void validate() const;
};

namespace seed_stream {
inline constexpr std::uint64_t kDistortion = 1;
inline constexpr std::uint64_t kDataset = 2;
inline constexpr std::uint64_t kSurvey = 3;
}  // namespace seed_stream

/// Parses and validates; missing keys take defaults, unknown keys are
/// rejected. Throws ConfigError.
ScenarioConfig parse_config(const nlohmann::json& j);
ScenarioConfig load_config(const std::filesystem::path& path);

/// Fully materialized form (every default written out); parse_config() of the
/// result reproduces the config.
nlohmann::json to_json(const ScenarioConfig& config);

nlohmann::json to_json(const FieldModel& field);
nlohmann::json to_json(const SolverConfig& solver);
nlohmann::json rig_to_json(const std::vector<SensorExtrinsics>& rig, const std::vector<CalibrationParams>& truth);

struct RigFile {
  std::vector<SensorExtrinsics> extrinsics;
  std::vector<CalibrationParams> truth;
};
RigFile parse_rig(const nlohmann::json& j);

}  // namespace roslac::cli
