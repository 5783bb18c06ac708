#include "roslac/cli/app.hpp"

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "roslac/cli/pipeline.hpp"
#include "roslac/error.hpp"

namespace roslac::cli {

namespace {

struct Args {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool no_calib = false;
  bool no_window = false;
  bool precalibrated = false;
  std::optional<double> window_m;
  std::optional<std::string> state_mask;
};

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Override the scenario seed");
}

void add_run_flags(CLI::App* cmd, Args& a) {
  cmd->add_flag("--no-calib", a.no_calib, "Keep θ at identity (no calibration)");
  auto* nw = cmd->add_flag("--no-window", a.no_window, "Single-frame window");
  cmd->add_flag("--precalibrated", a.precalibrated, "Apply the true calibration to readings first");
  cmd->add_option("--window-m", a.window_m, "Window horizon in metres")->excludes(nw);
  cmd->add_option("--state-mask", a.state_mask, "Pose dimensions to estimate")
      ->check(CLI::IsMember({"xy", "xyyaw", "full"}));
}

ScenarioConfig load(const Args& a) {
  ScenarioConfig c = load_config(a.config);
  if (a.seed) c.seed = *a.seed;
  return c;
}

RunOptions options(const Args& a) {
  RunOptions o;
  o.no_calib = a.no_calib;
  o.no_window = a.no_window;
  o.precalibrated = a.precalibrated;
  o.window_m = a.window_m;
  if (a.state_mask) o.state_mask = StateMask::parse(*a.state_mask);
  return o;
}

void print_report(const Report& r) { std::cout << r.to_json().dump(2) << '\n'; }

}  // namespace

int main(int argc, const char* const* argv) {
  CLI::App app{"Simulation, mapping and joint localization/calibration for magnetometer arrays"};
  app.require_subcommand(1);
  Args a;

  auto* world = app.add_subcommand("gen-world", "Rasterize the true field into world.magmap");
  add_common(world, a);
  auto* dataset = app.add_subcommand("gen-dataset", "Simulate dataset.jsonl, fingerprints.csv and rig.json");
  add_common(dataset, a);
  auto* build = app.add_subcommand("build-map", "Build map.magmap from the fingerprints");
  add_common(build, a);
  auto* runc = app.add_subcommand("run", "Run the estimator on dataset.jsonl and map.magmap");
  add_common(runc, a);
  add_run_flags(runc, a);
  auto* evalc = app.add_subcommand("eval", "Write report.json for the last run");
  add_common(evalc, a);
  auto* pipe = app.add_subcommand("pipeline", "gen-world, gen-dataset, build-map, run and eval in sequence");
  add_common(pipe, a);
  add_run_flags(pipe, a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ScenarioConfig config = load(a);
    if (world->parsed()) {
      cmd_gen_world(config, a.out);
    } else if (dataset->parsed()) {
      cmd_gen_dataset(config, a.out);
    } else if (build->parsed()) {
      cmd_build_map(config, a.out);
    } else if (runc->parsed()) {
      cmd_run(config, a.out, options(a));
    } else if (evalc->parsed()) {
      print_report(cmd_eval(config, a.out));
    } else if (pipe->parsed()) {
      print_report(cmd_pipeline(config, a.out, options(a)));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace roslac::cli
