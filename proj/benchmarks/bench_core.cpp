#include <vector>

#include <benchmark/benchmark.h>

#include "roslac/estimator.hpp"
#include "roslac/gpr.hpp"

namespace {

using namespace roslac;

GridSpec bench_grid() {
  GridSpec g;
  g.resolution = 0.1;
  g.nx = 151;
  g.ny = 101;
  return g;
}

FieldModel bench_field() {
  return {Vec3(28, 4, -32),
          {{Vec3(2.5, 2.0, -3.5), Vec3(300, -200, 900)},
           {Vec3(7.6, 2.8, -3.5), Vec3(-600, 400, -800)},
           {Vec3(12.4, 2.2, -3.5), Vec3(400, 600, 700)},
           {Vec3(7.3, 7.8, -3.5), Vec3(600, -500, 600)}}};
}

const MagneticGridMap& bench_map() {
  static const MagneticGridMap map = rasterize(bench_field(), bench_grid());
  return map;
}

std::vector<DatasetFrame> bench_dataset() {
  TrajectorySpec spec;
  spec.waypoints = {{3.0, 3.0}, {12.0, 3.0}, {12.0, 6.0}};
  const auto poses = generate_trajectory(spec, bench_grid());
  Rng d(5);
  std::vector<CalibrationParams> calib;
  for (int i = 0; i < 8; ++i) calib.push_back(random_distortion(d));
  return simulate_dataset(bench_field(), poses, spec.frame_rate, default_rig(), calib, {});
}

void BM_Interpolate(benchmark::State& state) {
  const MagneticGridMap& map = bench_map();
  Rng rng(1);
  std::vector<Vec3> pts;
  for (int k = 0; k < 1024; ++k) pts.emplace_back(rng.uniform(0, 15), rng.uniform(0, 10), 0);
  std::size_t k = 0;
  for (auto _ : state) benchmark::DoNotOptimize(map.sample(pts[k++ & 1023]));
}
BENCHMARK(BM_Interpolate);

void BM_GprFit(benchmark::State& state) {
  Rng rng(2);
  std::vector<Fingerprint> fps;
  for (int k = 0; k < state.range(0); ++k) {
    const Vec3 p(rng.uniform(0, 15), rng.uniform(0, 10), 0);
    fps.push_back({p, sample_field(bench_field(), p)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(GprModel::fit(fps, {1.0, 400.0, 0.04}));
}
BENCHMARK(BM_GprFit)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_RlsUpdate(benchmark::State& state) {
  RlsState st = RlsState::initial(identity_theta());
  const Regressor h = regressor(Vec3(20, -5, 40));
  const Vec3 g(21, -4, 39);
  for (auto _ : state) {
    rls_update(st, h, g);
    benchmark::DoNotOptimize(st.theta);
  }
}
BENCHMARK(BM_RlsUpdate);

void BM_Alternate(benchmark::State& state) {
  const auto data = bench_dataset();
  const double window_m = static_cast<double>(state.range(0)) / 100.0;
  SlidingWindow w(window_m, default_rig());
  for (std::size_t k = 0; k < 40; ++k) w.push(data[k]);
  const std::vector<Vec12> thetas(8, identity_theta());
  for (auto _ : state) benchmark::DoNotOptimize(alternate(w, thetas, data[39].gt_pose(), bench_map(), {}));
  state.counters["entries"] = static_cast<double>(w.size());
}
BENCHMARK(BM_Alternate)->Arg(25)->Arg(50)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_RunPerFrame(benchmark::State& state) {
  const auto data = bench_dataset();
  for (auto _ : state) benchmark::DoNotOptimize(run(data, bench_map(), default_rig(), {}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_RunPerFrame)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
