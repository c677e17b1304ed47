// Interaction-force kernels and whole-trial throughput.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "telewalk/crowd.hpp"
#include "telewalk/haptics.hpp"

using namespace telewalk;

namespace {

// n pedestrians scattered at one per square metre, so the neighbour count
// per body stays fixed as n grows.
std::vector<crowd::Pedestrian> scatter(int n) {
  std::mt19937_64 rng(42);
  const double side = std::sqrt(static_cast<double>(n));
  std::uniform_real_distribution<double> x(0.0, side), y(0.0, side), r(0.25, 0.35);
  std::vector<crowd::Pedestrian> bodies(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& p = bodies[static_cast<std::size_t>(i)];
    p.id = i + 1;
    p.position = {x(rng), y(rng)};
    p.velocity = {1.0, 0.0};
    p.radius = r(rng);
  }
  return bodies;
}

void kernel(benchmark::State& state, crowd::ForceKernel k) {
  const auto bodies = scatter(static_cast<int>(state.range(0)));
  const crowd::Scenario scenario = crowd::default_four_gate();
  crowd::InteractionForces out;
  for (auto _ : state) {
    crowd::interaction_forces(k, bodies, scenario.walls, scenario.forces, out);
    benchmark::DoNotOptimize(out.force.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BruteForce(benchmark::State& s) { kernel(s, crowd::ForceKernel::brute_force); }
void BM_Hashed(benchmark::State& s) { kernel(s, crowd::ForceKernel::hashed); }
void BM_HashedParallel(benchmark::State& s) { kernel(s, crowd::ForceKernel::hashed_parallel); }

BENCHMARK(BM_BruteForce)->Arg(50)->Arg(150)->Arg(500)->Arg(2000);
BENCHMARK(BM_Hashed)->Arg(50)->Arg(150)->Arg(500)->Arg(2000);
BENCHMARK(BM_HashedParallel)->Arg(50)->Arg(150)->Arg(500)->Arg(2000);

void BM_ForceTransform(benchmark::State& state) {
  haptics::ForceSample f;
  f.fx = 120.0;
  f.fy = -40.0;
  f.in_contact = true;
  double a = 0.0;
  for (auto _ : state) {
    a += 1e-3;
    benchmark::DoNotOptimize(haptics::transform_force(f, a, 0.5 * a));
  }
}
BENCHMARK(BM_ForceTransform);

void BM_Trial(benchmark::State& state) {
  crowd::Scenario scenario = crowd::default_four_gate();
  scenario.spawn_count = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(crowd::run_trial(scenario, {}, 7));
  }
}
BENCHMARK(BM_Trial)->Arg(150)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
