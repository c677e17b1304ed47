#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "telewalk/calibration.hpp"

using namespace telewalk::calibration;
using telewalk::geometry::InvalidInput;

namespace {

CalibrationState fresh(std::vector<double> costs, SchemeSpec scheme = {}, int n = 0) {
  CalibrationState s;
  s.costs = std::move(costs);
  s.scheme = scheme;
  s.iteration = n;
  return s;
}

// Fixed point of the synthetic map by bisection on the cost difference
// delta = c0 - c1, which satisfies delta = (f0 - f1) + beta (2 s0(delta) - 1).
std::vector<double> synthetic_fixed_point(const SyntheticTwoGate& map) {
  auto s0 = [&](double delta) { return 1.0 / (1.0 + std::exp(map.lambda * delta)); };
  auto g = [&](double delta) { return delta - (map.free[0] - map.free[1]) - map.beta * (2 * s0(delta) - 1); };
  double lo = -1000.0;
  double hi = 1000.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? hi : lo) = mid;
  }
  const double share = s0(0.5 * (lo + hi));
  return {map.free[0] + map.beta * share, map.free[1] + map.beta * (1 - share)};
}

TrialMetrics metrics_with_counts(std::vector<int> counts) {
  TrialMetrics m;
  m.gate_counts = std::move(counts);
  m.gate_cost.assign(m.gate_counts.size(), 0.0);
  m.gate_used.assign(m.gate_counts.size(), 0);
  return m;
}

}  // namespace

TEST_CASE("msa_update examples") {
  CalibrationState s = msa_update(fresh({0, 0}, {Scheme::msa}), std::vector<double>{10, 20});
  CHECK(s.costs == std::vector<double>{10, 20});
  CHECK(s.iteration == 1);
  s = msa_update(s, std::vector<double>{20, 10});
  CHECK(s.costs == std::vector<double>{15, 15});
  CHECK(s.iteration == 2);

  CalibrationState c = fresh({0}, {Scheme::msa});
  for (int i = 0; i < 20; ++i) {
    c = msa_update(c, std::vector<double>{7.5});
    CHECK(c.costs[0] == 7.5);
  }
}

TEST_CASE("msa_update equals the arithmetic mean of all measurements") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    CalibrationState s = fresh({0, 0, 0}, {Scheme::msa});
    std::vector<double> sum(3, 0.0);
    const int n = 1 + trial % 40;
    for (int i = 0; i < n; ++i) {
      const std::vector<double> m{u(rng), u(rng), u(rng)};
      for (int g = 0; g < 3; ++g) sum[g] += m[g];
      s = msa_update(s, m);
    }
    for (int g = 0; g < 3; ++g) CHECK(std::abs(s.costs[g] - sum[g] / n) <= 1e-12 * sum[g] / n);
  }
}

TEST_CASE("smooth_update examples and geometric contraction") {
  CalibrationState s = smooth_update(fresh({3, 4}, {Scheme::smoothing, 1.0}), std::vector<double>{8, 9});
  CHECK(s.costs == std::vector<double>{8, 9});

  s = smooth_update(fresh({10}, {Scheme::smoothing, 0.5}), std::vector<double>{20});
  CHECK(s.costs[0] == 15.0);

  for (double w : {0.1, 0.5, 0.9}) {
    CalibrationState c = fresh({100}, {Scheme::smoothing, w});
    double gap = 100.0 - 30.0;
    for (int i = 0; i < 25; ++i) {
      c = smooth_update(c, std::vector<double>{30});
      const double now = c.costs[0] - 30.0;
      CHECK(std::abs(now - (1 - w) * gap) <= 1e-12 * std::max(1.0, std::abs(gap)));
      gap = now;
    }
  }

  CHECK_THROWS_AS(smooth_update(fresh({1}, {Scheme::smoothing, 0.0}), std::vector<double>{1}), InvalidInput);
  CHECK_THROWS_AS(msa_update(fresh({1, 2}, {Scheme::msa}), std::vector<double>{1}), InvalidInput);
}

TEST_CASE("calibrate: synthetic two-gate map converges to its fixed point") {
  const SyntheticTwoGate map;
  const std::vector<double> fixed = synthetic_fixed_point(map);
  const CalibrateOptions opts{50, 0.5};
  const CalibrationState msa = calibrate(map, 2, {Scheme::msa}, opts);
  const CalibrationState smooth = calibrate(map, 2, {Scheme::smoothing, 0.5}, opts);
  REQUIRE(msa.converged);
  REQUIRE(smooth.converged);
  const int msa_iters = msa.history.back().iteration;
  const int smooth_iters = smooth.history.back().iteration;
  CHECK(msa_iters <= 30);
  CHECK(smooth_iters <= 30);
  CHECK(smooth_iters < msa_iters);
  for (const CalibrationState* s : {&msa, &smooth}) {
    const IterationRecord& last = s->history.back();
    CHECK(last.gap < 0.5);
    for (int g = 0; g < 2; ++g) CHECK(std::abs(last.anticipated[g] - fixed[g]) < 1.0);
  }
  // The fixed point really is one.
  const TrialOutcome at = map(fixed);
  for (int g = 0; g < 2; ++g) CHECK(at.measured[g] == doctest::Approx(fixed[g]).epsilon(1e-12));
}

TEST_CASE("calibrate: history bookkeeping") {
  const SyntheticTwoGate map;
  const CalibrationState s = calibrate(map, 2, {Scheme::msa}, {50, 0.5});
  REQUIRE(s.history.size() >= 2);
  // Initialization trial replaces the zero costs.
  CHECK(s.history[0].anticipated == std::vector<double>{0, 0});
  CHECK(s.history[0].updated == s.history[0].measured);
  for (std::size_t i = 1; i < s.history.size(); ++i) {
    CHECK(s.history[i].anticipated == s.history[i - 1].updated);
    CHECK(s.history[i].iteration == static_cast<int>(i));
  }
  CHECK(s.costs == s.history.back().updated);
}

TEST_CASE("calibrate: non-convergence is reported, not thrown") {
  auto drifting = [](std::span<const double> c) {
    return TrialOutcome{{c[0] + 10.0}, {1}, {1.0}};
  };
  const CalibrationState s = calibrate(drifting, 1, {Scheme::smoothing, 0.5}, {5, 0.5});
  CHECK_FALSE(s.converged);
  CHECK(s.history.size() == 6);
  CHECK_THROWS_AS(calibrate(drifting, 1, {Scheme::msa}, {0, 0.5}), InvalidInput);
  CHECK_THROWS_AS(calibrate(drifting, 1, {Scheme::msa}, {5, 0.0}), InvalidInput);
}

TEST_CASE("calibrate: unused gates carry their cost over") {
  int calls = 0;
  auto trial = [&](std::span<const double> c) {
    ++calls;
    TrialOutcome out{{20.0, 999.0}, {1, 0}, {1.0, 0.0}};
    if (calls == 1) out.measured[1] = 0.0;
    (void)c;
    return out;
  };
  const CalibrationState s = calibrate(trial, 2, {Scheme::msa}, {10, 0.5});
  CHECK(s.converged);
  for (const IterationRecord& r : s.history) {
    CHECK(r.carried == std::vector<std::uint8_t>{0, 1});
    CHECK(r.measured[1] == r.anticipated[1]);
  }
}

TEST_CASE("calibrate on the crowd: single gate converges at iteration 1") {
  Scenario s = telewalk::crowd::default_four_gate();
  s.gates.resize(1);
  s.spawn_count = 20;
  TrialMetrics last;
  const CalibrationState state = calibrate(s, {0.5, 1.0}, {Scheme::smoothing, 0.5}, 3, {}, &last);
  CHECK(state.converged);
  CHECK(state.history.back().iteration == 1);
  CHECK(state.history.back().gap == 0.0);
  CHECK(last.gate_counts == std::vector<int>{20});
}

TEST_CASE("calibrate on the crowd is deterministic") {
  Scenario s = telewalk::crowd::default_four_gate();
  s.spawn_count = 30;
  const CalibrateOptions opts{4, 0.5};
  const CalibrationState a = calibrate(s, {1.0, 1.0}, {Scheme::msa}, 5, opts);
  const CalibrationState b = calibrate(s, {1.0, 1.0}, {Scheme::msa}, 5, opts);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].measured == b.history[i].measured);
    CHECK(a.history[i].distribution == b.history[i].distribution);
  }
  CHECK(a.costs == b.costs);
}

TEST_CASE("total variation") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(total_variation(p, p) == 0.0);
  const std::vector<double> a{1, 0, 0};
  const std::vector<double> b{0, 0.5, 0.5};
  CHECK(total_variation(a, b) == 1.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x(4), y(4);
    double sx = 0, sy = 0;
    for (int g = 0; g < 4; ++g) {
      sx += x[g] = u(rng);
      sy += y[g] = u(rng);
    }
    for (int g = 0; g < 4; ++g) {
      x[g] /= sx;
      y[g] /= sy;
    }
    const double tv = total_variation(x, y);
    CHECK(tv >= 0.0);
    CHECK(tv <= 1.0);
  }
}

TEST_CASE("compare_user") {
  const Scenario s = telewalk::crowd::default_four_gate();
  ObservedData obs;
  // Five participants, three of them through the second gate.
  obs.participants = {{2, 30, 20}, {2, 32, 21}, {2, 28, 19}, {3, 35, 22}, {4, 40, 24}};
  CHECK(obs.distribution(s) == std::vector<int>{0, 3, 1, 1});

  TrialMetrics sim = metrics_with_counts({72, 50, 25, 3});
  // By hand: 0.5 * (|0 - 0.48| + |0.6 - 1/3| + |0.2 - 1/6| + |0.2 - 0.02|) = 0.48.
  CHECK(compare_user(obs, sim, s).tv_distance == doctest::Approx(0.48).epsilon(1e-12));

  TrialMetrics same = metrics_with_counts({0, 30, 10, 10});
  CHECK(compare_user(obs, same, s).tv_distance == doctest::Approx(0.0));

  TrialMetrics disjoint = metrics_with_counts({10, 0, 0, 0});
  CHECK(compare_user(obs, disjoint, s).tv_distance == doctest::Approx(1.0));

  // Deviations against gate means; gate 4 has no simulated walkers and is skipped.
  TrialMetrics m = metrics_with_counts({0, 2, 1, 0});
  m.pedestrians = {{1, 1, 1, 29.0, 18.0, true}, {2, 1, 1, 31.0, 20.0, true}, {3, 2, 2, 36.0, 25.0, true}};
  const DeviationReport r = compare_user(obs, m, s);
  CHECK(r.matched == 4);
  // Gate 2 mean (30, 19): |0|+|2|+|2| and |1|+|2|+|0|; gate 3 mean (36, 25): |1| and |3|.
  CHECK(r.time_mad == doctest::Approx(5.0 / 4));
  CHECK(r.distance_mad == doctest::Approx(6.0 / 4));

  CHECK_THROWS_AS(compare_user(ObservedData{}, sim, s), InvalidInput);
  ObservedData bad;
  bad.participants = {{9, 1, 1}};
  CHECK_THROWS_AS(compare_user(bad, sim, s), InvalidInput);
}

TEST_CASE("fit_params") {
  Scenario s = telewalk::crowd::default_four_gate();
  s.spawn_count = 40;
  const CalibrateOptions opts{3, 0.5};

  ObservedData uniform;
  for (int id = 1; id <= 4; ++id) uniform.participants.insert(uniform.participants.end(), 2, {id, 30, 20});

  const std::vector<GateChoiceParams> one{{2.0, 0.5}};
  FitResult r = fit_params(s, uniform, one, {Scheme::smoothing, 0.5}, 1, opts);
  CHECK(r.best.lambda == 2.0);
  CHECK(r.best.gamma == 0.5);
  CHECK(r.grid.size() == 1);

  const std::vector<GateChoiceParams> two{{5.0, 0.0}, {0.1, 0.0}};
  r = fit_params(s, uniform, two, {Scheme::smoothing, 0.5}, 1, opts);
  CHECK(r.best.lambda == 0.1);
  CHECK(r.grid[1].report.tv_distance < r.grid[0].report.tv_distance);

  // Self-consistency: data produced at a grid point is recovered.
  const GateChoiceParams truth{1.0, 0.5};
  TrialMetrics generated;
  calibrate(s, truth, {Scheme::smoothing, 0.5}, 9, opts, &generated);
  const ObservedData self = observed_from_trial(generated, s);
  const std::vector<GateChoiceParams> grid{{0.1, 0.0}, {1.0, 0.5}, {5.0, 0.0}, {5.0, 1.0}};
  r = fit_params(s, self, grid, {Scheme::smoothing, 0.5}, 9, opts);
  CHECK(r.best.lambda == truth.lambda);
  CHECK(r.best.gamma == truth.gamma);
  CHECK(r.grid[1].report.tv_distance <= 0.05);

  CHECK_THROWS_AS(fit_params(s, uniform, std::vector<GateChoiceParams>{}, {}, 1, opts), InvalidInput);
  CHECK(default_grid().size() == 20);
}
