#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "telewalk/crowd.hpp"

using namespace telewalk::crowd;
using telewalk::geometry::InvalidInput;

namespace {

Pedestrian body(int id, Vec2 pos, Vec2 vel = {}, double radius = 0.3) {
  Pedestrian p;
  p.id = id;
  p.position = pos;
  p.velocity = vel;
  p.radius = radius;
  return p;
}

ForceParams contact_only() {
  ForceParams f;
  f.A = 0.0;
  return f;
}

// No walls, gates far to the east and west, nothing spawns.
Scenario open_field() {
  Scenario s;
  s.name = "open";
  s.gates = {Gate{1, Segment{{50, -0.5}, {50, 0.5}}}, Gate{2, Segment{{-50, 0.5}, {-50, -0.5}}}};
  s.spawn_surface = {{-1, 20}, {1, 20}, {1, 22}, {-1, 22}};
  s.goal_surface = {{60, -5}, {70, -5}, {70, 5}, {60, 5}};
  s.spawn_count = 0;
  return s;
}

}  // namespace

TEST_CASE("driving force examples") {
  Pedestrian p = body(1, {0, 0});
  p.mass = 80;
  p.tau = 0.5;
  p.desired_speed = 1.0;
  Vec2 f = driving_force(p, {5, 0});
  CHECK(f.x == doctest::Approx(160.0));
  CHECK(f.y == 0.0);

  p.velocity = {1, 0};
  f = driving_force(p, {5, 0});
  CHECK(f.x == 0.0);
  CHECK(f.y == 0.0);

  f = driving_force(p, {0, 5});
  CHECK(f.x == doctest::Approx(-160.0));
  CHECK(f.y == doctest::Approx(160.0));

  // Goal reached: only the braking term remains.
  f = driving_force(p, p.position);
  CHECK(f.x == doctest::Approx(-160.0));
  CHECK(f.y == 0.0);
}

TEST_CASE("pair force examples") {
  const ForceParams fp = contact_only();
  // Gap of 0.5 m beyond the radius sum.
  CHECK(pair_force(body(1, {0, 0}), body(2, {1.1, 0}), fp).x == 0.0);

  // Overlap 0.01 m: k * 0.01 = 1200 N pushing a away from b.
  Vec2 f = pair_force(body(1, {0, 0}), body(2, {0.59, 0}), fp);
  CHECK(f.x == doctest::Approx(-1200.0).epsilon(1e-9));
  CHECK(std::abs(f.y) < 1e-9);

  // b sliding past at 1 m/s along +y: friction on a is kappa * 0.01 * 1 = 2400 N along +y,
  // i.e. opposing the relative motion of a with respect to b.
  f = pair_force(body(1, {0, 0}), body(2, {0.59, 0}, {0, 1}), fp);
  CHECK(f.x == doctest::Approx(-1200.0).epsilon(1e-9));
  CHECK(f.y == doctest::Approx(2400.0).epsilon(1e-9));

  // The psychological term alone at exact touching distance is A.
  ForceParams full;
  f = pair_force(body(1, {0, 0}), body(2, {0.6, 0}), full);
  CHECK(f.x == doctest::Approx(-full.A));
}

TEST_CASE("pair force with coincident centres uses the id-ordered normal") {
  const ForceParams fp = contact_only();
  bool flagged = false;
  const Vec2 f = pair_force(body(1, {2, 2}), body(2, {2, 2}), fp, &flagged);
  CHECK(flagged);
  CHECK(f.x == doctest::Approx(fp.k * 0.6));
  const Vec2 g = pair_force(body(2, {2, 2}), body(1, {2, 2}), fp);
  CHECK(g.x == -f.x);
}

TEST_CASE("wall force examples") {
  const ForceParams fp = contact_only();
  const Segment wall{{-5, 0}, {5, 0}};
  CHECK(wall_force(body(1, {0, 1}), wall, fp).y == 0.0);

  Vec2 f = wall_force(body(1, {0, 0.295}), wall, fp);
  CHECK(f.y == doctest::Approx(600.0).epsilon(1e-9));
  CHECK(std::abs(f.x) < 1e-9);

  // Sliding along the wall: friction is antiparallel to the velocity.
  f = wall_force(body(1, {0, 0.295}, {1.0, 0}), wall, fp);
  CHECK(f.x < 0.0);
  CHECK(f.x == doctest::Approx(-fp.kappa * 0.005).epsilon(1e-9));

  // Beyond the segment end the closest point is the endpoint.
  f = wall_force(body(1, {5.2, 0}), wall, fp);
  CHECK(f.x == doctest::Approx(fp.k * 0.1).epsilon(1e-9));

  bool flagged = false;
  f = wall_force(body(1, {1, 0}), wall, fp, &flagged);
  CHECK(flagged);
  CHECK(f.y == doctest::Approx(fp.k * 0.3));
}

TEST_CASE("contact gating and Newton's third law over random pairs") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> vel(-2.0, 2.0);
  std::uniform_real_distribution<double> rad(0.2, 0.5);
  const ForceParams gated = contact_only();
  const ForceParams full;
  int touching = 0;
  for (int i = 0; i < 100000; ++i) {
    const Pedestrian a = body(1, {pos(rng), pos(rng)}, {vel(rng), vel(rng)}, rad(rng));
    const Pedestrian b = body(2, {pos(rng), pos(rng)}, {vel(rng), vel(rng)}, rad(rng));
    const double d = std::hypot(a.position.x - b.position.x, a.position.y - b.position.y);
    const Vec2 f = pair_force(a, b, gated);
    const bool zero = f.x == 0.0 && f.y == 0.0;
    CHECK(zero == (d >= a.radius + b.radius));
    touching += zero ? 0 : 1;
    const Vec2 g = pair_force(b, a, gated);
    CHECK(f.x == -g.x);
    CHECK(f.y == -g.y);
    const Vec2 h = pair_force(a, b, full);
    const Vec2 k = pair_force(b, a, full);
    CHECK(h.x == -k.x);
    CHECK(h.y == -k.y);
  }
  // Both branches were exercised.
  CHECK(touching > 1000);
  CHECK(touching < 99000);
}

TEST_CASE("interaction range is where the repulsion falls to the cutoff") {
  const ForceParams fp;
  const double range = fp.interaction_range();
  CHECK(fp.A * std::exp(-range / fp.B) == doctest::Approx(fp.cutoff_force));
  CHECK(contact_only().interaction_range() == 0.0);
}

TEST_CASE("gate probabilities") {
  const std::vector<double> one{7.0};
  CHECK(gate_probabilities(one, 3.0)[0] == 1.0);

  // Independent softmax evaluation of costs (10, 12, 15, 20) s at lambda 0.5.
  const std::vector<double> costs{10, 12, 15, 20};
  const auto p = gate_probabilities(costs, 0.5);
  const double expected[] = {0.6864820220419687, 0.2525426226430412, 0.056349875834646276,
                             0.004625479480343807};
  for (int g = 0; g < 4; ++g) CHECK(std::abs(p[g] - expected[g]) < 1e-12);

  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> blocked{inf, 3.0};
  const auto q = gate_probabilities(blocked, 1.0);
  CHECK(q[0] == 0.0);
  CHECK(q[1] == 1.0);
  const std::vector<double> none{inf, inf};
  CHECK_THROWS_AS(gate_probabilities(none, 1.0), InvalidInput);
}

TEST_CASE("gate sampling statistics") {
  std::mt19937_64 rng(8);
  const std::vector<double> equal{0.5, 0.5};
  int first = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) first += sample_index(equal, rng) == 0 ? 1 : 0;
  const double sigma = std::sqrt(draws * 0.25);
  CHECK(std::abs(first - draws / 2) <= 3 * sigma);

  const std::vector<double> costs{10, 11, 13};
  const auto sharp = gate_probabilities(costs, 50.0);
  int cheapest = 0;
  for (int i = 0; i < draws; ++i) cheapest += sample_index(sharp, rng) == 0 ? 1 : 0;
  CHECK(cheapest >= 9990);
}

TEST_CASE("choose_gate uses free-walk time plus weighted anticipated cost") {
  Scenario s = open_field();
  Pedestrian p = body(1, {10, 0});
  p.desired_speed = 2.0;
  const std::vector<double> anticipated{0.0, 0.0};
  const auto c = gate_costs(p, s, anticipated, 1.0);
  CHECK(c[0] == doctest::Approx(20.0));
  CHECK(c[1] == doctest::Approx(30.0));
  const std::vector<double> queue{30.0, 0.0};
  const auto d = gate_costs(p, s, queue, 0.5);
  CHECK(d[0] == doctest::Approx(35.0));
  CHECK(d[1] == doctest::Approx(30.0));

  std::mt19937_64 rng(1);
  GateChoiceParams sharp{100.0, 0.5};
  CHECK(choose_gate(p, s, queue, sharp, rng) == 1);
  sharp.gamma = 0.0;
  CHECK(choose_gate(p, s, queue, sharp, rng) == 0);

  Scenario single = open_field();
  single.gates.pop_back();
  const std::vector<double> none;
  for (int i = 0; i < 100; ++i) CHECK(choose_gate(p, single, none, GateChoiceParams{}, rng) == 0);
}

TEST_CASE("empty world steps without change") {
  World w(open_field(), {}, 1);
  for (int i = 0; i < 10; ++i) {
    const StepDiagnostics& d = w.step();
    CHECK(d.contacts == 0);
    CHECK(d.spawned.empty());
  }
  CHECK(w.bodies().empty());
  CHECK(w.finished());
  CHECK(w.time() == doctest::Approx(0.2));
}

TEST_CASE("free walk follows the relaxation solution") {
  World w(open_field(), {}, 1);
  Pedestrian p = body(0, {0, 0});
  p.desired_speed = 1.2;
  p.tau = 0.5;
  p.assigned_gate = 0;
  w.add_pedestrian(p);
  const double dt = w.scenario().dt;
  const int steps = static_cast<int>(std::lround(5 * p.tau / dt));
  double worst = 0.0;
  for (int i = 1; i <= steps; ++i) {
    w.step();
    const double t = i * dt;
    const Vec2 v = w.bodies()[0].velocity;
    const double oracle = p.desired_speed * (1.0 - std::exp(-t / p.tau));
    worst = std::max(worst, std::abs(std::hypot(v.x, v.y) - oracle));
  }
  CHECK(worst <= 0.01 * p.desired_speed);
  CHECK(std::hypot(w.bodies()[0].velocity.x, w.bodies()[0].velocity.y) >= 0.99 * p.desired_speed);
}

TEST_CASE("head-on encounter stays mirror-symmetric") {
  Scenario s = open_field();
  s.gates = {Gate{1, Segment{{10, -0.5}, {10, 0.5}}}, Gate{2, Segment{{-10, 0.5}, {-10, -0.5}}}};
  s.goal_surface = {{20, -5}, {30, -5}, {30, 5}, {20, 5}};
  World w(s, {}, 1);
  Pedestrian a = body(0, {-2.0, 0.3});
  a.assigned_gate = 0;
  Pedestrian b = body(0, {2.0, 0.3});
  b.assigned_gate = 1;
  w.add_pedestrian(a);
  w.add_pedestrian(b);
  double closest = 4.0;
  for (int i = 0; i < 400; ++i) {
    w.step();
    REQUIRE(w.bodies().size() == 2);
    const Pedestrian& p = w.bodies()[0];
    const Pedestrian& q = w.bodies()[1];
    CHECK(std::abs(p.position.x + q.position.x) <= 1e-9);
    CHECK(std::abs(p.position.y - q.position.y) <= 1e-9);
    CHECK(std::abs(p.velocity.x + q.velocity.x) <= 1e-9);
    closest = std::min(closest, q.position.x - p.position.x);
  }
  CHECK(closest < 0.6 + s.forces.interaction_range());
}

TEST_CASE("hashed and parallel kernels match brute force on every tick") {
  Scenario s = default_four_gate();
  s.spawn_count = 50;
  s.spawn_rate = 25.0;
  World w(s, {}, 3);
  InteractionForces brute, hashed, parallel;
  const int ticks = static_cast<int>(std::lround(10.0 / s.dt));
  double worst = 0.0;
  int max_bodies = 0;
  for (int i = 0; i < ticks; ++i) {
    const StepDiagnostics& d = w.step();
    CHECK_FALSE(d.tunneling_risk);
    const auto bodies = w.bodies();
    max_bodies = std::max(max_bodies, static_cast<int>(bodies.size()));
    interaction_forces(ForceKernel::brute_force, bodies, s.walls, s.forces, brute);
    interaction_forces(ForceKernel::hashed, bodies, s.walls, s.forces, hashed);
    interaction_forces(ForceKernel::hashed_parallel, bodies, s.walls, s.forces, parallel);
    for (std::size_t k = 0; k < bodies.size(); ++k) {
      worst = std::max({worst, std::abs(brute.force[k].x - hashed.force[k].x),
                        std::abs(brute.force[k].y - hashed.force[k].y),
                        std::abs(brute.force[k].x - parallel.force[k].x),
                        std::abs(brute.force[k].y - parallel.force[k].y)});
      CHECK(brute.contact[k] == hashed.contact[k]);
    }
  }
  CHECK(max_bodies == 50);
  CHECK(worst <= 1e-12);
}

TEST_CASE("non-finite force names the pedestrian pair") {
  World w(open_field(), {}, 1);
  w.add_pedestrian(body(0, {0, 0}));
  w.add_pedestrian(body(0, {0.5, 0}, {std::nan(""), 0.0}));
  try {
    w.step();
    FAIL("expected SimulationError");
  } catch (const SimulationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("pedestrians 1 and 2") != std::string::npos);
  }

  World v(open_field(), {}, 1);
  v.add_pedestrian(body(0, {std::nan(""), 0}));
  CHECK_THROWS_AS(v.step(), SimulationError);
}

TEST_CASE("avatar is kinematic") {
  World w(open_field(), {}, 1);
  w.set_avatar({0, 0}, {0.5, 0});
  w.add_pedestrian(body(0, {0.55, 0}));
  const StepDiagnostics& d = w.step();
  REQUIRE(w.avatar() != nullptr);
  CHECK(w.avatar()->position.x == 0.0);
  CHECK(d.avatar_contact);
  CHECK(d.avatar_force.x < 0.0);
  // The pedestrian is pushed away.
  CHECK(w.bodies()[1].velocity.x > 0.0);
  w.remove_avatar();
  CHECK(w.avatar() == nullptr);
}

TEST_CASE("stalled walker re-targets the nearest gate") {
  Scenario s = open_field();
  // Pressed against a wall that blocks the way to the far gate.
  s.walls = {Segment{{9, -2}, {9, 2}}};
  World pinned(s, {}, 1);
  Pedestrian p = body(0, {9.3, 0});
  p.assigned_gate = 1;
  pinned.add_pedestrian(p);
  bool rerouted = false;
  for (int i = 0; i < 400 && !rerouted; ++i) rerouted = !pinned.step().rerouted.empty();
  CHECK(rerouted);
  CHECK(pinned.bodies()[0].assigned_gate == 0);
}

TEST_CASE("scenario validation") {
  CHECK_NOTHROW(default_four_gate().validate());
  Scenario s = default_four_gate();
  s.dt = 0.2;
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = default_four_gate();
  s.gates.clear();
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = default_four_gate();
  s.goal_surface = s.spawn_surface;
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = default_four_gate();
  s.pedestrians.radius_max = 0.6;
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = default_four_gate();
  s.gate_choice.lambda = -1;
  CHECK_THROWS_AS(s.validate(), InvalidInput);

  const auto rank = default_four_gate().gate_ranking();
  CHECK(rank == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("run_trial: 150 pedestrians, every one accounted for") {
  const Scenario s = default_four_gate();
  const TrialMetrics m = run_trial(s, {}, 7);
  CHECK(m.complete);
  REQUIRE(m.pedestrians.size() == 150);
  int sum = 0;
  for (int c : m.gate_counts) sum += c;
  CHECK(sum == 150);
  for (const PedestrianRecord& r : m.pedestrians) {
    CHECK(r.exited);
    CHECK(r.completion_time > 0.0);
    // Straight-line lower bound from the spawn square to the goal strip.
    CHECK(r.distance >= 15.5);
  }
  // Measured cost is the mean completion time of the gate's users.
  for (std::size_t g = 0; g < m.gate_counts.size(); ++g) {
    double total = 0.0;
    int n = 0;
    for (const PedestrianRecord& r : m.pedestrians) {
      if (r.gate == static_cast<int>(g)) {
        total += r.completion_time;
        ++n;
      }
    }
    CHECK(m.gate_used[g] == (n > 0 ? 1 : 0));
    if (n > 0) CHECK(m.gate_cost[g] == doctest::Approx(total / n).epsilon(1e-12));
  }
}

TEST_CASE("run_trial is deterministic") {
  Scenario s = default_four_gate();
  s.spawn_count = 60;
  const TrialMetrics a = run_trial(s, {}, 11);
  const TrialMetrics b = run_trial(s, {}, 11);
  REQUIRE(a.pedestrians.size() == b.pedestrians.size());
  for (std::size_t i = 0; i < a.pedestrians.size(); ++i) {
    CHECK(a.pedestrians[i].id == b.pedestrians[i].id);
    CHECK(a.pedestrians[i].gate == b.pedestrians[i].gate);
    CHECK(a.pedestrians[i].completion_time == b.pedestrians[i].completion_time);
    CHECK(a.pedestrians[i].distance == b.pedestrians[i].distance);
  }
  CHECK(a.gate_cost == b.gate_cost);
  CHECK(a.ticks == b.ticks);

  TrialOptions opts;
  opts.kernel = ForceKernel::brute_force;
  const TrialMetrics c = run_trial(s, {}, 11, opts);
  CHECK(c.gate_cost == a.gate_cost);
  CHECK(c.ticks == a.ticks);
}

TEST_CASE("run_trial with no pedestrians") {
  Scenario s = default_four_gate();
  s.spawn_count = 0;
  const TrialMetrics m = run_trial(s, {}, 1);
  CHECK(m.pedestrians.empty());
  CHECK(m.ticks == 0);
  CHECK(m.complete);
  CHECK(m.gate_counts == std::vector<int>(4, 0));
}

TEST_CASE("time cap marks the trial incomplete") {
  Scenario s = default_four_gate();
  s.spawn_count = 10;
  s.time_cap = 2.0;
  const TrialMetrics m = run_trial(s, {}, 1);
  CHECK_FALSE(m.complete);
  CHECK(m.ticks == 100);
  CHECK(m.pedestrians.size() > 0);
  CHECK(m.pedestrians.size() < 10);
}

TEST_CASE("trajectory writer") {
  Scenario s = default_four_gate();
  s.spawn_count = 5;
  std::ostringstream out;
  TrajectoryWriter writer(out, 5);
  writer.write_header();
  TrialOptions opts;
  opts.observer = std::ref(writer);
  const TrialMetrics m = run_trial(s, {}, 2, opts);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,id,kind,x,y,vx,vy,gate,state");
  int rows = 0;
  int exits = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
    if (line.ends_with(",exited")) ++exits;
  }
  CHECK(rows > 0);
  CHECK(exits == 5);
  CHECK(m.complete);
}

TEST_CASE("stiff contacts are sub-stepped and stay bounded") {
  World w(open_field(), {}, 1);
  // Deep overlap with fast sliding: a single explicit friction step at
  // dt = 0.02 s would overshoot and grow without bound.
  w.add_pedestrian(body(0, {0, 0}, {0, 2}));
  w.add_pedestrian(body(0, {0.45, 0}, {0, -2}));
  const StepDiagnostics& d = w.step();
  CHECK(d.substeps > 1);
  for (int i = 0; i < 200; ++i) w.step();
  for (const Pedestrian& p : w.bodies()) CHECK(std::hypot(p.velocity.x, p.velocity.y) < 3.0);

  // Free walking never splits a tick.
  World free(open_field(), {}, 1);
  Pedestrian p = body(0, {0, 0});
  p.assigned_gate = 0;
  free.add_pedestrian(p);
  for (int i = 0; i < 50; ++i) CHECK(free.step().substeps == 1);
}

TEST_CASE("a move through a wall is cancelled") {
  Scenario s = open_field();
  s.walls = {Segment{{1, -2}, {1, 2}}};
  World w(s, {}, 1);
  Pedestrian p = body(0, {0.95, 0}, {200, 0}, 0.2);
  p.assigned_gate = 0;
  w.add_pedestrian(p);
  const StepDiagnostics& d = w.step();
  CHECK(d.wall_blocks > 0);
  CHECK(w.bodies()[0].position.x < 1.0);
  for (int i = 0; i < 100; ++i) {
    w.step();
    CHECK(w.bodies()[0].position.x < 1.0);
  }
}
