// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "telewalk/calibration.hpp"
#include "telewalk/crowd.hpp"
#include "telewalk/haptics.hpp"
#include "telewalk/motion_compression.hpp"
#include "telewalk/net.hpp"
#include "telewalk/service.hpp"

using namespace telewalk;
using geometry::make_pose;
using geometry::PolyPath;
using geometry::Vec2;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

crowd::Pedestrian body(Vec2 pos, Vec2 vel = {}, double radius = 0.3) {
  crowd::Pedestrian p;
  p.position = pos;
  p.velocity = vel;
  p.radius = radius;
  return p;
}

crowd::Scenario open_field() {
  crowd::Scenario s;
  s.name = "open";
  s.gates = {crowd::Gate{1, {{50, -0.5}, {50, 0.5}}}, crowd::Gate{2, {{-50, 0.5}, {-50, -0.5}}}};
  s.spawn_surface = {{-1, 20}, {1, 20}, {1, 22}, {-1, 22}};
  s.goal_surface = {{60, -5}, {70, -5}, {70, 5}, {60, 5}};
  s.spawn_count = 0;
  return s;
}

Outcome gate_distribution() {
  const crowd::Scenario s = crowd::default_four_gate();
  const std::vector<int> rank = s.gate_ranking();
  const std::vector<double> zero(s.gates.size(), 0.0);
  std::vector<double> mean(s.gates.size(), 0.0);
  int plurality = 0;
  bool complete = true;
  const int trials = 20;
  for (int seed = 1; seed <= trials; ++seed) {
    const crowd::TrialMetrics m = crowd::run_trial(s, zero, seed);
    complete = complete && m.complete;
    const int closest = m.gate_counts[rank[0]];
    bool wins = true;
    for (std::size_t g = 0; g < m.gate_counts.size(); ++g) {
      if (static_cast<int>(g) != rank[0] && m.gate_counts[g] >= closest) wins = false;
      mean[g] += m.gate_counts[g] / double(trials);
    }
    plurality += wins ? 1 : 0;
  }
  bool ordered = true;
  for (std::size_t r = 1; r < rank.size(); ++r) ordered = ordered && mean[rank[r]] <= mean[rank[r - 1]];
  std::string counts;
  for (int g : rank) counts += fmt("%s%.1f", counts.empty() ? "" : "/", mean[g]);
  return {plurality >= 18 && ordered && complete,
          fmt("closest gate plurality %d/20, mean counts by rank %s", plurality, counts.c_str())};
}

// Closed-form arc integration, independent of the library's chord update.
double inset_violation(const PolyPath& p, const compression::RoomSpec& room) {
  double x = p.start.x;
  double y = p.start.y;
  double th = p.start.heading;
  double worst = 0.0;
  for (double k : p.curvatures) {
    if (std::abs(k) < 1e-12) {
      x += p.ds * std::cos(th);
      y += p.ds * std::sin(th);
    } else {
      x += (std::sin(th + k * p.ds) - std::sin(th)) / k;
      y += (std::cos(th) - std::cos(th + k * p.ds)) / k;
    }
    th += k * p.ds;
    worst = std::max({worst, room.margin - x, x - (room.width - room.margin), room.margin - y,
                      y - (room.height - room.margin)});
  }
  return worst;
}

double kahan_sum(const std::vector<double>& v) {
  double sum = 0.0;
  double carry = 0.0;
  for (double x : v) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum;
}

Outcome compression_invariants() {
  const compression::RoomSpec room{4, 4, 0.3};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> length(5.0, 30.0);
  const double ds = geometry::kDefaultSpacing;
  int ok = 0;
  int infeasible = 0;
  double worst_length = 0.0;
  double worst_turning = 0.0;
  double worst_inset = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = static_cast<std::size_t>(std::lround(length(rng) / ds));
    PolyPath target{make_pose(0, 0, 0), ds, {}};
    double k = 0.3 * u(rng);
    for (std::size_t j = 0; j < n; ++j) {
      k = std::clamp(k + 0.05 * u(rng), -0.6, 0.6);
      target.curvatures.push_back(k);
    }
    // Shift the profile so the total turning lands on a draw from [-2pi, 2pi].
    const double turning = 2 * kPi * u(rng);
    const double shift = (turning - kahan_sum(target.curvatures) * ds) / (n * ds);
    for (double& c : target.curvatures) c += shift;
    try {
      const compression::Correspondence c =
          compression::transform_path(target, room, make_pose(2, 2, kPi * u(rng)));
      worst_length = std::max(worst_length, std::abs(c.user.segment_count() * c.user.ds - target.length()));
      worst_turning = std::max(worst_turning,
                               std::abs(kahan_sum(c.user.curvatures) - kahan_sum(target.curvatures)) * ds);
      worst_inset = std::max(worst_inset, inset_violation(c.user, room));
      ++ok;
    } catch (const compression::InfeasiblePath&) {
      ++infeasible;
    }
  }
  const PolyPath two{make_pose(0, 0, 0), ds, std::vector<double>(std::lround(2.0 / ds), 0.0)};
  const double straight = compression::transform_path(two, room, make_pose(2, 2, kPi / 4)).objective;
  const bool pass = ok > 0 && worst_length <= 1e-9 && worst_turning <= 1e-9 && worst_inset <= 1e-3 && straight == 0.0;
  return {pass, fmt("%d/50 solved (%d infeasible), length err %.1e, turning err %.1e, inset %.1e m, "
                    "2 m objective %g",
                    ok, infeasible, worst_length, worst_turning, worst_inset, straight)};
}

Outcome force_transform() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> angle(-4 * kPi, 4 * kPi);
  std::uniform_real_distribution<double> mag(0.0, 5000.0);
  double worst = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const double m = mag(rng);
    const double a = angle(rng);
    const double tt = angle(rng);
    const double ut = angle(rng);
    haptics::ForceSample f;
    f.fx = m * std::cos(a);
    f.fy = m * std::sin(a);
    const haptics::ForceSample g = haptics::transform_force(f, tt, ut);
    const double scale = std::max(1.0, m);
    // Components along and across each tangent must agree.
    const double along_in = f.fx * std::cos(tt) + f.fy * std::sin(tt);
    const double across_in = -f.fx * std::sin(tt) + f.fy * std::cos(tt);
    const double along_out = g.fx * std::cos(ut) + g.fy * std::sin(ut);
    const double across_out = -g.fx * std::sin(ut) + g.fy * std::cos(ut);
    worst = std::max({worst, std::abs(std::hypot(g.fx, g.fy) - std::hypot(f.fx, f.fy)) / scale,
                      std::abs(along_in - along_out) / scale, std::abs(across_in - across_out) / scale});
  }
  return {worst <= 1e-12, fmt("10^6 samples, worst relative error %.2e", worst)};
}

Outcome contact_gating() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> vel(-2.0, 2.0);
  std::uniform_real_distribution<double> rad(0.2, 0.5);
  crowd::ForceParams gated;
  gated.A = 0.0;
  long wrong_gate = 0;
  long wrong_newton = 0;
  long touching = 0;
  for (int i = 0; i < 100000; ++i) {
    const crowd::Pedestrian a = body({pos(rng), pos(rng)}, {vel(rng), vel(rng)}, rad(rng));
    const crowd::Pedestrian b = body({pos(rng), pos(rng)}, {vel(rng), vel(rng)}, rad(rng));
    const double d = std::hypot(a.position.x - b.position.x, a.position.y - b.position.y);
    const Vec2 f = crowd::pair_force(a, b, gated);
    const Vec2 g = crowd::pair_force(b, a, gated);
    const bool zero = f.x == 0.0 && f.y == 0.0;
    wrong_gate += zero != (d >= a.radius + b.radius) ? 1 : 0;
    wrong_newton += f.x != -g.x || f.y != -g.y ? 1 : 0;
    touching += zero ? 0 : 1;
  }
  return {wrong_gate == 0 && wrong_newton == 0,
          fmt("10^5 pairs (%ld touching), gating violations %ld, third-law violations %ld", touching, wrong_gate,
              wrong_newton)};
}

Outcome kernel_equivalence() {
  crowd::Scenario s = crowd::default_four_gate();
  s.spawn_count = 50;
  s.spawn_rate = 25.0;
  crowd::World w(s, {}, 3);
  crowd::InteractionForces brute, hashed, parallel;
  const int ticks = static_cast<int>(std::lround(10.0 / s.dt));
  double worst = 0.0;
  std::size_t most = 0;
  for (int i = 0; i < ticks; ++i) {
    w.step();
    const auto bodies = w.bodies();
    most = std::max(most, bodies.size());
    crowd::interaction_forces(crowd::ForceKernel::brute_force, bodies, s.walls, s.forces, brute);
    crowd::interaction_forces(crowd::ForceKernel::hashed, bodies, s.walls, s.forces, hashed);
    crowd::interaction_forces(crowd::ForceKernel::hashed_parallel, bodies, s.walls, s.forces, parallel);
    for (std::size_t k = 0; k < bodies.size(); ++k) {
      worst = std::max({worst, std::abs(brute.force[k].x - hashed.force[k].x),
                        std::abs(brute.force[k].y - hashed.force[k].y),
                        std::abs(brute.force[k].x - parallel.force[k].x),
                        std::abs(brute.force[k].y - parallel.force[k].y)});
    }
  }
  return {most == 50 && worst <= 1e-12,
          fmt("%d ticks, up to %zu pedestrians, worst difference %.2e N", ticks, most, worst)};
}

Outcome free_walk() {
  crowd::World w(open_field(), {}, 1);
  crowd::Pedestrian p = body({0, 0});
  p.desired_speed = 1.2;
  p.tau = 0.5;
  p.assigned_gate = 0;
  w.add_pedestrian(p);
  const double dt = w.scenario().dt;
  const int steps = static_cast<int>(std::lround(5 * p.tau / dt));
  double worst = 0.0;
  for (int i = 1; i <= steps; ++i) {
    w.step();
    const Vec2 v = w.bodies()[0].velocity;
    const double oracle = p.desired_speed * (1.0 - std::exp(-i * dt / p.tau));
    worst = std::max(worst, std::abs(std::hypot(v.x, v.y) - oracle));
  }
  return {worst <= 0.01 * p.desired_speed,
          fmt("worst speed error %.2f%% of v0 over %d steps", 100.0 * worst / p.desired_speed, steps)};
}

Outcome calibration_convergence() {
  using namespace calibration;
  const SyntheticTwoGate map;
  const CalibrateOptions opts{50, 0.5};
  const CalibrationState msa = calibrate(map, 2, {Scheme::msa}, opts);
  const CalibrationState smooth = calibrate(map, 2, {Scheme::smoothing, 0.5}, opts);
  const int msa_iters = msa.history.back().iteration;
  const int smooth_iters = smooth.history.back().iteration;
  const bool synthetic = msa.converged && smooth.converged && msa_iters <= 30 && smooth_iters <= 30 &&
                         smooth_iters < msa_iters;

  crowd::Scenario s = crowd::default_four_gate();
  s.spawn_count = 150;
  const CalibrateOptions fit_opts{5, 0.5};
  const SchemeSpec scheme{Scheme::smoothing, 0.5};
  const std::uint64_t seed = 11;
  const std::vector<crowd::GateChoiceParams> grid = default_grid();
  const crowd::GateChoiceParams truth{1.0, 0.5};
  crowd::TrialMetrics generated;
  calibrate(s, truth, scheme, seed, fit_opts, &generated);
  const FitResult r = fit_params(s, observed_from_trial(generated, s), grid, scheme, seed, fit_opts);
  double truth_tv = 1.0;
  for (const GridPoint& g : r.grid) {
    if (g.params.lambda == truth.lambda && g.params.gamma == truth.gamma) truth_tv = g.report.tv_distance;
  }
  const bool recovered = r.best.lambda == truth.lambda && r.best.gamma == truth.gamma && truth_tv <= 0.05;
  return {synthetic && recovered,
          fmt("MSA %d iterations, smoothing %d; fit picked (%g, %g) for truth (%g, %g), TV %.3f", msa_iters,
              smooth_iters, r.best.lambda, r.best.gamma, truth.lambda, truth.gamma, truth_tv)};
}

Outcome end_to_end() {
  const crowd::Scenario scenario = crowd::default_four_gate();
  const Vec2 goal{14.5, 2.5};
  service::SessionConfig config;
  service::ScriptPolicy policy;
  policy.goal = goal;
  policy.speed = 1.2;
  policy.heading_noise = 0.0;
  policy.speed_noise = 0.0;
  config.script = policy;
  service::use_straight_route(config, scenario, goal);

  const auto root = std::filesystem::temp_directory_path() / "telewalk_acceptance";
  std::filesystem::remove_all(root);
  service::ServerOptions options;
  options.seed = 7;
  options.log_root = root.string();
  options.stop_after_session = true;
  service::Server server(scenario, config, options);
  const int port = server.start(0);
  const auto begin = std::chrono::steady_clock::now();
  const service::ClientRunResult r = service::run_scripted_client("127.0.0.1", port, policy, true);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  server.wait();
  const auto sessions = server.sessions();
  if (sessions.size() != 1) return {false, fmt("expected one session, got %zu", sessions.size())};
  const service::SessionRecord& rec = sessions[0];

  // Avatar polyline from the logged broadcasts.
  std::ifstream in(std::filesystem::path(rec.log_dir) / "events.jsonl");
  double polyline = 0.0;
  bool have = false;
  Vec2 last;
  for (std::string line; std::getline(in, line);) {
    const service::Json j = service::Json::parse(line);
    if (j.at("type") != "state") continue;
    const Vec2 a{j.at("avatar").at("x").get<double>(), j.at("avatar").at("y").get<double>()};
    if (have) polyline += geometry::norm(a - last);
    last = a;
    have = true;
  }
  const double covered = rec.summary.covered_distance;
  const double rel = polyline > 0 ? std::abs(covered - polyline) / polyline : 1.0;
  const service::ReplayReport replayed = service::replay(rec.log_dir);
  const bool pass = !r.walker_failed && r.sent == 500 && r.states == 500 && rec.summary.ticks == 500 &&
                    rec.accepted == 500 && rec.rejected == 0 && rec.summary.dropout_ticks == 0 && rel <= 1e-3 &&
                    replayed.ok;
  std::filesystem::remove_all(root);
  return {pass, fmt("%ld sent, %ld states, %ld rejected, %ld dropout ticks in %.2f s (worst lateness %.1f ms); "
                    "covered %.4f m vs polyline %.4f m; replay %s (%ld compared)",
                    r.sent, r.states, rec.rejected, rec.summary.dropout_ticks, wall, 1000 * r.max_lateness,
                    covered, polyline, replayed.ok ? "identical" : "differs", replayed.compared)};
}

struct Criterion {
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"gate-distribution", 60, gate_distribution},
      {"motion-compression-invariants", 30, compression_invariants},
      {"force-transform", 5, force_transform},
      {"contact-gating", 0, contact_gating},
      {"kernel-equivalence", 0, kernel_equivalence},
      {"free-walk", 0, free_walk},
      {"calibration", 0, calibration_convergence},
      {"end-to-end", 0, end_to_end},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto begin = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
    if (c.budget_s > 0 && elapsed > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), elapsed);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
