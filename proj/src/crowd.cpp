#include "telewalk/crowd.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

namespace telewalk::crowd {

using geometry::InvalidInput;
using geometry::norm;

namespace {

constexpr int kSpawnAttempts = 100;
constexpr double kExitLead = 2.5;
constexpr int kMaxSubsteps = 64;

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

bool finite(const Polygon& poly) {
  return std::all_of(poly.begin(), poly.end(), [](Vec2 p) { return finite(p); });
}

bool polygons_overlap(const Polygon& a, const Polygon& b) {
  for (Vec2 p : a) {
    if (geometry::contains(b, p)) return true;
  }
  for (Vec2 p : b) {
    if (geometry::contains(a, p)) return true;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Segment ea{a[i], a[(i + 1) % a.size()]};
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (geometry::crosses(ea, b[j], b[(j + 1) % b.size()])) return true;
    }
  }
  return false;
}

void require(bool ok, const char* message) {
  if (!ok) throw InvalidInput(message);
}

std::pair<Vec2, Vec2> bounds(const Polygon& poly) {
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi = -lo;
  for (Vec2 p : poly) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  return {lo, hi};
}

const char* state_name(const Pedestrian& p) {
  if (p.kind == BodyKind::avatar) return "avatar";
  switch (p.state) {
    case WalkState::to_gate:
      return "to_gate";
    case WalkState::to_goal:
      return "to_goal";
    case WalkState::exited:
      return "exited";
  }
  return "unknown";
}

}  // namespace

void Scenario::validate() const {
  for (const Segment& w : walls) {
    require(finite(w.a) && finite(w.b), "wall coordinates must be finite");
    require(w.length() > 0.0, "wall segments must have positive length");
  }
  require(!gates.empty(), "scenario needs at least one gate");
  for (const Gate& g : gates) {
    require(finite(g.segment.a) && finite(g.segment.b), "gate coordinates must be finite");
    require(g.segment.length() > 0.0, "gate segments must have positive length");
  }
  for (std::size_t i = 0; i < gates.size(); ++i) {
    for (std::size_t j = i + 1; j < gates.size(); ++j) {
      require(gates[i].id != gates[j].id, "gate ids must be unique");
    }
  }
  require(spawn_surface.size() >= 3 && finite(spawn_surface), "spawn surface must be a polygon");
  require(goal_surface.size() >= 3 && finite(goal_surface), "goal surface must be a polygon");
  require(std::abs(geometry::signed_area(spawn_surface)) > 1e-9, "spawn surface is degenerate");
  require(std::abs(geometry::signed_area(goal_surface)) > 1e-9, "goal surface is degenerate");
  require(!polygons_overlap(spawn_surface, goal_surface), "spawn and goal surfaces must be disjoint");
  require(spawn_count >= 0, "spawn_count must be non-negative");
  require(spawn_rate > 0.0 && std::isfinite(spawn_rate), "spawn_rate must be positive");
  require(dt > 0.0 && dt <= 0.1, "dt must lie in (0, 0.1]");
  require(time_cap > 0.0, "time_cap must be positive");
  const PedestrianParams& p = pedestrians;
  require(p.mass > 0.0 && p.tau > 0.0, "mass and tau must be positive");
  require(p.stall_speed >= 0.0 && p.stall_time > 0.0, "stall parameters out of range");
  require(p.speed_min > 0.0 && p.speed_min <= p.speed_max && p.speed_max <= 3.0,
          "desired speed range must lie in (0, 3]");
  require(p.radius_min >= 0.2 && p.radius_min <= p.radius_max && p.radius_max <= 0.5,
          "radius range must lie in [0.2, 0.5]");
  require(gate_choice.lambda >= 0.0 && gate_choice.gamma >= 0.0, "lambda and gamma must be non-negative");
  const ForceParams& f = forces;
  require(f.A >= 0.0 && f.B > 0.0 && f.k >= 0.0 && f.kappa >= 0.0 && f.cutoff_force > 0.0,
          "force parameters out of range");
}

std::vector<int> Scenario::gate_ranking() const {
  const Vec2 from = geometry::centroid(spawn_surface);
  std::vector<int> order(gates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return norm(gates[static_cast<std::size_t>(a)].segment.midpoint() - from) <
           norm(gates[static_cast<std::size_t>(b)].segment.midpoint() - from);
  });
  return order;
}

Scenario default_four_gate() {
  Scenario s;
  s.name = "default_four_gate";
  s.walls = {
      {{0, 0}, {20, 0}},  {{20, 12}, {0, 12}}, {{0, 12}, {0, 0}},
      {{20, 0}, {20, 2}}, {{20, 3}, {20, 4}},  {{20, 5}, {20, 6}},
      {{20, 7}, {20, 8}}, {{20, 9}, {20, 12}},
  };
  for (int i = 0; i < 4; ++i) {
    const double y = 2.0 + 2.0 * i;
    s.gates.push_back({i + 1, {{20, y}, {20, y + 1}}});
  }
  s.spawn_surface = {{0.5, 0.5}, {4.5, 0.5}, {4.5, 4.5}, {0.5, 4.5}};
  s.goal_surface = {{20.5, 0}, {22.5, 0}, {22.5, 12}, {20.5, 12}};
  return s;
}

// Gate choice ---------------------------------------------------------------

std::vector<double> gate_probabilities(std::span<const double> costs, double lambda) {
  if (costs.empty()) throw InvalidInput("no gates to choose from");
  double best = std::numeric_limits<double>::infinity();
  for (double c : costs) {
    if (std::isnan(c)) throw InvalidInput("gate cost is NaN");
    best = std::min(best, c);
  }
  if (!std::isfinite(best)) throw InvalidInput("all gates are unreachable");
  std::vector<double> p(costs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    p[i] = std::isfinite(costs[i]) ? std::exp(-lambda * (costs[i] - best)) : 0.0;
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

int sample_index(std::span<const double> probabilities, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    acc += probabilities[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

std::vector<double> gate_costs(const Pedestrian& p, const Scenario& scenario,
                               std::span<const double> anticipated, double gamma) {
  std::vector<double> c(scenario.gates.size());
  for (std::size_t g = 0; g < c.size(); ++g) {
    c[g] = norm(scenario.gates[g].segment.midpoint() - p.position) / p.desired_speed;
    if (g < anticipated.size()) c[g] += gamma * anticipated[g];
  }
  return c;
}

int choose_gate(const Pedestrian& p, const Scenario& scenario, std::span<const double> anticipated,
                const GateChoiceParams& params, std::mt19937_64& rng) {
  const std::vector<double> costs = gate_costs(p, scenario, anticipated, params.gamma);
  const std::vector<double> probs = gate_probabilities(costs, params.lambda);
  return sample_index(probs, rng);
}

// World -----------------------------------------------------------------------

World::World(Scenario scenario, std::vector<double> anticipated_costs, std::uint64_t seed,
             ForceKernel kernel)
    : scenario_(std::move(scenario)), anticipated_(std::move(anticipated_costs)), kernel_(kernel) {
  scenario_.validate();
  if (!anticipated_.empty() && anticipated_.size() != scenario_.gates.size()) {
    throw InvalidInput("anticipated cost vector does not match the gate count");
  }
  for (double c : anticipated_) {
    if (!std::isfinite(c) || c < 0.0) throw InvalidInput("anticipated costs must be finite and non-negative");
  }
  std::seed_seq spawn_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
  std::seed_seq choice_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 2u};
  spawn_rng_.seed(spawn_seed);
  choice_rng_.seed(choice_seed);

  const Vec2 goal = geometry::centroid(scenario_.goal_surface);
  for (const Gate& g : scenario_.gates) {
    const Vec2 mid = g.segment.midpoint();
    Vec2 n = geometry::perp(g.segment.b - g.segment.a) / g.segment.length();
    if (geometry::dot(n, goal - mid) < 0.0) n = -n;
    exit_targets_.push_back(mid + n * kExitLead);
  }
}

int World::add_pedestrian(Pedestrian p) {
  p.id = next_id_++;
  if (p.kind == BodyKind::avatar) throw InvalidInput("use set_avatar for the avatar body");
  bodies_.push_back(p);
  return p.id;
}

void World::set_avatar(Vec2 position, Vec2 velocity, double radius) {
  if (bodies_.empty() || bodies_.front().kind != BodyKind::avatar) {
    Pedestrian a;
    a.id = 0;
    a.kind = BodyKind::avatar;
    bodies_.insert(bodies_.begin(), a);
  }
  Pedestrian& a = bodies_.front();
  a.position = position;
  a.velocity = velocity;
  a.radius = radius;
}

void World::remove_avatar() {
  if (!bodies_.empty() && bodies_.front().kind == BodyKind::avatar) bodies_.erase(bodies_.begin());
}

const Pedestrian* World::avatar() const {
  return !bodies_.empty() && bodies_.front().kind == BodyKind::avatar ? &bodies_.front() : nullptr;
}

bool World::finished() const {
  if (spawned_ < scenario_.spawn_count) return false;
  return std::none_of(bodies_.begin(), bodies_.end(),
                      [](const Pedestrian& p) { return p.kind == BodyKind::pedestrian; });
}

Vec2 World::goal_point(const Pedestrian& p) const {
  if (p.state == WalkState::to_goal && p.used_gate >= 0) {
    return exit_targets_[static_cast<std::size_t>(p.used_gate)];
  }
  if (p.assigned_gate >= 0) return scenario_.gates[static_cast<std::size_t>(p.assigned_gate)].segment.midpoint();
  return geometry::centroid(scenario_.goal_surface);
}

void World::spawn() {
  const PedestrianParams& pp = scenario_.pedestrians;
  const auto [lo, hi] = bounds(scenario_.spawn_surface);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  while (spawn_credit_ >= 1.0 && spawned_ < scenario_.spawn_count) {
    Pedestrian p;
    p.mass = pp.mass;
    p.tau = pp.tau;
    p.desired_speed = pp.speed_min + (pp.speed_max - pp.speed_min) * unit(spawn_rng_);
    p.radius = pp.radius_min + (pp.radius_max - pp.radius_min) * unit(spawn_rng_);
    bool placed = false;
    for (int attempt = 0; attempt < kSpawnAttempts && !placed; ++attempt) {
      p.position = {lo.x + (hi.x - lo.x) * unit(spawn_rng_), lo.y + (hi.y - lo.y) * unit(spawn_rng_)};
      if (!geometry::contains(scenario_.spawn_surface, p.position)) continue;
      placed = std::none_of(bodies_.begin(), bodies_.end(),
                            [&](const Pedestrian& o) { return in_contact(p, o); }) &&
               std::none_of(scenario_.walls.begin(), scenario_.walls.end(),
                            [&](const Segment& w) { return in_contact(p, w); });
    }
    if (!placed) return;  // try again next tick
    p.id = next_id_++;
    p.spawn_time = time_;
    p.assigned_gate = choose_gate(p, scenario_, anticipated_, scenario_.gate_choice, choice_rng_);
    bodies_.push_back(p);
    diag_.spawned.push_back(p.id);
    ++spawned_;
    spawn_credit_ -= 1.0;
  }
}

void World::advance_states(Pedestrian& p, Vec2 before, double h) {
  if (p.state == WalkState::to_gate) {
    const PedestrianParams& pp = scenario_.pedestrians;
    p.stalled = norm(p.velocity) < pp.stall_speed ? p.stalled + h : 0.0;
    if (p.stalled >= pp.stall_time) {
      int nearest = p.assigned_gate;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < scenario_.gates.size(); ++g) {
        const double d = norm(scenario_.gates[g].segment.midpoint() - p.position);
        if (d < best) {
          best = d;
          nearest = static_cast<int>(g);
        }
      }
      if (nearest != p.assigned_gate) diag_.rerouted.push_back(p.id);
      p.assigned_gate = nearest;
      p.stalled = 0.0;
    }
    for (std::size_t g = 0; g < scenario_.gates.size(); ++g) {
      if (geometry::crosses(scenario_.gates[g].segment, before, p.position)) {
        p.used_gate = static_cast<int>(g);
        p.state = WalkState::to_goal;
        break;
      }
    }
  }
  if (geometry::contains(scenario_.goal_surface, p.position)) p.state = WalkState::exited;
}

void World::check_forces() const {
  const ForceParams& fp = scenario_.forces;
  for (std::size_t i = 0; i < bodies_.size(); ++i) {
    if (finite(scratch_.force[i])) continue;
    const Pedestrian& me = bodies_[i];
    for (std::size_t j = 0; j < bodies_.size(); ++j) {
      if (j != i && !finite(pair_force(me, bodies_[j], fp))) {
        throw SimulationError("non-finite force between pedestrians " + std::to_string(me.id) + " and " +
                              std::to_string(bodies_[j].id));
      }
    }
    throw SimulationError("non-finite wall force on pedestrian " + std::to_string(me.id));
  }
}

void World::integrate(double h, double t_end) {
  for (std::size_t i = 0; i < bodies_.size(); ++i) {
    Pedestrian& p = bodies_[i];
    if (p.kind == BodyKind::avatar) continue;
    const Vec2 force = scratch_.force[i] + driving_force(p, goal_point(p));
    if (!finite(force)) {
      throw SimulationError("non-finite driving force on pedestrian " + std::to_string(p.id));
    }
    p.velocity += force * (h / p.mass);
    const Vec2 before = p.position;
    p.position += p.velocity * h;
    // Crowd pressure can push a centre through a wall, after which the wall
    // force points the wrong way. Such a step is cancelled and the velocity
    // component through the wall dropped.
    for (const Segment& w : scenario_.walls) {
      if (!geometry::crosses(w, before, p.position)) continue;
      const Vec2 n = geometry::perp(w.b - w.a) / w.length();
      p.velocity -= n * geometry::dot(p.velocity, n);
      p.position = before;
      ++diag_.wall_blocks;
    }
    p.distance += norm(p.position - before);
    advance_states(p, before, h);
    if (p.state == WalkState::exited) p.exit_time = t_end;
  }

  auto keep = bodies_.begin();
  for (auto it = bodies_.begin(); it != bodies_.end(); ++it) {
    if (it->state == WalkState::exited) {
      diag_.exited.push_back(it->id);
      exited_.push_back(*it);
    } else {
      if (keep != it) *keep = std::move(*it);
      ++keep;
    }
  }
  bodies_.erase(keep, bodies_.end());
}

const StepDiagnostics& World::step() {
  diag_.contacts = 0;
  diag_.wall_blocks = 0;
  diag_.substeps = 1;
  diag_.max_displacement = 0.0;
  diag_.tunneling_risk = false;
  diag_.coincident.clear();
  diag_.avatar_force = {};
  diag_.avatar_contact = false;
  diag_.spawned.clear();
  diag_.exited.clear();
  diag_.rerouted.clear();

  spawn();
  const double dt = scenario_.dt;
  const ForceParams& fp = scenario_.forces;
  for (const Pedestrian& p : bodies_) {
    if (!finite(p.position)) throw SimulationError("non-finite position of pedestrian " + std::to_string(p.id));
  }
  interaction_forces(kernel_, bodies_, scenario_.walls, fp, scratch_);
  check_forces();

  // Diagnostics describe the state at the start of the tick.
  double min_radius = std::numeric_limits<double>::infinity();
  double stiffness = 0.0;
  std::vector<std::pair<int, Vec2>> start;
  start.reserve(bodies_.size());
  for (std::size_t i = 0; i < bodies_.size(); ++i) {
    const Pedestrian& me = bodies_[i];
    min_radius = std::min(min_radius, me.radius);
    start.emplace_back(me.id, me.position);
    if (scratch_.contact[i] != 0) ++diag_.contacts;
    if (scratch_.coincident[i] != 0) {
      for (std::size_t j = i + 1; j < bodies_.size(); ++j) {
        if (norm(me.position - bodies_[j].position) < 1e-9) diag_.coincident.emplace_back(me.id, bodies_[j].id);
      }
    }
    if (me.kind == BodyKind::avatar) {
      diag_.avatar_force = scratch_.force[i];
      diag_.avatar_contact = scratch_.contact[i] != 0;
    } else {
      stiffness = std::max(stiffness, scratch_.stiffness[i]);
    }
  }

  // A tick is split when stiff contacts would make a single explicit step
  // unstable; the force law itself is unchanged.
  const int substeps = std::clamp(static_cast<int>(std::ceil(dt * stiffness)), 1, kMaxSubsteps);
  diag_.substeps = substeps;
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) {
    if (k > 0) {
      interaction_forces(kernel_, bodies_, scenario_.walls, fp, scratch_);
      check_forces();
    }
    integrate(h, k + 1 == substeps ? time_ + dt : time_ + (k + 1) * h);
  }

  const auto moved_from = [&](const Pedestrian& p) {
    const auto it = std::find_if(start.begin(), start.end(), [&](const auto& e) { return e.first == p.id; });
    return it == start.end() ? 0.0 : norm(p.position - it->second);
  };
  for (const Pedestrian& p : bodies_) diag_.max_displacement = std::max(diag_.max_displacement, moved_from(p));
  for (const int id : diag_.exited) {
    const auto it = std::find_if(exited_.rbegin(), exited_.rend(), [&](const Pedestrian& p) { return p.id == id; });
    diag_.max_displacement = std::max(diag_.max_displacement, moved_from(*it));
  }
  diag_.tunneling_risk = diag_.max_displacement > 0.5 * min_radius;

  time_ += dt;
  ++ticks_;
  spawn_credit_ += scenario_.spawn_rate * dt;
  return diag_;
}

// Trials ----------------------------------------------------------------------

TrialMetrics collect_metrics(const World& world) {
  const std::size_t gates = world.scenario().gates.size();
  TrialMetrics m;
  m.gate_counts.assign(gates, 0);
  m.gate_cost.assign(gates, 0.0);
  m.gate_used.assign(gates, 0);
  std::vector<int> exited_per_gate(gates, 0);

  auto record = [&](const Pedestrian& p, bool exited) {
    PedestrianRecord r;
    r.id = p.id;
    r.assigned_gate = p.assigned_gate;
    r.gate = p.used_gate >= 0 ? p.used_gate : p.assigned_gate;
    r.distance = p.distance;
    r.exited = exited;
    r.completion_time = exited ? p.exit_time - p.spawn_time : world.time() - p.spawn_time;
    if (r.gate >= 0) {
      const auto g = static_cast<std::size_t>(r.gate);
      ++m.gate_counts[g];
      if (exited) {
        m.gate_cost[g] += r.completion_time;
        ++exited_per_gate[g];
      }
    }
    m.pedestrians.push_back(r);
  };
  for (const Pedestrian& p : world.exited()) record(p, true);
  for (const Pedestrian& p : world.bodies()) {
    if (p.kind == BodyKind::pedestrian) record(p, false);
  }
  std::sort(m.pedestrians.begin(), m.pedestrians.end(),
            [](const PedestrianRecord& a, const PedestrianRecord& b) { return a.id < b.id; });
  for (std::size_t g = 0; g < gates; ++g) {
    if (exited_per_gate[g] > 0) {
      m.gate_cost[g] /= exited_per_gate[g];
      m.gate_used[g] = 1;
    }
  }
  m.duration = world.time();
  m.ticks = world.ticks();
  m.complete = world.finished();
  return m;
}

TrialMetrics run_trial(const Scenario& scenario, std::span<const double> anticipated_costs,
                       std::uint64_t seed, const TrialOptions& options) {
  World world(scenario, std::vector<double>(anticipated_costs.begin(), anticipated_costs.end()), seed,
              options.kernel);
  const auto cap_ticks = static_cast<long>(std::ceil(scenario.time_cap / scenario.dt - 1e-9));
  while (!world.finished() && world.ticks() < cap_ticks) {
    world.step();
    if (options.observer) options.observer(world);
  }
  return collect_metrics(world);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

TrajectoryWriter::TrajectoryWriter(std::ostream& out, int decimation)
    : out_(out), decimation_(std::max(1, decimation)) {}

void TrajectoryWriter::write_header() { out_ << "t,id,kind,x,y,vx,vy,gate,state\n"; }

void TrajectoryWriter::operator()(const World& world) {
  const StepDiagnostics& diag = world.diagnostics();
  const bool sample = world.ticks() % decimation_ == 0;
  if (!sample && diag.exited.empty()) return;
  const std::string t = format_double(world.time());
  const auto& gates = world.scenario().gates;
  auto row = [&](const Pedestrian& p) {
    const int g = p.used_gate >= 0 ? p.used_gate : p.assigned_gate;
    out_ << t << ',' << p.id << ',' << (p.kind == BodyKind::avatar ? "avatar" : "pedestrian") << ','
         << format_double(p.position.x) << ',' << format_double(p.position.y) << ','
         << format_double(p.velocity.x) << ',' << format_double(p.velocity.y) << ',';
    if (g >= 0) out_ << gates[static_cast<std::size_t>(g)].id;
    out_ << ',' << state_name(p) << '\n';
  };
  if (sample) {
    for (const Pedestrian& p : world.bodies()) row(p);
  }
  // Pedestrians that exited this tick sit at the back of the exit list; their
  // rows are written regardless of decimation.
  const auto gone = world.exited();
  for (std::size_t k = gone.size() - diag.exited.size(); k < gone.size(); ++k) row(gone[k]);
}

}  // namespace telewalk::crowd
