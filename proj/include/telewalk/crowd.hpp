#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "telewalk/geometry.hpp"

namespace telewalk::crowd {

using geometry::Polygon;
using geometry::Segment;
using geometry::Vec2;

/// Social-force interaction constants.
struct ForceParams {
  double A = 2000.0;       // N, psychological repulsion strength
  double B = 0.08;         // m, repulsion range
  double k = 1.2e5;        // kg/s^2, body compression
  double kappa = 2.4e5;    // kg/(m s), sliding friction
  double cutoff_force = 0.1;  // N, repulsion below this is dropped

  /// Gap beyond the radius sum at which the repulsion falls to cutoff_force.
  double interaction_range() const;
};

/// Ranges from which new pedestrians draw their attributes.
struct PedestrianParams {
  double mass = 80.0;
  double tau = 0.5;
  double speed_min = 1.0;
  double speed_max = 1.4;
  double radius_min = 0.25;
  double radius_max = 0.35;
  /// A pedestrian slower than stall_speed for stall_time seconds while
  /// heading for its gate re-targets the nearest gate. This dissolves the
  /// stand-offs in front of the gate wall where two walkers bound for each
  /// other's neighbouring gate block one another indefinitely.
  double stall_speed = 0.1;
  double stall_time = 3.0;
};

struct GateChoiceParams {
  double lambda = 5.0;  // 1/s
  double gamma = 0.0;
};

enum class BodyKind : std::uint8_t { pedestrian, avatar };
enum class WalkState : std::uint8_t { to_gate, to_goal, exited };

struct Pedestrian {
  int id = 0;
  BodyKind kind = BodyKind::pedestrian;
  WalkState state = WalkState::to_gate;
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  double mass = 80.0;
  double desired_speed = 1.2;
  double tau = 0.5;
  int assigned_gate = -1;  // index into Scenario::gates
  int used_gate = -1;
  double spawn_time = 0.0;
  double exit_time = 0.0;
  double distance = 0.0;
  double stalled = 0.0;  // seconds spent below the stall speed
};

struct Gate {
  int id = 0;
  Segment segment;
};

struct Scenario {
  std::string name = "scenario";
  std::vector<Segment> walls;
  std::vector<Gate> gates;
  Polygon spawn_surface;
  Polygon goal_surface;
  int spawn_count = 150;
  double spawn_rate = 4.0;  // pedestrians per second
  std::uint64_t rng_seed = 1;
  double dt = 0.02;
  double time_cap = 600.0;
  ForceParams forces;
  PedestrianParams pedestrians;
  GateChoiceParams gate_choice;

  /// Throws InvalidInput on degenerate geometry or out-of-range parameters.
  void validate() const;
  /// Gate indices ordered by distance from the spawn centroid.
  std::vector<int> gate_ranking() const;
};

/// 20 m x 12 m hall, spawn surface in the lower-left corner, four 1 m gates
/// on the right wall at 2 m spacing, goal strip beyond the wall.
Scenario default_four_gate();

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Force model ---------------------------------------------------------------

/// m (v0 e - v) / tau with e toward the goal (zero direction at the goal).
Vec2 driving_force(const Pedestrian& p, Vec2 goal);

/// Force on `a` from `b`. Sets *coincident when the centres coincide and the
/// id-ordered fallback normal was used. pair_force(a, b) == -pair_force(b, a).
Vec2 pair_force(const Pedestrian& a, const Pedestrian& b, const ForceParams& params,
                bool* coincident = nullptr);

/// Force on `p` from a static wall segment.
Vec2 wall_force(const Pedestrian& p, const Segment& wall, const ForceParams& params,
                bool* coincident = nullptr);

bool in_contact(const Pedestrian& a, const Pedestrian& b);
bool in_contact(const Pedestrian& p, const Segment& wall);

enum class ForceKernel { brute_force, hashed, hashed_parallel };

struct InteractionForces {
  std::vector<Vec2> force;             // pair + wall, no driving term
  std::vector<std::uint8_t> contact;   // body overlaps a neighbour or wall
  std::vector<std::uint8_t> coincident;
  /// Contact rate bound (1/s): max of the summed friction rate
  /// kappa * overlap * (1/m_i + 1/m_j) and the square root of the summed
  /// spring rate k * (1/m_i + 1/m_j). World::step sub-steps when
  /// dt * stiffness exceeds 1, where explicit integration would go unstable.
  std::vector<double> stiffness;
};

/// Pair and wall forces for every body. All kernels visit neighbours in
/// ascending index order, so their sums are bit-identical.
void interaction_forces(ForceKernel kernel, std::span<const Pedestrian> bodies,
                        std::span<const Segment> walls, const ForceParams& params,
                        InteractionForces& out);

// Gate choice ----------------------------------------------------------------

/// softmax(-lambda * cost). Throws InvalidInput when no cost is finite.
std::vector<double> gate_probabilities(std::span<const double> costs, double lambda);

/// Samples an index from `probabilities` with one uniform draw.
int sample_index(std::span<const double> probabilities, std::mt19937_64& rng);

/// Free-walk time to each gate centre plus gamma times the anticipated cost.
std::vector<double> gate_costs(const Pedestrian& p, const Scenario& scenario,
                               std::span<const double> anticipated, double gamma);

int choose_gate(const Pedestrian& p, const Scenario& scenario, std::span<const double> anticipated,
                const GateChoiceParams& params, std::mt19937_64& rng);

// World ----------------------------------------------------------------------

struct StepDiagnostics {
  int contacts = 0;
  int wall_blocks = 0;  // moves cancelled because they crossed a wall
  int substeps = 1;
  double max_displacement = 0.0;
  bool tunneling_risk = false;  // some body moved more than half the smallest radius
  std::vector<std::pair<int, int>> coincident;  // ids
  Vec2 avatar_force;
  bool avatar_contact = false;
  std::vector<int> spawned;  // ids
  std::vector<int> exited;   // ids
  std::vector<int> rerouted; // ids that switched gate after stalling
};

class World {
 public:
  World(Scenario scenario, std::vector<double> anticipated_costs, std::uint64_t seed,
        ForceKernel kernel = ForceKernel::hashed);

  const StepDiagnostics& step();

  /// Places or moves the kinematic avatar body. It exerts forces on the
  /// pedestrians but is never integrated.
  void set_avatar(Vec2 position, Vec2 velocity, double radius = 0.3);
  void remove_avatar();
  const Pedestrian* avatar() const;

  /// Inserts a pedestrian directly (tests and fixtures). Returns its id.
  int add_pedestrian(Pedestrian p);

  double time() const { return time_; }
  long ticks() const { return ticks_; }
  const Scenario& scenario() const { return scenario_; }
  /// Bodies still in the world (walking pedestrians and the avatar).
  std::span<const Pedestrian> bodies() const { return bodies_; }
  /// Pedestrians that reached the goal surface, in exit order.
  std::span<const Pedestrian> exited() const { return exited_; }
  int spawned() const { return spawned_; }
  bool finished() const;
  const StepDiagnostics& diagnostics() const { return diag_; }
  /// Target point currently pulled toward by `p`.
  Vec2 goal_point(const Pedestrian& p) const;

 private:
  void spawn();
  void advance_states(Pedestrian& p, Vec2 before, double h);
  void check_forces() const;
  void integrate(double h, double t_end);

  Scenario scenario_;
  std::vector<double> anticipated_;
  ForceKernel kernel_;
  std::mt19937_64 spawn_rng_;
  std::mt19937_64 choice_rng_;
  std::vector<Pedestrian> bodies_;
  std::vector<Pedestrian> exited_;
  InteractionForces scratch_;
  StepDiagnostics diag_;
  std::vector<Vec2> exit_targets_;
  double time_ = 0.0;
  long ticks_ = 0;
  int spawned_ = 0;
  int next_id_ = 1;
  double spawn_credit_ = 1.0;
};

// Trials ---------------------------------------------------------------------

struct PedestrianRecord {
  int id = 0;
  int gate = -1;           // index of the gate walked through (assigned if none yet)
  int assigned_gate = -1;
  double completion_time = 0.0;  // spawn to goal surface
  double distance = 0.0;
  bool exited = false;
};

struct TrialMetrics {
  std::vector<PedestrianRecord> pedestrians;
  std::vector<int> gate_counts;
  std::vector<double> gate_cost;   // mean completion time per gate; 0 where unused
  std::vector<std::uint8_t> gate_used;
  double duration = 0.0;
  long ticks = 0;
  bool complete = true;
};

struct TrialOptions {
  ForceKernel kernel = ForceKernel::hashed;
  /// Called after every step; used for trajectory logging.
  std::function<void(const World&)> observer;
};

/// Runs until every pedestrian has exited or the time cap is hit.
TrialMetrics run_trial(const Scenario& scenario, std::span<const double> anticipated_costs,
                       std::uint64_t seed, const TrialOptions& options = {});

TrialMetrics collect_metrics(const World& world);

/// Trajectory CSV writer: `t,id,kind,x,y,vx,vy,gate,state`, one block of rows
/// every `decimation` ticks.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(std::ostream& out, int decimation = 5);
  void operator()(const World& world);
  void write_header();

 private:
  std::ostream& out_;
  int decimation_;
};

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace telewalk::crowd
