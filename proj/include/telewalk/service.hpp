#pragma once

#include <cstdint>
#include <fstream>
#include <future>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "telewalk/crowd.hpp"
#include "telewalk/haptics.hpp"
#include "telewalk/motion_compression.hpp"

namespace telewalk::service {

using Json = nlohmann::json;
using geometry::Pose;
using geometry::Vec2;

inline constexpr double kTrackerPeriod = 0.02;  // s, 50 Hz

struct TrackerSample {
  std::int64_t seq = 0;
  double t = 0.0;
  Pose pose;
};

/// Wire form {"type":"pose","seq","t","x","y","heading"}.
Json to_json(const TrackerSample& s);
TrackerSample sample_from_json(const Json& j);

struct Event {
  double t = 0.0;
  std::string kind;  // dropout, clamped, rejected, plan, replan_failed, goal_reached, ...
  std::string message;
};

Json to_json(const Event& e);

/// Scripted walker settings; see ScriptedParticipant.
struct ScriptPolicy {
  Vec2 goal;                    // target frame
  double speed = 1.0;           // m/s of avatar progress
  double heading_noise = 2.0 * std::numbers::pi / 180.0;  // rad, std per sample
  double speed_noise = 0.05;    // m/s, std per sample
  std::uint64_t seed = 1;
  int max_samples = 100000;
};

struct SessionConfig {
  compression::CompressionConfig compression;
  Pose user_start{2.0, 2.0, 0.0};
  /// Target-frame start; defaults to the spawn centroid facing the first gate.
  std::optional<Pose> avatar_start;
  /// Planned target route (polyline). Without one the target path is
  /// predicted toward `goals` (gate midpoints when empty) and re-planned.
  std::vector<Vec2> route;
  std::vector<Vec2> goals;
  double avatar_radius = 0.3;
  double dropout_gap = 0.2;  // s
  int replan_latency = 5;    // ticks between a re-plan request and its swap
  bool include_driving = false;
  int trajectory_decimation = 5;
  std::optional<ScriptPolicy> script;
};

SessionConfig session_config_from_json(const Json& j);
Json to_json(const SessionConfig& c);
/// Route for a scripted run toward `goal`: straight from the avatar start.
void use_straight_route(SessionConfig& config, const crowd::Scenario& scenario, Vec2 goal);
Pose avatar_start(const SessionConfig& config, const crowd::Scenario& scenario);

// Ingest ----------------------------------------------------------------------

struct IngestResult {
  bool accepted = false;
  TrackerSample sample;      // clamped copy when accepted
  std::vector<Event> events;
};

/// Validates the pose stream: sequence regressions are rejected, timestamp
/// gaps above `dropout_gap` are flagged, poses outside the room are clamped
/// to its boundary with a warning.
class Ingest {
 public:
  Ingest(compression::RoomSpec room, double dropout_gap);
  IngestResult push(const TrackerSample& sample);
  long accepted() const { return accepted_; }
  long rejected() const { return rejected_; }

 private:
  compression::RoomSpec room_;
  double dropout_gap_;
  std::optional<TrackerSample> last_;
  long accepted_ = 0;
  long rejected_ = 0;
};

// Session pipeline ------------------------------------------------------------

struct PedSnapshot {
  int id = 0;
  Vec2 position;
  Vec2 velocity;
  double radius = 0.0;
};

struct BroadcastState {
  long tick = 0;
  double t = 0.0;
  std::int64_t seq = -1;  // sample consumed by this tick, -1 when none
  Pose user;
  Pose avatar;
  Vec2 avatar_velocity;
  double avatar_radius = 0.3;
  double displayed_heading = 0.0;
  compression::GuidanceState guidance;
  double target_tangent = 0.0;
  double user_tangent = 0.0;
  std::vector<PedSnapshot> peds;
  haptics::ForceSample force_target;
  haptics::ForceSample force_user;
};

/// Wire form of a state message. Doubles are written in shortest round-trip
/// form, so equal states serialize to equal strings.
Json to_json(const BroadcastState& s);
std::string encode(const BroadcastState& s);
BroadcastState state_from_json(const Json& j);

struct TickOutput {
  BroadcastState state;
  std::string encoded;
  std::vector<Event> events;
};

struct SessionSummary {
  long ticks = 0;
  long samples = 0;
  long dropout_ticks = 0;
  double completion_time = 0.0;
  double covered_distance = 0.0;  // avatar polyline length
  int chosen_gate = -1;           // gate id, -1 if none crossed
  bool reached_goal = false;
  int replans = 0;
};

Json to_json(const SessionSummary& s);

/// Owns the crowd, the current correspondence and the guidance state. Each
/// tick runs, in order: swap in a finished re-plan, map user pose to avatar
/// pose, guidance, crowd step with the avatar as a kinematic body, avatar
/// force and its transform to the user frame, state snapshot, re-plan check.
/// The user pose is located within kTrackWindow of the previous foot point,
/// so a user path that passes close to itself does not make the avatar jump.
/// A re-plan runs in the background and is swapped in exactly
/// `replan_latency` ticks after it was requested, so results do not depend
/// on thread timing.
class Session {
 public:
  static constexpr double kTrackWindow = 1.0;  // m of user arc length

  Session(crowd::Scenario scenario, SessionConfig config, std::uint64_t seed);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// `sample` is an already ingested sample; nullopt repeats the last pose
  /// (tracker dropout).
  TickOutput tick(const std::optional<TrackerSample>& sample);

  const crowd::World& world() const { return world_; }
  /// Places a pedestrian directly (staged encounters in tests and demos).
  int add_pedestrian(crowd::Pedestrian p) { return world_.add_pedestrian(std::move(p)); }
  const crowd::Scenario& scenario() const { return world_.scenario(); }
  const SessionConfig& config() const { return config_; }
  std::shared_ptr<const compression::CorrespondenceMap> map() const { return map_; }
  const SessionSummary& summary() const { return summary_; }
  /// {"type":"config", ...} message sent to clients on connect.
  Json config_message() const;
  /// Latest plan as a {"type":"plan", ...} message, for clients that steer
  /// through the mapping.
  Json plan_message() const;
  long plan_version() const { return plan_version_; }

 private:
  compression::PolyPath target_plan(const Pose& avatar) const;
  void request_replan(const Pose& user, const Pose& avatar);

  SessionConfig config_;
  crowd::World world_;
  std::shared_ptr<const compression::CorrespondenceMap> map_;
  compression::GuidanceState guidance_;
  Pose last_user_;
  std::optional<Pose> last_avatar_;
  Pose route_start_;
  compression::PolyPath route_;  // empty when predicting
  double user_s_ = 0.0;          // user arc length of the last foot point
  long tick_ = 0;
  long plan_version_ = 0;
  struct Pending {
    long due = 0;
    std::future<compression::Correspondence> result;
  };
  std::optional<Pending> pending_;
  SessionSummary summary_;
};

// Scripted participant --------------------------------------------------------

/// Headless stand-in for the human walker. Each sample moves the user onto
/// the room image (through the inverse mapping) of the point one step of
/// `speed` ahead on the straight line from the displayed avatar to the goal,
/// then perturbs heading and step. Without noise the avatar advances exactly
/// speed x period per sample. At zero speed the walker stands still and the
/// noise is not applied. A walker that gains less than 1 cm on the goal over 5 s stops with
/// a failure.
class ScriptedParticipant {
 public:
  ScriptedParticipant(ScriptPolicy policy, Pose start, compression::RoomSpec room);

  /// Next sample given the current mapping and the last broadcast avatar
  /// pose; nullopt when the goal is reached, the sample budget is spent or
  /// the walker failed.
  std::optional<TrackerSample> next(const compression::CorrespondenceMap& map, const Pose& avatar);
  bool finished() const { return finished_; }
  bool failed() const { return failed_; }
  const std::string& failure() const { return failure_; }
  const Pose& pose() const { return pose_; }

 private:
  ScriptPolicy policy_;
  compression::RoomSpec room_;
  Pose pose_;
  std::mt19937_64 rng_;
  std::int64_t seq_ = 0;
  double best_remaining_ = std::numeric_limits<double>::infinity();
  std::int64_t best_seq_ = 0;
  bool finished_ = false;
  bool failed_ = false;
  std::string failure_;
};

// Session log -----------------------------------------------------------------

/// Session log directory:
///   config.json      scenario, session config, seed, mode
///   events.jsonl     one line per tick ({"type":"tick", sample}), followed by
///                    the broadcast state line and any events
///   trajectory.csv   crowd and avatar trajectories
///   summary.json     written on close
class SessionLog {
 public:
  SessionLog(const std::string& dir, const crowd::Scenario& scenario, const SessionConfig& config,
             std::uint64_t seed);
  void record(const std::optional<TrackerSample>& sample, const TickOutput& out, const crowd::World& world);
  void record_events(const std::vector<Event>& events);
  void close(const SessionSummary& summary, const Json& extra = Json::object());

 private:
  std::string dir_;
  std::ofstream events_;
  std::ofstream trajectory_;
  std::unique_ptr<crowd::TrajectoryWriter> writer_;
};

struct RunResult {
  SessionSummary summary;
  long rejected = 0;
  bool participant_failed = false;
  std::string failure;
};

/// Headless scripted session: participant, ingest and pipeline in lock-step,
/// logged to `dir` (skipped when empty).
RunResult run_scripted(const crowd::Scenario& scenario, const SessionConfig& config, std::uint64_t seed,
                       const std::string& dir);

/// Headless crowd trial logged to `dir`: config.json, trajectory.csv, metrics.json.
crowd::TrialMetrics run_trial_logged(const crowd::Scenario& scenario, std::uint64_t seed, const std::string& dir);
Json to_json(const crowd::TrialMetrics& m, const crowd::Scenario& scenario);

struct ReplayReport {
  bool ok = false;
  long compared = 0;
  long mismatches = 0;
  std::string first_mismatch;
};

/// Re-feeds a log directory through the pipeline and compares every
/// broadcast (session logs) or the trajectory bytes (trial logs).
ReplayReport replay(const std::string& dir);

}  // namespace telewalk::service
