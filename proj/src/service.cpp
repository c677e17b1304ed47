#include "telewalk/service.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "telewalk/scenario_io.hpp"

namespace telewalk::service {

using compression::CorrespondenceMap;
using compression::InfeasiblePath;
using geometry::InvalidInput;
using geometry::norm;

namespace {

bool finite(const Pose& p) { return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading); }

Json pose_object(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}; }

Json force_object(const haptics::ForceSample& f) {
  return {{"fx", f.fx}, {"fy", f.fy}, {"contact", f.in_contact}, {"frame", haptics::frame_name(f.frame)}};
}

haptics::ForceSample force_from(const Json& j, double t) {
  haptics::ForceSample f;
  f.fx = j.at("fx").get<double>();
  f.fy = j.at("fy").get<double>();
  f.in_contact = j.at("contact").get<bool>();
  f.frame = j.at("frame").get<std::string>() == "user" ? haptics::Frame::user : haptics::Frame::target;
  f.t = t;
  return f;
}

}  // namespace

Json to_json(const Event& e) {
  return {{"type", "event"}, {"t", e.t}, {"kind", e.kind}, {"message", e.message}};
}

Json to_json(const TrackerSample& s) {
  return {{"type", "pose"}, {"seq", s.seq}, {"t", s.t}, {"x", s.pose.x}, {"y", s.pose.y}, {"heading", s.pose.heading}};
}

TrackerSample sample_from_json(const Json& j) {
  try {
    TrackerSample s;
    s.seq = j.at("seq").get<std::int64_t>();
    s.t = j.at("t").get<double>();
    s.pose = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("heading").get<double>()};
    return s;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("pose message: ") + e.what());
  }
}

// Config ------------------------------------------------------------------------

SessionConfig session_config_from_json(const Json& j) {
  try {
    if (!j.is_object()) throw InvalidInput("session config must be a JSON object");
    SessionConfig c;
    auto& mc = c.compression;
    if (j.contains("room")) {
      const Json& r = j.at("room");
      mc.room.width = r.value("width", mc.room.width);
      mc.room.height = r.value("height", mc.room.height);
      mc.room.margin = r.value("margin", mc.room.margin);
    }
    mc.room.validate();
    if (j.contains("user_start")) c.user_start = io::pose_from_json(j.at("user_start"));
    if (j.contains("avatar_start")) c.avatar_start = io::pose_from_json(j.at("avatar_start"));
    if (j.contains("route")) {
      for (const Json& p : j.at("route")) c.route.push_back(io::point_from_json(p));
    }
    if (j.contains("goals")) {
      for (const Json& p : j.at("goals")) c.goals.push_back(io::point_from_json(p));
    }
    mc.ds = j.value("ds", mc.ds);
    mc.horizon = j.value("horizon", mc.horizon);
    mc.goal_window = j.value("goal_window", mc.goal_window);
    mc.replan_deviation = j.value("replan_deviation", mc.replan_deviation);
    mc.replan_consumed = j.value("replan_consumed", mc.replan_consumed);
    if (j.contains("guidance")) {
      const Json& g = j.at("guidance");
      mc.gains.cross_track = g.value("cross_track", mc.gains.cross_track);
      mc.gains.heading = g.value("heading", mc.gains.heading);
      mc.gains.offset_max = g.value("offset_max", mc.gains.offset_max);
      mc.gains.rate_max = g.value("rate_max", mc.gains.rate_max);
    }
    if (j.contains("penalty")) {
      const Json& p = j.at("penalty");
      mc.penalty.initial_weight = p.value("initial_weight", mc.penalty.initial_weight);
      mc.penalty.outer_rounds = p.value("outer_rounds", mc.penalty.outer_rounds);
      mc.penalty.inner_iterations = p.value("inner_iterations", mc.penalty.inner_iterations);
      mc.penalty.gradient_tolerance = p.value("gradient_tolerance", mc.penalty.gradient_tolerance);
      mc.penalty.feasibility_tolerance = p.value("feasibility_tolerance", mc.penalty.feasibility_tolerance);
    }
    c.avatar_radius = j.value("avatar_radius", c.avatar_radius);
    c.dropout_gap = j.value("dropout_gap", c.dropout_gap);
    c.replan_latency = j.value("replan_latency", c.replan_latency);
    c.include_driving = j.value("include_driving", c.include_driving);
    c.trajectory_decimation = j.value("trajectory_decimation", c.trajectory_decimation);
    if (j.contains("script")) {
      const Json& s = j.at("script");
      ScriptPolicy p;
      p.goal = io::point_from_json(s.at("goal"));
      p.speed = s.value("speed", p.speed);
      if (s.contains("heading_noise_deg")) p.heading_noise = s.at("heading_noise_deg").get<double>() * std::numbers::pi / 180.0;
      p.heading_noise = s.value("heading_noise", p.heading_noise);
      p.speed_noise = s.value("speed_noise", p.speed_noise);
      p.seed = s.value("seed", p.seed);
      p.max_samples = s.value("max_samples", p.max_samples);
      if (!(p.speed >= 0.0) || p.heading_noise < 0.0 || p.speed_noise < 0.0 ) {
        throw InvalidInput("script parameters out of range");
      }
      c.script = p;
    }
    if (!(mc.ds > 0.0) || !(mc.horizon > 0.0)) throw InvalidInput("ds and horizon must be positive");
    if (c.avatar_radius < 0.2 || c.avatar_radius > 0.5) throw InvalidInput("avatar_radius must lie in [0.2, 0.5]");
    if (!(c.dropout_gap > 0.0) || c.replan_latency < 1) throw InvalidInput("dropout_gap and replan_latency must be positive");
    return c;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("session config: ") + e.what());
  }
}

Json to_json(const SessionConfig& c) {
  const auto& mc = c.compression;
  Json route = Json::array();
  for (Vec2 p : c.route) route.push_back(io::to_json(p));
  Json goals = Json::array();
  for (Vec2 p : c.goals) goals.push_back(io::to_json(p));
  Json j = {
      {"room", {{"width", mc.room.width}, {"height", mc.room.height}, {"margin", mc.room.margin}}},
      {"user_start", io::to_json(c.user_start)},
      {"route", route},
      {"goals", goals},
      {"ds", mc.ds},
      {"horizon", mc.horizon},
      {"goal_window", mc.goal_window},
      {"replan_deviation", mc.replan_deviation},
      {"replan_consumed", mc.replan_consumed},
      {"guidance",
       {{"cross_track", mc.gains.cross_track}, {"heading", mc.gains.heading}, {"offset_max", mc.gains.offset_max},
        {"rate_max", mc.gains.rate_max}}},
      {"penalty",
       {{"initial_weight", mc.penalty.initial_weight}, {"outer_rounds", mc.penalty.outer_rounds},
        {"inner_iterations", mc.penalty.inner_iterations}, {"gradient_tolerance", mc.penalty.gradient_tolerance},
        {"feasibility_tolerance", mc.penalty.feasibility_tolerance}}},
      {"avatar_radius", c.avatar_radius},
      {"dropout_gap", c.dropout_gap},
      {"replan_latency", c.replan_latency},
      {"include_driving", c.include_driving},
      {"trajectory_decimation", c.trajectory_decimation},
  };
  if (c.avatar_start) j["avatar_start"] = io::to_json(*c.avatar_start);
  if (c.script) {
    const ScriptPolicy& p = *c.script;
    j["script"] = {{"goal", io::to_json(p.goal)}, {"speed", p.speed}, {"heading_noise", p.heading_noise},
                   {"speed_noise", p.speed_noise}, {"seed", p.seed}, {"max_samples", p.max_samples}};
  }
  return j;
}

void use_straight_route(SessionConfig& config, const crowd::Scenario& scenario, Vec2 goal) {
  config.route = {goal};
  if (config.script) config.script->goal = goal;
  if (!config.avatar_start) {
    const Vec2 start = geometry::centroid(scenario.spawn_surface);
    config.avatar_start = geometry::make_pose(start, geometry::bearing(goal - start));
  }
}

Pose avatar_start(const SessionConfig& config, const crowd::Scenario& scenario) {
  if (config.avatar_start) return *config.avatar_start;
  const Vec2 start = geometry::centroid(scenario.spawn_surface);
  Vec2 toward = scenario.gates.front().segment.midpoint();
  if (!config.route.empty()) {
    toward = config.route.front();
  } else if (!config.goals.empty()) {
    toward = config.goals.front();
  }
  return geometry::make_pose(start, geometry::bearing(toward - start));
}

// Ingest ------------------------------------------------------------------------

Ingest::Ingest(compression::RoomSpec room, double dropout_gap) : room_(room), dropout_gap_(dropout_gap) {}

IngestResult Ingest::push(const TrackerSample& sample) {
  IngestResult r;
  auto reject = [&](const std::string& why) {
    ++rejected_;
    r.events.push_back({sample.t, "rejected", why});
    return r;
  };
  if (!finite(sample.pose) || !std::isfinite(sample.t)) return reject("non-finite sample");
  if (last_ && sample.seq <= last_->seq) {
    return reject("out-of-order sample seq " + std::to_string(sample.seq) + " after " + std::to_string(last_->seq));
  }
  if (last_ && sample.t < last_->t) return reject("sample time went backwards");
  if (last_ && sample.t - last_->t > dropout_gap_) {
    std::ostringstream msg;
    msg << "tracker gap of " << sample.t - last_->t << " s before seq " << sample.seq;
    r.events.push_back({sample.t, "dropout", msg.str()});
  }
  r.sample = sample;
  r.sample.pose.heading = geometry::wrap_angle(sample.pose.heading);
  const Vec2 p = room_.clamp_to_room(sample.pose.position());
  if (!(p == sample.pose.position())) {
    r.sample.pose.x = p.x;
    r.sample.pose.y = p.y;
    r.events.push_back({sample.t, "clamped", "pose outside the room clamped to its boundary"});
  }
  r.accepted = true;
  ++accepted_;
  last_ = r.sample;
  return r;
}

// State encoding ------------------------------------------------------------------

Json to_json(const BroadcastState& s) {
  Json peds = Json::array();
  for (const PedSnapshot& p : s.peds) {
    peds.push_back({{"id", p.id}, {"x", p.position.x}, {"y", p.position.y}, {"vx", p.velocity.x},
                    {"vy", p.velocity.y}, {"r", p.radius}});
  }
  Json avatar = pose_object(s.avatar);
  avatar["vx"] = s.avatar_velocity.x;
  avatar["vy"] = s.avatar_velocity.y;
  avatar["r"] = s.avatar_radius;
  return {
      {"type", "state"},
      {"tick", s.tick},
      {"t", s.t},
      {"seq", s.seq},
      {"user", pose_object(s.user)},
      {"avatar", avatar},
      {"displayed_heading", s.displayed_heading},
      {"peds", peds},
      {"force", force_object(s.force_user)},
      {"force_target", force_object(s.force_target)},
      {"guidance",
       {{"offset", s.guidance.injected_offset}, {"cross_track", s.guidance.cross_track_error},
        {"heading_error", s.guidance.heading_error}}},
      {"tangents", {{"target", s.target_tangent}, {"user", s.user_tangent}}},
  };
}

std::string encode(const BroadcastState& s) { return to_json(s).dump(); }

BroadcastState state_from_json(const Json& j) {
  try {
    BroadcastState s;
    s.tick = j.at("tick").get<long>();
    s.t = j.at("t").get<double>();
    s.seq = j.at("seq").get<std::int64_t>();
    const Json& u = j.at("user");
    s.user = {u.at("x").get<double>(), u.at("y").get<double>(), u.at("heading").get<double>()};
    const Json& a = j.at("avatar");
    s.avatar = {a.at("x").get<double>(), a.at("y").get<double>(), a.at("heading").get<double>()};
    s.avatar_velocity = {a.at("vx").get<double>(), a.at("vy").get<double>()};
    s.avatar_radius = a.at("r").get<double>();
    s.displayed_heading = j.at("displayed_heading").get<double>();
    for (const Json& p : j.at("peds")) {
      s.peds.push_back({p.at("id").get<int>(),
                        {p.at("x").get<double>(), p.at("y").get<double>()},
                        {p.at("vx").get<double>(), p.at("vy").get<double>()},
                        p.at("r").get<double>()});
    }
    s.force_user = force_from(j.at("force"), s.t);
    s.force_target = force_from(j.at("force_target"), s.t);
    const Json& g = j.at("guidance");
    s.guidance.injected_offset = g.at("offset").get<double>();
    s.guidance.cross_track_error = g.at("cross_track").get<double>();
    s.guidance.heading_error = g.at("heading_error").get<double>();
    s.target_tangent = j.at("tangents").at("target").get<double>();
    s.user_tangent = j.at("tangents").at("user").get<double>();
    return s;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("state message: ") + e.what());
  }
}

Json to_json(const SessionSummary& s) {
  Json j = {{"ticks", s.ticks},
            {"samples", s.samples},
            {"dropout_ticks", s.dropout_ticks},
            {"completion_time", s.completion_time},
            {"covered_distance", s.covered_distance},
            {"reached_goal", s.reached_goal},
            {"replans", s.replans}};
  j["chosen_gate"] = s.chosen_gate >= 0 ? Json(s.chosen_gate) : Json(nullptr);
  return j;
}

// Session -------------------------------------------------------------------------

Session::Session(crowd::Scenario scenario, SessionConfig config, std::uint64_t seed)
    : config_(std::move(config)), world_(std::move(scenario), {}, seed) {
  const auto& mc = config_.compression;
  mc.room.validate();
  Pose start = avatar_start(config_, world_.scenario());
  compression::PolyPath target;
  if (!config_.route.empty()) {
    std::vector<Vec2> pts{start.position()};
    for (Vec2 p : config_.route) {
      if (norm(p - pts.back()) > 1e-9) pts.push_back(p);
    }
    route_ = geometry::resample_path(pts, mc.ds);
    start = route_.start;
    target = route_;
  } else {
    if (config_.goals.empty()) {
      for (const crowd::Gate& g : world_.scenario().gates) config_.goals.push_back(g.segment.midpoint());
    }
    target = compression::predict_target_path(start, config_.goals, mc.horizon, mc.ds, mc.goal_window);
  }
  route_start_ = start;
  map_ = std::make_shared<const CorrespondenceMap>(
      compression::transform_path(target, mc.room, config_.user_start, mc.penalty));
  last_user_ = config_.user_start;
  world_.set_avatar(start.position(), {}, config_.avatar_radius);
}

Session::~Session() {
  if (pending_ && pending_->result.valid()) pending_->result.wait();
}

compression::PolyPath Session::target_plan(const Pose& avatar) const {
  const auto& mc = config_.compression;
  if (route_.curvatures.empty()) {
    return compression::predict_target_path(avatar, config_.goals, mc.horizon, mc.ds, mc.goal_window);
  }
  const geometry::PathFrame frame(route_);
  const double s = std::clamp(frame.project(avatar.position()).s, 0.0, route_.length());
  const auto first = static_cast<std::size_t>(std::floor(s / route_.ds));
  compression::PolyPath rest;
  rest.start = avatar;
  rest.ds = route_.ds;
  if (first < route_.curvatures.size()) {
    rest.curvatures.assign(route_.curvatures.begin() + static_cast<long>(first), route_.curvatures.end());
  }
  return rest;
}

void Session::request_replan(const Pose& user, const Pose& avatar) {
  compression::PolyPath target = target_plan(avatar);
  if (target.segment_count() < 2) return;
  const compression::RoomSpec room = config_.compression.room;
  const compression::PenaltySchedule penalty = config_.compression.penalty;
  pending_ = Pending{tick_ + config_.replan_latency,
                     std::async(std::launch::async, [target = std::move(target), room, user, penalty] {
                       return compression::transform_path(target, room, user, penalty);
                     })};
}

TickOutput Session::tick(const std::optional<TrackerSample>& sample) {
  TickOutput out;
  const double dt = world_.scenario().dt;
  const double t_now = world_.time();

  if (pending_ && tick_ >= pending_->due) {
    try {
      map_ = std::make_shared<const CorrespondenceMap>(pending_->result.get());
      user_s_ = 0.0;
      ++plan_version_;
      ++summary_.replans;
      out.events.push_back({t_now, "plan", "re-planned correspondence swapped in"});
    } catch (const InfeasiblePath& e) {
      out.events.push_back({t_now, "replan_failed", e.what()});
    }
    pending_.reset();
  }

  const Pose user = sample ? sample->pose : last_user_;
  if (sample) {
    ++summary_.samples;
  } else {
    if (summary_.dropout_ticks == 0 || summary_.ticks == 0) {
      out.events.push_back({t_now, "dropout", "no tracker sample; holding the last pose"});
    }
    ++summary_.dropout_ticks;
  }

  const CorrespondenceMap& map = *map_;
  const geometry::PathCoordinates where = map.locate_near(user, user_s_, kTrackWindow);
  user_s_ = where.s;
  const Pose avatar = map.map_pose(user, where);
  guidance_ = compression::guidance_step(user, where, guidance_, dt, config_.compression.gains);
  const Vec2 velocity = last_avatar_ ? (avatar.position() - last_avatar_->position()) / dt : Vec2{};
  world_.set_avatar(avatar.position(), velocity, config_.avatar_radius);
  world_.step();

  if (last_avatar_) {
    const Vec2 from = last_avatar_->position();
    summary_.covered_distance += norm(avatar.position() - from);
    if (summary_.chosen_gate < 0) {
      for (const crowd::Gate& g : world_.scenario().gates) {
        if (geometry::crosses(g.segment, from, avatar.position())) {
          summary_.chosen_gate = g.id;
          out.events.push_back({world_.time(), "gate", "avatar passed gate " + std::to_string(g.id)});
          break;
        }
      }
    }
  }
  if (!summary_.reached_goal && geometry::contains(world_.scenario().goal_surface, avatar.position())) {
    summary_.reached_goal = true;
    summary_.completion_time = world_.time();
    out.events.push_back({world_.time(), "goal_reached", "avatar reached the goal surface"});
  }
  if (!summary_.reached_goal) summary_.completion_time = world_.time();

  haptics::AvatarForceOptions fopts;
  fopts.include_driving = config_.include_driving;
  fopts.goal = route_.curvatures.empty() ? config_.goals.front() : geometry::reconstruct(route_).back().position();
  const haptics::ForceSample f = haptics::avatar_force(world_, fopts);
  const auto [target_tangent, user_tangent] = map.tangents_at(where);

  BroadcastState& s = out.state;
  s.tick = tick_;
  s.t = world_.time();
  s.seq = sample ? sample->seq : -1;
  s.user = user;
  s.avatar = avatar;
  s.avatar_velocity = velocity;
  s.avatar_radius = config_.avatar_radius;
  s.displayed_heading = geometry::wrap_angle(avatar.heading + guidance_.injected_offset);
  s.guidance = guidance_;
  s.target_tangent = target_tangent;
  s.user_tangent = user_tangent;
  for (const crowd::Pedestrian& p : world_.bodies()) {
    if (p.kind == crowd::BodyKind::pedestrian) s.peds.push_back({p.id, p.position, p.velocity, p.radius});
  }
  s.force_target = f;
  s.force_user = haptics::transform_force(f, target_tangent, user_tangent);
  out.encoded = encode(s);

  if (!pending_) {
    const bool predicting = route_.curvatures.empty();
    const bool deviated = std::abs(where.lateral) > config_.compression.replan_deviation;
    const bool consumed = where.s > config_.compression.replan_consumed * map.correspondence().user.length();
    if (deviated || (predicting && consumed)) {
      request_replan(user, avatar);
      if (pending_) out.events.push_back({world_.time(), "replan", deviated ? "lateral deviation" : "path consumed"});
    }
  }

  last_user_ = user;
  last_avatar_ = avatar;
  ++tick_;
  summary_.ticks = tick_;
  return out;
}

Json Session::config_message() const {
  return {{"type", "config"},
          {"scenario", io::scenario_to_json(world_.scenario())},
          {"session", to_json(config_)},
          {"plan", plan_message()}};
}

Json Session::plan_message() const {
  const auto& c = map_->correspondence();
  return {{"type", "plan"},
          {"version", plan_version_},
          {"target", io::to_json(c.target)},
          {"user", io::to_json(c.user)},
          {"objective", c.objective}};
}

// Scripted participant ------------------------------------------------------------

ScriptedParticipant::ScriptedParticipant(ScriptPolicy policy, Pose start, compression::RoomSpec room)
    : policy_(policy), room_(room), pose_(start), rng_(policy.seed) {}

std::optional<TrackerSample> ScriptedParticipant::next(const CorrespondenceMap& map, const Pose& avatar) {
  if (finished_) return std::nullopt;
  if (seq_ >= policy_.max_samples) {
    finished_ = true;
    return std::nullopt;
  }
  const Vec2 to_goal = policy_.goal - avatar.position();
  const double remaining = norm(to_goal);
  if (remaining < best_remaining_ - 0.01) {
    best_remaining_ = remaining;
    best_seq_ = seq_;
  } else if (policy_.speed > 0.0 && seq_ - best_seq_ > 250) {
    finished_ = failed_ = true;
    failure_ = "no progress toward the goal for 5 s";
    return std::nullopt;
  }
  double speed = policy_.speed;
  if (policy_.speed_noise > 0.0 && policy_.speed > 0.0) speed += std::normal_distribution<double>(0.0, policy_.speed_noise)(rng_);
  speed = std::max(speed, 0.0);
  double step = speed * kTrackerPeriod;
  bool last = false;
  if (remaining < 1e-3 && speed > 0.0) {
    finished_ = true;
    return std::nullopt;
  }
  if (speed > 0.0 && remaining <= step * (1.0 + 1e-9)) {
    step = remaining;
    last = true;
  }

  Vec2 move{};
  if (remaining > 0.0 && step > 0.0) {
    const Vec2 ahead = avatar.position() + to_goal * (step / remaining);
    const Vec2 image = map.inverse_map_pose(geometry::make_pose(ahead, geometry::bearing(to_goal))).position();
    move = image - pose_.position();
  }
  double heading = norm(move) > 1e-12 ? geometry::bearing(move) : pose_.heading;
  if (policy_.heading_noise > 0.0 && policy_.speed > 0.0) {
    const double noise = std::normal_distribution<double>(0.0, policy_.heading_noise)(rng_);
    heading += noise;
    move = geometry::rotate(move, noise);
  }
  const Vec2 next = room_.clamp_to_room(pose_.position() + move);
  pose_ = geometry::make_pose(next, heading);
  ++seq_;
  if (last) finished_ = true;
  return TrackerSample{seq_, static_cast<double>(seq_) * kTrackerPeriod, pose_};
}

// Logging ---------------------------------------------------------------------------

SessionLog::SessionLog(const std::string& dir, const crowd::Scenario& scenario, const SessionConfig& config,
                       std::uint64_t seed)
    : dir_(dir) {
  std::filesystem::create_directories(dir);
  io::write_json(dir + "/config.json", {{"mode", "session"},
                                        {"seed", seed},
                                        {"scenario", io::scenario_to_json(scenario)},
                                        {"session", to_json(config)}});
  events_.open(dir + "/events.jsonl");
  trajectory_.open(dir + "/trajectory.csv");
  if (!events_ || !trajectory_) throw InvalidInput("cannot write the session log in " + dir);
  writer_ = std::make_unique<crowd::TrajectoryWriter>(trajectory_, config.trajectory_decimation);
  writer_->write_header();
}

void SessionLog::record(const std::optional<TrackerSample>& sample, const TickOutput& out,
                        const crowd::World& world) {
  Json tick = {{"type", "tick"}, {"tick", out.state.tick}};
  tick["sample"] = sample ? to_json(*sample) : Json(nullptr);
  events_ << tick.dump() << '\n' << out.encoded << '\n';
  record_events(out.events);
  (*writer_)(world);
}

void SessionLog::record_events(const std::vector<Event>& events) {
  for (const Event& e : events) events_ << to_json(e).dump() << '\n';
}

void SessionLog::close(const SessionSummary& summary, const Json& extra) {
  events_.flush();
  trajectory_.flush();
  Json j = to_json(summary);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  io::write_json(dir_ + "/summary.json", j);
}

// Headless runs -----------------------------------------------------------------------

RunResult run_scripted(const crowd::Scenario& scenario, const SessionConfig& config, std::uint64_t seed,
                       const std::string& dir) {
  if (!config.script) throw InvalidInput("scripted run needs a script policy");
  RunResult result;
  std::unique_ptr<SessionLog> log;
  if (!dir.empty()) log = std::make_unique<SessionLog>(dir, scenario, config, seed);
  std::unique_ptr<Session> session;
  try {
    session = std::make_unique<Session>(scenario, config, seed);
  } catch (const InfeasiblePath& e) {
    result.participant_failed = true;
    result.failure = e.what();
    if (log) {
      log->record_events({{0.0, "participant_failed", e.what()}});
      log->close(result.summary, {{"participant_failed", true}, {"failure", result.failure}});
    }
    return result;
  }

  Ingest ingest(config.compression.room, config.dropout_gap);
  ScriptedParticipant walker(*config.script, config.user_start, config.compression.room);
  Pose avatar = session->map()->map_pose(config.user_start);
  while (const auto sample = walker.next(*session->map(), avatar)) {
    IngestResult in = ingest.push(*sample);
    if (log) log->record_events(in.events);
    if (!in.accepted) continue;
    const TickOutput out = session->tick(in.sample);
    avatar = out.state.avatar;
    if (log) log->record(in.sample, out, session->world());
  }
  result.summary = session->summary();
  result.rejected = ingest.rejected();
  result.participant_failed = walker.failed();
  result.failure = walker.failure();
  if (log) {
    if (walker.failed()) log->record_events({{session->world().time(), "participant_failed", walker.failure()}});
    log->close(result.summary, {{"rejected", result.rejected}, {"participant_failed", result.participant_failed}});
  }
  return result;
}

Json to_json(const crowd::TrialMetrics& m, const crowd::Scenario& scenario) {
  Json gates = Json::array();
  for (std::size_t g = 0; g < m.gate_counts.size(); ++g) {
    gates.push_back({{"id", scenario.gates[g].id},
                     {"count", m.gate_counts[g]},
                     {"mean_completion_time", m.gate_cost[g]},
                     {"used", m.gate_used[g] != 0}});
  }
  Json peds = Json::array();
  for (const crowd::PedestrianRecord& r : m.pedestrians) {
    auto gate_id = [&](int g) { return g >= 0 ? Json(scenario.gates[static_cast<std::size_t>(g)].id) : Json(nullptr); };
    peds.push_back({{"id", r.id},
                    {"gate", gate_id(r.gate)},
                    {"assigned_gate", gate_id(r.assigned_gate)},
                    {"completion_time", r.completion_time},
                    {"distance", r.distance},
                    {"exited", r.exited}});
  }
  return {{"complete", m.complete}, {"duration", m.duration}, {"ticks", m.ticks}, {"gates", gates}, {"pedestrians", peds}};
}

namespace {

crowd::TrialMetrics trial_into(const crowd::Scenario& scenario, std::uint64_t seed, std::ostream& csv) {
  crowd::TrajectoryWriter writer(csv, 5);
  writer.write_header();
  crowd::TrialOptions opts;
  opts.observer = std::ref(writer);
  return crowd::run_trial(scenario, {}, seed, opts);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

crowd::TrialMetrics run_trial_logged(const crowd::Scenario& scenario, std::uint64_t seed, const std::string& dir) {
  std::filesystem::create_directories(dir);
  io::write_json(dir + "/config.json", {{"mode", "trial"}, {"seed", seed}, {"scenario", io::scenario_to_json(scenario)}});
  std::ofstream csv(dir + "/trajectory.csv");
  if (!csv) throw InvalidInput("cannot write " + dir + "/trajectory.csv");
  const crowd::TrialMetrics m = trial_into(scenario, seed, csv);
  io::write_json(dir + "/metrics.json", to_json(m, scenario));
  return m;
}

ReplayReport replay(const std::string& dir) {
  const Json config = io::read_json(dir + "/config.json");
  ReplayReport report;
  try {
    const std::string mode = config.at("mode").get<std::string>();
    const auto seed = config.at("seed").get<std::uint64_t>();
    const crowd::Scenario scenario = io::scenario_from_json(config.at("scenario"));

    if (mode == "trial") {
      std::ostringstream csv;
      trial_into(scenario, seed, csv);
      report.compared = 1;
      if (csv.str() != slurp(dir + "/trajectory.csv")) {
        report.mismatches = 1;
        report.first_mismatch = "trajectory.csv differs";
      }
      report.ok = report.mismatches == 0;
      return report;
    }
    if (mode != "session") throw InvalidInput("unknown log mode '" + mode + "'");

    Session session(scenario, session_config_from_json(config.at("session")), seed);
    std::ifstream in(dir + "/events.jsonl");
    if (!in) throw InvalidInput("cannot open " + dir + "/events.jsonl");
    std::string line;
    std::optional<std::string> expected_next;  // encoded state the last tick produced
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "tick") {
        std::optional<TrackerSample> sample;
        if (!j.at("sample").is_null()) sample = sample_from_json(j.at("sample"));
        expected_next = session.tick(sample).encoded;
      } else if (type == "state") {
        ++report.compared;
        if (!expected_next || *expected_next != line) {
          if (report.mismatches == 0) report.first_mismatch = "line " + std::to_string(line_no);
          ++report.mismatches;
        }
        expected_next.reset();
      }
    }
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("malformed log: ") + e.what());
  }
  report.ok = report.mismatches == 0 && report.compared > 0;
  return report;
}

}  // namespace telewalk::service
