#include "telewalk/scenario_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace telewalk::io {

using geometry::InvalidInput;
using geometry::Pose;
using geometry::Segment;
using geometry::Vec2;

namespace {

double number(const Json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number()) throw InvalidInput(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

int integer(const Json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number_integer()) throw InvalidInput(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

Segment segment_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("segments are written [x1, y1, x2, y2]");
  for (const Json& v : j) {
    if (!v.is_number()) throw InvalidInput("segment coordinates must be numbers");
  }
  return {{j[0].get<double>(), j[1].get<double>()}, {j[2].get<double>(), j[3].get<double>()}};
}

Json to_json(const Segment& s) { return Json::array({s.a.x, s.a.y, s.b.x, s.b.y}); }

geometry::Polygon polygon_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw InvalidInput(std::string(what) + " must be a list of [x, y] points");
  geometry::Polygon poly;
  for (const Json& p : j) poly.push_back(point_from_json(p));
  return poly;
}

Json to_json(const geometry::Polygon& poly) {
  Json out = Json::array();
  for (Vec2 p : poly) out.push_back(io::to_json(p));
  return out;
}

template <class F>
auto guarded(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw InvalidInput(e.what());
  }
}

}  // namespace

Vec2 point_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw InvalidInput("points are written [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Pose pose_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidInput("poses are written [x, y, heading]");
  for (const Json& v : j) {
    if (!v.is_number()) throw InvalidInput("pose components must be numbers");
  }
  return geometry::make_pose(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Json to_json(Vec2 p) { return Json::array({p.x, p.y}); }
Json to_json(const Pose& p) { return Json::array({p.x, p.y, p.heading}); }

Json to_json(const geometry::PolyPath& p) {
  return {{"start", to_json(p.start)}, {"ds", p.ds}, {"curvatures", p.curvatures}};
}

geometry::PolyPath polypath_from_json(const Json& j) {
  return guarded([&] {
    geometry::PolyPath p;
    p.start = pose_from_json(j.at("start"));
    p.ds = j.at("ds").get<double>();
    p.curvatures = j.at("curvatures").get<std::vector<double>>();
    if (!(p.ds > 0.0)) throw InvalidInput("path spacing must be positive");
    return p;
  });
}

crowd::Scenario scenario_from_json(const Json& j) {
  return guarded([&] {
    if (!j.is_object()) throw InvalidInput("scenario must be a JSON object");
    crowd::Scenario s;
    if (j.contains("name")) s.name = j.at("name").get<std::string>();
    s.walls.clear();
    for (const Json& w : j.at("walls")) s.walls.push_back(segment_from_json(w));
    s.gates.clear();
    for (const Json& g : j.at("gates")) {
      if (!g.is_object()) throw InvalidInput("gates are written {\"id\": n, \"segment\": [x1, y1, x2, y2]}");
      s.gates.push_back({g.at("id").get<int>(), segment_from_json(g.at("segment"))});
    }
    s.spawn_surface = polygon_from_json(j.at("spawn_surface"), "spawn_surface");
    s.goal_surface = polygon_from_json(j.at("goal_surface"), "goal_surface");
    s.spawn_count = integer(j, "spawn_count", s.spawn_count);
    s.spawn_rate = number(j, "spawn_rate", s.spawn_rate);
    if (j.contains("seed")) s.rng_seed = j.at("seed").get<std::uint64_t>();
    s.dt = number(j, "dt", s.dt);
    s.time_cap = number(j, "time_cap", s.time_cap);
    if (j.contains("forces")) {
      const Json& f = j.at("forces");
      s.forces.A = number(f, "A", s.forces.A);
      s.forces.B = number(f, "B", s.forces.B);
      s.forces.k = number(f, "k", s.forces.k);
      s.forces.kappa = number(f, "kappa", s.forces.kappa);
      s.forces.cutoff_force = number(f, "cutoff_force", s.forces.cutoff_force);
    }
    if (j.contains("pedestrians")) {
      const Json& p = j.at("pedestrians");
      auto& q = s.pedestrians;
      q.mass = number(p, "mass", q.mass);
      q.tau = number(p, "tau", q.tau);
      q.speed_min = number(p, "speed_min", q.speed_min);
      q.speed_max = number(p, "speed_max", q.speed_max);
      q.radius_min = number(p, "radius_min", q.radius_min);
      q.radius_max = number(p, "radius_max", q.radius_max);
      q.stall_speed = number(p, "stall_speed", q.stall_speed);
      q.stall_time = number(p, "stall_time", q.stall_time);
    }
    if (j.contains("gate_choice")) {
      const Json& g = j.at("gate_choice");
      s.gate_choice.lambda = number(g, "lambda", s.gate_choice.lambda);
      s.gate_choice.gamma = number(g, "gamma", s.gate_choice.gamma);
    }
    s.validate();
    return s;
  });
}

Json scenario_to_json(const crowd::Scenario& s) {
  Json walls = Json::array();
  for (const Segment& w : s.walls) walls.push_back(to_json(w));
  Json gates = Json::array();
  for (const crowd::Gate& g : s.gates) gates.push_back({{"id", g.id}, {"segment", to_json(g.segment)}});
  const auto& p = s.pedestrians;
  return {
      {"name", s.name},
      {"walls", walls},
      {"gates", gates},
      {"spawn_surface", to_json(s.spawn_surface)},
      {"goal_surface", to_json(s.goal_surface)},
      {"spawn_count", s.spawn_count},
      {"spawn_rate", s.spawn_rate},
      {"seed", s.rng_seed},
      {"dt", s.dt},
      {"time_cap", s.time_cap},
      {"forces",
       {{"A", s.forces.A}, {"B", s.forces.B}, {"k", s.forces.k}, {"kappa", s.forces.kappa},
        {"cutoff_force", s.forces.cutoff_force}}},
      {"pedestrians",
       {{"mass", p.mass}, {"tau", p.tau}, {"speed_min", p.speed_min}, {"speed_max", p.speed_max},
        {"radius_min", p.radius_min}, {"radius_max", p.radius_max}, {"stall_speed", p.stall_speed},
        {"stall_time", p.stall_time}}},
      {"gate_choice", {{"lambda", s.gate_choice.lambda}, {"gamma", s.gate_choice.gamma}}},
  };
}

calibration::ObservedData observed_from_json(const Json& j) {
  return guarded([&] {
    if (!j.is_array()) throw InvalidInput("observed data must be a list of participants");
    calibration::ObservedData data;
    for (const Json& p : j) {
      calibration::Participant q;
      q.gate = p.at("gate").get<int>();
      q.completion_time = p.at("completion_time_s").get<double>();
      q.distance = p.at("distance_m").get<double>();
      if (!std::isfinite(q.completion_time) || q.completion_time < 0.0 || !std::isfinite(q.distance) ||
          q.distance < 0.0) {
        throw InvalidInput("participant times and distances must be non-negative");
      }
      data.participants.push_back(q);
    }
    return data;
  });
}

Json observed_to_json(const calibration::ObservedData& data) {
  Json out = Json::array();
  for (const auto& p : data.participants) {
    out.push_back({{"gate", p.gate}, {"completion_time_s", p.completion_time}, {"distance_m", p.distance}});
  }
  return out;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const Json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << j.dump(2) << '\n';
}

crowd::Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json(path)); }

calibration::ObservedData load_observed(const std::string& path) {
  return observed_from_json(read_json(path));
}

}  // namespace telewalk::io
