#pragma once

#include <string>

#include "json.hpp"
#include "telewalk/calibration.hpp"
#include "telewalk/crowd.hpp"

namespace telewalk::io {

using Json = nlohmann::json;

/// Scenario file layout:
///   walls          [[x1, y1, x2, y2], ...]
///   gates          [{"id": 1, "segment": [x1, y1, x2, y2]}, ...]
///   spawn_surface  [[x, y], ...]
///   goal_surface   [[x, y], ...]
/// plus optional name, spawn_count, spawn_rate, seed, dt, time_cap and the
/// parameter blocks "forces", "pedestrians", "gate_choice". Missing fields
/// keep the defaults of crowd::Scenario. Throws InvalidInput on malformed or
/// invalid content.
crowd::Scenario scenario_from_json(const Json& j);
Json scenario_to_json(const crowd::Scenario& s);

/// Observed participants: [{"gate": id, "completion_time_s": t, "distance_m": d}, ...]
calibration::ObservedData observed_from_json(const Json& j);
Json observed_to_json(const calibration::ObservedData& data);

/// Reads and parses a JSON file; InvalidInput when it is missing or malformed.
Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);

crowd::Scenario load_scenario(const std::string& path);
calibration::ObservedData load_observed(const std::string& path);

geometry::Vec2 point_from_json(const Json& j);
geometry::Pose pose_from_json(const Json& j);
Json to_json(geometry::Vec2 p);
Json to_json(const geometry::Pose& p);
Json to_json(const geometry::PolyPath& p);
geometry::PolyPath polypath_from_json(const Json& j);

}  // namespace telewalk::io
