#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "telewalk/scenario_io.hpp"
#include "telewalk/svg.hpp"

using namespace telewalk;
using io::Json;

namespace {

const std::string kDataDir = TELEWALK_DATA_DIR;

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

// Every element opened is closed (self-closing or by a matching end tag).
bool balanced(const std::string& svg) {
  std::vector<std::string> stack;
  for (std::size_t at = svg.find('<'); at != std::string::npos; at = svg.find('<', at + 1)) {
    const std::size_t end = svg.find('>', at);
    if (end == std::string::npos) return false;
    const std::string tag = svg.substr(at + 1, end - at - 1);
    if (tag.starts_with("?")) continue;
    if (tag.starts_with("/")) {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else if (!tag.ends_with("/")) {
      stack.push_back(tag.substr(0, tag.find(' ')));
    }
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("scenario JSON round-trips") {
  crowd::Scenario s = crowd::default_four_gate();
  s.spawn_count = 42;
  s.gate_choice = {0.5, 1.0};
  s.forces.A = 1500.0;
  const crowd::Scenario back = io::scenario_from_json(io::scenario_to_json(s));
  CHECK(io::scenario_to_json(back) == io::scenario_to_json(s));
  CHECK(back.walls.size() == s.walls.size());
  CHECK(back.gates[2].id == 3);
  CHECK(back.spawn_count == 42);
}

TEST_CASE("shipped scenario file is the default four-gate hall") {
  const crowd::Scenario file = io::load_scenario(kDataDir + "/default_four_gate.json");
  CHECK(io::scenario_to_json(file) == io::scenario_to_json(crowd::default_four_gate()));
}

TEST_CASE("shipped observed data: five participants, three through gate 2") {
  const calibration::ObservedData obs = io::load_observed(kDataDir + "/observed_example.json");
  REQUIRE(obs.participants.size() == 5);
  CHECK(obs.distribution(crowd::default_four_gate()) == std::vector<int>{0, 3, 1, 1});
  CHECK(io::observed_from_json(io::observed_to_json(obs)).participants.size() == 5);
}

TEST_CASE("malformed scenarios are rejected with InvalidInput") {
  const Json good = io::scenario_to_json(crowd::default_four_gate());
  auto broken = [&](auto edit) {
    Json j = good;
    edit(j);
    return j;
  };
  CHECK_THROWS_AS(io::scenario_from_json(Json::array()), geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j.erase("walls"); })), geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j["walls"][0] = {1, 2, 3}; })),
                  geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j["dt"] = "fast"; })), geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j["gates"] = Json::array(); })),
                  geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j["spawn_count"] = -3; })),
                  geometry::InvalidInput);
  CHECK_THROWS_AS(io::scenario_from_json(broken([](Json& j) { j["spawn_surface"] = {{0, 0}, {1, 1}}; })),
                  geometry::InvalidInput);
  CHECK_THROWS_AS(io::read_json("/nonexistent/file.json"), geometry::InvalidInput);
}

TEST_CASE("malformed observed data is rejected") {
  CHECK_THROWS_AS(io::observed_from_json(Json::object()), geometry::InvalidInput);
  CHECK_THROWS_AS(io::observed_from_json(Json::parse(R"([{"gate": 2}])")), geometry::InvalidInput);
  CHECK_THROWS_AS(io::observed_from_json(Json::parse(R"([{"gate": 2, "completion_time_s": -1, "distance_m": 3}])")),
                  geometry::InvalidInput);
}

TEST_CASE("svg of an empty trial draws geometry only") {
  const crowd::Scenario s = crowd::default_four_gate();
  const std::string svg = io::render_svg(s, "t,id,kind,x,y,vx,vy,gate,state\n");
  CHECK(svg.starts_with("<?xml"));
  CHECK(balanced(svg));
  CHECK(count(svg, "<line ") == s.walls.size() + s.gates.size());
  CHECK(count(svg, "<polygon ") == 2);
  CHECK(count(svg, "<polyline ") == 0);
}

TEST_CASE("svg separates pedestrian and participant tracks") {
  const crowd::Scenario s = crowd::default_four_gate();
  const std::string csv =
      "t,id,kind,x,y,vx,vy,gate,state\n"
      "0.1,0,avatar,2,2,1,0,,to_gate\n"
      "0.1,1,pedestrian,1,1,1,0,2,to_gate\n"
      "0.2,0,avatar,2.1,2,1,0,,to_gate\n"
      "0.2,1,pedestrian,1.1,1,1,0,2,to_gate\n"
      "0.3,1,pedestrian,1.2,1,1,0,2,to_gate\n";
  const std::string svg = io::render_svg(s, csv);
  CHECK(balanced(svg));
  CHECK(count(svg, "<polyline ") == 2);
  const auto participants = svg.find("id=\"participants\"");
  const auto pedestrians = svg.find("id=\"pedestrians\"");
  REQUIRE(participants != std::string::npos);
  REQUIRE(pedestrians != std::string::npos);
  CHECK(svg.find("points=\"2,2 2.1,2\"", participants) != std::string::npos);
  CHECK(svg.find("points=\"1,1 1.1,1 1.2,1\"", pedestrians) < participants);
  CHECK_THROWS_AS(io::render_svg(s, "header\n1,2\n"), geometry::InvalidInput);
}
