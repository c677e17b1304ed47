#include "telewalk/svg.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "telewalk/scenario_io.hpp"

namespace telewalk::io {

using geometry::InvalidInput;
using geometry::Vec2;

namespace {

struct Track {
  bool avatar = false;
  std::vector<Vec2> points;
};

std::map<int, Track> parse_tracks(const std::string& csv) {
  std::map<int, Track> tracks;
  std::istringstream in(csv);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 5) throw InvalidInput("trajectory line " + std::to_string(line_no) + " has too few fields");
    try {
      Track& t = tracks[std::stoi(f[1])];
      t.avatar = f[2] == "avatar";
      t.points.push_back({std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw InvalidInput("trajectory line " + std::to_string(line_no) + " is malformed");
    }
  }
  return tracks;
}

std::string points_attr(const std::vector<Vec2>& pts) {
  std::ostringstream out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) out << ' ';
    out << crowd::format_double(pts[i].x) << ',' << crowd::format_double(pts[i].y);
  }
  return out.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const crowd::Scenario& scenario, const std::string& trajectory_csv) {
  const std::map<int, Track> tracks = parse_tracks(trajectory_csv);

  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  auto grow = [&](Vec2 p) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  };
  for (const auto& w : scenario.walls) {
    grow(w.a);
    grow(w.b);
  }
  for (Vec2 p : scenario.spawn_surface) grow(p);
  for (Vec2 p : scenario.goal_surface) grow(p);
  const double pad = 0.5;
  x0 -= pad;
  y0 -= pad;
  x1 += pad;
  y1 += pad;
  const double scale = 40.0;  // px per metre

  std::ostringstream out;
  auto f = [](double v) { return crowd::format_double(v); };
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f((x1 - x0) * scale) << "\" height=\""
      << f((y1 - y0) * scale) << "\" viewBox=\"" << f(x0) << ' ' << f(-y1) << ' ' << f(x1 - x0) << ' '
      << f(y1 - y0) << "\">\n"
      << "<title>" << xml_escape(scenario.name) << "</title>\n"
      // Scenario coordinates are y-up.
      << "<g transform=\"scale(1,-1)\">\n";
  out << "<g id=\"surfaces\" stroke=\"none\">\n"
      << "<polygon class=\"spawn\" fill=\"#cfe3ff\" points=\"" << points_attr(scenario.spawn_surface) << "\"/>\n"
      << "<polygon class=\"goal\" fill=\"#d5f5d5\" points=\"" << points_attr(scenario.goal_surface) << "\"/>\n"
      << "</g>\n";
  out << "<g id=\"walls\" stroke=\"#222\" stroke-width=\"0.12\" stroke-linecap=\"square\">\n";
  for (const auto& w : scenario.walls) {
    out << "<line x1=\"" << f(w.a.x) << "\" y1=\"" << f(w.a.y) << "\" x2=\"" << f(w.b.x) << "\" y2=\"" << f(w.b.y)
        << "\"/>\n";
  }
  out << "</g>\n<g id=\"gates\" stroke=\"#2a9d3a\" stroke-width=\"0.06\" stroke-dasharray=\"0.15 0.1\">\n";
  for (const auto& g : scenario.gates) {
    const auto& s = g.segment;
    out << "<line data-gate=\"" << g.id << "\" x1=\"" << f(s.a.x) << "\" y1=\"" << f(s.a.y) << "\" x2=\"" << f(s.b.x)
        << "\" y2=\"" << f(s.b.y) << "\"/>\n";
  }
  out << "</g>\n";
  out << "<g id=\"pedestrians\" fill=\"none\" stroke=\"#888\" stroke-width=\"0.04\" stroke-opacity=\"0.7\">\n";
  for (const auto& [id, t] : tracks) {
    if (!t.avatar && t.points.size() > 1) {
      out << "<polyline data-id=\"" << id << "\" points=\"" << points_attr(t.points) << "\"/>\n";
    }
  }
  out << "</g>\n<g id=\"participants\" fill=\"none\" stroke=\"#d62828\" stroke-width=\"0.12\">\n";
  for (const auto& [id, t] : tracks) {
    if (t.avatar && t.points.size() > 1) {
      out << "<polyline data-id=\"" << id << "\" points=\"" << points_attr(t.points) << "\"/>\n";
    }
  }
  out << "</g>\n</g>\n</svg>\n";
  return out.str();
}

std::string render_log_svg(const std::string& log_dir) {
  const Json config = read_json(log_dir + "/config.json");
  if (!config.contains("scenario")) throw InvalidInput(log_dir + "/config.json has no scenario");
  const crowd::Scenario scenario = scenario_from_json(config.at("scenario"));
  std::ifstream in(log_dir + "/trajectory.csv");
  if (!in) throw InvalidInput("cannot open " + log_dir + "/trajectory.csv");
  std::stringstream buf;
  buf << in.rdbuf();
  return render_svg(scenario, buf.str());
}

}  // namespace telewalk::io
