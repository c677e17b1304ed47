#include "telewalk/geometry.hpp"

#include <algorithm>
#include <limits>

namespace telewalk::geometry {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTieTolerance = 1e-12;

void require_spacing(double ds) {
  if (!(ds > 0.0) || !std::isfinite(ds)) {
    throw InvalidInput("sample spacing must be positive and finite");
  }
}

std::size_t segments_for(double length, double ds) {
  const double ratio = length / ds;
  const auto n = static_cast<std::size_t>(std::ceil(ratio - 1e-9));
  return std::max<std::size_t>(n, 1);
}

// Unwraps `angle` so that it is the representative closest to `reference`.
double unwrap_near(double angle, double reference) {
  return reference + wrap_angle(angle - reference);
}

}  // namespace

double wrap_angle(double angle) {
  double a = std::remainder(angle, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  return a;
}

double sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

Pose arc_step(const Pose& from, double curvature, double length) {
  const double turn = curvature * length;
  const double chord = length * sinc(0.5 * turn);
  const double dir = from.heading + 0.5 * turn;
  return {from.x + chord * std::cos(dir), from.y + chord * std::sin(dir),
          wrap_angle(from.heading + turn)};
}

double tangent_arc_length(const Pose& from, Vec2 to) {
  const Vec2 chord = to - from.position();
  const double d = norm(chord);
  if (d == 0.0) return 0.0;
  const double alpha = wrap_angle(bearing(chord) - from.heading);
  return d / sinc(alpha);
}

PolyPath resample_path(std::span<const Vec2> points, double ds) {
  require_spacing(ds);
  std::vector<Vec2> pts;
  pts.reserve(points.size());
  for (const Vec2& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw InvalidInput("path points must be finite");
    }
    if (pts.empty() || norm(p - pts.back()) > 0.0) pts.push_back(p);
  }
  if (points.size() < 2) throw InvalidInput("a path needs at least two points");
  if (pts.size() < 2) throw InvalidInput("polyline has zero length");

  const std::size_t m = pts.size();
  std::vector<double> edge(m - 1);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    edge[i] = norm(pts[i + 1] - pts[i]);
    total += edge[i];
  }
  const std::size_t n = segments_for(total, ds);
  const double padded = static_cast<double>(n) * ds;

  // Each interior vertex spreads its exterior angle uniformly from the middle
  // of the edge before it to the middle of the edge after it. The result is a
  // piecewise-linear cumulative turning T(s). End edges shorter than ds are
  // treated as part of a sampled curve and continue the neighbouring density.
  struct Knot {
    double s;
    double turn;
  };
  std::vector<Knot> knots;
  double start_heading = bearing(pts[1] - pts[0]);
  if (m > 2) {
    const bool extend_head = edge.front() < ds;
    const bool extend_tail = edge.back() < ds;
    double s_vertex = 0.0;
    double turn = 0.0;
    for (std::size_t j = 1; j + 1 < m; ++j) {
      s_vertex += edge[j - 1];
      const Vec2 a = pts[j] - pts[j - 1];
      const Vec2 b = pts[j + 1] - pts[j];
      const double angle = std::atan2(cross(a, b), dot(a, b));
      double lo = s_vertex - 0.5 * edge[j - 1];
      double hi = s_vertex + 0.5 * edge[j];
      const double density = angle / (hi - lo);
      if (j == 1 && extend_head) {
        start_heading -= density * lo;
        lo = 0.0;
      }
      if (j + 2 == m && extend_tail) hi = std::max(padded, total);
      if (knots.empty()) knots.push_back({lo, turn});
      turn += density * (hi - lo);
      knots.push_back({hi, turn});
    }
  }

  std::size_t k = 0;
  auto turn_at = [&](double s) {
    if (knots.empty() || s <= knots.front().s) return 0.0;
    if (s >= knots.back().s) return knots.back().turn;
    while (knots[k + 1].s < s) ++k;
    const Knot& a = knots[k];
    const Knot& b = knots[k + 1];
    return a.turn + (b.turn - a.turn) * (s - a.s) / (b.s - a.s);
  };

  PolyPath path;
  path.start = make_pose(pts.front(), start_heading);
  path.ds = ds;
  path.curvatures.resize(n);
  double t_prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t_next = turn_at(static_cast<double>(i + 1) * ds);
    path.curvatures[i] = (t_next - t_prev) / ds;
    t_prev = t_next;
  }
  return path;
}

PolyPath resample_path(std::span<const Pose> poses, double ds) {
  require_spacing(ds);
  if (poses.size() < 2) throw InvalidInput("a path needs at least two poses");

  struct Arc {
    double s0;
    double length;
    double heading0;  // unwrapped
    double curvature;
  };
  std::vector<Arc> arcs;
  arcs.reserve(poses.size() - 1);
  double s = 0.0;
  double prev_end = poses.front().heading;
  for (std::size_t j = 0; j + 1 < poses.size(); ++j) {
    const Pose& from = poses[j];
    const Vec2 chord = poses[j + 1].position() - from.position();
    const double d = norm(chord);
    if (!std::isfinite(d)) throw InvalidInput("path poses must be finite");
    const double h0 = unwrap_near(from.heading, prev_end);
    if (d == 0.0) {
      prev_end = h0;
      continue;
    }
    const double alpha = wrap_angle(bearing(chord) - from.heading);
    const double length = d / sinc(alpha);
    const double curvature = 2.0 * std::sin(alpha) / d;
    arcs.push_back({s, length, h0, curvature});
    s += length;
    prev_end = h0 + 2.0 * alpha;
  }
  if (arcs.empty()) throw InvalidInput("polyline has zero length");

  const double total = s;
  const std::size_t n = segments_for(total, ds);
  const double end_heading = prev_end;

  std::size_t k = 0;
  auto heading_at = [&](double at) {
    if (at >= total) return end_heading;
    while (k + 1 < arcs.size() && arcs[k + 1].s0 <= at) ++k;
    const Arc& arc = arcs[k];
    return arc.heading0 + arc.curvature * (at - arc.s0);
  };

  PolyPath path;
  path.start = make_pose(poses.front().position(), poses.front().heading);
  path.ds = ds;
  path.curvatures.resize(n);
  double h_prev = heading_at(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double h_next = heading_at(static_cast<double>(i + 1) * ds);
    path.curvatures[i] = (h_next - h_prev) / ds;
    h_prev = h_next;
  }
  return path;
}

std::vector<Pose> reconstruct(const PolyPath& path) {
  std::vector<Pose> out;
  out.reserve(path.sample_count());
  out.push_back(path.start);
  for (double k : path.curvatures) out.push_back(arc_step(out.back(), k, path.ds));
  return out;
}

double turning_angle(const PolyPath& path) {
  double sum = 0.0;
  for (double k : path.curvatures) sum += k;
  return sum * path.ds;
}

PolyPath concatenate(const PolyPath& head, const PolyPath& tail) {
  if (head.ds != tail.ds) throw InvalidInput("cannot concatenate paths with different spacing");
  PolyPath out = head;
  out.curvatures.insert(out.curvatures.end(), tail.curvatures.begin(), tail.curvatures.end());
  return out;
}

PathFrame::PathFrame(PolyPath path) : path_(std::move(path)), samples_(reconstruct(path_)) {
  require_spacing(path_.ds);
  if (path_.curvatures.empty()) throw InvalidInput("path has no segments");
}

Pose PathFrame::pose_at(double s) const {
  const double len = length();
  if (s <= 0.0) {
    const Pose& p = samples_.front();
    return {p.x + s * std::cos(p.heading), p.y + s * std::sin(p.heading), p.heading};
  }
  if (s >= len) {
    const Pose& p = samples_.back();
    const double over = s - len;
    return {p.x + over * std::cos(p.heading), p.y + over * std::sin(p.heading), p.heading};
  }
  const std::size_t n = path_.segment_count();
  const auto i = std::min(static_cast<std::size_t>(s / path_.ds), n - 1);
  const double u = s - static_cast<double>(i) * path_.ds;
  return arc_step(samples_[i], path_.curvatures[i], u);
}

Vec2 PathFrame::offset_point(double s, double lateral) const {
  const Pose p = pose_at(s);
  return p.position() + perp(unit(p.heading)) * lateral;
}

PathCoordinates PathFrame::project_segment(std::size_t i, Vec2 p, bool open_before,
                                           bool open_after) const {
  const Pose& base = samples_[i];
  const double k = path_.curvatures[i];
  const double ds = path_.ds;
  const Vec2 t = unit(base.heading);
  const Vec2 rel = p - base.position();
  const double a = dot(rel, t);
  const double b = dot(rel, perp(t));
  const double s0 = static_cast<double>(i) * ds;

  PathCoordinates best;
  best.distance = std::numeric_limits<double>::infinity();
  // Candidates are visited in increasing arc length; near-equal distances
  // keep the earlier one.
  auto consider = [&](Vec2 foot, double heading, double s) {
    const Vec2 off = p - foot;
    const double dist = norm(off);
    if (dist < best.distance - kTieTolerance) {
      best = {s, dot(off, perp(unit(heading))), heading, dist};
    }
  };

  if (open_before && a < 0.0) {
    consider(base.position() + t * a, base.heading, s0 + a);
  }
  consider(base.position(), base.heading, s0);
  const double u = k == 0.0 ? a : std::atan2(k * a, 1.0 - k * b) / k;
  if (u >= 0.0 && u <= ds) {
    const Pose f = arc_step(base, k, u);
    consider(f.position(), f.heading, s0 + u);
  }
  const Pose& end = samples_[i + 1];
  consider(end.position(), end.heading, s0 + ds);
  if (open_after) {
    const Vec2 te = unit(end.heading);
    const double over = dot(p - end.position(), te);
    if (over > 0.0) consider(end.position() + te * over, end.heading, s0 + ds + over);
  }
  return best;
}

PathCoordinates PathFrame::project(Vec2 p) const {
  const std::size_t n = path_.segment_count();
  PathCoordinates best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const PathCoordinates c = project_segment(i, p, i == 0, i + 1 == n);
    if (c.distance < best.distance - kTieTolerance) best = c;
  }
  return best;
}

PathCoordinates PathFrame::project_near(Vec2 p, double s_min, double s_max) const {
  const std::size_t n = path_.segment_count();
  if (n == 0 || !(s_min <= s_max)) return project(p);
  const double ds = path_.ds;
  const auto first = static_cast<std::size_t>(std::clamp(std::floor(s_min / ds), 0.0, static_cast<double>(n - 1)));
  const auto last = static_cast<std::size_t>(std::clamp(std::ceil(s_max / ds), 1.0, static_cast<double>(n))) - 1;
  PathCoordinates best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = first; i <= std::max(first, last); ++i) {
    const PathCoordinates c = project_segment(i, p, i == 0, i + 1 == n);
    if (c.distance < best.distance - kTieTolerance) best = c;
  }
  return best;
}

Vec2 closest_point(const Segment& s, Vec2 p) {
  const Vec2 d = s.b - s.a;
  const double len2 = dot(d, d);
  if (len2 == 0.0) return s.a;
  const double t = std::clamp(dot(p - s.a, d) / len2, 0.0, 1.0);
  return s.a + d * t;
}

bool crosses(const Segment& s, Vec2 p, Vec2 q) {
  const Vec2 r = q - p;
  const Vec2 e = s.b - s.a;
  const double denom = cross(r, e);
  if (denom == 0.0) return false;
  const Vec2 w = s.a - p;
  const double t = cross(w, e) / denom;  // along the motion
  const double u = cross(w, r) / denom;  // along the segment
  return t > 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

bool contains(const Polygon& poly, Vec2 p) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

double signed_area(const Polygon& poly) {
  double sum = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) sum += cross(poly[j], poly[i]);
  return 0.5 * sum;
}

Vec2 centroid(const Polygon& poly) {
  const double area = signed_area(poly);
  if (area == 0.0) {
    Vec2 sum{};
    for (const Vec2& p : poly) sum += p;
    return poly.empty() ? sum : sum / static_cast<double>(poly.size());
  }
  Vec2 c{};
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double w = cross(poly[j], poly[i]);
    c += (poly[j] + poly[i]) * w;
  }
  return c / (6.0 * area);
}

}  // namespace telewalk::geometry
