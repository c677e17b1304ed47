#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace telewalk::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
/// Counterclockwise perpendicular.
constexpr Vec2 perp(Vec2 v) { return {-v.y, v.x}; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}
inline double bearing(Vec2 v) { return std::atan2(v.y, v.x); }

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose&) const = default;
};

/// Builds a pose with the heading wrapped into (-pi, pi].
inline Pose make_pose(double x, double y, double heading) {
  return {x, y, wrap_angle(heading)};
}
inline Pose make_pose(Vec2 p, double heading) { return make_pose(p.x, p.y, heading); }

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultSpacing = 0.05;

/// Planar path stored as a curvature profile with uniform arc-length spacing.
/// Segment i is a circular arc of length `ds` and signed curvature
/// `curvatures[i]` (positive turns left).
struct PolyPath {
  Pose start;
  double ds = kDefaultSpacing;
  std::vector<double> curvatures;

  std::size_t segment_count() const { return curvatures.size(); }
  std::size_t sample_count() const { return curvatures.size() + 1; }
  double length() const { return ds * static_cast<double>(curvatures.size()); }
};

/// sin(x)/x, stable near zero.
double sinc(double x);

/// Advances `from` along a circular arc of the given curvature and length.
Pose arc_step(const Pose& from, double curvature, double length);

/// Resamples a polyline to uniform arc-length spacing. Each interior vertex
/// turns through its exterior angle spread evenly between the midpoints of its
/// two edges. Throws InvalidInput for fewer than two points or zero length.
PolyPath resample_path(std::span<const Vec2> points, double ds);

/// Resamples a pose sequence. Each consecutive pair is joined by the circular
/// arc leaving the first pose tangentially through the second point; the
/// resulting arc spline is cut at uniform spacing and each segment receives
/// its mean curvature. Exact inverse of `reconstruct` for matching spacing.
PolyPath resample_path(std::span<const Pose> poses, double ds);

/// Poses at every sample (segment_count() + 1 entries), first = start.
std::vector<Pose> reconstruct(const PolyPath& path);

/// Signed total heading change, sum of curvature * ds.
double turning_angle(const PolyPath& path);

/// Appends `tail` to `head`; both must share the same spacing.
PolyPath concatenate(const PolyPath& head, const PolyPath& tail);

/// Arc length of the circular arc tangent to `from` that passes through `to`.
double tangent_arc_length(const Pose& from, Vec2 to);

/// Arc-length coordinates of a point relative to a path.
struct PathCoordinates {
  double s = 0.0;        ///< arc length of the foot point
  double lateral = 0.0;  ///< signed offset, positive = left of the path
  double tangent = 0.0;  ///< path heading at the foot point
  double distance = 0.0; ///< unsigned distance to the foot point
};

/// Precomputed arc geometry of a PolyPath. Projection and evaluation treat
/// every segment as its exact circular arc, so the normal field is continuous
/// across segment joints. Beyond either end the path continues as a straight
/// tangent ray.
class PathFrame {
 public:
  explicit PathFrame(PolyPath path);

  const PolyPath& path() const { return path_; }
  const std::vector<Pose>& samples() const { return samples_; }
  double length() const { return path_.length(); }

  /// Tangent pose at arc length s (s outside [0, length] extrapolates).
  Pose pose_at(double s) const;
  /// Point at arc length s displaced `lateral` metres to the left.
  Vec2 offset_point(double s, double lateral) const;
  /// Nearest foot point. Ties resolve to the smallest arc length.
  PathCoordinates project(Vec2 p) const;
  /// Nearest point among the segments overlapping arc lengths [s_min, s_max].
  /// Keeps the foot point continuous on paths that pass close to themselves.
  PathCoordinates project_near(Vec2 p, double s_min, double s_max) const;

 private:
  PathCoordinates project_segment(std::size_t i, Vec2 p, bool open_before, bool open_after) const;

  PolyPath path_;
  std::vector<Pose> samples_;
};

struct Segment {
  Vec2 a;
  Vec2 b;

  Vec2 midpoint() const { return (a + b) * 0.5; }
  double length() const { return norm(b - a); }
};

/// Closest point of the segment to `p`.
Vec2 closest_point(const Segment& s, Vec2 p);

/// True when the open motion p -> q crosses the segment (touching an end
/// point of the motion counts, grazing collinear motion does not).
bool crosses(const Segment& s, Vec2 p, Vec2 q);

using Polygon = std::vector<Vec2>;

bool contains(const Polygon& poly, Vec2 p);
double signed_area(const Polygon& poly);
Vec2 centroid(const Polygon& poly);

}  // namespace telewalk::geometry
