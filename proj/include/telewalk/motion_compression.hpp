#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "telewalk/geometry.hpp"

namespace telewalk::compression {

using geometry::PathCoordinates;
using geometry::PathFrame;
using geometry::PolyPath;
using geometry::Pose;
using geometry::Vec2;

/// Physical room with origin at the lower-left corner. Walkable region is the
/// rectangle inset by `margin`.
struct RoomSpec {
  double width = 4.0;
  double height = 4.0;
  double margin = 0.3;

  double x_min() const { return margin; }
  double x_max() const { return width - margin; }
  double y_min() const { return margin; }
  double y_max() const { return height - margin; }
  Vec2 center() const { return {0.5 * width, 0.5 * height}; }

  void validate() const;
  /// Largest per-axis distance outside the inset rectangle (0 inside).
  double violation(Vec2 p) const;
  bool contains(Vec2 p, double tolerance = 0.0) const { return violation(p) <= tolerance; }
  /// Clamp to the outer room rectangle (not the inset one).
  Vec2 clamp_to_room(Vec2 p) const;
  bool inside_room(Vec2 p) const;
};

struct PenaltySchedule {
  double initial_weight = 10.0;
  int outer_rounds = 8;
  int inner_iterations = 500;
  double gradient_tolerance = 1e-6;
  double feasibility_tolerance = 1e-3;
};

struct GuidanceGains {
  double cross_track = 0.1;     // rad per metre
  double heading = 0.3;         // dimensionless
  double offset_max = 0.0349;   // rad
  double rate_max = 0.0175;     // rad/s
};

struct CompressionConfig {
  RoomSpec room;
  double ds = geometry::kDefaultSpacing;
  double horizon = 3.0;
  double goal_window = 30.0 * std::numbers::pi / 180.0;
  GuidanceGains gains;
  PenaltySchedule penalty;
  double replan_deviation = 0.5;
  double replan_consumed = 0.7;
};

/// A target path and the user path it is walked on. Both share spacing and
/// segment count; lengths and total turning agree.
struct Correspondence {
  PolyPath target;
  PolyPath user;
  double objective = 0.0;      ///< sum of squared curvature differences times ds
  double max_violation = 0.0;  ///< worst boundary violation of the user path
  double gradient_norm = 0.0;  ///< projected gradient at termination
  int iterations = 0;
};

class InfeasiblePath : public std::runtime_error {
 public:
  InfeasiblePath(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Forecasts the target path from the avatar pose. Without goals, or when the
/// nearest goal is outside the angular window around the heading, the path is
/// a straight ray of length `horizon`; otherwise it is the constant-curvature
/// arc from the avatar to that goal (spacing adjusted to hit it exactly).
PolyPath predict_target_path(const Pose& avatar, std::span<const Vec2> goals, double horizon,
                             double ds = geometry::kDefaultSpacing,
                             double goal_window = 30.0 * std::numbers::pi / 180.0);

/// Fits the target path into the room: finds the user curvature profile
/// closest (integrated squared difference) to the target profile whose
/// reconstruction from `user_start` stays inside the inset rectangle.
/// Throws InfeasiblePath when the residual violation stays above tolerance.
Correspondence transform_path(const PolyPath& target, const RoomSpec& room, const Pose& user_start,
                              const PenaltySchedule& schedule = {});

/// Sum of (user - target)^2 * ds over segments.
double curvature_objective(const PolyPath& target, const PolyPath& user);

/// Largest boundary violation over the reconstructed samples of `path`.
double max_violation(const PolyPath& path, const RoomSpec& room);

namespace detail {

/// Penalized objective of the path transformation, exposed for gradient tests.
struct PenalizedObjective {
  std::span<const double> target;
  Pose start;
  double ds;
  RoomSpec room;
  double weight;

  /// Returns the objective and writes the gradient into `gradient`.
  double evaluate(std::span<const double> user, std::span<double> gradient) const;
  double value(std::span<const double> user) const;
};

}  // namespace detail

/// Pose mapping between the user room and the target environment at equal
/// arc length, preserving lateral offset and heading relative to the path.
class CorrespondenceMap {
 public:
  explicit CorrespondenceMap(Correspondence corr);

  const Correspondence& correspondence() const { return corr_; }
  const PathFrame& user_frame() const { return user_; }
  const PathFrame& target_frame() const { return target_; }

  Pose map_pose(const Pose& user_pose) const;
  Pose inverse_map_pose(const Pose& target_pose) const;
  /// Target and user path tangents at the foot of `user_pose`.
  std::pair<double, double> tangents_at(const Pose& user_pose) const;
  PathCoordinates locate(const Pose& user_pose) const { return user_.project(user_pose.position()); }
  /// Projection restricted to user arc lengths within `window` of `s_hint`.
  PathCoordinates locate_near(const Pose& user_pose, double s_hint, double window) const {
    return user_.project_near(user_pose.position(), s_hint - window, s_hint + window);
  }
  /// map_pose and tangents_at for an already located user pose.
  Pose map_pose(const Pose& user_pose, const PathCoordinates& where) const;
  std::pair<double, double> tangents_at(const PathCoordinates& where) const;

 private:
  Correspondence corr_;
  PathFrame target_;
  PathFrame user_;
};

Pose map_pose(const Pose& user_pose, const Correspondence& corr);

struct GuidanceState {
  double cross_track_error = 0.0;  ///< metres, positive = user left of the path
  double heading_error = 0.0;      ///< rad, user heading minus path tangent
  double injected_offset = 0.0;    ///< rad, added to the displayed avatar heading
};

/// Proportional guidance with saturation and slew limiting. A user left of the
/// path (positive error) produces a negative offset.
GuidanceState guidance_update(double cross_track_error, double heading_error,
                              const GuidanceState& prev, double dt, const GuidanceGains& gains);

GuidanceState guidance_step(const Pose& user_pose, const CorrespondenceMap& map,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains);
GuidanceState guidance_step(const Pose& user_pose, const PathCoordinates& where,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains);
GuidanceState guidance_step(const Pose& user_pose, const Correspondence& corr,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains);

/// Re-planning trigger: lateral deviation beyond the limit, or more than the
/// given fraction of the path consumed.
bool needs_replan(const PathCoordinates& where, double path_length, const CompressionConfig& config);

}  // namespace telewalk::compression
