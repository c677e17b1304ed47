#include "telewalk/motion_compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace telewalk::compression {

using geometry::InvalidInput;
using geometry::wrap_angle;

void RoomSpec::validate() const {
  if (!(width > 0.0) || !(height > 0.0) || !(margin >= 0.0) || !std::isfinite(width) ||
      !std::isfinite(height)) {
    throw InvalidInput("room dimensions must be positive and finite");
  }
  if (!(width > 2.0 * margin) || !(height > 2.0 * margin)) {
    throw InvalidInput("room margin leaves no feasible region");
  }
}

double RoomSpec::violation(Vec2 p) const {
  const double vx = std::max({x_min() - p.x, p.x - x_max(), 0.0});
  const double vy = std::max({y_min() - p.y, p.y - y_max(), 0.0});
  return std::max(vx, vy);
}

Vec2 RoomSpec::clamp_to_room(Vec2 p) const {
  return {std::clamp(p.x, 0.0, width), std::clamp(p.y, 0.0, height)};
}

bool RoomSpec::inside_room(Vec2 p) const {
  return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
}

namespace {

PolyPath constant_curvature_path(const Pose& start, double curvature, double length, double ds) {
  const auto n = std::max<long>(1, std::lround(length / ds));
  PolyPath path;
  path.start = start;
  path.ds = length / static_cast<double>(n);
  path.curvatures.assign(static_cast<std::size_t>(n), curvature);
  return path;
}

// d/dx sinc(x)
double sinc_derivative(double x) {
  if (std::abs(x) < 1e-4) return -x / 3.0 + x * x * x / 30.0;
  return (x * std::cos(x) - std::sin(x)) / (x * x);
}

struct SignedViolation {
  double x;
  double y;
};

SignedViolation signed_violation(const RoomSpec& room, Vec2 p) {
  double vx = 0.0;
  double vy = 0.0;
  if (p.x < room.x_min()) vx = p.x - room.x_min();
  else if (p.x > room.x_max()) vx = p.x - room.x_max();
  if (p.y < room.y_min()) vy = p.y - room.y_min();
  else if (p.y > room.y_max()) vy = p.y - room.y_max();
  return {vx, vy};
}

constexpr double kPenaltyBuffer = 0.01;

void project_to_sum(std::vector<double>& kappa, double target_sum) {
  const double drift = std::accumulate(kappa.begin(), kappa.end(), 0.0) - target_sum;
  const double shift = drift / static_cast<double>(kappa.size());
  for (double& k : kappa) k -= shift;
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

struct Solution {
  std::vector<double> curvatures;
  double objective = std::numeric_limits<double>::infinity();
  double violation = std::numeric_limits<double>::infinity();
  double gradient_norm = 0.0;
  int iterations = 0;
};

// Penalized projected gradient descent with Barzilai-Borwein steps and Armijo
// backtracking. The update direction always has zero sum, so the total
// turning angle of the initial profile is preserved.
Solution solve(const PolyPath& target, const RoomSpec& room, const Pose& start,
               std::vector<double> kappa, const PenaltySchedule& schedule) {
  const std::size_t n = kappa.size();
  const double target_sum = std::accumulate(target.curvatures.begin(), target.curvatures.end(), 0.0);
  project_to_sum(kappa, target_sum);

  // The penalty is applied against a slightly smaller rectangle: a quadratic
  // penalty always leaves a small residual, and the buffer absorbs it so the
  // true rectangle is met.
  RoomSpec shrunk = room;
  shrunk.margin += kPenaltyBuffer;
  detail::PenalizedObjective problem{target.curvatures, start, target.ds, shrunk, schedule.initial_weight};
  std::vector<double> grad(n), dir(n), trial(n), trial_grad(n), trial_dir(n);

  auto project_gradient = [n](std::span<const double> g, std::span<double> out) {
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = g[i] - mean;
  };

  Solution sol;
  double grad_norm = 0.0;
  for (int round = 0; round < schedule.outer_rounds; ++round) {
    double value = problem.evaluate(kappa, grad);
    project_gradient(grad, dir);
    double dir_sq = squared_norm(dir);
    double step = 1.0 / std::max(1.0, std::sqrt(dir_sq));
    for (int it = 0; it < schedule.inner_iterations; ++it) {
      grad_norm = std::sqrt(dir_sq);
      if (grad_norm <= schedule.gradient_tolerance) break;
      ++sol.iterations;

      double trial_value = 0.0;
      for (;;) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = kappa[i] - step * dir[i];
        trial_value = problem.value(trial);
        if (trial_value <= value - 1e-4 * step * dir_sq || step < 1e-14) break;
        step *= 0.5;
      }
      if (!(trial_value < value)) break;

      problem.evaluate(trial, trial_grad);
      project_gradient(trial_grad, trial_dir);
      double sy = 0.0;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = trial[i] - kappa[i];
        sy += s * (trial_dir[i] - dir[i]);
        ss += s * s;
      }
      kappa.swap(trial);
      dir.swap(trial_dir);
      value = trial_value;
      dir_sq = squared_norm(dir);
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e6) : std::min(step * 2.0, 1e6);
    }
    project_to_sum(kappa, target_sum);
    PolyPath candidate{start, target.ds, kappa};
    sol.violation = max_violation(candidate, room);
    if (sol.violation <= schedule.feasibility_tolerance) break;
    if (grad_norm <= schedule.gradient_tolerance) {
      // Stationary but infeasible: a symmetric saddle such as a straight path
      // aimed at a wall. Nudge it into an S-bend to break the symmetry.
      for (std::size_t i = 0; i < n; ++i) kappa[i] += i < n / 2 ? 1e-2 : -1e-2;
      project_to_sum(kappa, target_sum);
    }
    problem.weight *= 2.0;
  }

  PolyPath user{start, target.ds, kappa};
  sol.objective = curvature_objective(target, user);
  sol.violation = max_violation(user, room);
  sol.gradient_norm = grad_norm;
  sol.curvatures = std::move(kappa);
  return sol;
}

// Figure-eight style profile: the target curvature plus blocks of one full
// loop each, alternating direction so the added turning cancels.
std::vector<double> looping_profile(const PolyPath& target, const RoomSpec& room, const Pose& start) {
  const double side = std::min(room.x_max() - room.x_min(), room.y_max() - room.y_min());
  const double radius = side / 5.0;
  const double k = 1.0 / radius;
  // Short paths get one left and one right half instead of whole loops, so
  // the sum constraint does not cancel the perturbation.
  const auto loop = static_cast<std::size_t>(std::lround(2.0 * std::numbers::pi * radius / target.ds));
  const auto block = std::max<std::size_t>(1, std::min(loop, target.curvatures.size() / 2));
  const Vec2 to_center = room.center() - start.position();
  const double first = geometry::cross(geometry::unit(start.heading), to_center) < 0.0 ? -1.0 : 1.0;

  std::vector<double> kappa = target.curvatures;
  for (std::size_t i = 0; i < kappa.size(); ++i) {
    const double sign = (i / block) % 2 == 0 ? first : -first;
    kappa[i] += sign * k;
  }
  return kappa;
}

}  // namespace

PolyPath predict_target_path(const Pose& avatar, std::span<const Vec2> goals, double horizon,
                             double ds, double goal_window) {
  if (!(horizon > 0.0)) throw InvalidInput("prediction horizon must be positive");
  if (!(ds > 0.0)) throw InvalidInput("sample spacing must be positive");

  const Vec2 here = avatar.position();
  const Vec2* nearest = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (const Vec2& g : goals) {
    const double d = geometry::norm(g - here);
    if (d < best) {
      best = d;
      nearest = &g;
    }
  }
  if (nearest != nullptr && best > 1e-9) {
    const double alpha = wrap_angle(geometry::bearing(*nearest - here) - avatar.heading);
    if (std::abs(alpha) <= goal_window) {
      const double length = best / geometry::sinc(alpha);
      const double curvature = 2.0 * std::sin(alpha) / best;
      return constant_curvature_path(avatar, curvature, length, ds);
    }
  }
  return constant_curvature_path(avatar, 0.0, horizon, ds);
}

double curvature_objective(const PolyPath& target, const PolyPath& user) {
  double sum = 0.0;
  for (std::size_t i = 0; i < target.curvatures.size(); ++i) {
    const double d = user.curvatures[i] - target.curvatures[i];
    sum += d * d;
  }
  return sum * target.ds;
}

double max_violation(const PolyPath& path, const RoomSpec& room) {
  double worst = 0.0;
  for (const Pose& p : geometry::reconstruct(path)) worst = std::max(worst, room.violation(p.position()));
  return worst;
}

namespace detail {

double PenalizedObjective::evaluate(std::span<const double> user, std::span<double> gradient) const {
  const std::size_t n = user.size();
  std::vector<Vec2> points(n + 1);
  std::vector<Vec2> chord_partial(n);  // d P_{j+1} / d kappa_j from the segment itself
  points[0] = start.position();
  double heading = start.heading;
  for (std::size_t j = 0; j < n; ++j) {
    const double half = 0.5 * user[j] * ds;
    const double c = ds * geometry::sinc(half);
    const double dc = ds * sinc_derivative(half) * 0.5 * ds;
    const Vec2 u = geometry::unit(heading + half);
    points[j + 1] = points[j] + u * c;
    chord_partial[j] = u * dc + geometry::perp(u) * (0.5 * ds * c);
    heading += user[j] * ds;
  }

  double value = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = user[j] - target[j];
    value += d * d * ds;
    gradient[j] = 2.0 * d * ds;
  }

  Vec2 g_sum{};
  double moment = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    const Vec2 p = points[j + 1];
    const SignedViolation v = signed_violation(room, p);
    value += weight * (v.x * v.x + v.y * v.y);
    const Vec2 g{2.0 * weight * v.x, 2.0 * weight * v.y};
    g_sum += g;
    moment += geometry::cross(p, g);
    gradient[j] += geometry::dot(g_sum, chord_partial[j]) + ds * (moment - geometry::cross(p, g_sum));
  }
  return value;
}

double PenalizedObjective::value(std::span<const double> user) const {
  double value = 0.0;
  Vec2 p = start.position();
  double heading = start.heading;
  for (std::size_t j = 0; j < user.size(); ++j) {
    const double d = user[j] - target[j];
    value += d * d * ds;
    const double half = 0.5 * user[j] * ds;
    p += geometry::unit(heading + half) * (ds * geometry::sinc(half));
    heading += user[j] * ds;
    const SignedViolation v = signed_violation(room, p);
    value += weight * (v.x * v.x + v.y * v.y);
  }
  return value;
}

}  // namespace detail

Correspondence transform_path(const PolyPath& target, const RoomSpec& room, const Pose& user_start,
                              const PenaltySchedule& schedule) {
  room.validate();
  if (target.curvatures.empty() || !(target.ds > 0.0)) {
    throw InvalidInput("target path must have positive length");
  }
  if (room.violation(user_start.position()) > 1e-9) {
    throw InvalidInput("user start lies outside the feasible region");
  }

  Correspondence out;
  out.target = target;
  out.user = PolyPath{user_start, target.ds, target.curvatures};
  out.max_violation = max_violation(out.user, room);
  if (out.max_violation == 0.0) return out;

  Solution best;
  double least_violation = std::numeric_limits<double>::infinity();
  for (auto init : {looping_profile(target, room, user_start), target.curvatures}) {
    Solution s = solve(target, room, user_start, std::move(init), schedule);
    least_violation = std::min(least_violation, s.violation);
    const bool feasible = s.violation <= schedule.feasibility_tolerance;
    const bool best_feasible = best.violation <= schedule.feasibility_tolerance;
    if (feasible && (!best_feasible || s.objective < best.objective)) best = std::move(s);
  }
  if (!(best.violation <= schedule.feasibility_tolerance)) {
    throw InfeasiblePath("no admissible user path: residual boundary violation " +
                             std::to_string(least_violation) + " m",
                         least_violation);
  }
  out.user.curvatures = std::move(best.curvatures);
  out.objective = best.objective;
  out.max_violation = best.violation;
  out.gradient_norm = best.gradient_norm;
  out.iterations = best.iterations;
  return out;
}

CorrespondenceMap::CorrespondenceMap(Correspondence corr)
    : corr_(std::move(corr)), target_(corr_.target), user_(corr_.user) {
  if (corr_.target.ds != corr_.user.ds ||
      corr_.target.segment_count() != corr_.user.segment_count()) {
    throw InvalidInput("correspondence paths must share spacing and segment count");
  }
}

namespace {

Pose transfer(const Pose& pose, const PathCoordinates& c, const PathFrame& to) {
  const Pose foot = to.pose_at(c.s);
  const Vec2 p = foot.position() + geometry::perp(geometry::unit(foot.heading)) * c.lateral;
  return {p.x, p.y, wrap_angle(foot.heading + (pose.heading - c.tangent))};
}

Pose transfer(const Pose& pose, const PathFrame& from, const PathFrame& to) {
  return transfer(pose, from.project(pose.position()), to);
}

}  // namespace

Pose CorrespondenceMap::map_pose(const Pose& user_pose) const { return transfer(user_pose, user_, target_); }

Pose CorrespondenceMap::inverse_map_pose(const Pose& target_pose) const {
  return transfer(target_pose, target_, user_);
}

Pose CorrespondenceMap::map_pose(const Pose& user_pose, const PathCoordinates& where) const {
  return transfer(user_pose, where, target_);
}

std::pair<double, double> CorrespondenceMap::tangents_at(const Pose& user_pose) const {
  return tangents_at(user_.project(user_pose.position()));
}

std::pair<double, double> CorrespondenceMap::tangents_at(const PathCoordinates& where) const {
  return {target_.pose_at(where.s).heading, where.tangent};
}

Pose map_pose(const Pose& user_pose, const Correspondence& corr) {
  return CorrespondenceMap(corr).map_pose(user_pose);
}

GuidanceState guidance_update(double cross_track_error, double heading_error,
                              const GuidanceState& prev, double dt, const GuidanceGains& gains) {
  if (!(dt > 0.0)) throw InvalidInput("guidance time step must be positive");
  double demanded = -(gains.cross_track * cross_track_error + gains.heading * heading_error);
  if (!std::isfinite(demanded)) demanded = 0.0;
  demanded = std::clamp(demanded, -gains.offset_max, gains.offset_max);
  const double max_change = gains.rate_max * dt;
  const double change = std::clamp(demanded - prev.injected_offset, -max_change, max_change);
  const double offset = std::clamp(prev.injected_offset + change, -gains.offset_max, gains.offset_max);
  return {cross_track_error, heading_error, offset};
}

GuidanceState guidance_step(const Pose& user_pose, const CorrespondenceMap& map,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains) {
  return guidance_step(user_pose, map.locate(user_pose), prev, dt, gains);
}

GuidanceState guidance_step(const Pose& user_pose, const PathCoordinates& where,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains) {
  return guidance_update(where.lateral, wrap_angle(user_pose.heading - where.tangent), prev, dt, gains);
}

GuidanceState guidance_step(const Pose& user_pose, const Correspondence& corr,
                            const GuidanceState& prev, double dt, const GuidanceGains& gains) {
  return guidance_step(user_pose, CorrespondenceMap(corr), prev, dt, gains);
}

bool needs_replan(const PathCoordinates& where, double path_length, const CompressionConfig& config) {
  return std::abs(where.lateral) > config.replan_deviation ||
         where.s > config.replan_consumed * path_length;
}

}  // namespace telewalk::compression
