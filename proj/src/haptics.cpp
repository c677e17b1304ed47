#include "telewalk/haptics.hpp"

namespace telewalk::haptics {

ForceSample avatar_force(const Pedestrian& avatar, std::span<const Pedestrian> bodies,
                         std::span<const Segment> walls, const crowd::ForceParams& params, double t,
                         const AvatarForceOptions& options) {
  ForceSample out;
  out.t = t;
  out.frame = Frame::target;
  bool contact = false;
  for (const Pedestrian& b : bodies) {
    if (b.id != avatar.id && crowd::in_contact(avatar, b)) contact = true;
  }
  for (const Segment& w : walls) {
    if (crowd::in_contact(avatar, w)) contact = true;
  }
  if (!contact) return out;

  Vec2 total{};
  for (const Pedestrian& b : bodies) {
    if (b.id != avatar.id) total += crowd::pair_force(avatar, b, params);
  }
  for (const Segment& w : walls) total += crowd::wall_force(avatar, w, params);
  if (options.include_driving) total += crowd::driving_force(avatar, options.goal);
  out.fx = total.x;
  out.fy = total.y;
  out.in_contact = true;
  return out;
}

ForceSample avatar_force(const crowd::World& world, const AvatarForceOptions& options) {
  const Pedestrian* avatar = world.avatar();
  if (avatar == nullptr) {
    ForceSample none;
    none.t = world.time();
    return none;
  }
  return avatar_force(*avatar, world.bodies(), world.scenario().walls, world.scenario().forces,
                      world.time(), options);
}

namespace {

ForceSample rotated(const ForceSample& f, double angle, Frame frame) {
  ForceSample out = f;
  const Vec2 v = geometry::rotate(f.vector(), angle);
  out.fx = v.x;
  out.fy = v.y;
  out.frame = frame;
  return out;
}

}  // namespace

ForceSample transform_force(const ForceSample& f, double target_tangent, double user_tangent) {
  if (f.frame != Frame::target) throw geometry::InvalidInput("force sample is not in the target frame");
  return rotated(f, user_tangent - target_tangent, Frame::user);
}

ForceSample inverse_transform_force(const ForceSample& f, double target_tangent, double user_tangent) {
  if (f.frame != Frame::user) throw geometry::InvalidInput("force sample is not in the user frame");
  return rotated(f, target_tangent - user_tangent, Frame::target);
}

const char* frame_name(Frame f) { return f == Frame::user ? "user" : "target"; }

}  // namespace telewalk::haptics
