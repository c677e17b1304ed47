#pragma once

#include <span>

#include "telewalk/crowd.hpp"

namespace telewalk::haptics {

using crowd::Pedestrian;
using geometry::Segment;
using geometry::Vec2;

enum class Frame { target, user };

struct ForceSample {
  double fx = 0.0;
  double fy = 0.0;
  bool in_contact = false;
  Frame frame = Frame::target;
  double t = 0.0;

  Vec2 vector() const { return {fx, fy}; }
};

struct AvatarForceOptions {
  /// Adds the avatar's own driving term toward `goal` (off by default: the
  /// user provides the locomotion intent).
  bool include_driving = false;
  Vec2 goal;
};

/// Resultant interaction force on the avatar, in the target frame. Exactly
/// zero unless a pedestrian or wall overlaps the avatar disc; otherwise the
/// psychological and contact terms of every neighbour and wall are summed in
/// index order. Bodies with the avatar's id are skipped.
ForceSample avatar_force(const Pedestrian& avatar, std::span<const Pedestrian> bodies,
                         std::span<const Segment> walls, const crowd::ForceParams& params, double t,
                         const AvatarForceOptions& options = {});

/// Same, for the avatar registered in `world` (zero sample when none is).
ForceSample avatar_force(const crowd::World& world, const AvatarForceOptions& options = {});

/// Rotates a target-frame force so that its angle to the user path tangent
/// equals its angle to the target path tangent. Throws InvalidInput when the
/// sample is not in the target frame.
ForceSample transform_force(const ForceSample& f, double target_tangent, double user_tangent);

/// Inverse of transform_force.
ForceSample inverse_transform_force(const ForceSample& f, double target_tangent, double user_tangent);

const char* frame_name(Frame f);

}  // namespace telewalk::haptics
