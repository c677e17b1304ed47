#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "telewalk/haptics.hpp"

using namespace telewalk::haptics;
using telewalk::crowd::ForceParams;
using telewalk::geometry::InvalidInput;

namespace {

constexpr double kPi = std::numbers::pi;

Pedestrian body(int id, Vec2 pos, double radius = 0.3) {
  Pedestrian p;
  p.id = id;
  p.position = pos;
  p.radius = radius;
  return p;
}

ForceParams contact_only() {
  ForceParams f;
  f.A = 0.0;
  return f;
}

double wrapped(double a) { return std::remainder(a, 2 * kPi); }

}  // namespace

TEST_CASE("avatar force is zero without contact") {
  const Pedestrian avatar = body(0, {0, 0});
  const std::vector<Pedestrian> bodies{avatar, body(1, {1.6, 0})};  // 1 m gap
  const ForceSample f = avatar_force(avatar, bodies, {}, ForceParams{}, 1.5);
  CHECK(f.fx == 0.0);
  CHECK(f.fy == 0.0);
  CHECK_FALSE(f.in_contact);
  CHECK(f.frame == Frame::target);
  CHECK(f.t == 1.5);
}

TEST_CASE("avatar force from one overlapping pedestrian") {
  const Pedestrian avatar = body(0, {0, 0});
  // Overlap 0.01 m along the direction (3, 4) / 5.
  const double d = 0.59;
  const std::vector<Pedestrian> bodies{avatar, body(1, {0.6 * d, 0.8 * d})};
  const ForceSample f = avatar_force(avatar, bodies, {}, contact_only(), 0.0);
  CHECK(f.in_contact);
  CHECK(std::hypot(f.fx, f.fy) == doctest::Approx(1200.0).epsilon(1e-9));
  // Pushes the avatar away from the pedestrian.
  CHECK(f.fx / f.fy == doctest::Approx(0.75));
  CHECK(f.fx < 0.0);
}

TEST_CASE("wall and pedestrian contact superpose") {
  const ForceParams fp;
  const Pedestrian avatar = body(0, {0, 0.25});
  const Segment wall{{-3, 0}, {3, 0}};
  const Pedestrian other = body(1, {0.5, 0.35});
  const std::vector<Pedestrian> bodies{avatar, other};
  const std::vector<Segment> walls{wall};
  const ForceSample f = avatar_force(avatar, bodies, walls, fp, 0.0);
  const Vec2 oracle = telewalk::crowd::pair_force(avatar, other, fp) + telewalk::crowd::wall_force(avatar, wall, fp);
  CHECK(f.in_contact);
  CHECK(std::abs(f.fx - oracle.x) <= 1e-12 * std::abs(oracle.x));
  CHECK(std::abs(f.fy - oracle.y) <= 1e-12 * std::abs(oracle.y));
}

TEST_CASE("avatar force is zero in every random configuration without overlap") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(-2.0, 2.0);
  std::uniform_real_distribution<double> rad(0.25, 0.35);
  const ForceParams fp;
  const std::vector<Segment> walls{Segment{{-2.5, -2.5}, {2.5, -2.5}}, Segment{{2.5, -2.5}, {2.5, 2.5}}};
  int contacts = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<Pedestrian> bodies{body(0, {pos(rng), pos(rng)}, rad(rng))};
    for (int i = 1; i <= 6; ++i) bodies.push_back(body(i, {pos(rng), pos(rng)}, rad(rng)));
    const ForceSample f = avatar_force(bodies[0], bodies, walls, fp, 0.0);
    bool overlap = false;
    Vec2 oracle{};
    for (int i = 1; i <= 6; ++i) {
      const Vec2 d = bodies[0].position - bodies[i].position;
      overlap = overlap || std::hypot(d.x, d.y) < bodies[0].radius + bodies[i].radius;
      oracle += telewalk::crowd::pair_force(bodies[0], bodies[i], fp);
    }
    for (const Segment& w : walls) {
      overlap = overlap || telewalk::crowd::in_contact(bodies[0], w);
      oracle += telewalk::crowd::wall_force(bodies[0], w, fp);
    }
    CHECK(f.in_contact == overlap);
    if (!overlap) {
      CHECK(f.fx == 0.0);
      CHECK(f.fy == 0.0);
    } else {
      ++contacts;
      CHECK(f.fx == oracle.x);
      CHECK(f.fy == oracle.y);
    }
  }
  CHECK(contacts > 100);
}

TEST_CASE("driving term is optional") {
  const Pedestrian avatar = body(0, {0, 0});
  const std::vector<Pedestrian> bodies{avatar, body(1, {0.59, 0})};
  AvatarForceOptions opts;
  opts.include_driving = true;
  opts.goal = {0, 10};
  const ForceSample with = avatar_force(avatar, bodies, {}, contact_only(), 0.0, opts);
  const ForceSample without = avatar_force(avatar, bodies, {}, contact_only(), 0.0);
  const Vec2 drive = telewalk::crowd::driving_force(avatar, opts.goal);
  CHECK(with.fx == doctest::Approx(without.fx + drive.x));
  CHECK(with.fy == doctest::Approx(without.fy + drive.y));
}

TEST_CASE("avatar force from a world") {
  telewalk::crowd::Scenario s = telewalk::crowd::default_four_gate();
  s.spawn_count = 0;
  telewalk::crowd::World w(s, {}, 1);
  CHECK_FALSE(avatar_force(w).in_contact);
  w.set_avatar({10, 6}, {0, 0});
  Pedestrian p = body(0, {10.5, 6});
  w.add_pedestrian(p);
  const ForceSample f = avatar_force(w);
  CHECK(f.in_contact);
  const ForceSample direct = avatar_force(*w.avatar(), w.bodies(), s.walls, s.forces, w.time());
  CHECK(f.fx == direct.fx);
  CHECK(f.fy == direct.fy);
  CHECK(f.fx < 0.0);
}

TEST_CASE("transform_force examples") {
  ForceSample zero;
  const ForceSample z = transform_force(zero, 0.3, 1.2);
  CHECK(z.fx == 0.0);
  CHECK(z.fy == 0.0);
  CHECK(z.frame == Frame::user);

  // 5 N at +30 degrees to a target tangent of 0.4 rad; user tangent 90 degrees further.
  const double tt = 0.4;
  const double ut = tt + kPi / 2;
  ForceSample f;
  f.fx = 5 * std::cos(tt + kPi / 6);
  f.fy = 5 * std::sin(tt + kPi / 6);
  f.in_contact = true;
  const ForceSample g = transform_force(f, tt, ut);
  CHECK(std::hypot(g.fx, g.fy) == doctest::Approx(5.0));
  CHECK(wrapped(std::atan2(g.fy, g.fx) - ut) == doctest::Approx(kPi / 6));
  CHECK(g.in_contact);

  CHECK_THROWS_AS(transform_force(g, tt, ut), InvalidInput);
  CHECK_THROWS_AS(inverse_transform_force(f, tt, ut), InvalidInput);
}

TEST_CASE("transform_force preserves magnitude and relative angle (fuzz)") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> angle(-4 * kPi, 4 * kPi);
  std::uniform_real_distribution<double> mag(0.0, 5000.0);
  double worst_mag = 0.0;
  double worst_dot = 0.0;
  double worst_inverse = 0.0;
  for (int i = 0; i < 200000; ++i) {
    const double m = mag(rng);
    const double a = angle(rng);
    const double tt = angle(rng);
    const double ut = angle(rng);
    ForceSample f;
    f.fx = m * std::cos(a);
    f.fy = m * std::sin(a);
    const ForceSample g = transform_force(f, tt, ut);
    const double scale = std::max(1.0, m);
    worst_mag = std::max(worst_mag, std::abs(std::hypot(g.fx, g.fy) - std::hypot(f.fx, f.fy)) / scale);
    // Rotation-matrix oracle: components along and across each tangent agree.
    const double along_in = f.fx * std::cos(tt) + f.fy * std::sin(tt);
    const double across_in = -f.fx * std::sin(tt) + f.fy * std::cos(tt);
    const double along_out = g.fx * std::cos(ut) + g.fy * std::sin(ut);
    const double across_out = -g.fx * std::sin(ut) + g.fy * std::cos(ut);
    worst_dot = std::max({worst_dot, std::abs(along_in - along_out) / scale, std::abs(across_in - across_out) / scale});
    const ForceSample back = inverse_transform_force(g, tt, ut);
    worst_inverse = std::max({worst_inverse, std::abs(back.fx - f.fx) / scale, std::abs(back.fy - f.fy) / scale});
    CHECK(back.frame == Frame::target);
  }
  CHECK(worst_mag <= 1e-12);
  CHECK(worst_dot <= 1e-12);
  CHECK(worst_inverse <= 1e-12);
}

TEST_CASE("frame names") {
  CHECK(std::string(frame_name(Frame::user)) == "user");
  CHECK(std::string(frame_name(Frame::target)) == "target");
}
