#include <algorithm>
#include <cmath>
#include <limits>

#include "telewalk/crowd.hpp"

namespace telewalk::crowd {

using geometry::dot;
using geometry::norm;
using geometry::perp;

namespace {

constexpr double kCoincident = 1e-9;

double positive(double x) { return x > 0.0 ? x : 0.0; }

// Shared by bodies and walls: n points from the other object toward the body,
// `relative` is the other object's velocity minus the body's.
Vec2 contact_law(Vec2 n, double d, double r, Vec2 relative, const ForceParams& fp) {
  const double gap = r - d;
  const double overlap = positive(gap);
  const double normal = (fp.A > 0.0 ? fp.A * std::exp(gap / fp.B) : 0.0) + fp.k * overlap;
  const Vec2 t = perp(n);
  const double tangential = fp.kappa * overlap * dot(relative, t);
  return n * normal + t * tangential;
}

}  // namespace

double ForceParams::interaction_range() const {
  if (!(A > cutoff_force) || !(cutoff_force > 0.0)) return 0.0;
  return B * std::log(A / cutoff_force);
}

Vec2 driving_force(const Pedestrian& p, Vec2 goal) {
  const Vec2 to_goal = goal - p.position;
  const double d = norm(to_goal);
  const Vec2 e = d > 0.0 ? to_goal / d : Vec2{};
  return (e * p.desired_speed - p.velocity) * (p.mass / p.tau);
}

Vec2 pair_force(const Pedestrian& a, const Pedestrian& b, const ForceParams& params,
                bool* coincident) {
  const Vec2 diff = a.position - b.position;
  const double d = norm(diff);
  const double r = a.radius + b.radius;
  if (d >= r + params.interaction_range()) return {};
  Vec2 n;
  if (d < kCoincident) {
    n = a.id < b.id ? Vec2{1.0, 0.0} : Vec2{-1.0, 0.0};
    if (coincident != nullptr) *coincident = true;
  } else {
    n = diff / d;
  }
  return contact_law(n, d, r, b.velocity - a.velocity, params);
}

Vec2 wall_force(const Pedestrian& p, const Segment& wall, const ForceParams& params,
                bool* coincident) {
  const Vec2 diff = p.position - geometry::closest_point(wall, p.position);
  const double d = norm(diff);
  const double r = p.radius;
  if (d >= r + params.interaction_range()) return {};
  Vec2 n;
  if (d < kCoincident) {
    const double len = wall.length();
    n = len > 0.0 ? perp((wall.b - wall.a) / len) : Vec2{1.0, 0.0};
    if (coincident != nullptr) *coincident = true;
  } else {
    n = diff / d;
  }
  return contact_law(n, d, r, -p.velocity, params);
}

bool in_contact(const Pedestrian& a, const Pedestrian& b) {
  return norm(a.position - b.position) < a.radius + b.radius;
}

bool in_contact(const Pedestrian& p, const Segment& wall) {
  return norm(p.position - geometry::closest_point(wall, p.position)) < p.radius;
}

namespace {

// Uniform grid over the bounding box of the bodies, stored as a counting
// sort: bodies of cell c are order[start[c] .. start[c+1]), ascending index.
class SpatialHash {
 public:
  SpatialHash(std::span<const Pedestrian> bodies, double cell) : cell_(cell) {
    double x0 = std::numeric_limits<double>::infinity();
    double y0 = x0;
    double x1 = -x0;
    double y1 = -x0;
    for (const Pedestrian& b : bodies) {
      x0 = std::min(x0, b.position.x);
      y0 = std::min(y0, b.position.y);
      x1 = std::max(x1, b.position.x);
      y1 = std::max(y1, b.position.y);
    }
    // Keep the grid bounded even if something flew far away.
    const double span = std::max(x1 - x0, y1 - y0);
    if (span / cell_ > 2048.0) cell_ = span / 2048.0;
    origin_ = {x0, y0};
    nx_ = static_cast<int>((x1 - x0) / cell_) + 1;
    ny_ = static_cast<int>((y1 - y0) / cell_) + 1;

    const std::size_t cells = static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_);
    start_.assign(cells + 1, 0);
    cell_of_.resize(bodies.size());
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      cell_of_[i] = index(cell_x(bodies[i].position.x), cell_y(bodies[i].position.y));
      ++start_[cell_of_[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    order_.resize(bodies.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < bodies.size(); ++i) order_[fill[cell_of_[i]]++] = i;
  }

  // Indices of bodies in the 3x3 block around `p`, sorted ascending.
  void neighbours(Vec2 p, std::vector<std::size_t>& out) const {
    out.clear();
    const int cx = cell_x(p.x);
    const int cy = cell_y(p.y);
    for (int y = std::max(cy - 1, 0); y <= std::min(cy + 1, ny_ - 1); ++y) {
      for (int x = std::max(cx - 1, 0); x <= std::min(cx + 1, nx_ - 1); ++x) {
        const std::size_t c = index(x, y);
        out.insert(out.end(), order_.begin() + static_cast<long>(start_[c]),
                   order_.begin() + static_cast<long>(start_[c + 1]));
      }
    }
    std::sort(out.begin(), out.end());
  }

 private:
  int cell_x(double x) const { return std::clamp(static_cast<int>((x - origin_.x) / cell_), 0, nx_ - 1); }
  int cell_y(double y) const { return std::clamp(static_cast<int>((y - origin_.y) / cell_), 0, ny_ - 1); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(x);
  }

  double cell_;
  Vec2 origin_;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> cell_of_;
};

double inverse_mass(const Pedestrian& p) { return p.kind == BodyKind::avatar ? 0.0 : 1.0 / p.mass; }

void accumulate(std::size_t i, std::span<const Pedestrian> bodies, std::span<const std::size_t> others,
                std::span<const Segment> walls, const ForceParams& params, InteractionForces& out) {
  const Pedestrian& me = bodies[i];
  Vec2 total{};
  bool contact = false;
  bool coincident = false;
  double damping = 0.0;
  double spring = 0.0;
  for (std::size_t j : others) {
    if (j == i) continue;
    const Pedestrian& other = bodies[j];
    total += pair_force(me, other, params, &coincident);
    const double overlap = me.radius + other.radius - norm(me.position - other.position);
    if (overlap > 0.0) {
      contact = true;
      const double inv = inverse_mass(me) + inverse_mass(other);
      damping += params.kappa * overlap * inv;
      spring += params.k * inv;
    }
  }
  for (const Segment& w : walls) {
    total += wall_force(me, w, params, &coincident);
    const double overlap = me.radius - norm(me.position - geometry::closest_point(w, me.position));
    if (overlap > 0.0) {
      contact = true;
      damping += params.kappa * overlap * inverse_mass(me);
      spring += params.k * inverse_mass(me);
    }
  }
  out.force[i] = total;
  out.contact[i] = contact ? 1 : 0;
  out.coincident[i] = coincident ? 1 : 0;
  out.stiffness[i] = std::max(damping, std::sqrt(spring));
}

}  // namespace

void interaction_forces(ForceKernel kernel, std::span<const Pedestrian> bodies,
                        std::span<const Segment> walls, const ForceParams& params,
                        InteractionForces& out) {
  const std::size_t n = bodies.size();
  out.force.assign(n, Vec2{});
  out.contact.assign(n, 0);
  out.coincident.assign(n, 0);
  out.stiffness.assign(n, 0.0);
  if (n == 0) return;

  if (kernel == ForceKernel::brute_force) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t i = 0; i < n; ++i) accumulate(i, bodies, all, walls, params, out);
    return;
  }

  double max_radius = 0.0;
  for (const Pedestrian& b : bodies) max_radius = std::max(max_radius, b.radius);
  // Any interacting pair is closer than 2 r_max + range, so the 3x3 block of
  // cells of that size contains every partner.
  const double cell = std::max(2.0 * max_radius + params.interaction_range(), 1e-3);
  const SpatialHash hash(bodies, cell);

  if (kernel == ForceKernel::hashed) {
    std::vector<std::size_t> near;
    for (std::size_t i = 0; i < n; ++i) {
      hash.neighbours(bodies[i].position, near);
      accumulate(i, bodies, near, walls, params, out);
    }
    return;
  }

  const long count = static_cast<long>(n);
#pragma omp parallel
  {
    std::vector<std::size_t> near;
#pragma omp for schedule(static)
    for (long i = 0; i < count; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      hash.neighbours(bodies[idx].position, near);
      accumulate(idx, bodies, near, walls, params, out);
    }
  }
}

}  // namespace telewalk::crowd
