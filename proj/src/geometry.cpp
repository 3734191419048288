#include "lorentz/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lorentz/errors.hpp"
#include "lorentz/rng.hpp"

namespace lorentz {

Table::Table(std::vector<Disc> discs, double horizon_bound)
    : discs_(std::move(discs)), horizon_bound_(horizon_bound) {
  if (!(horizon_bound_ > 0.0) || !std::isfinite(horizon_bound_))
    throw InputError("horizon_bound must be positive and finite");
  for (std::size_t i = 0; i < discs_.size(); ++i) {
    auto &d = discs_[i];
    if (!(d.radius > 0.0 && d.radius < 0.5)) {
      std::ostringstream msg;
      msg << "disc " << i << ": radius " << d.radius << " outside (0, 0.5)";
      throw InputError(msg.str());
    }
    if (!std::isfinite(d.center.x) || !std::isfinite(d.center.y))
      throw InputError("disc center must be finite");
    d.center = wrap_torus(d.center);
  }
  for (std::size_t i = 0; i < discs_.size(); ++i) {
    for (std::size_t j = i + 1; j < discs_.size(); ++j) {
      const double dist = norm(minimum_image(discs_[j].center - discs_[i].center));
      if (!(dist > discs_[i].radius + discs_[j].radius)) {
        std::ostringstream msg;
        msg << "discs " << i << " and " << j << " overlap on the torus (distance " << dist << ")";
        throw InputError(msg.str());
      }
    }
  }
  offsets_.reserve(discs_.size());
  for (const auto &d : discs_) {
    offsets_.push_back(boundary_length_);
    boundary_length_ += d.circumference();
  }
}

const Disc &Table::disc(std::size_t id) const {
  if (id >= discs_.size()) {
    std::ostringstream msg;
    msg << "invalid disc id " << id << " (table has " << discs_.size() << " discs)";
    throw InputError(msg.str());
  }
  return discs_[id];
}

double Table::clearance(Vec2 q) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto &d : discs_) best = std::min(best, norm(minimum_image(q - d.center)) - d.radius);
  return best;
}

Table reference_table_t1() {
  return Table({Disc{{0.0, 0.0}, 0.40}, Disc{{0.5, 0.5}, 0.20}}, 2.0);
}

double wrap_arclength(double s, double circumference) {
  s = std::fmod(s, circumference);
  if (s < 0.0) s += circumference;
  if (s >= circumference) s = 0.0;
  return s;
}

BoundaryPoint boundary_point(const Table &table, const BoundaryCoord &bc) {
  const Disc &d = table.disc(bc.disc_id);
  const Vec2 n = unit_from_angle(bc.s / d.radius);
  return {d.center + d.radius * n, n};
}

BoundaryCoord boundary_coord_at(const Table &table, std::size_t disc_id, Vec2 point, Vec2 image_center) {
  const Disc &d = table.disc(disc_id);
  const Vec2 rel = point - image_center;
  const double angle = std::atan2(rel.y, rel.x);
  return {disc_id, wrap_arclength(angle * d.radius, d.circumference())};
}

std::optional<StraightHit> cast_ray(const Table &table, Vec2 origin, Vec2 direction, double bound) {
  // Lattice copies within reach of a path of length `bound`.
  const int reach = static_cast<int>(std::ceil(bound)) + 1;
  constexpr double kMinTime = 1e-12;

  std::optional<StraightHit> best;
  double best_time = bound;
  for (std::size_t id = 0; id < table.size(); ++id) {
    const Disc &d = table.discs()[id];
    const double r2 = d.radius * d.radius;
    const Vec2 nearest = origin + minimum_image(d.center - origin);
    for (int kx = -reach; kx <= reach; ++kx) {
      for (int ky = -reach; ky <= reach; ++ky) {
        const Vec2 c = nearest + Vec2{double(kx), double(ky)};
        const Vec2 rel = c - origin;
        const double b = dot(rel, direction);
        if (b < -d.radius || b - d.radius > best_time) continue;
        const double perp = cross(direction, rel);
        const double disc = r2 - perp * perp;
        if (disc < kTangencyTolerance) continue;
        const double t = b - std::sqrt(disc);
        if (t <= kMinTime || t > best_time) continue;
        best_time = t;
        const Vec2 p = origin + t * direction;
        best = StraightHit{t, boundary_coord_at(table, id, p, c), p, c};
      }
    }
  }
  return best;
}

StraightHit first_hit_straight(const Table &table, Vec2 origin, Vec2 direction) {
  auto hit = cast_ray(table, origin, direction, table.horizon_bound());
  if (!hit) {
    std::ostringstream msg;
    msg << "horizon violation: ray from (" << origin.x << ", " << origin.y << ") along (" << direction.x
        << ", " << direction.y << ") meets no scatterer within L = " << table.horizon_bound();
    throw HorizonViolation(msg.str());
  }
  return *hit;
}

HorizonReport check_finite_horizon(const Table &table, double horizon_bound, std::size_t n_origins,
                                   std::size_t n_directions, std::uint64_t rng_seed) {
  if (n_origins == 0 || n_directions == 0) throw InputError("n_origins and n_directions must be >= 1");
  HorizonReport report;
  report.horizon_bound = horizon_bound;
  RandomStream rng(rng_seed, 0, "check_finite_horizon");

  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(double(n_origins))));
  std::size_t produced = 0;
  for (std::size_t cell = 0; produced < n_origins; ++cell) {
    const std::size_t ix = cell % side;
    const std::size_t iy = (cell / side) % side;
    const Vec2 origin{(double(ix) + rng.uniform()) / double(side), (double(iy) + rng.uniform()) / double(side)};
    if (table.clearance(origin) < 0.0) {
      if (cell > 1000 * n_origins) break;  // table is (almost) all scatterer
      continue;
    }
    const double rotation = (produced % 2 == 0) ? 0.0 : rng.uniform();
    ++produced;
    for (std::size_t j = 0; j < n_directions; ++j) {
      const Vec2 dir = unit_from_angle(2.0 * M_PI * (double(j) + rotation) / double(n_directions));
      ++report.n_rays;
      const auto hit = cast_ray(table, origin, dir, horizon_bound);
      if (!hit) {
        report.max_free_path = std::numeric_limits<double>::infinity();
        if (!report.violating_ray) report.violating_ray = Ray{origin, dir};
      } else {
        report.max_free_path = std::max(report.max_free_path, hit->time);
      }
    }
  }
  return report;
}

double domain_area(std::span<const Disc> discs) {
  double area = 1.0;
  for (const auto &d : discs) area -= M_PI * d.radius * d.radius;
  return area;
}

double domain_area(const Table &table) { return domain_area(std::span<const Disc>(table.discs())); }

}  // namespace lorentz
