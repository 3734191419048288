#pragma once

// Torus-with-discs billiard table: scatterer layout, boundary chart and
// exact straight-line collision detection over the periodic lattice.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lorentz/vec2.hpp"

namespace lorentz {

struct Disc {
  Vec2 center;  // torus coordinates, [0,1)^2
  double radius = 0.0;

  double circumference() const { return 2.0 * M_PI * radius; }
};

/// Position on the boundary of one scatterer. `s` is arclength measured
/// counterclockwise from the +x point of the disc, in [0, 2*pi*radius).
struct BoundaryCoord {
  std::size_t disc_id = 0;
  double s = 0.0;
};

struct BoundaryPoint {
  Vec2 position;
  Vec2 inward_normal;  // points into the billiard domain, away from the disc center
};

/// Result of a straight ray cast. `point` and `image_center` live in the
/// unfolded plane of the ray's origin.
struct StraightHit {
  double time = 0.0;
  BoundaryCoord bc;
  Vec2 point;
  Vec2 image_center;
};

/// Discriminant floor below which a ray-circle intersection counts as a grazing miss.
inline constexpr double kTangencyTolerance = 1e-14;

class Table {
 public:
  /// Validates radii and pairwise disjointness on the torus; throws InputError.
  Table(std::vector<Disc> discs, double horizon_bound);

  const std::vector<Disc> &discs() const { return discs_; }
  const Disc &disc(std::size_t id) const;
  std::size_t size() const { return discs_.size(); }
  double horizon_bound() const { return horizon_bound_; }
  /// Total boundary length, the sum of all circumferences.
  double boundary_length() const { return boundary_length_; }

  /// Flattened arclength r: concatenation of the discs' arclengths in order.
  double flat_r(const BoundaryCoord &bc) const { return offsets_[bc.disc_id] + bc.s; }
  double disc_offset(std::size_t id) const { return offsets_[id]; }

  /// Signed distance from `q` to the nearest scatterer (negative inside one).
  double clearance(Vec2 q) const;

 private:
  std::vector<Disc> discs_;
  std::vector<double> offsets_;
  double horizon_bound_;
  double boundary_length_ = 0.0;
};

/// Reference table with discs (0,0) r=0.40 and (0.5,0.5) r=0.20, horizon bound 2.
Table reference_table_t1();

BoundaryPoint boundary_point(const Table &table, const BoundaryCoord &bc);

/// Boundary coordinate of `point`, which is assumed to lie on the circle of
/// disc `disc_id` placed at `image_center`.
BoundaryCoord boundary_coord_at(const Table &table, std::size_t disc_id, Vec2 point, Vec2 image_center);

/// Wraps s into [0, circumference).
double wrap_arclength(double s, double circumference);

/// First scatterer met by origin + t*direction, 0 < t <= bound, or nullopt.
std::optional<StraightHit> cast_ray(const Table &table, Vec2 origin, Vec2 direction, double bound);

/// cast_ray bounded by the table's horizon; throws HorizonViolation when nothing is hit.
StraightHit first_hit_straight(const Table &table, Vec2 origin, Vec2 direction);

struct Ray {
  Vec2 origin;
  Vec2 direction;
};

struct HorizonReport {
  double horizon_bound = 0.0;
  double max_free_path = 0.0;  // +inf when some sampled ray escaped the bound
  std::size_t n_rays = 0;
  std::optional<Ray> violating_ray;

  bool pass() const { return !violating_ray.has_value(); }
};

/// Sampling-based finite-horizon check: a pass is evidence, not a proof.
/// Origins are jittered-stratified over the free domain; half of them use the
/// exact direction grid k*2pi/n_directions (so axis and diagonal corridors are
/// probed), the other half a randomly rotated copy of it.
HorizonReport check_finite_horizon(const Table &table, double horizon_bound, std::size_t n_origins,
                                   std::size_t n_directions, std::uint64_t rng_seed);

/// Area of the free domain, 1 - sum(pi r^2).
double domain_area(const Table &table);
double domain_area(std::span<const Disc> discs);

}  // namespace lorentz
