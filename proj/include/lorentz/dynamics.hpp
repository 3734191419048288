#pragma once

// Flights between collisions, specular reflection and the collision map
// F_eps on the collision space (disc, s, phi).

#include <cstddef>

#include "lorentz/force.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/vec2.hpp"

namespace lorentz {

/// Point of the phase space in the (x, y, theta) chart. Positions may be
/// unfolded (outside [0,1)^2) during a flight.
struct FlowState {
  Vec2 q;
  double theta = 0.0;
};

/// Post-reflection collision coordinate. phi in [-pi/2, pi/2] is the angle
/// from the inward normal to the outgoing velocity, positive counterclockwise.
struct CollisionCoord {
  BoundaryCoord bc;
  double phi = 0.0;
};

struct IntegratorOptions {
  double tol = 1e-12;              // absolute local error per step
  double min_step_length = 0.05;   // floor of the clearance/2 step cap (path length)
  double horizon_margin = 0.5;     // time slack beyond L / p_min
  std::size_t max_steps = 200000;
};

/// Piece of a flight on [t_begin, t_end] with Hermite dense output. For
/// straight flights a single segment covers the whole flight exactly.
class FlightSegment {
 public:
  FlightSegment(double t0, double h, const double y0[3], const double f0[3], const double y1[3], const double f1[3],
                double t_end);

  double t_begin() const { return t0_; }
  double t_end() const { return t_end_; }
  /// State at absolute flight time t in [t_begin, t_end].
  FlowState at(double t) const;
  /// Velocity (dx/dt, dy/dt) at time t.
  Vec2 velocity_at(double t) const;

 private:
  double t0_, h_, t_end_;
  double y0_[3], f0_[3], y1_[3], f1_[3];
};

/// Receives every accepted piece of a flight, in time order.
class FlightObserver {
 public:
  virtual ~FlightObserver() = default;
  virtual void on_segment(const FlightSegment &segment) = 0;
};

struct FlightResult {
  double tau = 0.0;
  BoundaryCoord arrival;
  Vec2 arrival_point;        // unfolded, on the circle of `image_center`
  Vec2 image_center;
  double incoming_theta = 0.0;  // direction of motion just before the reflection
  Vec2 displacement;            // arrival_point - start.q
  std::size_t steps = 0;
};

/// Integrates the flight from `start` to the first boundary crossing. Zero
/// force uses the exact straight ray cast; otherwise an adaptive
/// Dormand-Prince 5(4) pair with clearance-capped steps, bisection and a
/// Newton polish of the crossing time.
FlightResult integrate_flight(const Table &table, const ForceModel &model, const FlowState &start,
                              const IntegratorOptions &opts = {}, FlightObserver *observer = nullptr);

/// Free-space flow (no scatterers) for a fixed duration; used to validate the integrator.
FlowState integrate_free(const ForceModel &model, const FlowState &start, double duration,
                         const IntegratorOptions &opts = {});

struct Reflection {
  double outgoing_theta = 0.0;
  double phi = 0.0;
};

/// Below this cos(phi) an arrival is a grazing collision.
inline constexpr double kGrazingCos = 1e-8;

/// Specular reflection of an incoming direction at a boundary point with the
/// given inward normal. Throws GrazingCollision when the incoming direction
/// is tangent within kGrazingCos, InputError when it points out of the scatterer.
Reflection reflect(double incoming_theta, Vec2 inward_normal);

FlowState lift(const Table &table, const CollisionCoord &x);
/// phi of an outgoing direction relative to an inward normal, clamped to [-pi/2, pi/2].
double phi_from_direction(Vec2 inward_normal, Vec2 direction);

struct MapResult {
  CollisionCoord next;
  double tau = 0.0;
  Vec2 displacement;
  double incoming_theta = 0.0;
  double arrival_cos = 1.0;  // cos(phi) at arrival
  bool grazing = false;      // arrival_cos < kGrazingCos; reflection still applied
};

/// One application of the collision map: lift, fly, reflect.
MapResult collision_map(const Table &table, const ForceModel &model, const CollisionCoord &x,
                        const IntegratorOptions &opts = {}, FlightObserver *observer = nullptr);

/// Time reversal (disc, s, phi) -> (disc, s, -phi).
inline CollisionCoord reversal_involution(const CollisionCoord &x) { return {x.bc, -x.phi}; }

/// F^-1 = iota o F o iota; only for time-reversible models (throws InputError otherwise).
MapResult collision_map_inverse(const Table &table, const ForceModel &model, const CollisionCoord &x,
                                const IntegratorOptions &opts = {});

/// Distance between collision coordinates: infinity across discs, otherwise
/// max(|ds| on the circle, |dphi|).
double coord_distance(const Table &table, const CollisionCoord &a, const CollisionCoord &b);

}  // namespace lorentz
