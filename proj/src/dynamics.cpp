#include "lorentz/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "lorentz/errors.hpp"

namespace lorentz {

FlightSegment::FlightSegment(double t0, double h, const double y0[3], const double f0[3], const double y1[3],
                             const double f1[3], double t_end)
    : t0_(t0), h_(h), t_end_(t_end) {
  for (int i = 0; i < 3; ++i) {
    y0_[i] = y0[i];
    f0_[i] = f0[i];
    y1_[i] = y1[i];
    f1_[i] = f1[i];
  }
}

FlowState FlightSegment::at(double t) const {
  // cubic Hermite on [t0, t0 + h]
  const double s = h_ > 0.0 ? (t - t0_) / h_ : 0.0;
  const double s2 = s * s;
  const double s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  double y[3];
  for (int i = 0; i < 3; ++i) y[i] = h00 * y0_[i] + h10 * h_ * f0_[i] + h01 * y1_[i] + h11 * h_ * f1_[i];
  return {{y[0], y[1]}, y[2]};
}

Vec2 FlightSegment::velocity_at(double t) const {
  const double s = h_ > 0.0 ? (t - t0_) / h_ : 0.0;
  const double s2 = s * s;
  const double d00 = (6 * s2 - 6 * s) / h_;
  const double d10 = 3 * s2 - 4 * s + 1;
  const double d01 = (-6 * s2 + 6 * s) / h_;
  const double d11 = 3 * s2 - 2 * s;
  if (!(h_ > 0.0)) return {f0_[0], f0_[1]};
  return {d00 * y0_[0] + d10 * f0_[0] + d01 * y1_[0] + d11 * f1_[0],
          d00 * y0_[1] + d10 * f0_[1] + d01 * y1_[1] + d11 * f1_[1]};
}

namespace {

using State = std::array<double, 3>;  // (x - x_start, y - y_start, theta)

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

class CurvedIntegrator {
 public:
  CurvedIntegrator(const ForceModel &model, Vec2 origin)
      : model_(model),
        origin_(origin),
        thermostat_(model.kind() == ForceKind::thermostat),
        eps_cos_(model.epsilon() * std::cos(model.field_angle())),
        eps_sin_(model.epsilon() * std::sin(model.field_angle())) {}

  State rhs(const State &z) const {
    if (thermostat_) {
      // unit speed, h = -eps sin(theta - a)
      const double c = std::cos(z[2]);
      const double s = std::sin(z[2]);
      return {c, s, eps_sin_ * c - eps_cos_ * s};
    }
    const double x = origin_.x + z[0];
    const double y = origin_.y + z[1];
    const double p = model_.speed(x, y, z[2]);
    return {p * std::cos(z[2]), p * std::sin(z[2]), p * model_.h(x, y, z[2])};
  }

  // One DP5 step of size h from (z, f0). Returns the 5th-order solution; the
  // scaled error estimate goes to `err` (max-norm / tol) and the FSAL
  // derivative at the new point to `f1`.
  State step(const State &z, const State &f0, double h, double tol, double *err, State *f1) const {
    State k2, k3, k4, k5, k6, y;
    for (int i = 0; i < 3; ++i) y[i] = z[i] + h * a21 * f0[i];
    k2 = rhs(y);
    for (int i = 0; i < 3; ++i) y[i] = z[i] + h * (a31 * f0[i] + a32 * k2[i]);
    k3 = rhs(y);
    for (int i = 0; i < 3; ++i) y[i] = z[i] + h * (a41 * f0[i] + a42 * k2[i] + a43 * k3[i]);
    k4 = rhs(y);
    for (int i = 0; i < 3; ++i) y[i] = z[i] + h * (a51 * f0[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    k5 = rhs(y);
    for (int i = 0; i < 3; ++i)
      y[i] = z[i] + h * (a61 * f0[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    k6 = rhs(y);
    State out;
    for (int i = 0; i < 3; ++i) out[i] = z[i] + h * (b1 * f0[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    if (err || f1) {
      const State k7 = rhs(out);
      if (f1) *f1 = k7;
      if (err) {
        double e = 0.0;
        for (int i = 0; i < 3; ++i) {
          const double d = h * (e1 * f0[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
          e = std::max(e, std::abs(d));
        }
        *err = e / tol;
      }
    }
    return out;
  }

  Vec2 position(const State &z) const { return {origin_.x + z[0], origin_.y + z[1]}; }
  Vec2 origin() const { return origin_; }

 private:
  const ForceModel &model_;
  Vec2 origin_;
  bool thermostat_;
  double eps_cos_, eps_sin_;
};

double next_step_factor(double err) {
  if (err <= 0.0) return 5.0;
  return std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
}

struct Crossing {
  double t = 0.0;  // relative to the step start
  std::size_t disc = 0;
  Vec2 center;
};

class CrossingFinder {
 public:
  CrossingFinder(const Table &table, const ForceModel &model, const CurvedIntegrator &integ)
      : table_(table), model_(model), integ_(integ) {}

  // Earliest crossing of any circle in the accepted step (z0, f0, dt) -> z1.
  std::optional<Crossing> find(const State &z0, const State &f0, double dt, const State &z1) const {
    const Vec2 p0 = integ_.position(z0);
    const Vec2 p1 = integ_.position(z1);
    const Vec2 mid = 0.5 * (p0 + p1);
    const Vec2 chord = p1 - p0;
    const double chord2 = dot(chord, chord);
    const double len = std::sqrt(chord2);
    const double margin = 1.5 * model_.h_bound() * len * len / 8.0 + 1e-13;

    std::optional<Crossing> best;
    for (std::size_t id = 0; id < table_.size(); ++id) {
      const Disc &d = table_.discs()[id];
      const Vec2 c = mid + minimum_image(d.center - mid);
      const double d0 = norm(p0 - c) - d.radius;
      const double d1 = norm(p1 - c) - d.radius;
      double hi;
      if (d1 < 0.0) {
        hi = dt;
      } else {
        if (d0 <= 1e-9) continue;  // leaving this circle
        const double lam = chord2 > 0.0 ? std::clamp(dot(c - p0, chord) / chord2, 0.0, 1.0) : 0.0;
        const double dmin = norm(p0 + lam * chord - c) - d.radius;
        if (dmin >= margin) continue;
        if (distance(z0, f0, lam * dt, c, d.radius) < 0.0) {
          hi = lam * dt;
        } else {
          const auto [tmin, vmin] = minimize(z0, f0, dt, c, d.radius);
          if (vmin >= 0.0) continue;  // grazing pass outside the circle
          hi = tmin;
        }
      }
      const double t = refine(z0, f0, p0, p1, dt, hi, c, d.radius);
      if (!best || t < best->t) best = Crossing{t, id, c};
    }
    return best;
  }

  double distance(const State &z0, const State &f0, double t, Vec2 c, double r) const {
    const State z = t > 0.0 ? integ_.step(z0, f0, t, 1.0, nullptr, nullptr) : z0;
    return norm(integ_.position(z) - c) - r;
  }

 private:
  std::pair<double, double> minimize(const State &z0, const State &f0, double dt, Vec2 c, double r) const {
    constexpr double g = 0.6180339887498949;
    double a = 0.0, b = dt;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = distance(z0, f0, x1, c, r), f2 = distance(z0, f0, x2, c, r);
    for (int i = 0; i < 40 && f1 >= 0.0 && f2 >= 0.0; ++i) {
      if (f1 < f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - g * (b - a);
        f1 = distance(z0, f0, x1, c, r);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + g * (b - a);
        f2 = distance(z0, f0, x2, c, r);
      }
    }
    return f1 < f2 ? std::pair{x1, f1} : std::pair{x2, f2};
  }

  // Root of the signed circle distance in (0, hi]; distance(0) >= 0 > distance(hi).
  // Newton from the chord's line-circle intersection, safeguarded by bisection.
  double refine(const State &z0, const State &f0, const Vec2 &p0, const Vec2 &p1, double dt, double hi, Vec2 c,
                double r) const {
    double lo = 0.0;
    double t = 0.5 * hi;
    {
      const Vec2 chord = p1 - p0;
      const double a = dot(chord, chord);
      const double b = dot(p0 - c, chord);
      const double disc = b * b - a * (dot(p0 - c, p0 - c) - r * r);
      if (a > 0.0 && disc > 0.0) {
        const double lam = (-b - std::sqrt(disc)) / a;
        if (lam * dt > lo && lam * dt < hi) t = lam * dt;
      }
    }
    double dist = 0.0;
    for (int it = 0; it < 50; ++it) {
      State f1;
      const State z = integ_.step(z0, f0, t, 1.0, nullptr, &f1);
      const Vec2 rel = integ_.position(z) - c;
      const double nr = norm(rel);
      dist = nr - r;
      if (dist == 0.0) break;
      if (dist < 0.0)
        hi = t;
      else
        lo = t;
      const double slope = (rel.x * f1[0] + rel.y * f1[1]) / nr;
      double next = slope != 0.0 ? t - dist / slope : 0.5 * (lo + hi);
      if (!(next >= lo && next <= hi)) next = 0.5 * (lo + hi);
      const double step = std::abs(next - t);
      t = next;
      if (step <= 1e-15 * dt || std::abs(dist) <= 1e-15) break;
    }
    dist = distance(z0, f0, t, c, r);
    if (std::abs(dist) > 1e-12) {
      std::ostringstream msg;
      msg << "crossing refinement did not converge (residual " << dist << ")";
      throw IntegrationFailure(msg.str());
    }
    return t;
  }

  const Table &table_;
  const ForceModel &model_;
  const CurvedIntegrator &integ_;
};

void emit_segment(FlightObserver *observer, Vec2 origin, double t0, double h, const State &z0, const State &f0,
                  const State &z1, const State &f1, double t_end) {
  if (!observer) return;
  const double y0[3] = {origin.x + z0[0], origin.y + z0[1], z0[2]};
  const double y1[3] = {origin.x + z1[0], origin.y + z1[1], z1[2]};
  observer->on_segment(FlightSegment(t0, h, y0, f0.data(), y1, f1.data(), t_end));
}

FlightResult straight_flight(const Table &table, const FlowState &start, FlightObserver *observer) {
  const Vec2 dir = unit_from_angle(start.theta);
  const StraightHit hit = first_hit_straight(table, start.q, dir);
  FlightResult r;
  r.tau = hit.time;
  r.arrival = hit.bc;
  r.image_center = hit.image_center;
  const Disc &d = table.disc(hit.bc.disc_id);
  const Vec2 rel = hit.point - hit.image_center;
  r.arrival_point = hit.image_center + (d.radius / norm(rel)) * rel;
  r.incoming_theta = wrap_angle(start.theta);
  r.displacement = hit.time * dir;
  r.steps = 1;
  if (observer) {
    const double y0[3] = {start.q.x, start.q.y, start.theta};
    const double f[3] = {dir.x, dir.y, 0.0};
    const double y1[3] = {start.q.x + r.displacement.x, start.q.y + r.displacement.y, start.theta};
    observer->on_segment(FlightSegment(0.0, hit.time, y0, f, y1, f, hit.time));
  }
  return r;
}

}  // namespace

FlightResult integrate_flight(const Table &table, const ForceModel &model, const FlowState &start,
                              const IntegratorOptions &opts, FlightObserver *observer) {
  if (model.straight()) return straight_flight(table, start, observer);
  if (!(opts.tol > 0.0)) throw InputError("integrator tolerance must be positive");

  const CurvedIntegrator integ(model, start.q);
  const CrossingFinder finder(table, model, integ);
  const double t_max = table.horizon_bound() / model.p_min() + opts.horizon_margin;
  const double p_max = model.p_max();

  State z{0.0, 0.0, start.theta};
  State f = integ.rhs(z);
  double t = 0.0;
  double h_adapt = 0.1;
  std::size_t steps = 0;

  while (true) {
    if (t >= t_max) {
      std::ostringstream msg;
      msg << "horizon violation: curved flight from (" << start.q.x << ", " << start.q.y << ") exceeded "
          << t_max << " time units";
      throw HorizonViolation(msg.str());
    }
    if (++steps > opts.max_steps) throw IntegrationFailure("curved flight exceeded max_steps");
    const double clearance = table.clearance(integ.position(z));
    const double cap = std::max(0.5 * clearance, opts.min_step_length) / p_max;
    const double dt = std::min({h_adapt, cap, t_max - t + 1e-9});
    if (dt < 1e-15) throw IntegrationFailure("step size underflow in curved flight");

    double err = 0.0;
    State f1;
    const State z1 = integ.step(z, f, dt, opts.tol, &err, &f1);
    if (err > 1.0) {
      h_adapt = dt * next_step_factor(err);
      continue;
    }

    if (const auto cross = finder.find(z, f, dt, z1)) {
      State fc;
      const State zc = integ.step(z, f, cross->t, 1.0, nullptr, &fc);
      emit_segment(observer, start.q, t, dt, z, f, z1, f1, t + cross->t);

      const Disc &d = table.disc(cross->disc);
      const Vec2 p = integ.position(zc);
      const Vec2 rel = p - cross->center;
      FlightResult r;
      r.tau = t + cross->t;
      r.image_center = cross->center;
      r.arrival_point = cross->center + (d.radius / norm(rel)) * rel;
      r.arrival = boundary_coord_at(table, cross->disc, r.arrival_point, cross->center);
      r.incoming_theta = wrap_angle(zc[2]);
      r.displacement = r.arrival_point - start.q;
      r.steps = steps;
      return r;
    }
    emit_segment(observer, start.q, t, dt, z, f, z1, f1, t + dt);
    t += dt;
    z = z1;
    f = f1;
    h_adapt = dt * next_step_factor(err);
  }
}

FlowState integrate_free(const ForceModel &model, const FlowState &start, double duration,
                         const IntegratorOptions &opts) {
  const CurvedIntegrator integ(model, start.q);
  State z{0.0, 0.0, start.theta};
  State f = integ.rhs(z);
  double t = 0.0;
  double h_adapt = 0.1;
  std::size_t steps = 0;
  while (t < duration) {
    if (++steps > opts.max_steps) throw IntegrationFailure("free flight exceeded max_steps");
    const double dt = std::min(h_adapt, duration - t);
    double err = 0.0;
    State f1;
    const State z1 = integ.step(z, f, dt, opts.tol, &err, &f1);
    if (err > 1.0) {
      h_adapt = dt * next_step_factor(err);
      if (h_adapt < 1e-15) throw IntegrationFailure("step size underflow in free flight");
      continue;
    }
    t = (dt == duration - t) ? duration : t + dt;
    z = z1;
    f = f1;
    h_adapt = dt * next_step_factor(err);
  }
  return {integ.position(z), z[2]};
}

double phi_from_direction(Vec2 inward_normal, Vec2 direction) {
  const double phi = std::atan2(cross(inward_normal, direction), dot(inward_normal, direction));
  return std::clamp(phi, -M_PI / 2, M_PI / 2);
}

Reflection reflect(double incoming_theta, Vec2 inward_normal) {
  const Vec2 d = unit_from_angle(incoming_theta);
  const double dn = dot(d, inward_normal);
  if (dn > kGrazingCos) throw InputError("reflect: incoming direction points out of the scatterer");
  if (-dn < kGrazingCos) throw GrazingCollision("reflect: incoming direction is tangent to the boundary");
  const Vec2 out = d - 2.0 * dn * inward_normal;
  return {std::atan2(out.y, out.x), phi_from_direction(inward_normal, out)};
}

FlowState lift(const Table &table, const CollisionCoord &x) {
  const BoundaryPoint bp = boundary_point(table, x.bc);
  const double normal_angle = std::atan2(bp.inward_normal.y, bp.inward_normal.x);
  return {bp.position, wrap_angle(normal_angle + x.phi)};
}

MapResult collision_map(const Table &table, const ForceModel &model, const CollisionCoord &x,
                        const IntegratorOptions &opts, FlightObserver *observer) {
  const FlightResult flight = integrate_flight(table, model, lift(table, x), opts, observer);
  const Disc &d = table.disc(flight.arrival.disc_id);
  const Vec2 n = (1.0 / d.radius) * (flight.arrival_point - flight.image_center);
  const Vec2 in = unit_from_angle(flight.incoming_theta);
  const double dn = dot(in, n);
  const Vec2 out = in - 2.0 * dn * n;

  MapResult r;
  r.next = {flight.arrival, phi_from_direction(n, out)};
  r.tau = flight.tau;
  r.displacement = flight.displacement;
  r.incoming_theta = flight.incoming_theta;
  r.arrival_cos = std::max(0.0, -dn);
  r.grazing = r.arrival_cos < kGrazingCos;
  return r;
}

MapResult collision_map_inverse(const Table &table, const ForceModel &model, const CollisionCoord &x,
                                const IntegratorOptions &opts) {
  if (!model.reversible()) throw InputError("collision_map_inverse requires a time-reversible force model");
  MapResult r = collision_map(table, model, reversal_involution(x), opts);
  r.next = reversal_involution(r.next);
  r.displacement = -r.displacement;
  return r;
}

double coord_distance(const Table &table, const CollisionCoord &a, const CollisionCoord &b) {
  if (a.bc.disc_id != b.bc.disc_id) return std::numeric_limits<double>::infinity();
  const double circ = table.disc(a.bc.disc_id).circumference();
  double ds = std::abs(a.bc.s - b.bc.s);
  ds = std::min(ds, circ - ds);
  return std::max(ds, std::abs(a.phi - b.phi));
}

}  // namespace lorentz
