#include <cmath>
#include <limits>
#include <optional>

#include "doctest.h"
#include "lorentz/errors.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/rng.hpp"

using namespace lorentz;

namespace {

struct OracleHit {
  double time;
  std::size_t disc;
};

// Brute force: every lattice copy in a wide box, textbook quadratic
// a t^2 + b t + c = 0, smallest positive root.
std::optional<OracleHit> oracle_hit(const Table &table, Vec2 o, Vec2 d, double bound) {
  std::optional<OracleHit> best;
  const int reach = static_cast<int>(bound) + 4;
  for (std::size_t id = 0; id < table.size(); ++id) {
    const Disc &disc = table.discs()[id];
    for (int i = -reach; i <= reach; ++i) {
      for (int j = -reach; j <= reach; ++j) {
        const double cx = disc.center.x + i + std::floor(o.x);
        const double cy = disc.center.y + j + std::floor(o.y);
        const double a = d.x * d.x + d.y * d.y;
        const double b = 2 * ((o.x - cx) * d.x + (o.y - cy) * d.y);
        const double c = (o.x - cx) * (o.x - cx) + (o.y - cy) * (o.y - cy) - disc.radius * disc.radius;
        const double disc2 = b * b - 4 * a * c;
        if (disc2 <= 0) continue;
        const double t = (-b - std::sqrt(disc2)) / (2 * a);
        if (t > 1e-9 && t <= bound && (!best || t < best->time)) best = OracleHit{t, id};
      }
    }
  }
  return best;
}

Vec2 random_free_point(const Table &t, RandomStream &rng) {
  while (true) {
    const Vec2 p{rng.uniform(), rng.uniform()};
    if (t.clearance(p) > 1e-6) return p;
  }
}

}  // namespace

TEST_CASE("table validation") {
  CHECK_THROWS_AS(Table({Disc{{0, 0}, 0.5}}, 2.0), InputError);
  CHECK_THROWS_AS(Table({Disc{{0, 0}, 0.0}}, 2.0), InputError);
  CHECK_THROWS_AS(Table({Disc{{0, 0}, 0.4}, Disc{{0.5, 0.5}, 0.4}}, 2.0), InputError);
  // overlap only through the periodic copy
  CHECK_THROWS_AS(Table({Disc{{0.05, 0.5}, 0.2}, Disc{{0.8, 0.5}, 0.1}}, 2.0), InputError);
  CHECK_THROWS_AS(Table({Disc{{0, 0}, 0.1}}, 0.0), InputError);

  const Table t1 = reference_table_t1();
  CHECK(t1.boundary_length() == doctest::Approx(2 * M_PI * 0.6).epsilon(1e-15));
  CHECK(t1.flat_r({1, 0.1}) == doctest::Approx(2 * M_PI * 0.4 + 0.1));
}

TEST_CASE("boundary_point on T1") {
  const Table t1 = reference_table_t1();
  auto a0 = boundary_point(t1, {0, 0.0});
  CHECK(a0.position.x == doctest::Approx(0.4));
  CHECK(a0.position.y == doctest::Approx(0.0));
  CHECK(a0.inward_normal.x == doctest::Approx(1.0));

  auto a1 = boundary_point(t1, {0, 0.4 * M_PI});
  CHECK(a1.position.x == doctest::Approx(-0.4));
  CHECK(std::abs(a1.position.y) < 1e-15);
  CHECK(a1.inward_normal.x == doctest::Approx(-1.0));
  CHECK(wrap_torus(a1.position).x == doctest::Approx(0.6));

  auto b = boundary_point(t1, {1, 0.2 * M_PI / 2});
  CHECK(b.position.x == doctest::Approx(0.5));
  CHECK(b.position.y == doctest::Approx(0.7));
  CHECK(b.inward_normal.y == doctest::Approx(1.0));

  CHECK_THROWS_AS(boundary_point(t1, {2, 0.0}), InputError);

  RandomStream rng(7, 0, "bp");
  for (int i = 0; i < 1000; ++i) {
    const std::size_t id = rng() % 2;
    const Disc &d = t1.disc(id);
    const auto p = boundary_point(t1, {id, rng.uniform() * d.circumference()});
    CHECK(std::abs(norm(p.position - d.center) - d.radius) <= 1e-12);
    CHECK(std::abs(norm(p.inward_normal) - 1.0) <= 1e-15);
  }
}

TEST_CASE("first_hit_straight axis examples") {
  const Table t1 = reference_table_t1();
  auto h1 = first_hit_straight(t1, {0.5, 0.0}, {1.0, 0.0});
  CHECK(h1.time == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(h1.bc.disc_id == 0);
  CHECK(h1.bc.s == doctest::Approx(0.4 * M_PI).epsilon(1e-12));
  CHECK(wrap_torus(h1.point).x == doctest::Approx(0.6));

  auto h2 = first_hit_straight(t1, {0.5, 0.3}, {0.0, -1.0});
  CHECK(h2.time == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(h2.bc.disc_id == 1);
  CHECK(h2.bc.s == doctest::Approx(0.2 * M_PI / 2).epsilon(1e-12));
}

TEST_CASE("first_hit_straight matches the brute-force lattice oracle") {
  const Table t1 = reference_table_t1();
  {
    const Vec2 o{0.41, 0.0}, d{0.6, 0.8};
    auto h = first_hit_straight(t1, o, d);
    auto ref = oracle_hit(t1, o, d, t1.horizon_bound());
    REQUIRE(ref);
    CHECK(h.bc.disc_id == ref->disc);
    CHECK(std::abs(h.time - ref->time) <= 1e-10);
  }
  RandomStream rng(11, 0, "rays");
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 o = random_free_point(t1, rng);
    const Vec2 d = unit_from_angle(2 * M_PI * rng.uniform());
    auto ref = oracle_hit(t1, o, d, t1.horizon_bound());
    REQUIRE(ref);
    auto h = first_hit_straight(t1, o, d);
    const Disc &disc = t1.disc(h.bc.disc_id);
    CHECK(std::abs(norm(h.point - h.image_center) - disc.radius) <= 1e-10);
    CHECK(h.bc.disc_id == ref->disc);
    CHECK(std::abs(h.time - ref->time) <= 1e-10);
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("re-casting from a hit along the reversed ray heads back toward the origin") {
  const Table t1 = reference_table_t1();
  RandomStream rng(13, 0, "reverse");
  for (int i = 0; i < 1000; ++i) {
    const Vec2 o = random_free_point(t1, rng);
    const Vec2 d = unit_from_angle(2 * M_PI * rng.uniform());
    auto h = first_hit_straight(t1, o, d);
    const Vec2 n = (1.0 / t1.disc(h.bc.disc_id).radius) * (h.point - h.image_center);
    auto back = cast_ray(t1, h.point + 1e-9 * n, -d, t1.horizon_bound() + 1.0);
    REQUIRE(back);
    CHECK(back->time > 1e-6);  // no immediate re-hit of the same point
    // the reverse ray passes the origin before hitting anything
    CHECK(back->time >= h.time - 1e-6);
  }
}

TEST_CASE("horizon violation error") {
  const Table single({Disc{{0.5, 0.5}, 0.25}}, 2.0);
  CHECK_THROWS_AS(first_hit_straight(single, {0.0, 0.0}, {1.0, 0.0}), HorizonViolation);
}

TEST_CASE("check_finite_horizon") {
  const Table t1 = reference_table_t1();
  auto ok = check_finite_horizon(t1, 2.0, 100, 100, 1);
  CHECK(ok.n_rays == 10000);
  CHECK(ok.pass());
  CHECK(ok.max_free_path < 2.0);
  CHECK(ok.max_free_path > 0.5);

  const Table single({Disc{{0.5, 0.5}, 0.25}}, 2.0);
  auto bad = check_finite_horizon(single, 2.0, 100, 100, 1);
  CHECK_FALSE(bad.pass());
  CHECK(std::isinf(bad.max_free_path));

  const Table shrunk({Disc{{0, 0}, 0.1}, Disc{{0.5, 0.5}, 0.1}}, 2.0);
  CHECK_FALSE(check_finite_horizon(shrunk, 2.0, 100, 100, 1).pass());

  CHECK_THROWS_AS(check_finite_horizon(t1, 2.0, 0, 10, 1), InputError);
}

TEST_CASE("domain_area") {
  CHECK(domain_area(reference_table_t1()) == doctest::Approx(1 - 0.2 * M_PI).epsilon(1e-14));
  CHECK(domain_area(reference_table_t1()) == doctest::Approx(0.371681).epsilon(1e-6));
  CHECK(domain_area(std::span<const Disc>{}) == 1.0);
  CHECK(domain_area(Table({Disc{{0.5, 0.5}, 0.25}}, 2.0)) == doctest::Approx(0.803650).epsilon(1e-6));
}
