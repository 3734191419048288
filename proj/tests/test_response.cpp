#include <cmath>
#include <vector>

#include "doctest.h"
#include "lorentz/errors.hpp"
#include "lorentz/response.hpp"

using namespace lorentz;

namespace {

// Normal-incidence bouncing orbit between the disc at the origin and its copy
// at (1, 0): flight tau = 0.2, curvature 2.5. Textbook billiard Jacobian for
// phi = phi' = 0 in (s, phi): -[[1 + tau k, tau], [2k + tau k^2, 1 + tau k]].
const CollisionCoord kBounce{{0, 0.0}, 0.0};
constexpr double kTau = 0.2, kKappa = 2.5;

}  // namespace

TEST_CASE("FD Jacobian on the bouncing orbit") {
  const Table t1 = reference_table_t1();
  const auto J = jacobian_det(t1, ForceModel::zero(), kBounce);
  REQUIRE(J.valid());
  CHECK(std::abs(J.det - 1.0) <= 1e-5);
  CHECK(std::abs(J.det_raw - J.det_half) <= 1e-4 * std::abs(J.det_half));
  const double oracle[2][2] = {{1 + kTau * kKappa, kTau}, {2 * kKappa + kTau * kKappa * kKappa, 1 + kTau * kKappa}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(std::abs(J.D[i][j]) - oracle[i][j]) <= 1e-6);
  CHECK(std::abs(J.D[0][0] + J.D[1][1]) == doctest::Approx(3.0).epsilon(1e-7));
  CHECK(J.image.bc.s == doctest::Approx(0.4 * M_PI));
}

TEST_CASE("g_0 is identically one") {
  const Table t1 = reference_table_t1();
  RandomStream rng(31, 0, "g0");
  std::size_t valid = 0, flagged = 0, halving_ok = 0;
  double worst = 0.0;
  while (valid < 1000) {
    const auto X = sample_nu0(t1, rng);
    const auto J = jacobian_det(t1, ForceModel::zero(), X);
    if (!J.valid()) {
      ++flagged;
      continue;
    }
    ++valid;
    CHECK(J.det > 0.0);
    worst = std::max(worst, std::abs(J.cos_out * J.det / J.cos_in - 1.0));
    halving_ok += std::abs(J.det_raw - J.det_half) < 1e-4 * std::abs(J.det_half) ? 1 : 0;
  }
  CHECK(worst <= 1e-5);
  CHECK(flagged <= 20);
  // the plain step-halving change stays below 1e-4 except close to outgoing grazing
  CHECK(halving_ok >= 990);

  // grazing start is excluded, not computed
  const auto graze = jacobian_det(t1, ForceModel::zero(), {{0, 0.3}, M_PI / 2 - 1e-5});
  CHECK((graze.flags & kJacobianGrazing) != 0);
}

TEST_CASE("g_eps matches the phase-volume contraction along the flight") {
  // The thermostat flow contracts phase volume at rate eps cos(theta), so
  // the collision-map Jacobian against nu_0 is exp(-eps * dx) with dx the
  // x-displacement of the curved flight.
  const Table t1 = reference_table_t1();
  for (double eps : {0.01, 0.1}) {
    const auto model = ForceModel::thermostat(eps, 0.0);
    RandomStream rng(32, 0, "geps");
    std::size_t checked = 0;
    double worst = 0.0;
    for (int i = 0; i < 400; ++i) {
      const auto X = sample_nu0(t1, rng);
      const auto g = g_eps(t1, model, X);
      if (!g.valid()) continue;
      ++checked;
      const auto m = collision_map(t1, model, X);
      worst = std::max(worst, std::abs(g.g - std::exp(-eps * m.displacement.x)));
    }
    CHECK(checked >= 390);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("g_eps and Delta_eps over nu_0") {
  const Table t1 = reference_table_t1();
  for (double eps : {0.005, 0.01, 0.02}) {
    const auto family = ForceModel::thermostat(0.0, 0.0);
    RandomStream rng(33, 0, "delta-mean");
    BatchMeans g(64), delta(64);
    const std::size_t n = 3200;
    for (std::size_t i = 0; i < n; ++i) {
      const auto X = sample_nu0(t1, rng);
      const auto d = delta_eps(t1, family, X, eps);
      if (!d.valid()) continue;
      CHECK(d.g > 0.0);
      g.add(d.g, i * 64 / n);
      delta.add(d.delta, i * 64 / n);
    }
    const auto ge = g.estimate(), de = delta.estimate();
    CHECK(std::abs(ge.mean - 1.0) <= 3 * ge.stderr_);
    CHECK(std::abs(de.mean) <= 3 * de.stderr_);
  }
}

TEST_CASE("Delta for the zero family and the eps -> 0 limit") {
  const Table t1 = reference_table_t1();
  RandomStream rng(34, 0, "delta0");
  const auto thermo = ForceModel::thermostat(0.0, 0.0);
  std::size_t checked = 0;
  for (int i = 0; i < 300; ++i) {
    const auto X = sample_nu0(t1, rng);
    const auto z = delta_eps(t1, ForceModel::zero(), X, 0.01);
    if (!z.valid()) continue;
    CHECK(z.delta == 0.0);
    CHECK(std::abs(z.plain) <= 1e-4);

    const auto a = delta_eps(t1, thermo, X, 1e-3);
    const auto b = delta_eps(t1, thermo, X, 5e-4);
    const auto d0 = delta_0(t1, thermo, X);
    if (!a.valid() || !b.valid() || !d0.valid()) continue;
    ++checked;
    CHECK(std::abs(a.delta - b.delta) <= 0.01 * std::abs(a.delta) + 1e-3);
    // limit oracle: Delta_0 is the straight flight's x-displacement
    const auto s = lift(t1, X);
    const Vec2 dir = unit_from_angle(s.theta);
    const double dx0 = first_hit_straight(t1, s.q, dir).time * dir.x;
    CHECK(std::abs(d0.delta - dx0) <= 1e-3);
  }
  CHECK(checked >= 290);
  CHECK_THROWS_AS(delta_eps(t1, thermo, kBounce, 0.0), InputError);
}

TEST_CASE("series truncation and decay fit") {
  std::vector<SeriesTerm> terms;
  for (std::size_t k = 1; k <= 10; ++k) terms.push_back({k, std::pow(0.5, double(k)), 0.01});
  // 0.5^k < 0.02 from k = 6 on; run of three completes at k = 8
  CHECK(truncation_index(terms, 30) == 5);
  CHECK(log_decay_slope(terms, 5) == doctest::Approx(std::log(0.5)));
  CHECK(truncation_index(terms, 4) == 4);
  std::vector<SeriesTerm> noise{{1, 0.001, 0.01}, {2, -0.001, 0.01}, {3, 0.0, 0.01}};
  CHECK(truncation_index(noise, 30) == 0);
}

TEST_CASE("weighted fits") {
  const std::vector<double> x{0.002, 0.005, 0.01, 0.02};
  std::vector<double> y, se(4, 0.001);
  for (double v : x) y.push_back(0.3 - 2.0 * v);
  auto f = weighted_fit(x, y, se);
  CHECK(f.intercept == doctest::Approx(0.3));
  CHECK(f.slope == doctest::Approx(-2.0));
  CHECK(f.slope_se > 0.0);
  CHECK(f.chi2 == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t i = 0; i < 4; ++i) y[i] += 50 * x[i] * x[i];
  auto q = weighted_fit(x, y, se, true);
  CHECK(q.quad == doctest::Approx(50.0));
  CHECK(q.slope == doctest::Approx(-2.0));
  CHECK_THROWS_AS(weighted_fit({1, 1}, {1, 2}, {1, 1}), InputError);
}

TEST_CASE("Kawasaki report degeneracies") {
  const Table t1 = reference_table_t1();
  SeriesSpec ss;
  ss.n_samples = 2000;
  ss.k_max = 6;
  RunSpec lhs;
  lhs.n_collisions = 20000;

  auto zero = kawasaki(t1, ForceModel::thermostat(0.0, 0.0), {"cos_phi", "one"}, ss, lhs);
  CHECK(zero[0].rhs == zero[0].series.nu0_f.mean);
  CHECK(zero[0].series.truncation == 0);
  CHECK(zero[1].rhs == 1.0);
  CHECK(zero[1].lhs.mean == 1.0);

  auto r = kawasaki(t1, ForceModel::thermostat(0.01, 0.0), {"one", "cos_phi"}, ss, lhs);
  CHECK(r[0].lhs.mean == 1.0);
  for (const auto &t : r[0].series.terms) CHECK(std::abs(t.value) <= 3 * t.stderr_ + 1e-12);
  CHECK(std::abs(r[0].rhs - 1.0) <= 3 * r[0].rhs_stderr + 1e-12);
  CHECK(r[1].discrepancy_sigma <= 3.0);
  CHECK(r[1].series.truncation <= 6);
  CHECK_FALSE(r[1].flagged_warning);
}

TEST_CASE("linear response fit degeneracies") {
  const Table t1 = reference_table_t1();
  RunSpec run;
  run.n_collisions = 5000;
  run.burn_in = 200;
  SeriesSpec ss;
  ss.n_samples = 640;
  ss.k_max = 4;
  const std::vector<double> grid{0.002, 0.005, 0.01, 0.02};
  const auto family = ForceModel::thermostat(0.0, 0.0);

  auto one = linear_response_fit(t1, family, "one", grid, run, ss);
  CHECK(std::abs(one.fit.slope) <= 1e-9);
  CHECK(one.fit.intercept == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(one.intercept_consistent);
  CHECK_FALSE(one.nonlinear);

  auto odd = linear_response_fit(t1, family, "sin_phi", grid, run, ss);
  CHECK(std::abs(odd.fit.slope) <= 3 * odd.fit.slope_se);
  CHECK(odd.points.size() == 4);

  CHECK_THROWS_AS(linear_response_fit(t1, family, "one", {0.01, 0.02, 0.05}, run, ss), InputError);
  CHECK_THROWS_AS(linear_response_fit(t1, family, "one", {0.001, 0.01, 0.02, 0.05}, run, ss), InputError);
}

TEST_CASE("conductivity in a strong-field decade") {
  const Table t1 = reference_table_t1();
  RunSpec run;
  run.n_collisions = 40000;
  auto rep = conductivity(t1, ForceModel::thermostat(0.0, 0.0), {0.05, 0.1, 0.2, 0.4}, run);
  CHECK(rep.sigma > 3 * rep.sigma_se);
  CHECK(std::abs(rep.j2_slope) <= 3 * rep.j2_slope_se);
  CHECK(rep.ratio.size() == 4);
  CHECK_THROWS_AS(conductivity(t1, ForceModel::zero(), {0.05, 0.1, 0.2, 0.4}, run), InputError);
}

TEST_CASE("expansion diagnostic") {
  const Table t1 = reference_table_t1();
  auto none = expansion_diagnostic(t1, ForceModel::zero(), kBounce, 0);
  CHECK(none.log_increments.empty());
  CHECK_FALSE(none.lambda.has_value());

  // bouncing orbit: the tangent aligns with the unstable direction and grows
  // by the eigenvalue (3 + sqrt 5)/2 of the bounce Jacobian per collision
  auto bounce = expansion_diagnostic(t1, ForceModel::zero(), kBounce, 12);
  REQUIRE(bounce.log_increments.size() == 12);
  const double lambda = (3 + std::sqrt(5.0)) / 2;
  for (std::size_t i = 6; i < 12; ++i) CHECK(bounce.log_increments[i] == doctest::Approx(std::log(lambda)).epsilon(1e-5));

  RandomStream rng(35, 0, "expansion");
  auto chaotic = expansion_diagnostic(t1, ForceModel::zero(), sample_nu0(t1, rng), 1000);
  REQUIRE(chaotic.lambda.has_value());
  CHECK(*chaotic.lambda > 1.0);
  auto forced = expansion_diagnostic(t1, ForceModel::thermostat(0.05, 0.0), sample_nu0(t1, rng), 300);
  CHECK(*forced.lambda > 1.0);
}
