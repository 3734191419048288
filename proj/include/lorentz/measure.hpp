#pragma once

// Sampling of the billiard measure nu_0, Birkhoff averages for nu_eps and
// mu_eps, and the marginal-density / velocity-field estimators.
//
// Every run is split over `workers` independent trajectories. Worker w draws
// from the stream (seed, w, purpose); per-worker accumulators are merged in
// worker order, so results depend on (seed, workers) only.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "lorentz/dynamics.hpp"
#include "lorentz/errors.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/rng.hpp"
#include "lorentz/stats.hpp"

namespace lorentz {

struct RunSpec {
  std::size_t n_collisions = 1000000;  // per run, split over workers (ignored when flow_time > 0)
  std::size_t burn_in = 1000;          // per worker
  double flow_time = 0.0;              // > 0: run until this much flow time is accumulated
  std::size_t n_batches = 64;          // per worker
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  double sample_dt = 0.01;  // time-sampling step for indicator observables
  IntegratorOptions integrator;
};

/// One application of F_eps along a trajectory.
struct Transition {
  CollisionCoord from;
  MapResult map;
};

using MapObservable = std::function<double(const Transition &)>;

/// Named observables on the collision space: one, cos_phi, sin_phi, tau, dx,
/// dy (displacement of the actual flight) and dx0 (displacement of the
/// straight flight from the same point; independent of the force).
MapObservable map_observable(const std::string &name, const Table &table);

/// Point of a flight handed to flow observables; q is wrapped to [0,1)^2.
struct FlowPoint {
  Vec2 q;
  double theta = 0.0;
  Vec2 velocity;
};

struct FlowObservable {
  std::function<double(const FlowPoint &)> fn;
  /// smooth: Gauss-Legendre quadrature per flight piece; otherwise uniform
  /// time sampling with per-flight jitter.
  bool smooth = true;
};

/// nu_0 draw: disc with probability proportional to its circumference, s
/// uniform, phi = asin(2u - 1).
CollisionCoord sample_nu0(const Table &table, RandomStream &rng);
/// Same map from explicit uniforms in [0,1): disc/arclength from u_r, phi from u_phi.
CollisionCoord nu0_from_uniforms(const Table &table, double u_r, double u_phi);

/// Hooks for a trajectory run. Segment callbacks are delivered only when
/// wants_segments() is true.
class TrajectoryVisitor : public FlightObserver {
 public:
  virtual bool wants_segments() const { return false; }
  virtual void begin_flight(std::size_t /*batch*/) {}
  virtual void on_transition(const Transition &t, std::size_t batch) = 0;
  void on_segment(const FlightSegment &) override {}
};

/// Throws InputError unless workers >= 1, n_batches * workers >= 30,
/// sample_dt > 0 and (flow_time > 0 or n_collisions > burn_in).
void validate_run_spec(const RunSpec &spec);

/// Runs one trajectory (burn-in, then the measured part) for a single worker.
void run_worker_trajectory(const Table &table, const ForceModel &model, const RunSpec &spec,
                           std::string_view purpose, std::size_t worker, TrajectoryVisitor &visitor);

/// Runs all workers (on threads when workers > 1) and returns their visitors
/// in worker order. Worker exceptions are rethrown after all threads join,
/// the first failing worker winning.
template <class Visitor>
std::vector<Visitor> run_trajectories(const Table &table, const ForceModel &model, const RunSpec &spec,
                                      std::string_view purpose,
                                      const std::function<Visitor(std::size_t worker)> &make) {
  validate_run_spec(spec);
  const std::size_t w = spec.workers;
  std::vector<Visitor> visitors;
  visitors.reserve(w);
  for (std::size_t i = 0; i < w; ++i) visitors.push_back(make(i));
  std::vector<std::exception_ptr> errors(w);
  auto body = [&](std::size_t i) {
    try {
      run_worker_trajectory(table, model, spec, purpose, i, visitors[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (w == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < w; ++i) threads.emplace_back(body, i);
    for (auto &t : threads) t.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
  return visitors;
}

AverageEstimate birkhoff_map_average(const Table &table, const ForceModel &model, const MapObservable &f,
                                     const RunSpec &spec, std::string_view purpose = "birkhoff");

AverageEstimate flow_average(const Table &table, const ForceModel &model, const FlowObservable &F,
                             const RunSpec &spec, std::string_view purpose = "flow");

DensityEstimate phi_density(const Table &table, const ForceModel &model, const RunSpec &spec,
                            std::size_t n_bins = 50);
/// Density over the flattened arclength r in [0, |boundary|).
DensityEstimate r_density(const Table &table, const ForceModel &model, const RunSpec &spec,
                          std::size_t n_bins = 50);
/// Occupation-time density of position on a grid x grid partition of the unit torus.
DensityEstimate spatial_density(const Table &table, const ForceModel &model, const RunSpec &spec,
                                std::size_t grid = 50);
/// Time-sampled density of the direction of motion on [-pi, pi].
DensityEstimate theta_density(const Table &table, const ForceModel &model, const RunSpec &spec,
                              std::size_t n_bins = 64);

struct VelocityFieldGrid {
  std::size_t n = 0;
  std::vector<double> weight;  // occupation-time fraction per cell, row-major in y
  std::vector<double> v1, v2;  // time-weighted mean velocity per cell
  std::vector<double> v1_err, v2_err;
  std::vector<std::size_t> samples;
  std::vector<bool> sufficient;  // false: weight below the floor, v1/v2 not reported
  double weight_floor = 0.0;
  AverageEstimate mean_v1, mean_v2;  // global time averages
  std::size_t flagged = 0;

  Vec2 cell_center(std::size_t cell) const {
    return {(double(cell % n) + 0.5) / double(n), (double(cell / n) + 0.5) / double(n)};
  }
};

VelocityFieldGrid velocity_field(const Table &table, const ForceModel &model, const RunSpec &spec,
                                 std::size_t grid = 50, double floor_fraction = 0.01);

struct CurrentEstimate {
  AverageEstimate j1, j2;
  AverageEstimate mean_tau;
  std::size_t flagged = 0;
};

/// Global current J = mu_eps(velocity) = (sum of flight displacements) / (sum of flight times).
CurrentEstimate current(const Table &table, const ForceModel &model, const RunSpec &spec);

struct HomogeneityLabel {
  bool bulk = true;
  long k = 0;
  int sign = 0;
};

/// Strip index k with pi/2 - k^-2 <= |phi| < pi/2 - (k+1)^-2, or bulk when
/// |phi| < pi/2 - k0^-2. Needs k0 >= 2.
HomogeneityLabel classify_homogeneity(double phi, long k0);

struct SimulationSummary {
  std::vector<std::pair<std::string, AverageEstimate>> averages;  // nu_eps of the named map observables
  CurrentEstimate current;
  long k0 = 0;
  std::size_t bulk = 0;
  std::vector<std::pair<long, std::size_t>> strips;  // signed strip index (sign * k) -> count, sorted
  std::size_t n_collisions = 0;
};

/// One trajectory run collecting every named map observable, the current and
/// the homogeneity-strip occupation of the post-collision phi.
SimulationSummary simulate(const Table &table, const ForceModel &model, const RunSpec &spec, long k0 = 5);

/// Fraction of free area in each cell of a grid x grid partition, estimated on
/// a sub x sub lattice of points per cell.
std::vector<double> cell_free_fraction(const Table &table, std::size_t grid, std::size_t sub = 16);

}  // namespace lorentz
