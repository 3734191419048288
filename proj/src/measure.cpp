#include "lorentz/measure.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace lorentz {

CollisionCoord nu0_from_uniforms(const Table &table, double u_r, double u_phi) {
  if (table.size() == 0) throw InputError("cannot sample nu_0 on an empty table");
  double r = u_r * table.boundary_length();
  std::size_t id = 0;
  while (id + 1 < table.size() && r >= table.disc_offset(id + 1)) ++id;
  const double s = std::clamp(r - table.disc_offset(id), 0.0, std::nextafter(table.disc(id).circumference(), 0.0));
  return {{id, s}, std::asin(std::clamp(2.0 * u_phi - 1.0, -1.0, 1.0))};
}

CollisionCoord sample_nu0(const Table &table, RandomStream &rng) {
  const double u_r = rng.uniform();
  const double u_phi = rng.uniform();
  return nu0_from_uniforms(table, u_r, u_phi);
}

MapObservable map_observable(const std::string &name, const Table &table) {
  if (name == "one") return [](const Transition &) { return 1.0; };
  if (name == "cos_phi") return [](const Transition &t) { return std::cos(t.from.phi); };
  if (name == "sin_phi") return [](const Transition &t) { return std::sin(t.from.phi); };
  if (name == "tau") return [](const Transition &t) { return t.map.tau; };
  if (name == "dx") return [](const Transition &t) { return t.map.displacement.x; };
  if (name == "dy") return [](const Transition &t) { return t.map.displacement.y; };
  if (name == "dx0")
    return [&table](const Transition &t) {
      const FlowState s = lift(table, t.from);
      const Vec2 d = unit_from_angle(s.theta);
      return first_hit_straight(table, s.q, d).time * d.x;
    };
  throw InputError("unknown observable '" + name + "'");
}

void validate_run_spec(const RunSpec &spec) {
  if (spec.workers == 0) throw InputError("workers must be at least 1");
  if (spec.n_batches * spec.workers < 30) throw InputError("batch means need at least 30 batches in total");
  if (!(spec.sample_dt > 0.0)) throw InputError("sample_dt must be positive");
  if (!(spec.flow_time > 0.0) && spec.n_collisions <= spec.burn_in)
    throw InputError("n_collisions must exceed burn_in");
  if (spec.flow_time < 0.0 || !std::isfinite(spec.flow_time)) throw InputError("flow_time must be finite and >= 0");
}

void run_worker_trajectory(const Table &table, const ForceModel &model, const RunSpec &spec,
                           std::string_view purpose, std::size_t worker, TrajectoryVisitor &visitor) {
  const std::size_t workers = spec.workers == 0 ? 1 : spec.workers;
  const std::size_t n_batches = spec.n_batches == 0 ? 1 : spec.n_batches;
  RandomStream rng(spec.seed, worker, purpose);
  CollisionCoord x = sample_nu0(table, rng);

  std::size_t done = 0;
  auto fail = [&](const std::exception &e, const char *stage) {
    return std::string(e.what()) + " (worker " + std::to_string(worker) + ", " + stage + ", after " +
           std::to_string(done) + " collisions)";
  };
  try {
    for (; done < spec.burn_in; ++done) x = collision_map(table, model, x, spec.integrator).next;
  } catch (const HorizonViolation &e) {
    throw HorizonViolation(fail(e, "burn-in"));
  } catch (const IntegrationFailure &e) {
    throw IntegrationFailure(fail(e, "burn-in"));
  }

  FlightObserver *observer = visitor.wants_segments() ? &visitor : nullptr;
  done = 0;
  try {
    if (spec.flow_time > 0.0) {
      const double budget = spec.flow_time / double(workers);
      double elapsed = 0.0;
      while (elapsed < budget) {
        const auto batch = std::min(n_batches - 1, static_cast<std::size_t>(elapsed / budget * double(n_batches)));
        visitor.begin_flight(batch);
        Transition t{x, collision_map(table, model, x, spec.integrator, observer)};
        visitor.on_transition(t, batch);
        elapsed += t.map.tau;
        x = t.map.next;
        ++done;
      }
    } else {
      const std::size_t n = spec.n_collisions / workers + (worker < spec.n_collisions % workers ? 1 : 0);
      for (; done < n; ++done) {
        const std::size_t batch = done * n_batches / n;
        visitor.begin_flight(batch);
        Transition t{x, collision_map(table, model, x, spec.integrator, observer)};
        visitor.on_transition(t, batch);
        x = t.map.next;
      }
    }
  } catch (const HorizonViolation &e) {
    throw HorizonViolation(fail(e, "measurement"));
  } catch (const IntegrationFailure &e) {
    throw IntegrationFailure(fail(e, "measurement"));
  }
}

namespace {

std::size_t batches_of(const RunSpec &spec) { return spec.n_batches == 0 ? 1 : spec.n_batches; }

// Flight sampled at times u*dt, u*dt + dt, ... with a fresh jitter u per flight.
// Each sample stands for dt of flow time.
template <class Sink>
class TimeSampler : public TrajectoryVisitor {
 public:
  TimeSampler(Sink sink, const RunSpec &spec, std::size_t worker, std::string_view purpose)
      : sink(std::move(sink)), rng_(spec.seed, worker, std::string(purpose) + "/jitter"), dt_(spec.sample_dt) {
    if (!(dt_ > 0.0)) throw InputError("sample_dt must be positive");
  }

  bool wants_segments() const override { return true; }
  void begin_flight(std::size_t batch) override {
    batch_ = batch;
    next_ = rng_.uniform() * dt_;
  }
  void on_segment(const FlightSegment &seg) override {
    while (next_ < seg.t_end()) {
      const FlowState s = seg.at(next_);
      sink.sample(FlowPoint{wrap_torus(s.q), wrap_angle(s.theta), seg.velocity_at(next_)}, dt_, batch_);
      next_ += dt_;
    }
  }
  void on_transition(const Transition &t, std::size_t batch) override { sink.transition(t, batch); }

  Sink sink;

 private:
  RandomStream rng_;
  double dt_;
  double next_ = 0.0;
  std::size_t batch_ = 0;
};

// 5-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 5> kGLNodes{-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                         0.9061798459386640};
constexpr std::array<double, 5> kGLWeights{0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                           0.4786286704993665, 0.2369268850561891};

class QuadratureVisitor : public TrajectoryVisitor {
 public:
  QuadratureVisitor(const FlowObservable &F, std::size_t n_batches) : acc(n_batches), F_(&F) {}

  bool wants_segments() const override { return true; }
  void begin_flight(std::size_t) override { integral_ = 0.0; }
  void on_segment(const FlightSegment &seg) override {
    const double half = 0.5 * (seg.t_end() - seg.t_begin());
    const double mid = 0.5 * (seg.t_end() + seg.t_begin());
    for (std::size_t i = 0; i < kGLNodes.size(); ++i) {
      const double t = mid + half * kGLNodes[i];
      const FlowState s = seg.at(t);
      integral_ += half * kGLWeights[i] * F_->fn({wrap_torus(s.q), wrap_angle(s.theta), seg.velocity_at(t)});
    }
  }
  void on_transition(const Transition &t, std::size_t batch) override {
    if (t.map.grazing) acc.flag();
    acc.add(integral_, t.map.tau, batch);
    acc.add_count(batch);
  }

  RatioBatches acc;

 private:
  const FlowObservable *F_;
  double integral_ = 0.0;
};

struct RatioSink {
  const FlowObservable *F;
  RatioBatches acc;
  void sample(const FlowPoint &p, double dt, std::size_t batch) { acc.add(F->fn(p) * dt, 0.0, batch); }
  void transition(const Transition &t, std::size_t batch) {
    if (t.map.grazing) acc.flag();
    acc.add(0.0, t.map.tau, batch);
    acc.add_count(batch);
  }
};

struct HistogramSink {
  BatchHistogram hist;
  bool spatial = true;  // else theta
  std::size_t flagged = 0;
  void sample(const FlowPoint &p, double dt, std::size_t batch) {
    hist.add(spatial ? hist.cell_of(p.q.x, p.q.y) : hist.cell_of(p.theta), dt, batch);
  }
  void transition(const Transition &t, std::size_t) { flagged += t.map.grazing ? 1 : 0; }
};

struct VelocitySink {
  std::size_t n_cells, n_batches;
  std::vector<double> w, wv1, wv2;  // [batch * n_cells + cell]
  std::vector<std::size_t> samples;
  RatioBatches j1, j2;
  VelocitySink(std::size_t cells, std::size_t batches)
      : n_cells(cells), n_batches(batches), w(cells * batches), wv1(cells * batches), wv2(cells * batches),
        samples(cells), j1(batches), j2(batches) {}
  std::size_t grid = 1;
  void sample(const FlowPoint &p, double dt, std::size_t batch) {
    const auto ix = std::min(grid - 1, static_cast<std::size_t>(p.q.x * double(grid)));
    const auto iy = std::min(grid - 1, static_cast<std::size_t>(p.q.y * double(grid)));
    const std::size_t k = batch * n_cells + iy * grid + ix;
    w[k] += dt;
    wv1[k] += dt * p.velocity.x;
    wv2[k] += dt * p.velocity.y;
    ++samples[iy * grid + ix];
  }
  std::size_t flagged = 0;
  void transition(const Transition &t, std::size_t batch) {
    if (t.map.grazing) {
      ++flagged;
      j1.flag();
      j2.flag();
    }
    j1.add(t.map.displacement.x, t.map.tau, batch);
    j2.add(t.map.displacement.y, t.map.tau, batch);
    j1.add_count(batch);
    j2.add_count(batch);
  }
};

template <class Sink>
std::vector<TimeSampler<Sink>> sample_flow(const Table &table, const ForceModel &model, const RunSpec &spec,
                                           std::string_view purpose, const std::function<Sink()> &make_sink) {
  return run_trajectories<TimeSampler<Sink>>(table, model, spec, purpose, [&](std::size_t w) {
    return TimeSampler<Sink>(make_sink(), spec, w, purpose);
  });
}

}  // namespace

AverageEstimate birkhoff_map_average(const Table &table, const ForceModel &model, const MapObservable &f,
                                     const RunSpec &spec, std::string_view purpose) {
  struct V : TrajectoryVisitor {
    const MapObservable *f;
    BatchMeans acc;
    V(const MapObservable *f, std::size_t b) : f(f), acc(b) {}
    void on_transition(const Transition &t, std::size_t batch) override {
      if (t.map.grazing) {
        acc.flag();
        return;
      }
      acc.add((*f)(t), batch);
    }
  };
  auto vs = run_trajectories<V>(table, model, spec, purpose, [&](std::size_t) { return V(&f, batches_of(spec)); });
  BatchMeans all = vs[0].acc;
  for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].acc);
  return all.estimate();
}

AverageEstimate flow_average(const Table &table, const ForceModel &model, const FlowObservable &F,
                             const RunSpec &spec, std::string_view purpose) {
  if (F.smooth) {
    auto vs = run_trajectories<QuadratureVisitor>(table, model, spec, purpose,
                                                  [&](std::size_t) { return QuadratureVisitor(F, batches_of(spec)); });
    RatioBatches all = vs[0].acc;
    for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].acc);
    return all.estimate();
  }
  auto vs = sample_flow<RatioSink>(table, model, spec, purpose,
                                   [&] { return RatioSink{&F, RatioBatches(batches_of(spec))}; });
  RatioBatches all = vs[0].sink.acc;
  for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].sink.acc);
  return all.estimate();
}

namespace {

DensityEstimate collision_histogram(const Table &table, const ForceModel &model, const RunSpec &spec, Axis axis,
                                    bool use_r, std::string_view purpose) {
  struct V : TrajectoryVisitor {
    const Table *table;
    bool use_r;
    BatchHistogram hist;
    std::size_t flagged = 0;
    V(const Table *t, bool r, Axis a, std::size_t b) : table(t), use_r(r), hist({std::move(a)}, b) {}
    void on_transition(const Transition &t, std::size_t batch) override {
      flagged += t.map.grazing ? 1 : 0;
      const double v = use_r ? table->flat_r(t.map.next.bc) : t.map.next.phi;
      hist.add(hist.cell_of(v), 1.0, batch);
    }
  };
  auto vs = run_trajectories<V>(table, model, spec, purpose,
                                [&](std::size_t) { return V(&table, use_r, axis, batches_of(spec)); });
  BatchHistogram all = vs[0].hist;
  for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].hist);
  auto d = all.density();
  for (const auto &v : vs) d.flagged += v.flagged;
  return d;
}

}  // namespace

DensityEstimate phi_density(const Table &table, const ForceModel &model, const RunSpec &spec, std::size_t n_bins) {
  return collision_histogram(table, model, spec, Axis{"phi", -M_PI / 2, M_PI / 2, n_bins}, false, "phi_density");
}

DensityEstimate r_density(const Table &table, const ForceModel &model, const RunSpec &spec, std::size_t n_bins) {
  return collision_histogram(table, model, spec, Axis{"r", 0.0, table.boundary_length(), n_bins}, true, "r_density");
}

DensityEstimate spatial_density(const Table &table, const ForceModel &model, const RunSpec &spec, std::size_t grid) {
  std::vector<Axis> axes{Axis{"x", 0.0, 1.0, grid}, Axis{"y", 0.0, 1.0, grid}};
  auto vs = sample_flow<HistogramSink>(table, model, spec, "spatial_density",
                                       [&] { return HistogramSink{BatchHistogram(axes, batches_of(spec)), true}; });
  BatchHistogram all = vs[0].sink.hist;
  for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].sink.hist);
  auto d = all.density();
  for (const auto &v : vs) d.flagged += v.sink.flagged;
  return d;
}

DensityEstimate theta_density(const Table &table, const ForceModel &model, const RunSpec &spec, std::size_t n_bins) {
  std::vector<Axis> axes{Axis{"theta", -M_PI, M_PI, n_bins}};
  auto vs = sample_flow<HistogramSink>(table, model, spec, "theta_density",
                                       [&] { return HistogramSink{BatchHistogram(axes, batches_of(spec)), false}; });
  BatchHistogram all = vs[0].sink.hist;
  for (std::size_t i = 1; i < vs.size(); ++i) all.merge(vs[i].sink.hist);
  auto d = all.density();
  for (const auto &v : vs) d.flagged += v.sink.flagged;
  return d;
}

VelocityFieldGrid velocity_field(const Table &table, const ForceModel &model, const RunSpec &spec, std::size_t grid,
                                 double floor_fraction) {
  if (grid == 0) throw InputError("velocity field grid must be positive");
  const std::size_t cells = grid * grid;
  auto vs = sample_flow<VelocitySink>(table, model, spec, "velocity_field", [&] {
    VelocitySink s(cells, batches_of(spec));
    s.grid = grid;
    return s;
  });

  // concatenate batches over workers
  std::vector<double> w, wv1, wv2;
  std::vector<std::size_t> samples(cells, 0);
  RatioBatches j1 = vs[0].sink.j1, j2 = vs[0].sink.j2;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const auto &s = vs[i].sink;
    w.insert(w.end(), s.w.begin(), s.w.end());
    wv1.insert(wv1.end(), s.wv1.begin(), s.wv1.end());
    wv2.insert(wv2.end(), s.wv2.begin(), s.wv2.end());
    for (std::size_t c = 0; c < cells; ++c) samples[c] += s.samples[c];
    if (i > 0) {
      j1.merge(s.j1);
      j2.merge(s.j2);
    }
  }
  const std::size_t n_batches = w.size() / cells;

  VelocityFieldGrid out;
  out.n = grid;
  out.weight.assign(cells, 0.0);
  out.v1.assign(cells, 0.0);
  out.v2.assign(cells, 0.0);
  out.v1_err.assign(cells, 0.0);
  out.v2_err.assign(cells, 0.0);
  out.samples = samples;
  out.sufficient.assign(cells, false);
  for (const auto &v : vs) out.flagged += v.sink.flagged;
  out.mean_v1 = j1.estimate();
  out.mean_v2 = j2.estimate();

  double total = 0.0;
  std::vector<double> cw(cells, 0.0), c1(cells, 0.0), c2(cells, 0.0);
  for (std::size_t b = 0; b < n_batches; ++b)
    for (std::size_t c = 0; c < cells; ++c) {
      cw[c] += w[b * cells + c];
      c1[c] += wv1[b * cells + c];
      c2[c] += wv2[b * cells + c];
    }
  for (double x : cw) total += x;
  if (total <= 0.0) return out;
  out.weight_floor = floor_fraction * total / double(cells);

  for (std::size_t c = 0; c < cells; ++c) {
    out.weight[c] = cw[c] / total;
    if (cw[c] < out.weight_floor || cw[c] <= 0.0) continue;
    out.sufficient[c] = true;
    out.v1[c] = c1[c] / cw[c];
    out.v2[c] = c2[c] / cw[c];
    // delta-method batch errors of the ratio
    std::size_t used = 0;
    double ss1 = 0.0, ss2 = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const double wb = w[b * cells + c];
      if (wb <= 0.0) continue;
      ++used;
      const double r1 = wv1[b * cells + c] - out.v1[c] * wb;
      const double r2 = wv2[b * cells + c] - out.v2[c] * wb;
      ss1 += r1 * r1;
      ss2 += r2 * r2;
    }
    if (used >= 2) {
      const double mean_w = cw[c] / double(used);
      out.v1_err[c] = std::sqrt(ss1 / double(used - 1) / double(used)) / mean_w;
      out.v2_err[c] = std::sqrt(ss2 / double(used - 1) / double(used)) / mean_w;
    }
  }
  return out;
}

CurrentEstimate current(const Table &table, const ForceModel &model, const RunSpec &spec) {
  struct V : TrajectoryVisitor {
    RatioBatches j1, j2;
    BatchMeans tau;
    std::size_t flagged = 0;
    explicit V(std::size_t b) : j1(b), j2(b), tau(b) {}
    void on_transition(const Transition &t, std::size_t batch) override {
      if (t.map.grazing) ++flagged;
      j1.add(t.map.displacement.x, t.map.tau, batch);
      j2.add(t.map.displacement.y, t.map.tau, batch);
      j1.add_count(batch);
      j2.add_count(batch);
      tau.add(t.map.tau, batch);
    }
  };
  auto vs = run_trajectories<V>(table, model, spec, "current", [&](std::size_t) { return V(batches_of(spec)); });
  V all = vs[0];
  for (std::size_t i = 1; i < vs.size(); ++i) {
    all.j1.merge(vs[i].j1);
    all.j2.merge(vs[i].j2);
    all.tau.merge(vs[i].tau);
    all.flagged += vs[i].flagged;
  }
  CurrentEstimate out{all.j1.estimate(), all.j2.estimate(), all.tau.estimate(), all.flagged};
  const std::size_t n = out.j1.n_samples;
  out.j1.flagged_fraction = out.j2.flagged_fraction = n ? double(all.flagged) / double(n) : 0.0;
  return out;
}

HomogeneityLabel classify_homogeneity(double phi, long k0) {
  if (k0 < 2) throw InputError("k0 must be at least 2");
  if (!(std::abs(phi) <= M_PI / 2)) throw InputError("phi outside [-pi/2, pi/2]");
  const double a = std::abs(phi);
  auto lower = [](long k) { return M_PI / 2 - 1.0 / (double(k) * double(k)); };
  if (a < lower(k0)) return {true, 0, 0};
  const int sign = phi < 0 ? -1 : 1;
  const double gap = M_PI / 2 - a;
  if (gap <= 0.0) return {false, std::numeric_limits<long>::max(), sign};
  // first guess from the closed form, then fix rounding at strip edges
  long k = std::max(k0, static_cast<long>(std::floor(1.0 / std::sqrt(gap))));
  while (k > k0 && a < lower(k)) --k;
  while (a >= lower(k + 1)) ++k;
  return {false, k, sign};
}

SimulationSummary simulate(const Table &table, const ForceModel &model, const RunSpec &spec, long k0) {
  static const char *names[] = {"one", "cos_phi", "sin_phi", "tau", "dx", "dy", "dx0"};
  classify_homogeneity(0.0, k0);  // validates k0
  struct V : TrajectoryVisitor {
    std::vector<MapObservable> fs;
    std::vector<BatchMeans> acc;
    RatioBatches j1, j2;
    std::map<long, std::size_t> strips;
    std::size_t bulk = 0, flagged = 0;
    long k0 = 5;
    explicit V(std::size_t b) : j1(b), j2(b) {}
    void on_transition(const Transition &t, std::size_t batch) override {
      const auto h = classify_homogeneity(t.map.next.phi, k0);
      if (h.bulk)
        ++bulk;
      else
        ++strips[h.sign * h.k];
      j1.add(t.map.displacement.x, t.map.tau, batch);
      j2.add(t.map.displacement.y, t.map.tau, batch);
      j1.add_count(batch);
      j2.add_count(batch);
      if (t.map.grazing) {
        ++flagged;
        for (auto &a : acc) a.flag();
        return;
      }
      for (std::size_t o = 0; o < fs.size(); ++o) acc[o].add(fs[o](t), batch);
    }
  };
  auto vs = run_trajectories<V>(table, model, spec, "simulate", [&](std::size_t) {
    V v(batches_of(spec));
    v.k0 = k0;
    for (const char *n : names) {
      v.fs.push_back(map_observable(n, table));
      v.acc.emplace_back(batches_of(spec));
    }
    return v;
  });
  V &all = vs[0];
  for (std::size_t w = 1; w < vs.size(); ++w) {
    for (std::size_t o = 0; o < all.acc.size(); ++o) all.acc[o].merge(vs[w].acc[o]);
    all.j1.merge(vs[w].j1);
    all.j2.merge(vs[w].j2);
    for (const auto &[k, c] : vs[w].strips) all.strips[k] += c;
    all.bulk += vs[w].bulk;
    all.flagged += vs[w].flagged;
  }
  SimulationSummary out;
  for (std::size_t o = 0; o < all.acc.size(); ++o) out.averages.emplace_back(names[o], all.acc[o].estimate());
  out.current.j1 = all.j1.estimate();
  out.current.j2 = all.j2.estimate();
  out.current.mean_tau = out.averages[3].second;
  out.current.flagged = all.flagged;
  out.k0 = k0;
  out.bulk = all.bulk;
  out.strips.assign(all.strips.begin(), all.strips.end());
  out.n_collisions = out.current.j1.n_samples;
  return out;
}

std::vector<double> cell_free_fraction(const Table &table, std::size_t grid, std::size_t sub) {
  if (grid == 0 || sub == 0) throw InputError("grid and sub must be positive");
  std::vector<double> out(grid * grid, 0.0);
  const double h = 1.0 / double(grid * sub);
  for (std::size_t iy = 0; iy < grid; ++iy)
    for (std::size_t ix = 0; ix < grid; ++ix) {
      std::size_t free = 0;
      for (std::size_t a = 0; a < sub; ++a)
        for (std::size_t b = 0; b < sub; ++b) {
          const Vec2 q{(double(ix * sub + a) + 0.5) * h, (double(iy * sub + b) + 0.5) * h};
          if (table.clearance(q) > 0.0) ++free;
        }
      out[iy * grid + ix] = double(free) / double(sub * sub);
    }
  return out;
}

}  // namespace lorentz
