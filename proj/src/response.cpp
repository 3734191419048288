#include "lorentz/response.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "lorentz/errors.hpp"
#include "lorentz/rng.hpp"

namespace lorentz {

namespace {

double wrapped_difference(double a, double b, double circumference) {
  double d = std::fmod(a - b, circumference);
  if (d > circumference / 2) d -= circumference;
  if (d <= -circumference / 2) d += circumference;
  return d;
}

// Central-difference Jacobian on the (s, phi) stencil of half-width h.
// Returns false when a neighbor lands on another branch.
bool stencil(const Table &table, const ForceModel &model, const CollisionCoord &X, const CollisionCoord &center,
             double h, const JacobianOptions &opts, Matrix2 &D) {
  const double C = table.disc(X.bc.disc_id).circumference();
  const double C_out = table.disc(center.bc.disc_id).circumference();
  CollisionCoord img[4];
  const CollisionCoord pts[4] = {
      {{X.bc.disc_id, wrap_arclength(X.bc.s + h, C)}, X.phi},
      {{X.bc.disc_id, wrap_arclength(X.bc.s - h, C)}, X.phi},
      {X.bc, X.phi + h},
      {X.bc, X.phi - h},
  };
  for (int i = 0; i < 4; ++i) {
    img[i] = collision_map(table, model, pts[i], opts.integrator).next;
    if (img[i].bc.disc_id != center.bc.disc_id) return false;
    if (coord_distance(table, img[i], center) > opts.branch_jump) return false;
  }
  D[0][0] = wrapped_difference(img[0].bc.s, img[1].bc.s, C_out) / (2 * h);
  D[1][0] = (img[0].phi - img[1].phi) / (2 * h);
  D[0][1] = wrapped_difference(img[2].bc.s, img[3].bc.s, C_out) / (2 * h);
  D[1][1] = (img[2].phi - img[3].phi) / (2 * h);
  return true;
}

double det2(const Matrix2 &D) { return D[0][0] * D[1][1] - D[0][1] * D[1][0]; }

template <class Fn>
void for_each_worker(std::size_t workers, Fn &&fn) {
  std::vector<std::exception_ptr> errors(workers);
  auto body = [&](std::size_t w) {
    try {
      fn(w);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(body, w);
    for (auto &t : threads) t.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

JacobianResult jacobian_det(const Table &table, const ForceModel &model, const CollisionCoord &X,
                            const JacobianOptions &opts) {
  if (!(opts.delta_fd > 0.0)) throw InputError("delta_fd must be positive");
  JacobianResult r;
  r.cos_in = std::cos(X.phi);
  try {
    r.image = collision_map(table, model, X, opts.integrator).next;
    r.cos_out = std::cos(r.image.phi);
    if (r.cos_in < opts.grazing_cos || r.cos_out < opts.grazing_cos) {
      r.flags |= kJacobianGrazing;
      return r;
    }
    Matrix2 half{};
    if (!stencil(table, model, X, r.image, opts.delta_fd, opts, r.D) ||
        !stencil(table, model, X, r.image, opts.delta_fd / 2, opts, half)) {
      r.flags |= kJacobianBranch;
      return r;
    }
    r.det_raw = det2(r.D);
    r.det_half = det2(half);
    // the central differences carry an h^2 error; combine the two steps to cancel it
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) r.D[i][j] = (4 * half[i][j] - r.D[i][j]) / 3;
    r.det = det2(r.D);
    if (!(std::abs(r.det_raw - r.det_half) <= opts.richardson_rel * std::abs(r.det_half))) r.flags |= kJacobianRichardson;
  } catch (const IntegrationFailure &) {
    r.flags |= kJacobianFailure;
  }
  return r;
}

JacobianSample g_eps(const Table &table, const ForceModel &model, const CollisionCoord &X,
                     const JacobianOptions &opts) {
  const auto J = jacobian_det(table, model, X, opts);
  JacobianSample s;
  s.X = X;
  s.flags = J.flags;
  s.det_DF = J.det;
  if (!J.valid()) return s;
  s.g = J.cos_out * J.det / J.cos_in;
  s.delta = model.epsilon() > 0.0 ? (1.0 - s.g) / model.epsilon() : 0.0;
  return s;
}

DeltaResult delta_eps(const Table &table, const ForceModel &family, const CollisionCoord &X, double eps,
                      const JacobianOptions &opts) {
  if (!(eps > 0.0)) throw InputError("Delta_eps needs eps > 0");
  const ForceModel m = family.with_epsilon(eps);
  const auto ge = g_eps(table, m, X, opts);
  DeltaResult d;
  d.flags = ge.flags;
  if (!ge.valid()) return d;
  d.g = ge.g;
  d.plain = (1.0 - ge.g) / eps;
  if (m.kind() == ForceKind::zero) return d;  // same map at every eps: Delta is 0
  const auto g0 = g_eps(table, ForceModel::zero(), X, opts);
  d.flags |= g0.flags;
  if (d.valid()) d.delta = (g0.g - ge.g) / eps;
  return d;
}

DeltaResult delta_0(const Table &table, const ForceModel &family, const CollisionCoord &X,
                    const JacobianOptions &opts, double eps) {
  if (family.kind() == ForceKind::general) throw InputError("Delta_0 needs an eps-parameterized family");
  const auto a = delta_eps(table, family, X, eps, opts);
  const auto b = delta_eps(table, family, X, eps / 2, opts);
  DeltaResult d;
  d.flags = a.flags | b.flags;
  if (!d.valid()) return d;
  d.delta = 2 * b.delta - a.delta;
  d.plain = 2 * b.plain - a.plain;
  d.g = b.g;
  return d;
}

std::size_t truncation_index(const std::vector<SeriesTerm> &terms, std::size_t k_max) {
  const std::size_t n = std::min(terms.size(), k_max);
  std::size_t run = 0;
  for (std::size_t i = 0; i < n; ++i) {
    run = std::abs(terms[i].value) < 2 * terms[i].stderr_ ? run + 1 : 0;
    if (run == 3) return i + 1 - 3;  // terms[i] is T_{i+1}; keep T_1..T_{i-2}
  }
  return n;
}

double log_decay_slope(const std::vector<SeriesTerm> &terms, std::size_t K) {
  const std::size_t n = std::min(terms.size(), std::max<std::size_t>(K, 3));
  std::vector<double> x, y;
  for (std::size_t i = 0; i < n; ++i)
    if (terms[i].value != 0.0) {
      x.push_back(double(terms[i].k));
      y.push_back(std::log(std::abs(terms[i].value)));
    }
  if (x.size() < 2) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

std::vector<SeriesResult> series_terms(const Table &table, const ForceModel &family, double eps, DeltaSource source,
                                       const std::vector<std::string> &observables, const SeriesSpec &spec) {
  if (spec.workers == 0 || spec.n_batches == 0) throw InputError("workers and n_batches must be positive");
  if (spec.n_batches * spec.workers < 30) throw InputError("batch means need at least 30 batches in total");
  if (spec.n_samples < spec.n_batches * spec.workers) throw InputError("fewer samples than batches");
  if (spec.k_max == 0) throw InputError("k_max must be positive");
  if (eps < 0.0) throw InputError("eps must be non-negative");
  std::vector<MapObservable> fs;
  for (const auto &name : observables) fs.push_back(map_observable(name, table));

  const ForceModel dynamics = source == DeltaSource::eps ? family.with_epsilon(eps) : ForceModel::zero();
  const bool need_delta = source == DeltaSource::zero_limit || eps > 0.0;
  const std::size_t n_obs = fs.size(), K1 = spec.k_max + 1, B = spec.n_batches;

  // per worker, per batch: [obs][k] sums of f(X_k) Delta (k >= 1) and f(X_0)
  struct Acc {
    std::vector<double> terms;  // [(b * n_obs + o) * K1 + k]
    std::vector<double> f0;     // [b * n_obs + o]
    std::vector<std::size_t> valid, all;  // per batch
    std::size_t flagged = 0;
  };
  std::vector<Acc> acc(spec.workers);
  for_each_worker(spec.workers, [&](std::size_t w) {
    Acc &a = acc[w];
    a.terms.assign(B * n_obs * K1, 0.0);
    a.f0.assign(B * n_obs, 0.0);
    a.valid.assign(B, 0);
    a.all.assign(B, 0);
    RandomStream rng(spec.seed, w, "series");
    const std::size_t n = spec.n_samples / spec.workers + (w < spec.n_samples % spec.workers ? 1 : 0);
    std::vector<double> fk(n_obs * K1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = i * B / n;
      const CollisionCoord X = sample_nu0(table, rng);
      DeltaResult d;
      if (need_delta)
        d = source == DeltaSource::eps ? delta_eps(table, family, X, eps, spec.jacobian)
                                       : delta_0(table, family, X, spec.jacobian);
      bool ok = d.valid();
      try {
        CollisionCoord x = X;
        for (std::size_t k = 0; k <= spec.k_max; ++k) {
          Transition t{x, collision_map(table, dynamics, x, spec.jacobian.integrator)};
          for (std::size_t o = 0; o < n_obs; ++o) fk[o * K1 + k] = fs[o](t);
          x = t.map.next;
          if (!ok && k == 0) break;  // only f(X_0) is needed
        }
      } catch (const IntegrationFailure &) {
        ++a.flagged;
        continue;
      }
      ++a.all[b];
      for (std::size_t o = 0; o < n_obs; ++o) a.f0[b * n_obs + o] += fk[o * K1];
      if (!ok) {
        ++a.flagged;
        continue;
      }
      ++a.valid[b];
      for (std::size_t o = 0; o < n_obs; ++o)
        for (std::size_t k = 1; k < K1; ++k) a.terms[(b * n_obs + o) * K1 + k] += fk[o * K1 + k] * d.delta;
    }
  });

  // batches concatenated in worker order
  const std::size_t n_b = B * spec.workers;
  auto term_sum = [&](std::size_t gb, std::size_t o, std::size_t k) {
    const auto &a = acc[gb / B];
    return a.terms[((gb % B) * n_obs + o) * K1 + k];
  };
  auto valid_of = [&](std::size_t gb) { return acc[gb / B].valid[gb % B]; };
  auto all_of = [&](std::size_t gb) { return acc[gb / B].all[gb % B]; };
  std::size_t total_valid = 0, total_all = 0, flagged = 0;
  for (std::size_t gb = 0; gb < n_b; ++gb) {
    total_valid += valid_of(gb);
    total_all += all_of(gb);
  }
  for (const auto &a : acc) flagged += a.flagged;

  std::vector<SeriesResult> out(n_obs);
  for (std::size_t o = 0; o < n_obs; ++o) {
    SeriesResult &r = out[o];
    r.observable = observables[o];
    r.n_samples = spec.n_samples;
    r.n_flagged = flagged;

    std::vector<double> per_batch;
    double f0_total = 0.0;
    for (std::size_t gb = 0; gb < n_b; ++gb) {
      const double s = acc[gb / B].f0[(gb % B) * n_obs + o];
      f0_total += s;
      if (all_of(gb)) per_batch.push_back(s / double(all_of(gb)));
    }
    r.nu0_f.mean = total_all ? f0_total / double(total_all) : 0.0;
    r.nu0_f.stderr_ = batch_stderr(per_batch);
    r.nu0_f.n_samples = total_all;
    r.nu0_f.n_batches = per_batch.size();
    r.nu0_f.flagged_fraction = r.flagged_fraction();

    for (std::size_t k = 1; k < K1; ++k) {
      SeriesTerm t{k, 0.0, 0.0};
      if (need_delta && total_valid) {
        double total = 0.0;
        per_batch.clear();
        for (std::size_t gb = 0; gb < n_b; ++gb) {
          total += term_sum(gb, o, k);
          if (valid_of(gb)) per_batch.push_back(term_sum(gb, o, k) / double(valid_of(gb)));
        }
        t.value = total / double(total_valid);
        t.stderr_ = batch_stderr(per_batch);
      }
      r.terms.push_back(t);
    }
    r.truncation = need_delta ? truncation_index(r.terms, spec.k_max) : 0;
    r.decay_slope = log_decay_slope(r.terms, r.truncation);

    std::vector<double> sums, rhs;
    for (std::size_t k = 1; k <= r.truncation; ++k) r.sum += r.terms[k - 1].value;
    for (std::size_t gb = 0; gb < n_b; ++gb) {
      if (!valid_of(gb) || !all_of(gb)) continue;
      double s = 0.0;
      for (std::size_t k = 1; k <= r.truncation; ++k) s += term_sum(gb, o, k);
      s /= double(valid_of(gb));
      sums.push_back(s);
      rhs.push_back(acc[gb / B].f0[(gb % B) * n_obs + o] / double(all_of(gb)) + eps * s);
    }
    r.sum_stderr = batch_stderr(sums);
    r.rhs_stderr = batch_stderr(rhs);
  }
  return out;
}

std::vector<KawasakiReport> kawasaki(const Table &table, const ForceModel &model,
                                     const std::vector<std::string> &observables, const SeriesSpec &spec,
                                     const RunSpec &lhs_spec) {
  const double eps = model.epsilon();
  auto series = series_terms(table, model, eps, DeltaSource::eps, observables, spec);

  struct V : TrajectoryVisitor {
    std::vector<MapObservable> fs;
    std::vector<BatchMeans> acc;
    void on_transition(const Transition &t, std::size_t batch) override {
      for (std::size_t o = 0; o < fs.size(); ++o) {
        if (t.map.grazing)
          acc[o].flag();
        else
          acc[o].add(fs[o](t), batch);
      }
    }
  };
  auto vs = run_trajectories<V>(table, model, lhs_spec, "kawasaki/lhs", [&](std::size_t) {
    V v;
    for (const auto &name : observables) {
      v.fs.push_back(map_observable(name, table));
      v.acc.emplace_back(lhs_spec.n_batches);
    }
    return v;
  });

  std::vector<KawasakiReport> out;
  for (std::size_t o = 0; o < observables.size(); ++o) {
    BatchMeans lhs = vs[0].acc[o];
    for (std::size_t w = 1; w < vs.size(); ++w) lhs.merge(vs[w].acc[o]);
    KawasakiReport r;
    r.epsilon = eps;
    r.series = series[o];
    r.rhs = r.series.nu0_f.mean + eps * r.series.sum;
    r.rhs_stderr = r.series.rhs_stderr;
    r.lhs = lhs.estimate();
    const double combined = std::hypot(r.lhs.stderr_, r.rhs_stderr);
    const double diff = std::abs(r.lhs.mean - r.rhs);
    r.discrepancy_sigma = combined > 0.0 ? diff / combined : (diff == 0.0 ? 0.0 : INFINITY);
    r.flagged_warning = r.series.flagged_fraction() > 0.05;
    out.push_back(std::move(r));
  }
  return out;
}

LinearFit weighted_fit(const std::vector<double> &x, const std::vector<double> &y, const std::vector<double> &se,
                       bool quadratic) {
  const std::size_t p = quadratic ? 3 : 2;
  if (x.size() != y.size() || x.size() != se.size()) throw InputError("fit inputs differ in length");
  if (x.size() < p) throw InputError("too few points for the fit");
  const bool unit = std::any_of(se.begin(), se.end(), [](double s) { return !(s > 0.0); });

  // normal equations, solved by Gauss-Jordan on [A | I]
  double A[3][6] = {};
  double rhs[3] = {};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = unit ? 1.0 : 1.0 / (se[i] * se[i]);
    const double phi[3] = {1.0, x[i], x[i] * x[i]};
    for (std::size_t a = 0; a < p; ++a) {
      rhs[a] += w * phi[a] * y[i];
      for (std::size_t b = 0; b < p; ++b) A[a][b] += w * phi[a] * phi[b];
    }
  }
  for (std::size_t a = 0; a < p; ++a) A[a][p + a] = 1.0;
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    if (A[piv][c] == 0.0) throw InputError("degenerate fit (repeated abscissae)");
    for (std::size_t k = 0; k < 2 * p; ++k) std::swap(A[c][k], A[piv][k]);
    const double d = A[c][c];
    for (std::size_t k = 0; k < 2 * p; ++k) A[c][k] /= d;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double m = A[r][c];
      for (std::size_t k = 0; k < 2 * p; ++k) A[r][k] -= m * A[c][k];
    }
  }
  double beta[3] = {};
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b) beta[a] += A[a][p + b] * rhs[b];

  LinearFit f;
  f.intercept = beta[0];
  f.slope = beta[1];
  f.quad = quadratic ? beta[2] : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (beta[0] + beta[1] * x[i] + (quadratic ? beta[2] * x[i] * x[i] : 0.0));
    f.chi2 += unit ? r * r : r * r / (se[i] * se[i]);
  }
  // with unit weights the covariance is scaled by the residual variance
  const double scale = unit ? (x.size() > p ? f.chi2 / double(x.size() - p) : 0.0) : 1.0;
  f.intercept_se = std::sqrt(A[0][p] * scale);
  f.slope_se = std::sqrt(A[1][p + 1] * scale);
  if (quadratic) f.quad_se = std::sqrt(A[2][p + 2] * scale);
  return f;
}

namespace {

void check_eps_grid(const std::vector<double> &grid) {
  if (grid.size() < 4) throw InputError("eps grid needs at least 4 values");
  for (double e : grid)
    if (!(e > 0.0) || !std::isfinite(e)) throw InputError("eps grid values must be positive");
  std::vector<double> s = grid;
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw InputError("eps grid has repeated values");
  if (s.back() > 10.0 * s.front() * (1 + 1e-12)) throw InputError("eps grid must lie within one decade");
}

// independent stream per grid point
RunSpec point_spec(const RunSpec &run, std::size_t index, const char *purpose) {
  RunSpec s = run;
  s.seed = RandomStream(run.seed, index, purpose).key();
  return s;
}

}  // namespace

ResponseReport linear_response_fit(const Table &table, const ForceModel &family, const std::string &observable,
                                   const std::vector<double> &eps_grid, const RunSpec &run, const SeriesSpec &series) {
  check_eps_grid(eps_grid);
  if (family.kind() == ForceKind::general) throw InputError("linear response needs an eps-parameterized family");
  const auto f = map_observable(observable, table);
  ResponseReport rep;
  rep.observable = observable;
  std::vector<double> x, y, se;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    const auto est =
        birkhoff_map_average(table, family.with_epsilon(eps_grid[i]), f, point_spec(run, i, "response"), "response");
    rep.points.push_back({eps_grid[i], est});
    x.push_back(eps_grid[i]);
    y.push_back(est.mean);
    se.push_back(est.stderr_);
  }
  rep.fit = weighted_fit(x, y, se, false);
  rep.quadratic = weighted_fit(x, y, se, true);
  rep.nonlinear = rep.quadratic.quad_se > 0.0 && std::abs(rep.quadratic.quad) > 3 * rep.quadratic.quad_se;
  if (rep.nonlinear) {
    // keep the quadratic term below 5% of the linear one
    const double e = 0.05 * std::abs(rep.quadratic.slope) / std::abs(rep.quadratic.quad);
    rep.recommended_max_eps = std::min(e, *std::min_element(x.begin(), x.end()));
  }

  rep.series = series_terms(table, family, 0.0, DeltaSource::zero_limit, {observable}, series)[0];
  rep.nu0_f = rep.series.nu0_f;
  const double ci = 3 * std::hypot(rep.fit.intercept_se, rep.nu0_f.stderr_);
  rep.intercept_consistent = std::abs(rep.fit.intercept - rep.nu0_f.mean) <= ci + 1e-12;
  const double diff = std::abs(rep.fit.slope - rep.series.sum);
  rep.relative_difference = rep.series.sum != 0.0 ? diff / std::abs(rep.series.sum) : INFINITY;
  const double combined = std::hypot(rep.fit.slope_se, rep.series.sum_stderr);
  rep.overlap_sigma = combined > 0.0 ? diff / combined : (diff == 0.0 ? 0.0 : INFINITY);
  return rep;
}

ConductivityReport conductivity(const Table &table, const ForceModel &family, const std::vector<double> &eps_grid,
                                const RunSpec &run) {
  check_eps_grid(eps_grid);
  if (family.kind() != ForceKind::thermostat) throw InputError("conductivity needs the thermostat family");
  ConductivityReport rep;
  double swx = 0.0, swxy = 0.0, swx2 = 0.0, swxy2 = 0.0;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    const double e = eps_grid[i];
    const auto J = current(table, family.with_epsilon(e), point_spec(run, i, "conductivity"));
    rep.epsilon.push_back(e);
    rep.currents.push_back(J);
    rep.ratio.push_back(J.j1.mean / e);
    rep.ratio_se.push_back(J.j1.stderr_ / e);
    if (J.j1.stderr_ > 0.0) {
      const double w = 1.0 / (J.j1.stderr_ * J.j1.stderr_);
      swx += w * e * e;
      swxy += w * e * J.j1.mean;
    }
    if (J.j2.stderr_ > 0.0) {
      const double w = 1.0 / (J.j2.stderr_ * J.j2.stderr_);
      swx2 += w * e * e;
      swxy2 += w * e * J.j2.mean;
    }
  }
  if (swx > 0.0) {
    rep.sigma = swxy / swx;
    rep.sigma_se = 1.0 / std::sqrt(swx);
  }
  if (swx2 > 0.0) {
    rep.j2_slope = swxy2 / swx2;
    rep.j2_slope_se = 1.0 / std::sqrt(swx2);
  }
  for (std::size_t i = 0; i < rep.ratio.size(); ++i)
    for (std::size_t j = i + 1; j < rep.ratio.size(); ++j) {
      const double c = std::hypot(rep.ratio_se[i], rep.ratio_se[j]);
      if (c > 0.0) rep.max_pair_sigma = std::max(rep.max_pair_sigma, std::abs(rep.ratio[i] - rep.ratio[j]) / c);
    }
  return rep;
}

ExpansionReport expansion_diagnostic(const Table &table, const ForceModel &model, const CollisionCoord &X,
                                     std::size_t n_iterations, double slope, const JacobianOptions &opts) {
  ExpansionReport rep;
  const double n0 = std::hypot(1.0, slope);
  const double v0[2] = {1.0 / n0, slope / n0};
  double v[2] = {v0[0], v0[1]};
  CollisionCoord x = X;
  for (std::size_t i = 0; i < n_iterations; ++i) {
    const auto J = jacobian_det(table, model, x, opts);
    if (!J.valid()) {
      ++rep.restarts;
      v[0] = v0[0];
      v[1] = v0[1];
      x = collision_map(table, model, x, opts.integrator).next;
      continue;
    }
    const double w0 = J.D[0][0] * v[0] + J.D[0][1] * v[1];
    const double w1 = J.D[1][0] * v[0] + J.D[1][1] * v[1];
    const double n = std::hypot(w0, w1);
    rep.log_increments.push_back(std::log(n));
    v[0] = w0 / n;
    v[1] = w1 / n;
    x = J.image;
  }
  if (!rep.log_increments.empty()) {
    double s = 0.0;
    for (double l : rep.log_increments) s += l;
    rep.lambda = std::exp(s / double(rep.log_increments.size()));
  }
  return rep;
}

}  // namespace lorentz
