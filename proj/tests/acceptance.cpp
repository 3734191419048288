// Acceptance run on the reference table T1: one PASS/FAIL line per criterion,
// at full size. Takes tens of minutes on one core. `--only <substring>` runs
// the matching criteria. The exit status is nonzero if any of them failed,
// except those named with `--known-failure`; their FAIL lines still print.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "lorentz/cli.hpp"
#include "lorentz/config.hpp"
#include "lorentz/dynamics.hpp"
#include "lorentz/measure.hpp"
#include "lorentz/response.hpp"

using namespace lorentz;
namespace fs = std::filesystem;

namespace {

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Verdict()> run;
};

const Table kT1 = reference_table_t1();

void info(const std::string &s) { std::cout << "INFO  " << s << std::endl; }

// Largest |a_i - a_mirror(i)| in units of the combined stderr.
double mirror_sigma(const DensityEstimate &d) {
  const std::size_t n = d.density.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) {
    const std::size_t j = n - 1 - i;
    const double se = std::hypot(d.stderr_[i], d.stderr_[j]);
    worst = std::max(worst, std::abs(d.density[i] - d.density[j]) / se);
  }
  return worst;
}

Verdict phi_marginal() {
  RunSpec spec;
  spec.n_collisions = 10'000'000;
  spec.seed = 101;
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = phi_density(kT1, ForceModel::zero(), spec, 50);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0.0;
  const Axis &a = d.axes[0];
  for (std::size_t i = 0; i < a.n_bins; ++i) {
    const double exact = (std::sin(a.right(i)) - std::sin(a.left(i))) / (2 * (a.right(i) - a.left(i)));
    worst = std::max(worst, std::abs(d.density[i] - exact));
  }
  return {worst <= 0.02 && secs <= 120,
          fmt("L_inf %.4g (<= 0.02), %.1f s single-threaded (<= 120)", worst, secs)};
}

Verdict spatial_density_check() {
  RunSpec spec;
  spec.flow_time = 1e6;
  spec.seed = 102;
  const auto d = spatial_density(kT1, ForceModel::zero(), spec, 50);
  const auto free = cell_free_fraction(kT1, 50, 32);
  const double target = 1.0 / domain_area(kT1);
  double worst = 0.0;
  std::size_t cells = 0;
  for (std::size_t c = 0; c < free.size(); ++c) {
    if (free[c] < 0.9) continue;
    ++cells;
    worst = std::max(worst, std::abs(d.density[c] / free[c] - target) / target);
  }
  return {worst <= 0.03, fmt("max relative deviation %.4g over %zu cells >= 90%% free (<= 0.03)", worst, cells)};
}

Verdict theta_uniform() {
  RunSpec spec;
  spec.flow_time = 1e6;
  spec.seed = 103;
  const auto d = theta_density(kT1, ForceModel::zero(), spec, 64);
  double worst = 0.0;
  for (double v : d.density) worst = std::max(worst, std::abs(v - 1 / (2 * M_PI)));
  return {worst <= 0.005, fmt("L_inf %.4g (<= 0.005)", worst)};
}

Verdict integrator_oracle() {
  const auto m = ForceModel::thermostat(0.1);
  IntegratorOptions opts;
  opts.tol = 1e-10;
  double worst_theta = 0.0;
  for (double theta0 : {0.3, 1.0, M_PI / 2, 2.0, 3.0, -0.5, -2.7}) {
    for (int k = 1; k <= 100; ++k) {
      const double t = 0.1 * k;
      const auto st = integrate_free(m, {{0, 0}, theta0}, t, opts);
      const double exact = 2.0 * std::atan(std::tan(theta0 / 2) * std::exp(-0.1 * t));
      worst_theta = std::max(worst_theta, std::abs(st.theta - exact));
    }
  }
  RandomStream rng(104, 0, "oracle");
  double worst_tau = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto x = sample_nu0(kT1, rng);
    const auto a = collision_map(kT1, ForceModel::zero(), x);
    const auto b = collision_map(kT1, ForceModel::thermostat(0.0), x);
    worst_tau = std::max(worst_tau, std::abs(a.tau - b.tau));
  }
  return {worst_theta <= 1e-9 && worst_tau <= 1e-9,
          fmt("theta error %.3g (<= 1e-9), eps = 0 |dtau| %.3g over 1e4 flights (<= 1e-9)", worst_theta, worst_tau)};
}

Verdict measure_preservation() {
  RandomStream rng(105, 0, "g0");
  std::size_t valid = 0, flagged = 0;
  double worst = 0.0;
  while (valid < 1000) {
    const auto J = jacobian_det(kT1, ForceModel::zero(), sample_nu0(kT1, rng));
    if (!J.valid()) {
      ++flagged;
      continue;
    }
    ++valid;
    worst = std::max(worst, std::abs(J.cos_out * J.det / J.cos_in - 1.0));
  }

  RandomStream img(105, 1, "ks"), ref(105, 2, "ks");
  const std::size_t n = 1'000'000;
  std::vector<double> r_img, phi_img, r_ref, phi_ref;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = collision_map(kT1, ForceModel::zero(), sample_nu0(kT1, img)).next;
    r_img.push_back(kT1.flat_r(y.bc));
    phi_img.push_back(y.phi);
    const auto z = sample_nu0(kT1, ref);
    r_ref.push_back(kT1.flat_r(z.bc));
    phi_ref.push_back(z.phi);
  }
  const double crit = ks_critical_value(n, n, 0.01);
  const double ks_r = ks_two_sample(r_img, r_ref), ks_phi = ks_two_sample(phi_img, phi_ref);
  return {worst <= 1e-5 && ks_r < crit && ks_phi < crit,
          fmt("|g_0 - 1| <= %.3g on 1000 samples (%zu flagged skipped); KS r %.3g, phi %.3g (crit %.3g)", worst,
              flagged, ks_r, ks_phi, crit)};
}

Verdict delta_mean_zero() {
  const auto family = ForceModel::thermostat(0.0);
  const std::size_t n = 100'000;
  bool ok = true;
  std::string detail;
  for (double eps : {0.005, 0.01, 0.02}) {
    RandomStream rng(106, 0, "delta-mean");
    BatchMeans delta(64);
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = delta_eps(kT1, family, sample_nu0(kT1, rng), eps);
      if (!d.valid()) {
        ++flagged;
        continue;
      }
      delta.add(d.delta, i * 64 / n);
    }
    const auto e = delta.estimate();
    const bool pass = std::abs(e.mean) <= 3 * e.stderr_;
    ok = ok && pass;
    detail += fmt("%seps %g: %.3g +- %.2g (%zu flagged)", detail.empty() ? "" : "; ", eps, e.mean, e.stderr_, flagged);
  }
  return {ok, detail};
}

Verdict kawasaki_identity() {
  SeriesSpec ss;
  ss.n_samples = 100'000;
  ss.k_max = 30;
  ss.seed = 107;
  RunSpec lhs;
  lhs.n_collisions = 10'000'000;
  lhs.seed = 107;
  const auto reps = kawasaki(kT1, ForceModel::thermostat(0.01), {"cos_phi", "dx0", "sin_phi"}, ss, lhs);
  bool ok = true;
  std::string detail;
  for (const auto &r : reps) {
    const auto &s = r.series;
    // the trend fit needs terms above the noise; K = 0 means every T_k is
    // consistent with zero and there is nothing to decay
    const bool trend = s.truncation == 0 || s.decay_slope < 0;
    const bool pass = r.discrepancy_sigma <= 3 && s.truncation <= 30 && trend;
    ok = ok && pass;
    detail += fmt("%s%s: LHS %.4g RHS %.4g (%.2f sigma), K %zu, trend %s", detail.empty() ? "" : "; ",
                  s.observable.c_str(), r.lhs.mean, r.rhs, r.discrepancy_sigma, s.truncation,
                  s.truncation == 0 ? "n/a" : fmt("%.3g", s.decay_slope).c_str());
    if (r.flagged_warning) detail += " [flagged > 5%]";
  }
  return {ok, detail};
}

ResponseReport response_on(const std::vector<double> &grid, std::uint64_t seed) {
  RunSpec run;
  run.n_collisions = 20'000'000;
  run.seed = seed;
  SeriesSpec ss;
  ss.n_samples = 100'000;
  ss.k_max = 30;
  ss.seed = seed;
  return linear_response_fit(kT1, ForceModel::thermostat(0.0), "dx0", grid, run, ss);
}

std::string describe(const ResponseReport &r) {
  std::string pts;
  for (const auto &p : r.points) pts += fmt(" %g:%.4g+-%.2g", p.epsilon, p.nu_f.mean, p.nu_f.stderr_);
  return fmt("slope %.4g +- %.2g vs series %.4g +- %.2g (K %zu): %.2f sigma, %.1f%% apart; points%s", r.fit.slope,
             r.fit.slope_se, r.series.sum, r.series.sum_stderr, r.series.truncation, r.overlap_sigma,
             100 * r.relative_difference, pts.c_str());
}

Verdict linear_response() {
  const auto r = response_on({0.002, 0.005, 0.01, 0.02}, 108);
  if (r.nonlinear) info("linear response: quadratic term significant on the small grid");

  // Same fit on a wider decade, where the slope's stderr is ten times smaller.
  const auto wide = response_on({0.02, 0.05, 0.1, 0.2}, 109);
  info(fmt("linear response on {0.02, 0.05, 0.1, 0.2}: %s%s", describe(wide).c_str(),
           wide.nonlinear ? " [quadratic term significant]" : ""));
  return {r.overlap_sigma <= 3 && r.relative_difference <= 0.15, describe(r)};
}

ConductivityReport g_conductivity;

Verdict conductivity_regime() {
  RunSpec run;
  run.n_collisions = 5'000'000;
  run.seed = 110;
  g_conductivity = conductivity(kT1, ForceModel::thermostat(0.0), {0.002, 0.005, 0.01, 0.02}, run);
  const auto &c = g_conductivity;
  std::string ratios;
  for (std::size_t i = 0; i < c.epsilon.size(); ++i) ratios += fmt(" %g:%.4g+-%.2g", c.epsilon[i], c.ratio[i], c.ratio_se[i]);
  return {c.max_pair_sigma <= 3 && c.sigma > 0,
          fmt("sigma %.4g +- %.2g; max pairwise %.2f sigma; J1/eps%s", c.sigma, c.sigma_se, c.max_pair_sigma,
              ratios.c_str())};
}

Verdict symmetries() {
  // J2 from the conductivity runs, when they were part of this invocation
  double j2_worst = 0.0;
  if (g_conductivity.currents.empty()) {
    RunSpec run;
    run.n_collisions = 5'000'000;
    run.seed = 110;
    g_conductivity = conductivity(kT1, ForceModel::thermostat(0.0), {0.002, 0.005, 0.01, 0.02}, run);
  }
  for (const auto &J : g_conductivity.currents) j2_worst = std::max(j2_worst, std::abs(J.j2.mean) / J.j2.stderr_);

  const auto model = ForceModel::thermostat(0.1);
  RunSpec flow;
  flow.flow_time = 2e5;
  flow.seed = 111;
  const auto theta = theta_density(kT1, model, flow, 64);
  RunSpec coll;
  coll.n_collisions = 2'000'000;
  coll.seed = 112;
  const auto phi = phi_density(kT1, model, coll, 50);
  const double th = mirror_sigma(theta), ph = mirror_sigma(phi);

  double spread = 0.0;
  for (double v : theta.density) spread = std::max(spread, std::abs(v - 1 / (2 * M_PI)));
  info(fmt("theta density at eps 0.1 departs from uniform by up to %.3g", spread));
  return {j2_worst <= 3 && th <= 3 && ph <= 3,
          fmt("max |J2|/se %.2f over the conductivity grid; eps 0.1 mirror bins: theta %.2f sigma, phi %.2f sigma",
              j2_worst, th, ph)};
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / ("lorentz_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
  const std::vector<std::string> size = {"--override", "run.n_collisions=200000", "--workers", "3", "--seed", "113",
                                         "--override", "force.epsilon=0.01"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), size.begin(), size.end());
    return a;
  };

  bool repeat_ok = true;
  for (const std::string cmd : {"simulate", "phi-density", "theta-density"}) {
    const auto dir = (root / cmd).string();
    std::vector<std::string> args = with({cmd, "--out", dir});
    if (cmd == "theta-density") args.insert(args.end(), {"--override", "run.flow_time=20000"});
    if (cli(args) != 0) return {false, cmd + " failed"};
    std::vector<std::pair<fs::path, std::string>> first;
    for (const auto &e : fs::directory_iterator(dir))
      if (e.path().filename() != "timing.json") first.emplace_back(e.path(), slurp(e.path()));
    if (cli(args) != 0) return {false, cmd + " failed"};
    for (const auto &[p, bytes] : first) repeat_ok = repeat_ok && slurp(p) == bytes;
  }

  const auto full = root / "sweep_full", part = root / "sweep_part";
  if (cli(with({"sweep", "--out", full.string()})) != 0) return {false, "sweep failed"};
  if (cli(with({"sweep", "--out", part.string(), "--stop-after-cells", "2"})) != 0) return {false, "sweep failed"};
  if (cli({"resume", part.string()}) != 0) return {false, "resume failed"};
  bool resume_ok = true;
  std::size_t files = 0;
  for (const auto &e : fs::recursive_directory_iterator(full)) {
    const auto rel = fs::relative(e.path(), full);
    if (!e.is_regular_file() || rel.filename() == "timing.json" || rel == "manifest.json") continue;
    ++files;
    resume_ok = resume_ok && slurp(e.path()) == slurp(part / rel);
  }
  // the manifests differ only in the echoed output_dir
  auto mf = json::parse(slurp(full / "manifest.json")), mp = json::parse(slurp(part / "manifest.json"));
  resume_ok = resume_ok && mf["cells"] == mp["cells"];
  fs::remove_all(root);
  return {repeat_ok && resume_ok && files > 0,
          fmt("repeated runs %s; resumed sweep %s over %zu cell files", repeat_ok ? "identical" : "DIFFER",
              resume_ok ? "identical" : "DIFFERS", files)};
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"acceptance checks on table T1"};
  std::string only;
  std::vector<std::string> known;
  app.add_option("--only", only, "run criteria whose name contains this");
  app.add_option("--known-failure", known, "criterion whose failure does not affect the exit status");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {"equilibrium phi marginal", phi_marginal},
      {"equilibrium spatial density", spatial_density_check},
      {"equilibrium theta density", theta_uniform},
      {"integrator oracle", integrator_oracle},
      {"measure preservation", measure_preservation},
      {"nu_0(Delta_eps) = 0", delta_mean_zero},
      {"Kawasaki identity", kawasaki_identity},
      {"linear response", linear_response},
      {"conductivity regime", conductivity_regime},
      {"symmetries", symmetries},
      {"determinism", determinism},
  };
  int failed = 0, ran = 0, excused = 0;
  for (const auto &c : criteria) {
    if (!only.empty() && c.name.find(only) == std::string::npos) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception &e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool is_known = std::find(known.begin(), known.end(), c.name) != known.end();
    failed += v.pass ? 0 : 1;
    excused += !v.pass && is_known ? 1 : 0;
    std::cout << (v.pass ? "PASS  " : "FAIL  ") << c.name << ": " << v.detail << fmt(" [%.0f s]", secs)
              << (!v.pass && is_known ? " (known failure)" : "") << std::endl;
  }
  std::cout << fmt("%d/%d criteria passed", ran - failed, ran);
  if (excused) std::cout << fmt(", %d known failure%s", excused, excused > 1 ? "s" : "");
  std::cout << std::endl;
  return failed == excused && ran > 0 ? 0 : 1;
}
