#include "lorentz/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "lorentz/config.hpp"
#include "lorentz/errors.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/measure.hpp"
#include "lorentz/response.hpp"

#ifndef LORENTZ_BUILD_ID
#define LORENTZ_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;

namespace lorentz {

const char *build_id() { return LORENTZ_BUILD_ID; }

namespace {

// Manifest or checkpoint damage; maps to the dynamics-failure exit code.
struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json estimate_json(const AverageEstimate &e) {
  return {{"mean", e.mean},
          {"stderr", e.stderr_},
          {"n_samples", e.n_samples},
          {"n_batches", e.n_batches},
          {"flagged_fraction", e.flagged_fraction}};
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  f << text;
}

class Artifacts {
 public:
  Artifacts(std::string command, const json &config, fs::path dir)
      : command_(std::move(command)), config_(config), dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }

  const fs::path &dir() const { return dir_; }

  void csv(const std::string &name, const std::vector<std::string> &columns,
           const std::vector<std::vector<std::string>> &rows, std::size_t flagged) const {
    std::ostringstream o;
    o << "# command: " << command_ << "\n";
    o << "# config: " << config_.dump() << "\n";
    o << "# seed: " << config_["seed"].dump() << "\n";
    o << "# build_id: " << build_id() << "\n";
    o << "# flagged: " << flagged << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) o << (i ? "," : "") << columns[i];
    o << "\n";
    for (const auto &r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << r[i];
      o << "\n";
    }
    write_text(dir_ / name, o.str());
  }

  void summary(const std::string &name, const json &results, std::size_t flagged) const {
    json j;
    j["command"] = command_;
    j["build_id"] = build_id();
    j["seed"] = config_["seed"];
    j["workers"] = config_["workers"];
    j["flagged"] = flagged;
    j["config"] = config_;
    j["results"] = results;
    write_text(dir_ / name, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  json config_;
  fs::path dir_;
};

std::vector<std::vector<std::string>> density_rows(const DensityEstimate &d) {
  std::vector<std::vector<std::string>> rows;
  const Axis &a = d.axes[0];
  for (std::size_t i = 0; i < a.n_bins; ++i)
    rows.push_back({num(a.left(i)), num(a.right(i)), num(d.density[i]), num(d.stderr_[i])});
  return rows;
}

json density_json(const DensityEstimate &d) {
  double lo = INFINITY;
  for (double v : d.density) lo = std::min(lo, v);
  json axes = json::array();
  for (const auto &a : d.axes) axes.push_back({{"name", a.name}, {"lo", a.lo}, {"hi", a.hi}, {"n_bins", a.n_bins}});
  return {{"axes", axes}, {"normalization", d.normalization()}, {"min_density", lo}, {"total_weight", d.total_weight}};
}

int cmd_check_horizon(const json &c, const Artifacts &art, std::ostream &out) {
  const Table table = table_from_config(c);
  const auto rep = check_finite_horizon(table, c["table"]["horizon_bound"].get<double>(),
                                        c["horizon"]["n_origins"].get<std::size_t>(),
                                        c["horizon"]["n_directions"].get<std::size_t>(), c["seed"].get<std::uint64_t>());
  json r = {{"horizon_bound", rep.horizon_bound},
            {"max_free_path", std::isfinite(rep.max_free_path) ? json(rep.max_free_path) : json(nullptr)},
            {"n_rays", rep.n_rays},
            {"pass", rep.pass()}};
  if (rep.violating_ray)
    r["violating_ray"] = {{"origin", {rep.violating_ray->origin.x, rep.violating_ray->origin.y}},
                          {"direction", {rep.violating_ray->direction.x, rep.violating_ray->direction.y}}};
  else
    r["violating_ray"] = nullptr;
  art.summary("horizon.json", r, 0);
  out << "max_free_path " << (std::isfinite(rep.max_free_path) ? num(rep.max_free_path) : "inf") << " bound "
      << num(rep.horizon_bound) << (rep.pass() ? " ok" : " VIOLATED") << "\n";
  return rep.pass() ? kExitOk : kExitHorizon;
}

int cmd_simulate(const json &c, const Artifacts &art, std::ostream &out) {
  const auto s = simulate(table_from_config(c), force_from_config(c), run_from_config(c),
                          c["diagnostics"]["k0"].get<long>());
  json averages = json::object();
  std::vector<std::vector<std::string>> rows;
  for (const auto &[name, e] : s.averages) {
    averages[name] = estimate_json(e);
    rows.push_back({name, num(e.mean), num(e.stderr_), std::to_string(e.n_samples)});
  }
  json strips = json::array();
  const double n = double(std::max<std::size_t>(s.n_collisions, 1));
  for (const auto &[k, count] : s.strips)
    strips.push_back({{"k", std::labs(k)}, {"sign", k < 0 ? -1 : 1}, {"fraction", double(count) / n}});
  json r = {{"n_collisions", s.n_collisions},
            {"averages", averages},
            {"current", {{"j1", estimate_json(s.current.j1)}, {"j2", estimate_json(s.current.j2)}}},
            {"homogeneity", {{"k0", s.k0}, {"bulk_fraction", double(s.bulk) / n}, {"strips", strips}}}};
  art.csv("observables.csv", {"observable", "mean", "stderr", "n_samples"}, rows, s.current.flagged);
  art.summary("simulate.json", r, s.current.flagged);
  out << "simulated " << s.n_collisions << " collisions, mean tau " << num(s.current.mean_tau.mean) << "\n";
  return kExitOk;
}

int cmd_density(const std::string &which, const json &c, const Artifacts &art, std::ostream &out) {
  const Table table = table_from_config(c);
  const auto model = force_from_config(c);
  const auto spec = run_from_config(c);
  const auto &h = c["histogram"];
  DensityEstimate d;
  if (which == "phi")
    d = phi_density(table, model, spec, h["phi_bins"].get<std::size_t>());
  else if (which == "r")
    d = r_density(table, model, spec, h["r_bins"].get<std::size_t>());
  else if (which == "theta")
    d = theta_density(table, model, spec, h["theta_bins"].get<std::size_t>());
  else
    d = spatial_density(table, model, spec, h["grid"].get<std::size_t>());

  const std::string base = which == "spatial" ? "spatial_density" : which + "_density";
  if (which == "spatial") {
    std::vector<std::vector<std::string>> rows;
    const std::size_t n = d.axes[0].n_bins;
    for (std::size_t cell = 0; cell < d.density.size(); ++cell)
      rows.push_back({num((double(cell % n) + 0.5) / double(n)), num((double(cell / n) + 0.5) / double(n)),
                      num(d.density[cell]), num(d.stderr_[cell])});
    art.csv(base + ".csv", {"x", "y", "density", "stderr"}, rows, d.flagged);
  } else {
    art.csv(base + ".csv", {"bin_left", "bin_right", "density", "stderr"}, density_rows(d), d.flagged);
  }
  json r = density_json(d);
  if (which == "spatial") r["free_area"] = domain_area(table);
  art.summary(base + ".json", r, d.flagged);
  out << base << ": " << d.density.size() << " cells, normalization " << num(d.normalization()) << "\n";
  return kExitOk;
}

int cmd_velocity_field(const json &c, const Artifacts &art, std::ostream &out) {
  const auto v = velocity_field(table_from_config(c), force_from_config(c), run_from_config(c),
                                c["histogram"]["grid"].get<std::size_t>(),
                                c["histogram"]["velocity_floor"].get<double>());
  std::vector<std::vector<std::string>> rows;
  std::size_t insufficient = 0;
  for (std::size_t cell = 0; cell < v.weight.size(); ++cell) {
    const Vec2 p = v.cell_center(cell);
    const bool ok = v.sufficient[cell];
    insufficient += ok ? 0 : 1;
    rows.push_back({num(p.x), num(p.y), ok ? num(v.v1[cell]) : "nan", ok ? num(v.v2[cell]) : "nan",
                    num(v.weight[cell])});
  }
  art.csv("velocity_field.csv", {"x", "y", "v1", "v2", "weight"}, rows, v.flagged);
  json r = {{"grid", v.n},
            {"insufficient_cells", insufficient},
            {"weight_floor", v.weight_floor},
            {"mean_v1", estimate_json(v.mean_v1)},
            {"mean_v2", estimate_json(v.mean_v2)}};
  art.summary("velocity_field.json", r, v.flagged);
  out << "velocity_field: " << v.weight.size() - insufficient << " cells reported, " << insufficient
      << " insufficient\n";
  return kExitOk;
}

int cmd_current(const json &c, const Artifacts &art, std::ostream &out) {
  const auto J = current(table_from_config(c), force_from_config(c), run_from_config(c));
  json r = {{"epsilon", c["force"]["epsilon"]},
            {"j1", estimate_json(J.j1)},
            {"j2", estimate_json(J.j2)},
            {"mean_tau", estimate_json(J.mean_tau)}};
  art.summary("current.json", r, J.flagged);
  out << "J = (" << num(J.j1.mean) << " +- " << num(J.j1.stderr_) << ", " << num(J.j2.mean) << " +- "
      << num(J.j2.stderr_) << ")\n";
  return kExitOk;
}

json series_json(const SeriesResult &s) {
  json terms = json::array();
  for (const auto &t : s.terms) terms.push_back({{"k", t.k}, {"T_k", t.value}, {"stderr", t.stderr_}});
  return {{"observable", s.observable},
          {"nu0_f", estimate_json(s.nu0_f)},
          {"truncation_K", s.truncation},
          {"sum", s.sum},
          {"sum_stderr", s.sum_stderr},
          {"decay_slope", s.decay_slope},
          {"n_samples", s.n_samples},
          {"n_flagged", s.n_flagged},
          {"terms", terms}};
}

std::vector<std::vector<std::string>> term_rows(const SeriesResult &s) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &t : s.terms) rows.push_back({std::to_string(t.k), num(t.value), num(t.stderr_)});
  return rows;
}

int cmd_kawasaki(const json &c, const Artifacts &art, std::ostream &out) {
  const auto obs = c["response"]["observable"].get<std::string>();
  const auto reps = kawasaki(table_from_config(c), force_from_config(c), {obs}, series_from_config(c), run_from_config(c));
  const auto &r = reps[0];
  art.csv("kawasaki_terms.csv", {"k", "T_k", "stderr"}, term_rows(r.series), r.series.n_flagged);
  json j = {{"epsilon", r.epsilon},
            {"observable", obs},
            {"rhs", r.rhs},
            {"rhs_stderr", r.rhs_stderr},
            {"lhs", estimate_json(r.lhs)},
            {"discrepancy_sigma", r.discrepancy_sigma},
            {"flagged_warning", r.flagged_warning},
            {"series", series_json(r.series)}};
  art.summary("kawasaki.json", j, r.series.n_flagged);
  if (r.flagged_warning) out << "warning: flagged Jacobian samples above 5%, series may be biased\n";
  out << "kawasaki " << obs << ": LHS " << num(r.lhs.mean) << " RHS " << num(r.rhs) << " (" << num(r.discrepancy_sigma)
      << " sigma, K = " << r.series.truncation << ")\n";
  return kExitOk;
}

json fit_json(const LinearFit &f) {
  return {{"intercept", f.intercept}, {"intercept_stderr", f.intercept_se}, {"slope", f.slope},
          {"slope_stderr", f.slope_se}, {"quad", f.quad}, {"quad_stderr", f.quad_se}, {"chi2", f.chi2}};
}

int cmd_linear_response(const json &c, const Artifacts &art, std::ostream &out) {
  const auto obs = c["response"]["observable"].get<std::string>();
  const auto rep = linear_response_fit(table_from_config(c), force_from_config(c), obs, eps_grid_from_config(c),
                                       run_from_config(c), series_from_config(c));
  std::vector<std::vector<std::string>> rows;
  std::size_t flagged = rep.series.n_flagged;
  json points = json::array();
  for (const auto &p : rep.points) {
    rows.push_back({num(p.epsilon), num(p.nu_f.mean), num(p.nu_f.stderr_)});
    points.push_back({{"epsilon", p.epsilon}, {"nu_f", estimate_json(p.nu_f)}});
  }
  art.csv("response_fit.csv", {"epsilon", "nu_f", "stderr"}, rows, flagged);
  art.csv("kawasaki_terms.csv", {"k", "T_k", "stderr"}, term_rows(rep.series), flagged);
  json j = {{"observable", obs},
            {"points", points},
            {"fit", fit_json(rep.fit)},
            {"quadratic_fit", fit_json(rep.quadratic)},
            {"nonlinear", rep.nonlinear},
            {"recommended_max_eps", rep.recommended_max_eps ? json(*rep.recommended_max_eps) : json(nullptr)},
            {"nu0_f", estimate_json(rep.nu0_f)},
            {"intercept_consistent", rep.intercept_consistent},
            {"series_slope", rep.series.sum},
            {"series_slope_stderr", rep.series.sum_stderr},
            {"relative_difference", rep.relative_difference},
            {"overlap_sigma", rep.overlap_sigma},
            {"series", series_json(rep.series)}};
  art.summary("linear_response.json", j, flagged);
  if (rep.nonlinear)
    out << "warning: quadratic term significant; consider eps <= " << num(*rep.recommended_max_eps) << "\n";
  out << "slope " << num(rep.fit.slope) << " +- " << num(rep.fit.slope_se) << ", series " << num(rep.series.sum)
      << " +- " << num(rep.series.sum_stderr) << "\n";
  return kExitOk;
}

int cmd_conductivity(const json &c, const Artifacts &art, std::ostream &out) {
  const auto rep = conductivity(table_from_config(c), force_from_config(c), eps_grid_from_config(c), run_from_config(c));
  std::vector<std::vector<std::string>> rows;
  std::size_t flagged = 0;
  json points = json::array();
  for (std::size_t i = 0; i < rep.epsilon.size(); ++i) {
    const auto &J = rep.currents[i];
    flagged += J.flagged;
    rows.push_back({num(rep.epsilon[i]), num(J.j1.mean), num(J.j1.stderr_), num(J.j2.mean), num(J.j2.stderr_),
                    num(rep.ratio[i]), num(rep.ratio_se[i])});
    points.push_back({{"epsilon", rep.epsilon[i]}, {"j1", estimate_json(J.j1)}, {"j2", estimate_json(J.j2)}});
  }
  art.csv("conductivity.csv", {"epsilon", "j1", "j1_stderr", "j2", "j2_stderr", "ratio", "ratio_stderr"}, rows,
          flagged);
  json j = {{"sigma", rep.sigma},
            {"sigma_stderr", rep.sigma_se},
            {"j2_slope", rep.j2_slope},
            {"j2_slope_stderr", rep.j2_slope_se},
            {"max_pair_sigma", rep.max_pair_sigma},
            {"points", points}};
  art.summary("conductivity.json", j, flagged);
  out << "sigma " << num(rep.sigma) << " +- " << num(rep.sigma_se) << "\n";
  return kExitOk;
}

const std::vector<std::string> kCommands = {"check-horizon", "simulate",     "phi-density", "r-density",
                                            "spatial-density", "velocity-field", "theta-density", "current",
                                            "kawasaki",      "linear-response", "conductivity", "sweep",
                                            "resume",        "config-schema"};

bool is_cell_command(const std::string &name) {
  return name != "sweep" && name != "resume" && name != "config-schema" && name != "check-horizon" &&
         std::find(kCommands.begin(), kCommands.end(), name) != kCommands.end();
}

// `dir` overrides output_dir so sweep cells can echo a location-independent config.
int dispatch(const std::string &name, const json &c, std::ostream &out, std::optional<fs::path> dir = {}) {
  validate_config(c);
  Artifacts art(name, c, dir ? *dir : fs::path(c["output_dir"].get<std::string>()));
  const auto start = std::chrono::steady_clock::now();
  int code = kExitOk;
  if (name == "check-horizon")
    code = cmd_check_horizon(c, art, out);
  else if (name == "simulate")
    code = cmd_simulate(c, art, out);
  else if (name == "phi-density")
    code = cmd_density("phi", c, art, out);
  else if (name == "r-density")
    code = cmd_density("r", c, art, out);
  else if (name == "spatial-density")
    code = cmd_density("spatial", c, art, out);
  else if (name == "theta-density")
    code = cmd_density("theta", c, art, out);
  else if (name == "velocity-field")
    code = cmd_velocity_field(c, art, out);
  else if (name == "current")
    code = cmd_current(c, art, out);
  else if (name == "kawasaki")
    code = cmd_kawasaki(c, art, out);
  else if (name == "linear-response")
    code = cmd_linear_response(c, art, out);
  else if (name == "conductivity")
    code = cmd_conductivity(c, art, out);
  else
    throw InputError("'" + name + "' cannot run here");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json timing = {{"command", name}, {"wall_clock_seconds", seconds}, {"finished_utc", stamp}, {"build_id", build_id()}};
  write_text(art.dir() / "timing.json", timing.dump(2) + "\n");
  return code;
}

// ---- sweeps ---------------------------------------------------------------

constexpr const char *kManifest = "manifest.json";

json hashes_of(const fs::path &dir) {
  std::vector<std::string> names;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "timing.json") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  json h = json::object();
  for (const auto &n : names) h[n] = sha256_file((dir / n).string());
  return h;
}

void write_manifest(const fs::path &dir, const json &m) {
  const fs::path tmp = dir / "manifest.json.tmp";
  write_text(tmp, m.dump(2) + "\n");
  fs::rename(tmp, dir / kManifest);
}

json comparable(json c) {
  c.erase("output_dir");
  return c;
}

int run_cells(const fs::path &dir, json &manifest, std::optional<std::size_t> stop_after, std::ostream &out) {
  const json &config = manifest["config"];
  const std::string command = manifest["command"].get<std::string>();
  std::size_t ran = 0;
  for (auto &cell : manifest["cells"]) {
    if (cell["status"] == "complete") continue;
    if (stop_after && ran >= *stop_after) {
      out << "stopped after " << ran << " cells\n";
      return kExitOk;
    }
    const fs::path cell_dir = dir / cell["dir"].get<std::string>();
    fs::remove_all(cell_dir);  // discard partial output of an interrupted run
    json c = config;
    c["force"]["epsilon"] = cell["epsilon"];
    c["seed"] = cell["seed"];
    c["run"]["n_collisions"] = cell["n_collisions"];
    c["output_dir"] = cell["dir"];  // relative to the sweep directory
    const int code = dispatch(command, c, out, cell_dir);
    if (code != kExitOk) return code;
    cell["status"] = "complete";
    cell["hashes"] = hashes_of(cell_dir);
    write_manifest(dir, manifest);
    ++ran;
  }
  return kExitOk;
}

int cmd_sweep(const json &c, std::optional<std::size_t> stop_after, std::ostream &out) {
  validate_config(c);
  const std::string command = c["sweep"]["command"].get<std::string>();
  if (!is_cell_command(command)) throw InputError("sweep.command '" + command + "' cannot be swept");
  const fs::path dir = c["output_dir"].get<std::string>();
  if (fs::exists(dir / kManifest)) throw InputError("'" + dir.string() + "' already holds a sweep; use resume");
  fs::create_directories(dir);
  const auto grid = eps_grid_from_config(c, "sweep");
  if (grid.empty()) throw InputError("sweep.eps_grid is empty");
  json m;
  m["format"] = 1;
  m["command"] = command;
  m["build_id"] = build_id();
  m["config"] = c;
  m["cells"] = json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw InputError("sweep.eps_grid values must be >= 0");
    char name[64];
    std::snprintf(name, sizeof name, "cell_%02zu_eps_%g", i, grid[i]);
    m["cells"].push_back({{"index", i},
                          {"epsilon", grid[i]},
                          {"dir", name},
                          {"seed", RandomStream(c["seed"].get<std::uint64_t>(), i, "sweep").key()},
                          {"n_collisions", c["run"]["n_collisions"]},
                          {"status", "pending"},
                          {"hashes", json::object()}});
  }
  write_manifest(dir, m);
  return run_cells(dir, m, stop_after, out);
}

json read_manifest(const fs::path &dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw ManifestError("no manifest in '" + dir.string() + "'");
  json m = json::parse(in, nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw ManifestError("manifest is not valid JSON");
  try {
    if (m.at("format") != 1) throw ManifestError("unsupported manifest format");
    m.at("command").get<std::string>();
    m.at("config").get<json>();
    for (const auto &cell : m.at("cells")) {
      cell.at("epsilon").get<double>();
      cell.at("seed").get<std::uint64_t>();
      cell.at("n_collisions").get<std::size_t>();
      cell.at("dir").get<std::string>();
      const auto st = cell.at("status").get<std::string>();
      if (st != "pending" && st != "complete") throw ManifestError("bad cell status '" + st + "'");
      if (!cell.at("hashes").is_object()) throw ManifestError("bad cell hashes");
    }
  } catch (const json::exception &e) {
    throw ManifestError(std::string("manifest is incomplete: ") + e.what());
  }
  return m;
}

int cmd_resume(const fs::path &dir, const std::optional<json> &requested, std::optional<std::size_t> stop_after,
               std::ostream &out) {
  json m = read_manifest(dir);
  if (requested && comparable(*requested) != comparable(m["config"]))
    throw InputError("config mismatch: resume uses the sweep's recorded config");
  for (const auto &cell : m["cells"]) {
    if (cell["status"] != "complete") continue;
    const fs::path cell_dir = dir / cell["dir"].get<std::string>();
    if (!fs::is_directory(cell_dir) || hashes_of(cell_dir) != cell["hashes"])
      throw ManifestError("completed cell '" + cell["dir"].get<std::string>() + "' does not match its recorded hashes");
  }
  return run_cells(dir, m, stop_after, out);
}

std::string usage() {
  std::ostringstream o;
  o << "usage: lorentz <command> [--config PATH] [--seed N] [--workers N] [--out DIR] [--override key=value]...\n"
    << "       lorentz resume <sweep_dir>\n"
    << "commands:";
  for (const auto &c : kCommands) o << " " << c;
  o << "\n";
  return o.str();
}

std::string defaults_footer() {
  std::ostringstream o;
  o << "\nConfig keys (dotted, for --override) and defaults:\n";
  std::function<void(const json &, const std::string &)> walk = [&](const json &node, const std::string &prefix) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it.value().contains("default") && it.value().contains("description"))
        o << "  " << key << " = " << it.value()["default"].dump() << "  (" << it.value()["description"].get<std::string>()
          << ")\n";
      else
        walk(it.value(), key);
    }
  };
  walk(config_schema(), "");
  return o.str();
}

}  // namespace

std::string sha256_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read '" + path + "'");
  EVP_MD_CTX *ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char *hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Periodic Lorentz gas under small stationary forces", "lorentz"};
  app.footer(defaults_footer());
  std::string command, target, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, stop_after;
  std::vector<std::string> overrides;
  app.add_option("command", command, "command to run");
  app.add_option("target", target, "sweep directory (resume only)");
  app.add_option("--config", config_path, "JSON config file; missing keys take defaults");
  app.add_option("--seed", seed, "64-bit seed");
  app.add_option("--workers", workers, "worker threads");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--override", overrides, "dotted key=value, repeatable")->take_all();
  app.add_option("--stop-after-cells", stop_after, "sweep/resume: stop after this many cells");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n" << usage();
    return kExitValidation;
  }
  if (command.empty() || std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    if (!command.empty()) err << "unknown command '" << command << "'\n";
    err << usage();
    return kExitUsage;
  }

  try {
    if (command == "config-schema") {
      out << config_schema().dump(2) << "\n";
      return kExitOk;
    }
    const bool explicit_config = !config_path.empty() || seed || workers || !overrides.empty();
    json config = config_path.empty() ? default_config() : load_config_file(config_path);
    for (const auto &o : overrides) apply_override(config, o);
    if (seed) config["seed"] = *seed;
    if (workers) config["workers"] = *workers;
    if (!out_dir.empty()) config["output_dir"] = out_dir;

    if (command == "resume") {
      if (target.empty()) throw InputError("resume needs a sweep directory");
      std::optional<json> requested;
      if (explicit_config) requested = config;
      return cmd_resume(target, requested, stop_after, out);
    }
    if (!target.empty()) throw InputError("unexpected argument '" + target + "'");
    if (command == "sweep") return cmd_sweep(config, stop_after, out);
    return dispatch(command, config, out);
  } catch (const HorizonViolation &e) {
    err << "horizon violation: " << e.what() << "\n";
    return kExitHorizon;
  } catch (const InputError &e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception &e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ManifestError &e) {
    err << "sweep manifest: " << e.what() << "\n";
    return kExitDynamics;
  } catch (const IntegrationFailure &e) {
    err << "dynamics failure: " << e.what() << "\n";
    return kExitDynamics;
  } catch (const GrazingCollision &e) {
    err << "dynamics failure: " << e.what() << "\n";
    return kExitDynamics;
  } catch (const fs::filesystem_error &e) {
    err << "filesystem: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace lorentz
