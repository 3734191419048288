#include "lorentz/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lorentz/errors.hpp"

namespace lorentz {

namespace {

struct Field {
  const char *path;
  json value;
  const char *doc;
};

const std::vector<Field> &fields() {
  static const std::vector<Field> f = {
      {"table.discs", json::array({{{"center", {0.0, 0.0}}, {"radius", 0.4}}, {{"center", {0.5, 0.5}}, {"radius", 0.2}}}),
       "scatterers on the unit torus: list of {center: [x, y], radius}"},
      {"table.horizon_bound", 2.0, "upper bound L on free path lengths"},
      {"force.kind", "thermostat", "zero | thermostat"},
      {"force.epsilon", 0.0, "field strength"},
      {"force.direction_deg", 0.0, "field direction in degrees from +x"},
      {"integrator.tol", 1e-12, "absolute local error per step"},
      {"integrator.min_step_length", 0.05, "floor of the clearance-based step cap (path length)"},
      {"integrator.max_steps", 200000, "step budget per flight"},
      {"run.n_collisions", 1000000, "measured collisions (split over workers); ignored when flow_time > 0"},
      {"run.burn_in", 1000, "collisions discarded per worker"},
      {"run.flow_time", 0.0, "> 0: run until this much flow time instead of n_collisions"},
      {"run.n_batches", 64, "batches per worker for batch-means errors"},
      {"run.sample_dt", 0.01, "time-sampling step for occupation histograms"},
      {"histogram.phi_bins", 50, "bins of the phi density"},
      {"histogram.r_bins", 50, "bins of the arclength density"},
      {"histogram.grid", 50, "n for the n x n spatial grids"},
      {"histogram.theta_bins", 64, "bins of the direction-of-motion density"},
      {"histogram.velocity_floor", 0.01, "cells below this fraction of the mean cell weight are insufficient data"},
      {"horizon.n_origins", 200, "origins for the finite-horizon check"},
      {"horizon.n_directions", 200, "directions per origin"},
      {"diagnostics.k0", 5, "first homogeneity strip index"},
      {"response.observable", "dx0", "observable for kawasaki and linear-response"},
      {"response.eps_grid", {0.002, 0.005, 0.01, 0.02}, "field strengths for linear-response and conductivity"},
      {"response.n_samples", 100000, "nu_0 samples for the series"},
      {"response.k_max", 30, "series terms evaluated"},
      {"response.delta_fd", 1e-6, "finite-difference step in the (s, phi) chart"},
      {"response.grazing_cos", 1e-4, "Jacobian samples need cos(phi) above this"},
      {"sweep.command", "phi-density", "command run in every sweep cell"},
      {"sweep.eps_grid", {0.002, 0.005, 0.01, 0.02}, "one cell per value (sets force.epsilon)"},
      {"seed", 1, "64-bit run seed"},
      {"workers", 1, "worker threads; results depend on (seed, workers)"},
      {"output_dir", "out", "directory for artifacts"},
  };
  return f;
}

json::json_pointer pointer_of(const std::string &dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

bool compatible(const json &a, const json &b) {
  if (a.is_number() && b.is_number()) {
    // integer-valued fields stay integers
    if (a.is_number_integer() && !b.is_number_integer()) return false;
    return true;
  }
  return a.type() == b.type();
}

}  // namespace

json default_config() {
  json c = json::object();
  for (const auto &f : fields()) c[pointer_of(f.path)] = f.value;
  return c;
}

json config_schema() {
  json s = json::object();
  for (const auto &f : fields()) s[pointer_of(f.path)] = {{"default", f.value}, {"description", f.doc}};
  return s;
}

json merge_config(const json &base, const json &user, const std::string &path) {
  if (!user.is_object()) throw InputError("config" + (path.empty() ? "" : " section '" + path + "'") + " must be an object");
  json out = base;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw InputError("unknown config key '" + key + "'");
    const json &b = base[it.key()];
    if (b.is_object())
      out[it.key()] = merge_config(b, it.value(), key);
    else if (!compatible(b, it.value()))
      throw InputError("config key '" + key + "' expects " + std::string(b.type_name()));
    else
      out[it.key()] = it.value();
  }
  return out;
}

void apply_override(json &config, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InputError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = json::object();
  patch[pointer_of(key)] = value;
  config = merge_config(config, patch);
}

json load_config_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file '" + path + "'");
  json user = json::parse(in, nullptr, false);
  if (user.is_discarded()) throw InputError("config file '" + path + "' is not valid JSON");
  return merge_config(default_config(), user);
}

void validate_config(const json &c) {
  auto positive = [&](const char *p) {
    if (!(c[pointer_of(p)].get<double>() > 0.0)) throw InputError(std::string(p) + " must be positive");
  };
  for (const char *p : {"table.horizon_bound", "integrator.tol", "integrator.min_step_length", "run.sample_dt",
                        "response.delta_fd", "response.grazing_cos"})
    positive(p);
  for (const char *p : {"integrator.max_steps", "run.n_batches", "histogram.phi_bins", "histogram.r_bins",
                        "histogram.grid", "histogram.theta_bins", "horizon.n_origins", "horizon.n_directions",
                        "response.k_max", "workers", "response.n_samples", "run.n_collisions"})
    if (c[pointer_of(p)].get<long long>() <= 0) throw InputError(std::string(p) + " must be a positive integer");
  if (c["run"]["burn_in"].get<long long>() < 0) throw InputError("run.burn_in must be >= 0");
  if (c["run"]["flow_time"].get<double>() < 0) throw InputError("run.flow_time must be >= 0");
  if (c["seed"].get<long long>() < 0 && !c["seed"].is_number_unsigned()) throw InputError("seed must be non-negative");
  if (!std::isfinite(c["force"]["epsilon"].get<double>()) || c["force"]["epsilon"].get<double>() < 0)
    throw InputError("force.epsilon must be finite and >= 0");
  if (c["histogram"]["phi_bins"].get<long long>() < 10 || c["histogram"]["r_bins"].get<long long>() < 10)
    throw InputError("1D densities need at least 10 bins");
  if (c["histogram"]["grid"].get<long long>() < 10) throw InputError("spatial grids need at least 10 x 10 cells");
  if (c["diagnostics"]["k0"].get<long long>() < 2) throw InputError("diagnostics.k0 must be at least 2");
  table_from_config(c);
  force_from_config(c);
}

Table table_from_config(const json &c) {
  std::vector<Disc> discs;
  for (const auto &d : c["table"]["discs"]) {
    if (!d.is_object() || !d.contains("center") || !d.contains("radius") || !d["center"].is_array() ||
        d["center"].size() != 2)
      throw InputError("each disc needs center [x, y] and radius");
    try {
      discs.push_back(Disc{{d["center"][0].get<double>(), d["center"][1].get<double>()}, d["radius"].get<double>()});
    } catch (const json::exception &) {
      throw InputError("disc center and radius must be numbers");
    }
  }
  return Table(std::move(discs), c["table"]["horizon_bound"].get<double>());
}

ForceModel force_from_config(const json &c) {
  const auto kind = c["force"]["kind"].get<std::string>();
  const double eps = c["force"]["epsilon"].get<double>();
  if (kind == "zero") return ForceModel::zero();
  if (kind == "thermostat") return ForceModel::thermostat(eps, c["force"]["direction_deg"].get<double>() * M_PI / 180);
  throw InputError("force.kind must be zero or thermostat (got '" + kind + "')");
}

RunSpec run_from_config(const json &c) {
  RunSpec s;
  s.n_collisions = c["run"]["n_collisions"].get<std::size_t>();
  s.burn_in = c["run"]["burn_in"].get<std::size_t>();
  s.flow_time = c["run"]["flow_time"].get<double>();
  s.n_batches = c["run"]["n_batches"].get<std::size_t>();
  s.sample_dt = c["run"]["sample_dt"].get<double>();
  s.workers = c["workers"].get<std::size_t>();
  s.seed = c["seed"].get<std::uint64_t>();
  s.integrator.tol = c["integrator"]["tol"].get<double>();
  s.integrator.min_step_length = c["integrator"]["min_step_length"].get<double>();
  s.integrator.max_steps = c["integrator"]["max_steps"].get<std::size_t>();
  return s;
}

SeriesSpec series_from_config(const json &c) {
  const RunSpec r = run_from_config(c);
  SeriesSpec s;
  s.n_samples = c["response"]["n_samples"].get<std::size_t>();
  s.k_max = c["response"]["k_max"].get<std::size_t>();
  s.n_batches = r.n_batches;
  s.workers = r.workers;
  s.seed = r.seed;
  s.jacobian.delta_fd = c["response"]["delta_fd"].get<double>();
  s.jacobian.grazing_cos = c["response"]["grazing_cos"].get<double>();
  s.jacobian.integrator = r.integrator;
  return s;
}

std::vector<double> eps_grid_from_config(const json &c, const char *section) {
  std::vector<double> g;
  for (const auto &v : c[section]["eps_grid"]) {
    if (!v.is_number()) throw InputError(std::string(section) + ".eps_grid must hold numbers");
    g.push_back(v.get<double>());
  }
  return g;
}

}  // namespace lorentz
