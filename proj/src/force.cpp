#include "lorentz/force.hpp"

#include <algorithm>
#include <cmath>

#include "lorentz/errors.hpp"

namespace lorentz {

std::string to_string(ForceKind kind) {
  switch (kind) {
    case ForceKind::zero:
      return "zero";
    case ForceKind::thermostat:
      return "thermostat";
    case ForceKind::general:
      return "general";
  }
  return "unknown";
}

ForceKind force_kind_from_string(const std::string &name) {
  if (name == "zero") return ForceKind::zero;
  if (name == "thermostat") return ForceKind::thermostat;
  if (name == "general") return ForceKind::general;
  throw InputError("unknown force kind '" + name + "' (expected zero, thermostat or general)");
}

ForceModel ForceModel::zero() { return ForceModel{}; }

ForceModel ForceModel::thermostat(double epsilon, double field_angle) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InputError("thermostat epsilon must be >= 0");
  ForceModel m;
  m.kind_ = ForceKind::thermostat;
  m.epsilon_ = epsilon;
  m.field_angle_ = field_angle;
  return m;
}

ForceModel ForceModel::general(GeneralForce force) {
  if (!force.h || !force.speed) throw InputError("general force needs both h and speed functions");
  if (!(force.p_min > 0.0) || force.p_max < force.p_min) throw InputError("general force needs 0 < p_min <= p_max");
  ForceModel m;
  m.kind_ = ForceKind::general;
  m.general_ = std::move(force);
  return m;
}

ForceModel ForceModel::with_epsilon(double epsilon) const {
  if (kind_ == ForceKind::thermostat) return thermostat(epsilon, field_angle_);
  return *this;
}

HPartials ForceModel::partials(double x, double y, double theta) const {
  switch (kind_) {
    case ForceKind::zero:
      return {};
    case ForceKind::thermostat: {
      const double a = theta - field_angle_;
      return {-epsilon_ * std::sin(a), 0.0, 0.0, -epsilon_ * std::cos(a)};
    }
    case ForceKind::general: {
      constexpr double d = 1e-6;
      const auto &h = general_.h;
      return {h(x, y, theta), (h(x + d, y, theta) - h(x - d, y, theta)) / (2 * d),
              (h(x, y + d, theta) - h(x, y - d, theta)) / (2 * d),
              (h(x, y, theta + d) - h(x, y, theta - d)) / (2 * d)};
    }
  }
  return {};
}

double ForceModel::h_bound() const {
  switch (kind_) {
    case ForceKind::zero:
      return 0.0;
    case ForceKind::thermostat:
      return epsilon_;
    case ForceKind::general:
      return general_.h_bound;
  }
  return 0.0;
}

AssumptionBReport assumption_b_report(const ForceModel &model, double delta0, int grid_n) {
  AssumptionBReport r;
  r.delta0 = delta0;
  if (model.kind() == ForceKind::thermostat) {
    r.max_h = model.epsilon();
    r.max_htheta = model.epsilon();
  } else if (model.kind() == ForceKind::general) {
    const int n = std::max(grid_n, 2);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
          const double x = double(i) / n;
          const double y = double(j) / n;
          const double th = -M_PI + 2.0 * M_PI * double(k) / n;
          const auto p = model.partials(x, y, th);
          r.max_h = std::max(r.max_h, std::abs(p.h));
          r.max_hx = std::max(r.max_hx, std::abs(p.hx));
          r.max_hy = std::max(r.max_hy, std::abs(p.hy));
          r.max_htheta = std::max(r.max_htheta, std::abs(p.htheta));
        }
      }
    }
  }
  r.pass = std::max({r.max_h, r.max_hx, r.max_hy, r.max_htheta}) <= delta0;
  return r;
}

}  // namespace lorentz
