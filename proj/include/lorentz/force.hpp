#pragma once

// Stationary force models in the (x, y, theta) chart of the constant-energy
// surface. Between collisions
//   x' = p cos(theta),  y' = p sin(theta),  theta' = p h(x, y, theta),
// with h = (-F1 sin(theta) + F2 cos(theta)) / p^2.

#include <cmath>
#include <functional>
#include <string>

namespace lorentz {

enum class ForceKind { zero, thermostat, general };

std::string to_string(ForceKind kind);
ForceKind force_kind_from_string(const std::string &name);

struct HPartials {
  double h = 0.0;
  double hx = 0.0;
  double hy = 0.0;
  double htheta = 0.0;
};

/// User-supplied smooth force in chart form. `speed` must be consistent with a
/// conserved energy (the chart of the constant-energy surface).
struct GeneralForce {
  std::function<double(double x, double y, double theta)> h;
  std::function<double(double x, double y, double theta)> speed;
  double p_min = 1.0;
  double p_max = 1.0;
  double h_bound = 0.0;  // sup |h|, bounds the path curvature
};

class ForceModel {
 public:
  static ForceModel zero();
  /// Constant field E = epsilon * (cos a, sin a) with a Gaussian thermostat,
  /// F = E - ((E.p)/|p|^2) p, unit speed. Gives h = -epsilon sin(theta - a).
  static ForceModel thermostat(double epsilon, double field_angle = 0.0);
  static ForceModel general(GeneralForce force);

  ForceKind kind() const { return kind_; }
  double epsilon() const { return epsilon_; }
  double field_angle() const { return field_angle_; }
  const GeneralForce *general_force() const { return kind_ == ForceKind::general ? &general_ : nullptr; }

  /// Same family at another field strength (thermostat) or unchanged.
  ForceModel with_epsilon(double epsilon) const;

  double h(double x, double y, double theta) const {
    switch (kind_) {
      case ForceKind::zero:
        return 0.0;
      case ForceKind::thermostat:
        return -epsilon_ * std::sin(theta - field_angle_);
      case ForceKind::general:
        return general_.h(x, y, theta);
    }
    return 0.0;
  }
  double speed(double x, double y, double theta) const {
    return kind_ == ForceKind::general ? general_.speed(x, y, theta) : 1.0;
  }

  /// h and its first partials; analytic for thermostat, central differences for general.
  HPartials partials(double x, double y, double theta) const;

  double p_min() const { return kind_ == ForceKind::general ? general_.p_min : 1.0; }
  double p_max() const { return kind_ == ForceKind::general ? general_.p_max : 1.0; }
  /// Upper bound on |h|, i.e. on the curvature of flight paths.
  double h_bound() const;

  /// Time-reversible under (q, p) -> (q, -p): zero and thermostat.
  bool reversible() const { return kind_ != ForceKind::general; }
  bool straight() const { return kind_ == ForceKind::zero; }

 private:
  ForceKind kind_ = ForceKind::zero;
  double epsilon_ = 0.0;
  double field_angle_ = 0.0;
  GeneralForce general_;
};

inline double h_value(const ForceModel &model, double x, double y, double theta) { return model.h(x, y, theta); }

struct AssumptionBReport {
  double max_h = 0.0;
  double max_hx = 0.0;
  double max_hy = 0.0;
  double max_htheta = 0.0;
  double delta0 = 0.0;
  bool pass = true;
};

/// Smallness check max(|h|,|h_x|,|h_y|,|h_theta|) <= delta0. Analytic for
/// thermostat; general forces are sampled on a grid_n^3 grid of the chart.
AssumptionBReport assumption_b_report(const ForceModel &model, double delta0, int grid_n = 24);

}  // namespace lorentz
