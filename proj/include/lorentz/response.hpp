#pragma once

// Linear response of the perturbed collision map: the Jacobian g_eps of F_eps
// relative to nu_0, Delta_eps = (1 - g_eps)/eps, the Kawasaki series, slope
// fits of nu_eps(f) against eps, and the conductivity.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lorentz/dynamics.hpp"
#include "lorentz/measure.hpp"
#include "lorentz/stats.hpp"

namespace lorentz {

struct JacobianOptions {
  double delta_fd = 1e-6;
  double grazing_cos = 1e-4;     // cos(phi) below this at X or F(X) excludes the sample
  double richardson_rel = 1e-3;  // delta vs delta/2 determinants must agree to 3 significant digits
  double branch_jump = 5e-2;     // stencil images further than this from the center image: branch crossed
  IntegratorOptions integrator;
};

enum JacobianFlag : unsigned {
  kJacobianOk = 0,
  kJacobianGrazing = 1,
  kJacobianBranch = 2,
  kJacobianRichardson = 4,
  kJacobianFailure = 8,  // integration failure on the stencil
};

using Matrix2 = std::array<std::array<double, 2>, 2>;

struct JacobianResult {
  Matrix2 D{};            // DF in the (s, phi) chart, Richardson-combined from steps delta_fd and delta_fd/2
  double det = 0.0;       // det D
  double det_raw = 0.0;   // determinant of the plain central difference with step delta_fd
  double det_half = 0.0;  // same with delta_fd / 2
  CollisionCoord image;
  double cos_in = 1.0, cos_out = 1.0;
  unsigned flags = kJacobianOk;
  bool valid() const { return flags == kJacobianOk; }
};

/// Finite-difference DF_eps at X in the (s, phi) chart with branch and
/// convergence checks. Never throws for dynamics trouble; it flags instead.
JacobianResult jacobian_det(const Table &table, const ForceModel &model, const CollisionCoord &X,
                            const JacobianOptions &opts = {});

struct JacobianSample {
  CollisionCoord X;
  double det_DF = 0.0;
  double g = 0.0;
  double delta = 0.0;
  unsigned flags = kJacobianOk;
  bool valid() const { return flags == kJacobianOk; }
};

/// g = cos(phi(F X)) det DF / cos(phi(X)); delta = (1 - g)/eps (0 when eps = 0).
JacobianSample g_eps(const Table &table, const ForceModel &model, const CollisionCoord &X,
                     const JacobianOptions &opts = {});

/// Delta_eps(X) for the family member model.with_epsilon(eps). The value is
/// (g_0 - g_eps)/eps with g_0 the straight map's FD Jacobian on the same
/// stencil, so the finite-difference truncation shared by both maps cancels;
/// `plain` keeps the textbook (1 - g_eps)/eps for comparison.
struct DeltaResult {
  double delta = 0.0;
  double plain = 0.0;
  double g = 0.0;
  unsigned flags = kJacobianOk;
  bool valid() const { return flags == kJacobianOk; }
};
DeltaResult delta_eps(const Table &table, const ForceModel &family, const CollisionCoord &X, double eps,
                      const JacobianOptions &opts = {});

/// Delta_0 = 2 Delta_{eps/2} - Delta_{eps} with eps = 1e-3 (linear extrapolation).
DeltaResult delta_0(const Table &table, const ForceModel &family, const CollisionCoord &X,
                    const JacobianOptions &opts = {}, double eps = 1e-3);

struct SeriesSpec {
  std::size_t n_samples = 100000;
  std::size_t k_max = 30;
  std::size_t n_batches = 64;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  JacobianOptions jacobian;
};

struct SeriesTerm {
  std::size_t k = 0;
  double value = 0.0;
  double stderr_ = 0.0;
};

/// Terms T_k = nu_0[(f o F^k) Delta] for k = 1..k_max with X ~ nu_0.
struct SeriesResult {
  std::string observable;
  AverageEstimate nu0_f;            // nu_0(f) from the same samples
  std::vector<SeriesTerm> terms;    // all k_max terms
  std::size_t truncation = 0;       // K
  double sum = 0.0, sum_stderr = 0.0;  // sum of T_1..T_K with batch error
  double rhs_stderr = 0.0;          // stderr of nu0_f + eps * sum
  double decay_slope = 0.0;         // least-squares slope of log|T_k| against k, k = 1..K
  std::size_t n_samples = 0, n_flagged = 0;
  double flagged_fraction() const { return n_samples ? double(n_flagged) / double(n_samples) : 0.0; }
};

/// K: the first k where |T_k| < 2 stderr holds for 3 consecutive k (the last
/// term kept is the one before the run), capped at k_max.
std::size_t truncation_index(const std::vector<SeriesTerm> &terms, std::size_t k_max);

/// Least-squares slope of log|T_k| against k over k = 1..K; 0 if fewer than 2 terms.
double log_decay_slope(const std::vector<SeriesTerm> &terms, std::size_t K);

enum class DeltaSource { eps, zero_limit };

/// Shared-trajectory evaluation of the series for several observables. With
/// DeltaSource::eps the orbit follows F_eps and Delta = Delta_eps; with
/// zero_limit it follows F_0 and Delta = Delta_0 of the family.
std::vector<SeriesResult> series_terms(const Table &table, const ForceModel &family, double eps,
                                       DeltaSource source, const std::vector<std::string> &observables,
                                       const SeriesSpec &spec);

struct KawasakiReport {
  double epsilon = 0.0;
  SeriesResult series;
  double rhs = 0.0;
  double rhs_stderr = 0.0;
  AverageEstimate lhs;
  double discrepancy_sigma = 0.0;  // |lhs - rhs| / combined stderr
  bool flagged_warning = false;    // flagged fraction above 5%
};

/// RHS = nu_0(f) + eps sum_{k <= K} T_k with the F_eps orbit and Delta_eps;
/// LHS = nu_eps(f) from a Birkhoff run on an independent stream.
std::vector<KawasakiReport> kawasaki(const Table &table, const ForceModel &model,
                                     const std::vector<std::string> &observables, const SeriesSpec &spec,
                                     const RunSpec &lhs_spec);

struct LinearFit {
  double intercept = 0.0, slope = 0.0, quad = 0.0;
  double intercept_se = 0.0, slope_se = 0.0, quad_se = 0.0;
  double chi2 = 0.0;
};

/// Weighted least squares y = a + b x (+ c x^2 when quadratic), weights 1/se^2.
LinearFit weighted_fit(const std::vector<double> &x, const std::vector<double> &y, const std::vector<double> &se,
                       bool quadratic = false);

struct ResponsePoint {
  double epsilon = 0.0;
  AverageEstimate nu_f;
};

struct ResponseReport {
  std::string observable;
  std::vector<ResponsePoint> points;
  LinearFit fit;        // linear
  LinearFit quadratic;  // nonlinearity check
  bool nonlinear = false;
  std::optional<double> recommended_max_eps;
  AverageEstimate nu0_f;  // from the series samples
  bool intercept_consistent = false;
  SeriesResult series;    // F_0 orbit, Delta_0
  double relative_difference = 0.0;  // |fit - series| / |series|
  double overlap_sigma = 0.0;        // |fit - series| / combined stderr
};

ResponseReport linear_response_fit(const Table &table, const ForceModel &family, const std::string &observable,
                                   const std::vector<double> &eps_grid, const RunSpec &run, const SeriesSpec &series);

struct ConductivityReport {
  std::vector<double> epsilon;
  std::vector<CurrentEstimate> currents;
  std::vector<double> ratio, ratio_se;  // J1/eps
  double sigma = 0.0, sigma_se = 0.0;   // J1 slope through the origin
  double j2_slope = 0.0, j2_slope_se = 0.0;
  double max_pair_sigma = 0.0;  // largest pairwise |r_i - r_j| / combined stderr
};

ConductivityReport conductivity(const Table &table, const ForceModel &family, const std::vector<double> &eps_grid,
                                const RunSpec &run);

struct ExpansionReport {
  std::vector<double> log_increments;
  std::optional<double> lambda;  // exp(mean log increment); empty without data
  std::size_t restarts = 0;
};

/// Propagates a tangent vector of slope `slope` (dphi/ds) by the FD Jacobian
/// along the orbit of X; a flagged Jacobian restarts the tangent.
ExpansionReport expansion_diagnostic(const Table &table, const ForceModel &model, const CollisionCoord &X,
                                     std::size_t n_iterations, double slope = 1.0, const JacobianOptions &opts = {});

}  // namespace lorentz
