#include "lorentz/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lorentz/errors.hpp"

namespace lorentz {

double batch_stderr(const std::vector<double> &values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / double(n - 1) / double(n));
}

BatchMeans::BatchMeans(std::size_t n_batches) : sums_(n_batches, 0.0), counts_(n_batches, 0) {
  if (n_batches == 0) throw InputError("need at least one batch");
}

void BatchMeans::merge(const BatchMeans &other) {
  sums_.insert(sums_.end(), other.sums_.begin(), other.sums_.end());
  counts_.insert(counts_.end(), other.counts_.begin(), other.counts_.end());
  flagged_ += other.flagged_;
}

std::size_t BatchMeans::count() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

AverageEstimate BatchMeans::estimate() const {
  AverageEstimate e;
  e.n_samples = count();
  double total = 0.0;
  std::vector<double> means;
  for (std::size_t b = 0; b < sums_.size(); ++b) {
    total += sums_[b];
    if (counts_[b] > 0) means.push_back(sums_[b] / double(counts_[b]));
  }
  e.n_batches = means.size();
  e.mean = e.n_samples ? total / double(e.n_samples) : 0.0;
  e.stderr_ = batch_stderr(means);
  const std::size_t all = e.n_samples + flagged_;
  e.flagged_fraction = all ? double(flagged_) / double(all) : 0.0;
  return e;
}

RatioBatches::RatioBatches(std::size_t n_batches)
    : num_(n_batches, 0.0), den_(n_batches, 0.0), counts_(n_batches, 0) {
  if (n_batches == 0) throw InputError("need at least one batch");
}

void RatioBatches::merge(const RatioBatches &other) {
  num_.insert(num_.end(), other.num_.begin(), other.num_.end());
  den_.insert(den_.end(), other.den_.begin(), other.den_.end());
  counts_.insert(counts_.end(), other.counts_.begin(), other.counts_.end());
  flagged_ += other.flagged_;
}

AverageEstimate RatioBatches::estimate() const {
  AverageEstimate e;
  double num = 0.0, den = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < num_.size(); ++b) {
    num += num_[b];
    den += den_[b];
    e.n_samples += counts_[b];
    if (den_[b] > 0.0) ++used;
  }
  e.n_batches = used;
  e.mean = den > 0.0 ? num / den : 0.0;
  if (used >= 2 && den > 0.0) {
    // delta method: residuals num_b - R den_b, scaled by the mean batch denominator
    const double mean_den = den / double(used);
    double ss = 0.0;
    for (std::size_t b = 0; b < num_.size(); ++b) {
      if (den_[b] <= 0.0) continue;
      const double r = num_[b] - e.mean * den_[b];
      ss += r * r;
    }
    e.stderr_ = std::sqrt(ss / double(used - 1) / double(used)) / mean_den;
  }
  const std::size_t all = e.n_samples + flagged_;
  e.flagged_fraction = all ? double(flagged_) / double(all) : 0.0;
  return e;
}

std::size_t Axis::bin(double x) const {
  const double f = (x - lo) / (hi - lo) * double(n_bins);
  if (!(f > 0.0)) return 0;
  const auto i = static_cast<std::size_t>(f);
  return std::min(i, n_bins - 1);
}

double DensityEstimate::cell_measure() const {
  double m = 1.0;
  for (const auto &a : axes) m *= a.width();
  return m;
}

double DensityEstimate::normalization() const {
  const double m = cell_measure();
  double s = 0.0;
  for (double d : density) s += d * m;
  return s;
}

BatchHistogram::BatchHistogram(std::vector<Axis> axes, std::size_t n_batches) : axes_(std::move(axes)), n_cells_(1) {
  if (axes_.empty() || axes_.size() > 2) throw InputError("histograms are 1D or 2D");
  if (n_batches == 0) throw InputError("need at least one batch");
  for (const auto &a : axes_) {
    if (a.n_bins == 0 || !(a.hi > a.lo)) throw InputError("invalid histogram axis '" + a.name + "'");
    n_cells_ *= a.n_bins;
  }
  weights_.assign(n_cells_ * n_batches, 0.0);
  totals_.assign(n_batches, 0.0);
}

void BatchHistogram::merge(const BatchHistogram &other) {
  if (other.n_cells_ != n_cells_) throw InputError("cannot merge histograms with different shapes");
  weights_.insert(weights_.end(), other.weights_.begin(), other.weights_.end());
  totals_.insert(totals_.end(), other.totals_.begin(), other.totals_.end());
}

double BatchHistogram::cell_weight(std::size_t cell) const {
  double w = 0.0;
  for (std::size_t b = 0; b < totals_.size(); ++b) w += weights_[b * n_cells_ + cell];
  return w;
}

double BatchHistogram::total_weight() const { return std::accumulate(totals_.begin(), totals_.end(), 0.0); }

DensityEstimate BatchHistogram::density() const {
  DensityEstimate est;
  est.axes = axes_;
  est.total_weight = total_weight();
  const double measure = est.cell_measure();
  est.density.assign(n_cells_, 0.0);
  est.stderr_.assign(n_cells_, 0.0);
  if (est.total_weight <= 0.0) return est;

  // Cell weights normalized by the grand total so that the densities sum to
  // exactly 1 / measure.
  std::vector<double> cell(n_cells_, 0.0);
  for (std::size_t b = 0; b < totals_.size(); ++b)
    for (std::size_t c = 0; c < n_cells_; ++c) cell[c] += weights_[b * n_cells_ + c];
  for (std::size_t c = 0; c < n_cells_; ++c) est.density[c] = cell[c] / est.total_weight / measure;

  std::vector<double> per_batch;
  per_batch.reserve(totals_.size());
  for (std::size_t c = 0; c < n_cells_; ++c) {
    per_batch.clear();
    for (std::size_t b = 0; b < totals_.size(); ++b)
      if (totals_[b] > 0.0) per_batch.push_back(weights_[b * n_cells_ + c] / totals_[b] / measure);
    est.stderr_[c] = batch_stderr(per_batch);
  }
  return est;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InputError("KS test needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  return d;
}

double ks_critical_value(std::size_t n, std::size_t m, double alpha) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt(double(n + m) / (double(n) * double(m)));
}

}  // namespace lorentz
