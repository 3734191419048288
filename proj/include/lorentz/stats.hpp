#pragma once

// Mergeable Monte Carlo accumulators with batch-means error bars. Each
// accumulator owns a fixed number of batches; merging concatenates batch
// lists, so an ordered merge over workers is deterministic.

#include <cstddef>
#include <string>
#include <vector>

namespace lorentz {

struct AverageEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_batches = 0;
  double flagged_fraction = 0.0;
};

/// Mean of a scalar with one sum per batch.
class BatchMeans {
 public:
  explicit BatchMeans(std::size_t n_batches = 64);

  void add(double value, std::size_t batch) {
    sums_[batch] += value;
    counts_[batch] += 1;
  }
  void flag() { ++flagged_; }
  void merge(const BatchMeans &other);

  std::size_t n_batches() const { return sums_.size(); }
  std::size_t count() const;
  AverageEstimate estimate() const;

 private:
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::size_t flagged_ = 0;
};

/// Ratio sum(num)/sum(den) with delta-method batch errors; used for flow
/// averages where den is elapsed time.
class RatioBatches {
 public:
  explicit RatioBatches(std::size_t n_batches = 64);

  void add(double num, double den, std::size_t batch) {
    num_[batch] += num;
    den_[batch] += den;
  }
  void add_count(std::size_t batch) { counts_[batch] += 1; }
  void flag() { ++flagged_; }
  void merge(const RatioBatches &other);

  std::size_t n_batches() const { return num_.size(); }
  AverageEstimate estimate() const;

 private:
  std::vector<double> num_, den_;
  std::vector<std::size_t> counts_;
  std::size_t flagged_ = 0;
};

/// Axis of a regular histogram.
struct Axis {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n_bins = 1;

  double width() const { return (hi - lo) / double(n_bins); }
  double left(std::size_t i) const { return lo + width() * double(i); }
  double right(std::size_t i) const { return i + 1 == n_bins ? hi : lo + width() * double(i + 1); }
  /// Bin of x, clamped into range.
  std::size_t bin(double x) const;
};

/// Normalized density on a 1D or 2D regular grid; 2D data is row-major in y
/// (index = iy * nx + ix).
struct DensityEstimate {
  std::vector<Axis> axes;
  std::vector<double> density;
  std::vector<double> stderr_;
  double total_weight = 0.0;
  std::size_t flagged = 0;  // grazing collisions seen by the run (kept in the histogram)

  double cell_measure() const;
  /// sum(density * cell measure), 1 for a normalized estimate.
  double normalization() const;
};

/// Weighted histogram with per-batch weights.
class BatchHistogram {
 public:
  BatchHistogram(std::vector<Axis> axes, std::size_t n_batches = 64);

  void add(std::size_t cell, double weight, std::size_t batch) {
    weights_[batch * n_cells_ + cell] += weight;
    totals_[batch] += weight;
  }
  std::size_t cell_of(double x) const { return axes_[0].bin(x); }
  std::size_t cell_of(double x, double y) const { return axes_[1].bin(y) * axes_[0].n_bins + axes_[0].bin(x); }
  void merge(const BatchHistogram &other);

  std::size_t n_cells() const { return n_cells_; }
  std::size_t n_batches() const { return totals_.size(); }
  const std::vector<Axis> &axes() const { return axes_; }
  double cell_weight(std::size_t cell) const;
  double batch_cell_weight(std::size_t batch, std::size_t cell) const { return weights_[batch * n_cells_ + cell]; }
  double batch_total(std::size_t batch) const { return totals_[batch]; }
  double total_weight() const;

  DensityEstimate density() const;

 private:
  std::vector<Axis> axes_;
  std::size_t n_cells_;
  std::vector<double> weights_;
  std::vector<double> totals_;
};

/// Standard error of the mean of equally weighted batch values.
double batch_stderr(const std::vector<double> &values);

/// Two-sample Kolmogorov-Smirnov statistic (samples are copied and sorted).
double ks_two_sample(std::vector<double> a, std::vector<double> b);
/// Asymptotic critical value c(alpha) sqrt((n+m)/(n m)) for the two-sample KS test.
double ks_critical_value(std::size_t n, std::size_t m, double alpha);

}  // namespace lorentz
