#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/gre.hpp"

// Bottom-up stage: pick out abnormal leaves, turn each into a distribution
// over deviation scores and split the averaged distribution at its density
// minima.
namespace psqueeze {

struct ClusterConfig {
  double grid_step = 0.01;
  std::size_t smoothing_window = 5;  // bins, centered moving average
  double min_cluster_mass = 1.0;     // leaf-equivalents
  double poisson_truncation = 1e-6;  // per-term PMF cutoff
};

/// Mass over a uniform grid of bin centers lower, lower + step, ..., upper.
class ScoreDistribution {
 public:
  ScoreDistribution() : ScoreDistribution(-1.0, 1.0, 0.01) {}
  ScoreDistribution(double lower, double upper, double step) : lower_(lower), upper_(upper), step_(step) {
    if (!(step > 0.0) || !(upper > lower)) throw Error("invalid distribution grid");
    mass_.assign(static_cast<std::size_t>(std::llround((upper - lower) / step)) + 1, 0.0);
  }

  std::size_t bins() const noexcept { return mass_.size(); }
  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  double step() const noexcept { return step_; }
  double center(std::size_t bin) const { return bin + 1 == bins() ? upper_ : lower_ + step_ * static_cast<double>(bin); }

  /// Bin whose center is nearest to `score` (clamped to the grid).
  std::size_t bin_of(double score) const {
    const double pos = std::round((score - lower_) / step_);
    if (pos <= 0.0) return 0;
    return std::min(bins() - 1, static_cast<std::size_t>(pos));
  }

  double mass(std::size_t bin) const { return mass_[bin]; }
  std::span<const double> masses() const noexcept { return mass_; }
  std::span<double> masses() noexcept { return mass_; }
  void add(double score, double m) { mass_[bin_of(score)] += m; }

  double total() const { return std::accumulate(mass_.begin(), mass_.end(), 0.0); }

  double mass_between(std::size_t first, std::size_t last) const {
    double s = 0.0;
    for (std::size_t i = first; i <= last && i < bins(); ++i) s += mass_[i];
    return s;
  }

  bool same_grid(const ScoreDistribution& o) const {
    return bins() == o.bins() && lower_ == o.lower_ && upper_ == o.upper_ && step_ == o.step_;
  }

 private:
  double lower_;
  double upper_;
  double step_;
  std::vector<double> mass_;
};

using DeviationDistribution = ScoreDistribution;

struct KneeResult {
  double threshold = 0.0;
  bool fallback = false;  // fewer than three distinct residuals; median returned
};

/// Threshold at the knee of the empirical CDF of `residuals`.
///
/// The CDF is taken over the distinct residual values with the residual axis
/// rescaled to [0, 1] (the CDF already lives there). The knee is the point of
/// the normalized curve lying farthest above the diagonal, which for this
/// concave, increasing shape is where the curvature concentrates. The result
/// is always one of the observed residuals.
inline KneeResult knee_threshold(std::span<const double> residuals) {
  if (residuals.empty()) throw Error("knee threshold needs at least one residual");
  std::vector<double> sorted(residuals.begin(), residuals.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> xs;
  std::vector<double> cdf;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    xs.push_back(sorted[i]);
    cdf.push_back(static_cast<double>(i + 1) / static_cast<double>(sorted.size()));
  }
  if (xs.size() < 3) {
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return {median, true};
  }
  const double span = xs.back() - xs.front();
  std::size_t best = 0;
  double best_gap = -1.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double gap = cdf[j] - (xs[j] - xs.front()) / span;
    if (gap > best_gap) {
      best_gap = gap;
      best = j;
    }
  }
  return {xs[best], false};
}

inline std::vector<double> residuals(const Snapshot& snapshot) {
  std::vector<double> out(snapshot.leaf_count());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::abs(snapshot.leaf_real(r) - snapshot.leaf_forecast(r));
  return out;
}

/// Leaves whose measure-level residual |v - f| exceeds `threshold`.
inline std::vector<std::size_t> filter_abnormal(const Snapshot& snapshot, double threshold) {
  if (threshold < 0.0) throw Error("abnormal-leaf threshold must be non-negative");
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r)
    if (std::abs(snapshot.leaf_real(r) - snapshot.leaf_forecast(r)) > threshold) out.push_back(r);
  return out;
}

struct ScoreMass {
  double score = 0.0;
  double mass = 0.0;
};

/// Unnormalized Poisson terms: the observed count `real` could have come
/// from rate real + k for integer k >= -real, which would put the deviation
/// score at (f - real - k) / (f + real + k) with weight Pois(real; real + k).
/// Terms with weight below `truncation` are dropped.
inline std::vector<ScoreMass> poisson_score_masses(double real, double forecast, double truncation = 1e-6) {
  if (real < 0.0 || real != std::floor(real)) throw Error("poisson family needs a non-negative integer real value");
  if (forecast < 0.0 || !(real + forecast > 0.0)) throw DomainError("poisson family needs real + forecast > 0");
  const double log_fact = std::lgamma(real + 1.0);
  auto pmf = [&](double rate) {
    if (rate == 0.0) return real == 0.0 ? 1.0 : 0.0;
    return std::exp(real * std::log(rate) - rate - log_fact);
  };
  std::vector<ScoreMass> terms;
  auto push = [&](double rate, double p) {
    if (forecast + rate > 0.0) terms.push_back({(forecast - rate) / (forecast + rate), p});
  };
  // PMF in the rate peaks at rate == real; walk outward both ways.
  for (double rate = real; rate >= 0.0; rate -= 1.0) {
    const double p = pmf(rate);
    if (p < truncation) break;
    push(rate, p);
  }
  for (double rate = real + 1.0;; rate += 1.0) {
    const double p = pmf(rate);
    if (p < truncation) break;
    push(rate, p);
  }
  std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  return terms;
}

/// Distribution of one leaf's deviation score on the [-1, 1] grid.
inline DeviationDistribution leaf_distribution(double real, double forecast, DistributionFamily family,
                                               const ClusterConfig& cfg = {}) {
  DeviationDistribution dist(-1.0, 1.0, cfg.grid_step);
  if (family == DistributionFamily::none) {
    dist.add(gre::deviation_score(real, forecast), 1.0);
    return dist;
  }
  const auto terms = poisson_score_masses(real, forecast, cfg.poisson_truncation);
  double total = 0.0;
  for (const auto& t : terms) total += t.mass;
  if (!(total > 0.0)) {
    dist.add(gre::deviation_score(real, forecast), 1.0);
    return dist;
  }
  for (const auto& t : terms) dist.add(t.score, t.mass / total);
  return dist;
}

/// Per-bin mean of the inputs.
inline DeviationDistribution overall_distribution(std::span<const DeviationDistribution> dists) {
  if (dists.empty()) throw Error("overall distribution needs at least one leaf distribution");
  DeviationDistribution out = dists.front();
  for (auto& m : out.masses()) m = 0.0;
  for (const auto& d : dists) {
    if (!d.same_grid(out)) throw Error("leaf distributions use different grids");
    for (std::size_t i = 0; i < d.bins(); ++i) out.masses()[i] += d.mass(i);
  }
  for (auto& m : out.masses()) m /= static_cast<double>(dists.size());
  return out;
}

/// Centered moving average; windows are truncated at the grid edges.
inline std::vector<double> smooth(std::span<const double> values, std::size_t window) {
  if (window <= 1) return {values.begin(), values.end()};
  const std::size_t half = window / 2;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size() - 1, i + half);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += values[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

// Smoothing sums the same masses in different orders; plateaus must not
// split over the last bits.
inline bool nearly_equal(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
}

struct Extrema {
  std::vector<std::size_t> maxima;
  std::vector<std::size_t> minima;
};

/// Relative extrema with strict comparison against neighboring values.
/// Runs of equal values are treated as one point located at the run's
/// midpoint. A run touching the grid edge can be a maximum (the edge counts
/// as lower) but never a minimum; the edges serve as boundaries anyway.
inline Extrema relative_extrema(std::span<const double> values) {
  struct Run {
    std::size_t first, last;
    double value;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!runs.empty() && nearly_equal(values[i], runs.back().value)) {
      runs.back().last = i;
    } else {
      runs.push_back({i, i, values[i]});
    }
  }
  Extrema out;
  if (runs.size() < 2) return out;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const bool has_left = k > 0;
    const bool has_right = k + 1 < runs.size();
    const bool above_left = !has_left || runs[k].value > runs[k - 1].value;
    const bool above_right = !has_right || runs[k].value > runs[k + 1].value;
    const std::size_t mid = (runs[k].first + runs[k].last) / 2;
    if (above_left && above_right) out.maxima.push_back(mid);
    if (has_left && has_right && runs[k].value < runs[k - 1].value && runs[k].value < runs[k + 1].value)
      out.minima.push_back(mid);
  }
  return out;
}

/// A leaf together with its deviation-score distribution.
struct LeafDistribution {
  std::size_t leaf = 0;
  DeviationDistribution dist;
};

/// A high-density interval of deviation scores. Bins [first_bin, last_bin]
/// belong to the cluster; `membership` holds p(leaf in cluster) for every
/// leaf with positive mass inside, sorted by leaf index.
struct Cluster {
  double center = 0.0;
  double lower = -1.0;
  double upper = 1.0;
  std::size_t first_bin = 0;
  std::size_t last_bin = 0;
  std::vector<std::pair<std::size_t, double>> membership;

  double mass() const {
    double s = 0.0;
    for (const auto& [leaf, p] : membership) s += p;
    return s;
  }

  double probability(std::size_t leaf) const {
    const auto it = std::lower_bound(membership.begin(), membership.end(), std::pair<std::size_t, double>{leaf, -1.0});
    return it != membership.end() && it->first == leaf ? it->second : 0.0;
  }
};

/// Bin ranges of the clusters of `density`: one per relative maximum of the
/// smoothed density, bounded by the nearest relative minima. Adjacent
/// clusters share their boundary minimum, which is assigned to the lower
/// cluster so that bin ranges never overlap.
inline std::vector<std::pair<std::size_t, std::size_t>> cluster_ranges(std::span<const double> density,
                                                                       std::size_t smoothing_window) {
  const auto smoothed = smooth(density, smoothing_window);
  const auto ext = relative_extrema(smoothed);
  const std::size_t last = density.size() - 1;
  if (ext.maxima.empty()) return {{0, last}};
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto c : ext.maxima) {
    const auto above = std::upper_bound(ext.minima.begin(), ext.minima.end(), c);
    const bool has_lower = above != ext.minima.begin();
    const std::size_t l = has_lower ? *std::prev(above) : 0;
    const std::size_t r = above != ext.minima.end() ? *above : last;
    ranges.emplace_back(has_lower ? l + 1 : 0, r);
  }
  return ranges;
}

/// Density clustering of deviation scores. `dist` is the averaged
/// distribution; `leaves` are the abnormal leaves with their own
/// distributions on the same grid. Clusters carrying less than
/// `cfg.min_cluster_mass` expected leaves are dropped.
inline std::vector<Cluster> density_cluster(const DeviationDistribution& dist, std::span<const LeafDistribution> leaves,
                                            const ClusterConfig& cfg = {}) {
  for (const auto& l : leaves)
    if (!l.dist.same_grid(dist)) throw Error("leaf distribution grid differs from the overall distribution");

  const auto smoothed = smooth(dist.masses(), cfg.smoothing_window);
  std::vector<Cluster> clusters;
  for (const auto& [first, last] : cluster_ranges(dist.masses(), cfg.smoothing_window)) {
    Cluster c;
    c.first_bin = first;
    c.last_bin = last;
    c.lower = first == 0 ? dist.lower() : dist.center(first - 1);
    c.upper = dist.center(last);
    std::size_t peak = first;
    for (std::size_t i = first; i <= last; ++i)
      if (smoothed[i] > smoothed[peak] && !nearly_equal(smoothed[i], smoothed[peak])) peak = i;
    std::size_t plateau_end = peak;
    while (plateau_end < last && nearly_equal(smoothed[plateau_end + 1], smoothed[peak])) ++plateau_end;
    c.center = dist.center((peak + plateau_end) / 2);
    for (const auto& l : leaves) {
      const double p = std::min(1.0, l.dist.mass_between(first, last));
      if (p > 1e-12) c.membership.emplace_back(l.leaf, p);
    }
    std::sort(c.membership.begin(), c.membership.end());
    // A lone leaf sums to 1 only up to rounding.
    if (c.mass() >= cfg.min_cluster_mass - 1e-9) clusters.push_back(std::move(c));
  }
  return clusters;
}

}  // namespace psqueeze
