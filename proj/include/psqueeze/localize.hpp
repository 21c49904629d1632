#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "psqueeze/cluster.hpp"
#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/gre.hpp"

// Top-down stage: for every cluster, search the cuboids layer by layer for
// the prefix of combinations (ordered by descended ratio) that best explains
// it, then decide whether the explanations are good enough to rule out
// root causes outside the analyzed attributes.
namespace psqueeze {

struct LocalizeConfig {
  double delta = 0.9;       // stop descending once a layer yields GPS >= delta
  double delta_exrc = 0.8;  // min GPS below this flags an external root cause
  std::optional<std::size_t> max_layer;
  ClusterConfig cluster;
  // Forces the leaf distribution family (e.g. `none` to run deterministic,
  // Dirac-mass clustering on a count measure).
  std::optional<DistributionFamily> family_override;
  // Leaves of other clusters with membership above this are left out of the
  // complement when scoring a candidate.
  double complement_cut = 0.5;
  // Drop clusters centered within the noise band of leaf deviation scores.
  bool drop_noise_clusters = true;

  void validate() const {
    if (!(delta > 0.0)) throw Error("delta must be positive");
    if (!(delta_exrc > 0.0 && delta_exrc <= 1.0)) throw Error("delta_exrc must lie in (0, 1]");
    if (max_layer && *max_layer == 0) throw Error("max_layer must be at least 1");
  }
};

struct RootCauseCandidate {
  std::vector<AttributeCombination> combinations;  // sorted
  double gps = 0.0;
  Cuboid cuboid;
};

/// Per-cluster view of the snapshot used while scoring candidates.
class ClusterView {
 public:
  ClusterView(const Snapshot& snapshot, const Cluster& cluster, std::span<const Cluster> others,
              double complement_cut = 0.5)
      : snapshot_(&snapshot),
        probability_(snapshot.leaf_count(), 0.0),
        member_(snapshot.leaf_count(), false),
        excluded_(snapshot.leaf_count(), false),
        residual_(snapshot.leaf_count()) {
    for (const auto& [leaf, p] : cluster.membership) {
      probability_[leaf] = p;
      member_[leaf] = true;
      cluster_mass_ += p;
    }
    for (const auto& other : others)
      for (const auto& [leaf, p] : other.membership)
        if (p > complement_cut) excluded_[leaf] = true;
    for (std::size_t r = 0; r < residual_.size(); ++r) {
      residual_[r] = std::abs(snapshot.leaf_real(r) - snapshot.leaf_forecast(r));
      if (!excluded_[r]) {
        open_residual_ += residual_[r];
        ++open_count_;
      }
    }
  }

  const Snapshot& snapshot() const { return *snapshot_; }
  double probability(std::size_t leaf) const { return probability_[leaf]; }
  bool member(std::size_t leaf) const { return member_[leaf]; }
  bool excluded(std::size_t leaf) const { return excluded_[leaf]; }
  double residual(std::size_t leaf) const { return residual_[leaf]; }
  double cluster_mass() const { return cluster_mass_; }

  /// Sum of |v - f| and count over leaves that are not excluded.
  double open_residual() const { return open_residual_; }
  std::size_t open_count() const { return open_count_; }

 private:
  const Snapshot* snapshot_;
  std::vector<double> probability_;
  std::vector<bool> member_;
  std::vector<bool> excluded_;
  std::vector<double> residual_;
  double cluster_mass_ = 0.0;
  double open_residual_ = 0.0;
  std::size_t open_count_ = 0;
};

namespace detail {

struct RatioTerms {
  double member_mass = 0.0;
  std::size_t non_members = 0;

  double ratio() const {
    if (!(member_mass > 0.0)) return 0.0;
    return member_mass / (member_mass + static_cast<double>(non_members));
  }
};

template <typename Rows>
RatioTerms ratio_terms(const ClusterView& view, const Rows& rows) {
  RatioTerms t;
  for (const auto r : rows) {
    if (view.member(r)) {
      t.member_mass += view.probability(r);
    } else {
      ++t.non_members;
    }
  }
  return t;
}

// Deviation score of the candidate as a whole; a candidate without data
// (v = f = 0) is treated as unchanged.
inline double candidate_score(ValuePair vf) {
  if (!(vf.real + vf.forecast > 0.0)) return 0.0;
  return gre::deviation_score(vf.real, vf.forecast);
}

// |v(e) - a(e)| with a(e) from the candidate's deviation score.
inline double abnormal_gap(double real, double forecast, double score) {
  if (score <= -1.0) return forecast == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(real - gre::expected_abnormal_value(forecast, score));
}

inline double gps_from_distances(double real_vs_abnormal, double real_vs_forecast, double complement) {
  const double denominator = real_vs_forecast + complement;
  if (!(denominator > 0.0)) return 0.0;
  return 1.0 - (real_vs_abnormal + complement) / denominator;
}

}  // namespace detail

/// Probability-weighted share of the leaves under `e` that belong to the
/// cluster. Members contribute p(leaf in cluster); every other descended
/// leaf contributes 1 to the denominator only.
inline double descended_ratio(const AttributeCombination& e, const ClusterView& view) {
  return detail::ratio_terms(view, view.snapshot().leaves_under(e).to_vector()).ratio();
}

inline double descended_ratio(const AttributeCombination& e, const Cluster& cluster, const Snapshot& snapshot) {
  return descended_ratio(e, ClusterView(snapshot, cluster, {}));
}

/// Generalized potential score of candidate `s` for the cluster. Compares
/// real values under the candidate against the values GRE predicts from the
/// candidate's own deviation score, and charges the residual left in the
/// remaining leaves (leaves firmly in other clusters excluded).
inline double gps(std::span<const AttributeCombination> s, const ClusterView& view) {
  if (s.empty()) throw Error("GPS needs a non-empty candidate");
  const auto& snap = view.snapshot();
  LeafSet covered = snap.leaves_under(s);
  if (covered.empty()) throw Error("GPS candidate covers no leaves");
  for (std::size_t r = 0; r < snap.leaf_count(); ++r)
    if (view.excluded(r)) covered.erase(r);
  const std::size_t covered_count = covered.count();
  if (covered_count == 0) return 0.0;

  double score = 0.0;
  try {
    score = detail::candidate_score(snap.aggregate(covered));
  } catch (const DomainError&) {
    score = 0.0;
  }
  double gap_abnormal = 0.0;
  double gap_forecast = 0.0;
  double complement = 0.0;
  std::size_t complement_count = 0;
  for (std::size_t r = 0; r < snap.leaf_count(); ++r) {
    if (view.excluded(r)) continue;
    if (covered.contains(r)) {
      gap_abnormal += detail::abnormal_gap(snap.leaf_real(r), snap.leaf_forecast(r), score);
      gap_forecast += view.residual(r);
    } else {
      complement += view.residual(r);
      ++complement_count;
    }
  }
  const double n = static_cast<double>(covered_count);
  const double d_complement = complement_count ? complement / static_cast<double>(complement_count) : 0.0;
  return detail::gps_from_distances(gap_abnormal / n, gap_forecast / n, d_complement);
}

inline double gps(std::span<const AttributeCombination> s, const Cluster& cluster, std::span<const Cluster> others,
                  const Snapshot& snapshot) {
  return gps(s, ClusterView(snapshot, cluster, others));
}

/// I(S): sum over members of (number of bound attributes)^2.
inline double interpretability(std::span<const AttributeCombination> s) {
  double total = 0.0;
  for (const auto& e : s) total += static_cast<double>(e.size() * e.size());
  return total;
}

/// Weight C trading GPS against interpretability.
inline double tradeoff_weight(std::size_t num_cluster, std::size_t num_attr, double coverage) {
  if (num_cluster == 0 || num_attr == 0) throw Error("tradeoff weight needs at least one cluster and attribute");
  if (!(coverage > 0.0)) throw Error("coverage must be positive");
  const double c = std::min(coverage, 1.0 - 1e-9);
  const double g_cluster = std::log(static_cast<double>(num_cluster) + 1.0) / static_cast<double>(num_cluster);
  const double g_attr = static_cast<double>(num_attr) / std::log(static_cast<double>(num_attr) + 1.0);
  return g_cluster * g_attr * -std::log(c);
}

/// Best prefix of one cuboid's combinations, ordered by descended ratio
/// (ties: larger member mass, then combination order). Only combinations
/// with a positive ratio are considered. Empty when none qualifies.
inline std::optional<RootCauseCandidate> search_cuboid(const Cuboid& cuboid, std::span<const CuboidCell> cells,
                                                       const ClusterView& view) {
  struct Ranked {
    const CuboidCell* cell;
    detail::RatioTerms terms;
    double ratio;
  };
  std::vector<Ranked> ranked;
  for (const auto& cell : cells) {
    const auto t = detail::ratio_terms(view, cell.rows);
    if (t.ratio() > 0.0) ranked.push_back({&cell, t, t.ratio()});
  }
  if (ranked.empty()) return std::nullopt;
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    if (a.terms.member_mass != b.terms.member_mass) return a.terms.member_mass > b.terms.member_mass;
    return a.cell->combination < b.cell->combination;
  });

  const auto& snap = view.snapshot();
  const std::size_t columns = snap.column_count();
  std::vector<ValuePair> sums(columns);
  std::vector<std::uint32_t> covered;
  double gap_forecast = 0.0;
  double covered_open_residual = 0.0;
  std::size_t covered_open_count = 0;

  double best_gps = -std::numeric_limits<double>::infinity();
  std::size_t best_split = 0;
  for (std::size_t split = 1; split <= ranked.size(); ++split) {
    // Cells of one cuboid are disjoint, so each prefix extends LE(S) by the
    // new cell's rows.
    for (const auto r : ranked[split - 1].cell->rows) {
      if (view.excluded(r)) continue;
      covered.push_back(r);
      for (std::size_t c = 0; c < columns; ++c) {
        sums[c].real += snap.real(c, r);
        sums[c].forecast += snap.forecast(c, r);
      }
      gap_forecast += view.residual(r);
      covered_open_residual += view.residual(r);
      ++covered_open_count;
    }
    if (covered.empty()) continue;
    double score = 0.0;
    try {
      score = detail::candidate_score(snap.compose(sums));
    } catch (const DomainError&) {
      score = 0.0;  // derived measure with zero denominator: no data
    }
    double gap_abnormal = 0.0;
    for (const auto r : covered) gap_abnormal += detail::abnormal_gap(snap.leaf_real(r), snap.leaf_forecast(r), score);
    const double n = static_cast<double>(covered.size());
    const std::size_t rest_count = view.open_count() - covered_open_count;
    const double d_complement =
        rest_count ? std::max(0.0, view.open_residual() - covered_open_residual) / static_cast<double>(rest_count)
                   : 0.0;
    const double g = detail::gps_from_distances(gap_abnormal / n, gap_forecast / n, d_complement);
    if (g > best_gps) {
      best_gps = g;
      best_split = split;
    }
  }

  RootCauseCandidate out;
  out.cuboid = cuboid;
  out.gps = best_gps;
  for (std::size_t i = 0; i < best_split; ++i) out.combinations.push_back(ranked[i].cell->combination);
  std::sort(out.combinations.begin(), out.combinations.end());
  return out;
}

inline std::optional<RootCauseCandidate> search_cuboid(const Cuboid& cuboid, const Cluster& cluster,
                                                       const Snapshot& snapshot,
                                                       std::span<const Cluster> others = {}) {
  const auto cells = group_by_cuboid(snapshot, cuboid);
  return search_cuboid(cuboid, cells, ClusterView(snapshot, cluster, others));
}

/// Cuboid cells computed once per snapshot and shared by all clusters.
class CuboidCatalog {
 public:
  explicit CuboidCatalog(const Snapshot& snapshot) : snapshot_(&snapshot), cuboids_(cuboids_by_layer(snapshot.schema())) {
    cells_.resize(cuboids_.size());
  }

  const std::vector<Cuboid>& cuboids() const noexcept { return cuboids_; }

  const std::vector<CuboidCell>& cells(std::size_t i) {
    if (!cells_[i]) cells_[i] = group_by_cuboid(*snapshot_, cuboids_[i]);
    return *cells_[i];
  }

 private:
  const Snapshot* snapshot_;
  std::vector<Cuboid> cuboids_;
  std::vector<std::optional<std::vector<CuboidCell>>> cells_;
};

/// Ranking key GPS * C - I(S) / n for a candidate, n being the number of
/// attributes.
inline double candidate_rank(const RootCauseCandidate& c, double weight, std::size_t num_attr) {
  return c.gps * weight - interpretability(c.combinations) / static_cast<double>(num_attr);
}

/// In-cluster localization: best candidate per cuboid, layer by layer,
/// stopping after the first layer that reaches GPS >= delta; the final
/// answer maximizes GPS * C - I(S) / n (ties: higher GPS, lower I(S), then
/// combination order).
inline std::optional<RootCauseCandidate> localize_cluster(const Cluster& cluster, std::span<const Cluster> others,
                                                          CuboidCatalog& catalog, const Snapshot& snapshot,
                                                          const LocalizeConfig& cfg) {
  if (cluster.membership.empty()) throw Error("cannot localize an empty cluster");
  const ClusterView view(snapshot, cluster, others, cfg.complement_cut);
  const std::size_t num_attr = snapshot.schema().size();
  const std::size_t deepest = std::min(num_attr, cfg.max_layer.value_or(num_attr));

  std::vector<RootCauseCandidate> candidates;
  const auto& cuboids = catalog.cuboids();
  std::size_t i = 0;
  for (std::size_t layer = 1; layer <= deepest; ++layer) {
    bool good_enough = false;
    for (; i < cuboids.size() && cuboids[i].layer() == layer; ++i) {
      auto cand = search_cuboid(cuboids[i], catalog.cells(i), view);
      if (!cand) continue;
      good_enough = good_enough || cand->gps >= cfg.delta;
      candidates.push_back(std::move(*cand));
    }
    if (good_enough) break;
  }
  if (candidates.empty()) return std::nullopt;

  const double coverage = std::clamp(view.cluster_mass() / static_cast<double>(snapshot.leaf_count()), 1e-12, 1.0);
  const double weight = tradeoff_weight(others.size() + 1, num_attr, coverage);
  const auto better = [&](const RootCauseCandidate& a, const RootCauseCandidate& b) {
    const double ra = candidate_rank(a, weight, num_attr);
    const double rb = candidate_rank(b, weight, num_attr);
    if (ra != rb) return ra > rb;
    if (a.gps != b.gps) return a.gps > b.gps;
    const double ia = interpretability(a.combinations);
    const double ib = interpretability(b.combinations);
    if (ia != ib) return ia < ib;
    return a.combinations < b.combinations;
  };
  return *std::min_element(candidates.begin(), candidates.end(), better);
}

inline std::optional<RootCauseCandidate> localize_cluster(const Cluster& cluster, const Snapshot& snapshot,
                                                          const LocalizeConfig& cfg = {},
                                                          std::span<const Cluster> others = {}) {
  CuboidCatalog catalog(snapshot);
  return localize_cluster(cluster, others, catalog, snapshot, cfg);
}

struct ClusterResult {
  Cluster cluster;
  std::optional<RootCauseCandidate> root_cause;  // empty: cluster unexplainable

  double gps() const { return root_cause ? root_cause->gps : 0.0; }
};

struct LocalizationReport {
  std::vector<ClusterResult> per_cluster;
  std::vector<AttributeCombination> root_causes;  // union over clusters, sorted
  std::optional<double> min_gps;                  // empty when there is no cluster
  bool external_root_cause = false;
  bool no_anomaly = false;
  double knee_threshold = 0.0;
  std::size_t abnormal_leaves = 0;
  double noise_floor = 0.0;          // |deviation score| band treated as noise
  std::size_t dropped_clusters = 0;  // clusters centered inside that band
  DeviationDistribution overall;
  double elapsed_s = 0.0;
};

/// External root cause when the least-explained cluster falls below the
/// threshold.
inline bool determine_external(std::optional<double> min_gps, double delta_exrc) {
  return min_gps && *min_gps < delta_exrc;
}

/// Bottom-up clustering of the abnormal leaves.
inline std::vector<Cluster> cluster_leaves(const Snapshot& snapshot, std::span<const std::size_t> abnormal,
                                           DistributionFamily family, const ClusterConfig& cfg,
                                           DeviationDistribution* overall_out = nullptr) {
  std::vector<LeafDistribution> leaf_dists;
  std::vector<DeviationDistribution> dists;
  leaf_dists.reserve(abnormal.size());
  for (const auto r : abnormal) {
    leaf_dists.push_back({r, leaf_distribution(snapshot.leaf_real(r), snapshot.leaf_forecast(r), family, cfg)});
    dists.push_back(leaf_dists.back().dist);
  }
  if (dists.empty()) return {};
  const auto overall = overall_distribution(dists);
  if (overall_out) *overall_out = overall;
  return density_cluster(overall, leaf_dists, cfg);
}

/// Knee of |deviation score| over the leaves the residual filter kept as
/// normal: the deviation a leaf shows through noise alone. 0 on noise-free
/// data and when too few normal leaves remain to tell.
inline double noise_floor(const Snapshot& snapshot, std::span<const std::size_t> abnormal) {
  constexpr std::size_t kMinNormal = 5;
  std::vector<bool> flagged(snapshot.leaf_count(), false);
  for (const auto r : abnormal) flagged[r] = true;
  std::vector<double> scores;
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r) {
    const double v = snapshot.leaf_real(r), f = snapshot.leaf_forecast(r);
    if (!flagged[r] && v + f > 0.0) scores.push_back(std::abs(gre::deviation_score(v, f)));
  }
  if (scores.size() < kMinNormal) return 0.0;
  return knee_threshold(scores).threshold;
}

/// Full pipeline: filter, cluster, localize each cluster, check for
/// external root causes.
inline LocalizationReport localize(const Snapshot& snapshot, const LocalizeConfig& cfg = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  LocalizationReport report;
  report.overall = DeviationDistribution(-1.0, 1.0, cfg.cluster.grid_step);

  const auto res = residuals(snapshot);
  report.knee_threshold = knee_threshold(res).threshold;
  const auto abnormal = filter_abnormal(snapshot, report.knee_threshold);
  report.abnormal_leaves = abnormal.size();

  const DistributionFamily family = snapshot.measure().derived()
                                        ? DistributionFamily::none
                                        : cfg.family_override.value_or(snapshot.measure().family);
  auto clusters = cluster_leaves(snapshot, abnormal, family, cfg.cluster, &report.overall);
  if (cfg.drop_noise_clusters && !clusters.empty()) {
    report.noise_floor = noise_floor(snapshot, abnormal);
    const auto before = clusters.size();
    std::erase_if(clusters, [&](const Cluster& c) { return std::abs(c.center) <= report.noise_floor; });
    report.dropped_clusters = before - clusters.size();
  }

  CuboidCatalog catalog(snapshot);
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    std::vector<Cluster> others;
    for (std::size_t j = 0; j < clusters.size(); ++j)
      if (j != k) others.push_back(clusters[j]);
    ClusterResult result{clusters[k], localize_cluster(clusters[k], others, catalog, snapshot, cfg)};
    if (!report.min_gps || result.gps() < *report.min_gps) report.min_gps = result.gps();
    if (result.root_cause)
      for (const auto& e : result.root_cause->combinations) report.root_causes.push_back(e);
    report.per_cluster.push_back(std::move(result));
  }
  std::sort(report.root_causes.begin(), report.root_causes.end());
  report.root_causes.erase(std::unique(report.root_causes.begin(), report.root_causes.end()), report.root_causes.end());
  report.no_anomaly = clusters.empty();
  report.external_root_cause = determine_external(report.min_gps, cfg.delta_exrc);
  report.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Unsupervised choice of the external-root-cause threshold from the min
/// GPS of past faults: cluster the values on a [0, 1] grid and take the
/// lower bound of the cluster with the largest center. Fewer than five
/// values give the default 0.8.
inline double select_exrc_threshold(std::span<const double> historical_min_gps, const ClusterConfig& cfg = {}) {
  constexpr double kDefault = 0.8;
  if (historical_min_gps.size() < 5) return kDefault;
  std::vector<LeafDistribution> points;
  std::vector<ScoreDistribution> dists;
  for (std::size_t i = 0; i < historical_min_gps.size(); ++i) {
    ScoreDistribution d(0.0, 1.0, cfg.grid_step);
    d.add(std::clamp(historical_min_gps[i], 0.0, 1.0), 1.0);
    points.push_back({i, d});
    dists.push_back(std::move(d));
  }
  const auto clusters = density_cluster(overall_distribution(dists), points, cfg);
  if (clusters.empty()) return kDefault;
  const auto top = std::max_element(clusters.begin(), clusters.end(),
                                    [](const Cluster& a, const Cluster& b) { return a.center < b.center; });
  return top->lower;
}

}  // namespace psqueeze
