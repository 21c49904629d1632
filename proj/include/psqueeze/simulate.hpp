#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psqueeze/cluster.hpp"
#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/gre.hpp"

// Fault simulator: injects GRE-consistent anomalies into a base snapshot and
// records which attribute combinations were the root causes.
namespace psqueeze::simulate {

enum class MeasureKind { fundamental, success_rate };

struct MagnitudeRange {
  double lower = 0.2;  // exclusive
  double upper = 1.0;  // inclusive
};

struct SimulationParams {
  std::size_t n_element = 1;
  std::size_t cuboid_layer = 1;
  double base_noise_sigma = 0.0;  // relative noise on every leaf
  double leaf_noise_sigma = 0.05;  // extra relative noise on affected leaves
  MagnitudeRange magnitude_range;
  // Distinct root causes get magnitudes at least this far apart; closer ones
  // would read as a single root cause.
  double min_magnitude_gap = 0.1;
  std::uint64_t seed = 0;
  MeasureKind measure_kind = MeasureKind::fundamental;
  // Round simulated counts to integers (needed for the poisson family).
  // With it off, noise-free faults satisfy GRE exactly.
  bool round_counts = true;

  void validate() const {
    if (n_element < 1 || n_element > 3) throw Error("n_element must be 1, 2 or 3");
    if (cuboid_layer < 1) throw Error("cuboid_layer must be at least 1");
    if (base_noise_sigma < 0.0 || leaf_noise_sigma < 0.0) throw Error("noise sigmas must be non-negative");
    if (!(magnitude_range.lower >= 0.0 && magnitude_range.lower < magnitude_range.upper &&
          magnitude_range.upper <= 1.0))
      throw Error("magnitude range must lie within (0, 1]");
    if (min_magnitude_gap < 0.0) throw Error("min_magnitude_gap must be non-negative");
  }
};

/// One injected root cause: combinations of one cuboid sharing a deviation
/// score.
struct RootCause {
  std::vector<NamedCombination> combinations;
  double magnitude = 0.0;
};

struct SimulatedFault {
  Snapshot snapshot;
  std::vector<RootCause> ground_truth;
  SimulationParams params;
  bool external = false;                       // a root cause uses an eliminated attribute
  std::vector<std::string> eliminated_attributes;
};

/// splitmix64: derives independent sub-seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

namespace detail {

inline double relative_noise(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 1.0;
  std::normal_distribution<double> n(0.0, sigma);
  return std::max(0.0, 1.0 + n(rng));
}

inline double round_count(double v) { return std::max(0.0, std::round(v)); }

// One magnitude per root cause, pairwise at least min_magnitude_gap apart.
inline std::vector<double> draw_magnitudes(const SimulationParams& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(params.magnitude_range.lower, params.magnitude_range.upper);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> out;
    for (std::size_t k = 0; k < params.n_element; ++k)
      // (lower, upper]: mirror the half-open [lower, upper) draw.
      out.push_back(params.magnitude_range.upper + params.magnitude_range.lower - uniform(rng));
    bool separated = true;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j)
        if (std::abs(out[i] - out[j]) < params.min_magnitude_gap) separated = false;
    if (separated) return out;
  }
  throw Error("could not draw root-cause magnitudes separated by min_magnitude_gap");
}

inline void check_base(const Snapshot& base, const SimulationParams& params) {
  params.validate();
  const bool success_rate = params.measure_kind == MeasureKind::success_rate;
  if (success_rate != (base.measure().kind == psqueeze::MeasureKind::quotient))
    throw Error("success-rate simulation needs a quotient base measure and vice versa");
  if (!success_rate && base.measure().kind != psqueeze::MeasureKind::fundamental)
    throw Error("fundamental simulation needs a fundamental base measure");
}

}  // namespace detail

/// Applies the given root causes to `base` (steps 1, 4 and 5 below; its
/// real values are the ground-truth level and become the forecast). Root
/// causes are applied in order; where they overlap the later one wins.
inline SimulatedFault inject_fault(const Snapshot& base, std::vector<RootCause> causes, const SimulationParams& params,
                                   std::mt19937_64& rng) {
  detail::check_base(base, params);
  const auto& schema = base.schema();
  const bool success_rate = params.measure_kind == MeasureKind::success_rate;
  const std::size_t leaves = base.leaf_count();
  // Working values: for fundamental measures the count, for success rates
  // the rate (column 0) with the base totals (column 1).
  std::vector<double> truth(leaves), value(leaves), totals(leaves, 0.0);
  for (std::size_t r = 0; r < leaves; ++r) {
    if (success_rate) {
      totals[r] = base.real(1, r);
      truth[r] = totals[r] > 0.0 ? base.real(0, r) / totals[r] : 0.0;
    } else {
      truth[r] = base.real(0, r);
    }
    value[r] = truth[r] * detail::relative_noise(rng, params.base_noise_sigma);
    if (success_rate) value[r] = std::min(1.0, value[r]);
  }

  std::vector<LeafSet> owned;
  for (auto& rc : causes) {
    if (rc.combinations.empty()) throw Error("root cause without combinations");
    if (!(rc.magnitude > -1.0 && rc.magnitude <= 1.0)) throw Error("root-cause magnitude must lie in (-1, 1]");
    LeafSet covered(leaves);
    for (const auto& e : rc.combinations) covered |= base.leaves_under(e);
    if (covered.empty()) throw Error("root cause covers no leaf of the base");
    std::sort(rc.combinations.begin(), rc.combinations.end());
    owned.push_back(std::move(covered));
  }
  // A leaf under several root causes follows the one applied last.
  for (std::size_t k = 0; k < owned.size(); ++k)
    for (std::size_t j = k + 1; j < owned.size(); ++j)
      owned[j].for_each([&](std::size_t r) { owned[k].erase(r); });

  for (std::size_t k = 0; k < owned.size(); ++k) {
    const double d = causes[k].magnitude;
    // GRE: the owned slice as a whole moves to truth * (1 - d) / (1 + d);
    // scaling every leaf by one factor keeps each leaf's own noise.
    double current = 0.0, target = 0.0;
    owned[k].for_each([&](std::size_t r) {
      const double weight = success_rate ? totals[r] : 1.0;
      current += value[r] * weight;
      target += gre::expected_abnormal_value(truth[r], d) * weight;
    });
    const double scale = current > 0.0 ? target / current : 0.0;
    owned[k].for_each([&](std::size_t r) {
      value[r] = (current > 0.0 ? value[r] * scale : gre::expected_abnormal_value(truth[r], d)) *
                 detail::relative_noise(rng, params.leaf_noise_sigma);
      if (success_rate) value[r] = std::min(1.0, value[r]);
    });
  }

  std::vector<LeafRow> rows(leaves);
  for (std::size_t r = 0; r < leaves; ++r) {
    auto& row = rows[r];
    for (std::size_t a = 0; a < schema.size(); ++a) row.values.push_back(schema.value(a, base.code(r, a)));
    if (success_rate) {
      double total = totals[r];
      double succ = value[r] * total;
      if (params.round_counts) {
        total = static_cast<double>(std::poisson_distribution<long long>(std::max(totals[r], 1e-9))(rng));
        succ = static_cast<double>(
            std::binomial_distribution<long long>(static_cast<long long>(total), std::clamp(value[r], 0.0, 1.0))(rng));
      }
      row.real = {succ, total};
      row.forecast = {base.real(0, r), base.real(1, r)};
    } else {
      row.real = {params.round_counts ? detail::round_count(value[r]) : value[r]};
      row.forecast = {truth[r]};
    }
  }
  MeasureSpec measure = base.measure();
  if (!success_rate)
    measure.family = params.round_counts && base.measure().family == DistributionFamily::poisson
                         ? DistributionFamily::poisson
                         : DistributionFamily::none;
  SimulatedFault fault;
  fault.params = params;
  fault.snapshot = Snapshot(schema.attributes(), measure, rows);
  fault.ground_truth = std::move(causes);
  return fault;
}

/// Simulates one fault over `base`:
///  1. relative Gaussian noise on every leaf;
///  2. n_element cuboids drawn with replacement from layer cuboid_layer;
///  3. n_element distinct observed combinations per cuboid;
///  4. per cuboid a magnitude d, descended leaves scaled so the slice's
///     deviation score is d (success rate: the rate is scaled and the counts
///     redrawn); where root causes overlap the later one wins;
///  5. extra relative noise on affected leaves.
inline SimulatedFault simulate_fault(const Snapshot& base, const SimulationParams& params, std::mt19937_64& rng) {
  detail::check_base(base, params);
  const auto& schema = base.schema();
  if (params.cuboid_layer > schema.size())
    throw Error("cuboid_layer " + std::to_string(params.cuboid_layer) + " exceeds the " +
                std::to_string(schema.size()) + " available attributes");
  const bool success_rate = params.measure_kind == MeasureKind::success_rate;

  std::vector<Cuboid> layer;
  for (auto& c : cuboids_by_layer(schema))
    if (c.layer() == params.cuboid_layer) layer.push_back(std::move(c));

  const auto magnitudes = detail::draw_magnitudes(params, rng);
  std::set<AttributeCombination> chosen;
  std::vector<RootCause> causes;
  for (std::size_t k = 0; k < params.n_element; ++k) {
    const Cuboid& cuboid = layer[std::uniform_int_distribution<std::size_t>(0, layer.size() - 1)(rng)];
    const auto cells = group_by_cuboid(base, cuboid);
    RootCause rc;
    rc.magnitude = magnitudes[k];
    std::size_t redraws = 0;
    while (rc.combinations.size() < params.n_element) {
      const auto& cell = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
      double mass = 0.0;
      for (auto r : cell.rows) mass += base.real(success_rate ? 1 : 0, r);
      if (!(mass > 0.0) || chosen.count(cell.combination)) {
        if (++redraws > 100) throw Error("could not draw distinct root-cause combinations after 100 redraws");
        continue;
      }
      chosen.insert(cell.combination);
      rc.combinations.push_back(cell.combination.to_named(schema));
    }
    causes.push_back(std::move(rc));
  }
  return inject_fault(base, std::move(causes), params, rng);
}

/// Leaves under any ground-truth combination.
inline LeafSet affected_leaves(const SimulatedFault& fault) {
  LeafSet out(fault.snapshot.leaf_count());
  for (const auto& rc : fault.ground_truth)
    for (const auto& e : rc.combinations) out |= fault.snapshot.leaves_under(e);
  return out;
}

/// Similarity cut for treating two combinations as describing the same slice.
inline constexpr double kSameSliceJaccard = 0.95;

/// Drops faults that cannot be scored fairly:
///  (a) another observed combination covers (nearly) the same leaves as a
///      ground-truth combination (Jaccard >= 0.95);
///  (b) the non-affected leaves, taken together, deviate by more than the
///      knee threshold of their own per-leaf |deviation score|.
inline bool validity_check(const SimulatedFault& fault) {
  const Snapshot& snap = fault.snapshot;
  const auto& schema = snap.schema();
  const auto cuboids = cuboids_by_layer(schema);

  for (const auto& rc : fault.ground_truth)
    for (const auto& named : rc.combinations) {
      const auto truth = AttributeCombination::from_named(schema, named);
      const LeafSet truth_leaves = snap.leaves_under(truth);
      const std::size_t truth_count = truth_leaves.count();
      for (const auto& cuboid : cuboids) {
        std::set<AttributeCombination> seen;
        truth_leaves.for_each([&](std::size_t r) {
          std::vector<AttributeCombination::Binding> b;
          for (auto a : cuboid.attributes) b.emplace_back(a, snap.code(r, a));
          seen.emplace(std::move(b));
        });
        for (const auto& e : seen) {
          if (e == truth) continue;
          const LeafSet other = snap.leaves_under(e);
          const std::size_t inter = (other & truth_leaves).count();
          const std::size_t uni = other.count() + truth_count - inter;
          if (uni > 0 && static_cast<double>(inter) / static_cast<double>(uni) >= kSameSliceJaccard) return false;
        }
      }
    }

  LeafSet normal = LeafSet::all(snap.leaf_count());
  affected_leaves(fault).for_each([&](std::size_t r) { normal.erase(r); });
  if (normal.empty()) return true;
  std::vector<double> scores;
  normal.for_each([&](std::size_t r) {
    const double v = snap.leaf_real(r), f = snap.leaf_forecast(r);
    if (v + f > 0.0) scores.push_back(std::abs(gre::deviation_score(v, f)));
  });
  if (scores.empty()) return true;
  const double threshold = knee_threshold(scores).threshold;
  ValuePair total;
  try {
    total = snap.aggregate(normal);
  } catch (const DomainError&) {
    return true;
  }
  if (!(total.real + total.forecast > 0.0)) return true;
  return std::abs(gre::deviation_score(total.real, total.forecast)) <= threshold;
}

/// Re-aggregates a fault over the attributes that are kept, emulating root
/// causes in attributes the analysis cannot see. Root causes touching a
/// removed attribute are dropped from the truth and mark the fault external.
inline SimulatedFault eliminate_attributes(const SimulatedFault& fault, const std::vector<std::string>& removed) {
  const Snapshot& snap = fault.snapshot;
  const auto& schema = snap.schema();
  std::vector<std::size_t> kept;
  std::vector<std::string> kept_names;
  for (std::size_t a = 0; a < schema.size(); ++a)
    if (std::find(removed.begin(), removed.end(), schema.attribute(a)) == removed.end()) {
      kept.push_back(a);
      kept_names.push_back(schema.attribute(a));
    }
  if (kept.empty()) throw Error("cannot eliminate every attribute");
  for (const auto& name : removed)
    if (!schema.attribute_index(name)) throw Error("unknown attribute '" + name + "'");

  std::map<std::vector<std::string>, LeafRow> merged;
  for (std::size_t r = 0; r < snap.leaf_count(); ++r) {
    std::vector<std::string> key;
    for (auto a : kept) key.push_back(schema.value(a, snap.code(r, a)));
    auto [it, fresh] = merged.try_emplace(key);
    auto& row = it->second;
    if (fresh) {
      row.values = key;
      row.real.assign(snap.column_count(), 0.0);
      row.forecast.assign(snap.column_count(), 0.0);
    }
    for (std::size_t c = 0; c < snap.column_count(); ++c) {
      row.real[c] += snap.real(c, r);
      row.forecast[c] += snap.forecast(c, r);
    }
  }
  std::vector<LeafRow> rows;
  for (auto& [k, row] : merged) rows.push_back(std::move(row));

  SimulatedFault out;
  out.params = fault.params;
  out.snapshot = Snapshot(kept_names, snap.measure(), rows);
  out.eliminated_attributes = fault.eliminated_attributes;
  out.eliminated_attributes.insert(out.eliminated_attributes.end(), removed.begin(), removed.end());
  out.external = fault.external;
  for (const auto& rc : fault.ground_truth) {
    bool uses_removed = false;
    for (const auto& e : rc.combinations)
      for (const auto& [attr, value] : e)
        if (std::find(removed.begin(), removed.end(), attr) != removed.end()) uses_removed = true;
    if (uses_removed) {
      out.external = true;
    } else {
      out.ground_truth.push_back(rc);
    }
  }
  return out;
}

/// Shape of a synthetic base snapshot: every attribute has `values` values,
/// each full combination is observed with probability `density`, and counts
/// are Poisson around a log-normal rate with median `median_count`.
struct SyntheticBaseSpec {
  std::size_t attributes = 4;
  std::size_t values = 10;
  double density = 1.0;
  double median_count = 100.0;
  double count_spread = 1.0;  // sigma of log rate
  bool success_rate = false;
  std::uint64_t seed = 1;

  /// "attrs=4,values=10,density=1,median=100,spread=1,seed=1,rate=0"
  static SyntheticBaseSpec parse(std::string_view text) {
    SyntheticBaseSpec s;
    while (!text.empty()) {
      const auto comma = text.find(',');
      const auto item = text.substr(0, comma);
      text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw Error("expected key=value in synthetic spec, got '" + std::string(item) + "'");
      const auto key = item.substr(0, eq);
      const auto num = csv::to_double(item.substr(eq + 1));
      if (!num) throw Error("non-numeric value for '" + std::string(key) + "'");
      if (key == "attrs") s.attributes = static_cast<std::size_t>(*num);
      else if (key == "values") s.values = static_cast<std::size_t>(*num);
      else if (key == "density") s.density = *num;
      else if (key == "median") s.median_count = *num;
      else if (key == "spread") s.count_spread = *num;
      else if (key == "seed") s.seed = static_cast<std::uint64_t>(*num);
      else if (key == "rate") s.success_rate = *num != 0.0;
      else throw Error("unknown synthetic spec key '" + std::string(key) + "'");
    }
    if (s.attributes < 1 || s.attributes > 8 || s.values < 1) throw Error("synthetic base needs 1-8 attributes and >= 1 value");
    if (!(s.density > 0.0 && s.density <= 1.0)) throw Error("density must lie in (0, 1]");
    return s;
  }
};

inline Snapshot synthetic_base(const SyntheticBaseSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0x5eed));
  std::vector<std::string> attrs;
  for (std::size_t a = 0; a < spec.attributes; ++a) attrs.push_back(std::string(1, static_cast<char>('A' + a)));
  std::size_t total = 1;
  for (std::size_t a = 0; a < spec.attributes; ++a) total *= spec.values;

  std::bernoulli_distribution observed(spec.density);
  std::normal_distribution<double> log_rate(std::log(spec.median_count), spec.count_spread);
  std::uniform_real_distribution<double> success(0.9, 1.0);
  std::vector<LeafRow> rows;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const bool keep = observed(rng);
    const double rate = std::exp(log_rate(rng));
    const double count = static_cast<double>(std::poisson_distribution<long long>(rate)(rng));
    const double p = success(rng);
    if (!keep || count <= 0.0) continue;
    LeafRow row;
    std::size_t rest = idx;
    for (std::size_t a = 0; a < spec.attributes; ++a) {
      row.values.push_back(attrs[a] + std::to_string(rest % spec.values));
      rest /= spec.values;
    }
    if (spec.success_rate) {
      const double succ = static_cast<double>(std::binomial_distribution<long long>(static_cast<long long>(count), p)(rng));
      row.real = {succ, count};
      row.forecast = {succ, count};
    } else {
      row.real = {count};
      row.forecast = {count};
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error("synthetic base came out empty");
  const MeasureSpec measure = spec.success_rate ? MeasureSpec::quotient("succ", "total") : MeasureSpec::fundamental();
  return Snapshot(attrs, measure, rows);
}

/// Parses a grid of (n_element, cuboid_layer) cells: "all" (1-3 x 1-3) or a
/// comma list of "NxL" items where either side is a number, a range "a-b"
/// or "*" (1-3). "×" is accepted in place of "x".
inline std::vector<std::pair<std::size_t, std::size_t>> parse_grid(std::string_view text) {
  std::string spec(text);
  for (std::size_t pos; (pos = spec.find("\u00d7")) != std::string::npos;) spec.replace(pos, 2, "x");
  if (spec == "all") spec = "*x*";
  auto side = [&](std::string_view part) -> std::pair<std::size_t, std::size_t> {
    if (part == "*") return {1, 3};
    const auto dash = part.find('-');
    const auto lo = csv::to_double(part.substr(0, dash));
    const auto hi = dash == std::string_view::npos ? lo : csv::to_double(part.substr(dash + 1));
    if (!lo || !hi || *lo < 1 || *hi < *lo || *lo != std::floor(*lo) || *hi != std::floor(*hi))
      throw Error("bad grid range '" + std::string(part) + "' in '" + std::string(text) + "'");
    return {static_cast<std::size_t>(*lo), static_cast<std::size_t>(*hi)};
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::string_view rest = spec;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto x = item.find_first_of("xX");
    if (x == std::string_view::npos) throw Error("grid item '" + std::string(item) + "' is not of the form NxL");
    const auto [n_lo, n_hi] = side(item.substr(0, x));
    const auto [l_lo, l_hi] = side(item.substr(x + 1));
    for (auto n = n_lo; n <= n_hi; ++n)
      for (auto l = l_lo; l <= l_hi; ++l)
        if (std::find(out.begin(), out.end(), std::pair{n, l}) == out.end()) out.emplace_back(n, l);
  }
  if (out.empty()) throw Error("empty grid");
  return out;
}

/// Accepted faults for one parameter cell.
struct CellResult {
  SimulationParams params;
  std::vector<SimulatedFault> faults;
  std::size_t attempts = 0;
};

/// Draws valid faults until `per_cell` are accepted for every cell of
/// `grid`. Fault i of cell c is simulated from a seed derived from
/// (params.seed, c, attempt), so results do not depend on evaluation order.
/// Aborts when a cell's acceptance rate drops below 1% after 100 attempts.
inline std::vector<SimulatedFault> generate_dataset(const Snapshot& base, std::span<const SimulationParams> grid,
                                                    std::size_t per_cell, std::vector<CellResult>* cells = nullptr) {
  if (per_cell < 1) throw Error("per_cell must be at least 1");
  std::vector<SimulatedFault> out;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const auto& params = grid[c];
    params.validate();
    if (params.cuboid_layer > base.schema().size())
      throw Error("cell (" + std::to_string(params.n_element) + "," + std::to_string(params.cuboid_layer) +
                  ") impossible: base has only " + std::to_string(base.schema().size()) + " attributes");
    CellResult cell{params, {}, 0};
    while (cell.faults.size() < per_cell) {
      std::mt19937_64 rng(derive_seed(params.seed, c, cell.attempts));
      ++cell.attempts;
      SimulatedFault fault;
      bool ok = false;
      try {
        fault = simulate_fault(base, params, rng);
        ok = validity_check(fault);
      } catch (const Error&) {
        ok = false;
      }
      if (ok) cell.faults.push_back(std::move(fault));
      if (cell.attempts >= 100 && static_cast<double>(cell.faults.size()) < 0.01 * static_cast<double>(cell.attempts))
        throw Error("cell (" + std::to_string(params.n_element) + "," + std::to_string(params.cuboid_layer) +
                    "): acceptance rate below 1% (" + std::to_string(cell.faults.size()) + " of " +
                    std::to_string(cell.attempts) + " attempts valid)");
    }
    for (auto& f : cell.faults) out.push_back(f);
    if (cells) cells->push_back(std::move(cell));
  }
  return out;
}

}  // namespace psqueeze::simulate
