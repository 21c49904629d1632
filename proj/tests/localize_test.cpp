#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "psqueeze/localize.hpp"
#include "fixtures.hpp"

using namespace psqueeze;

namespace {

Cluster cluster_of(std::vector<std::pair<std::size_t, double>> membership) {
  Cluster c;
  std::sort(membership.begin(), membership.end());
  c.membership = std::move(membership);
  return c;
}

Cluster beijing_cluster() { return cluster_of({{0, 1.0}, {1, 1.0}}); }

AttributeCombination combo(const Snapshot& s, NamedCombination named) {
  return AttributeCombination::from_named(s.schema(), named);
}

// Full grid over attributes A, B, C (sizes `dims`) with forecasts drawn from
// `rng`; every leaf starts with v = f.
std::vector<LeafRow> grid_rows(std::vector<int> dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f(50.0, 500.0);
  std::vector<LeafRow> rows;
  std::vector<int> idx(dims.size(), 0);
  while (true) {
    LeafRow row;
    for (std::size_t a = 0; a < dims.size(); ++a) row.values.push_back(std::string(1, 'a' + a) + std::to_string(idx[a]));
    const double fv = f(rng);
    row.real = {fv};
    row.forecast = {fv};
    rows.push_back(row);
    std::size_t a = 0;
    while (a < dims.size() && ++idx[a] == dims[a]) idx[a++] = 0;
    if (a == dims.size()) break;
  }
  return rows;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t a = 0; a < n; ++a) out.push_back(std::string(1, 'A' + a));
  return out;
}

bool matches(const LeafRow& row, const NamedCombination& e) {
  for (const auto& [attr, value] : e)
    if (row.values[attr[0] - 'A'] != value) return false;
  return true;
}

// Moves every leaf under `e` onto deviation score d exactly.
void plant(std::vector<LeafRow>& rows, const NamedCombination& e, double d) {
  for (auto& row : rows)
    if (matches(row, e)) row.real[0] = gre::expected_abnormal_value(row.forecast[0], d);
}

Snapshot build(std::vector<LeafRow> rows, std::size_t attrs) {
  return Snapshot(names(attrs), MeasureSpec::fundamental("", DistributionFamily::none), rows);
}

std::vector<NamedCombination> named(const LocalizationReport& r, const Snapshot& s) {
  std::vector<NamedCombination> out;
  for (const auto& e : r.root_causes) out.push_back(e.to_named(s.schema()));
  return out;
}

}  // namespace

// ---- descended ratio ---------------------------------------------------------

TEST(DescendedRatio, ProvinceIsp) {
  const auto s = fixtures::province_isp();
  EXPECT_DOUBLE_EQ(descended_ratio(combo(s, {{"Province", "Beijing"}}), beijing_cluster(), s), 1.0);
  EXPECT_DOUBLE_EQ(descended_ratio(combo(s, {{"Province", "Shanghai"}}), beijing_cluster(), s), 0.0);
  // China Mobile has rows 0, 3 and 8; only row 0 is a member.
  EXPECT_DOUBLE_EQ(descended_ratio(combo(s, {{"ISP", "China Mobile"}}), beijing_cluster(), s), 1.0 / 3.0);
}

TEST(DescendedRatio, FractionalMembership) {
  std::vector<LeafRow> rows{{{"x", "1"}, {5}, {5}}, {{"x", "2"}, {5}, {5}}, {{"x", "3"}, {5}, {5}}, {{"y", "1"}, {5}, {5}}};
  const Snapshot s({"A", "B"}, MeasureSpec::fundamental(), rows);
  const auto c = cluster_of({{0, 0.5}, {1, 0.5}, {3, 1.0}});
  EXPECT_DOUBLE_EQ(descended_ratio(combo(s, {{"A", "x"}}), c, s), 0.5);
}

// ---- GPS -----------------------------------------------------------------------

TEST(Gps, ProvinceIspBeijing) {
  const auto s = fixtures::province_isp();
  const std::vector<AttributeCombination> beijing{combo(s, {{"Province", "Beijing"}})};
  EXPECT_NEAR(gps(beijing, beijing_cluster(), {}, s), 0.743, 0.001);
}

TEST(Gps, ProvinceIspOracle) {
  // Direct evaluation: a = f (1 - d) / (1 + d) with d = 1/3 gives a = f / 2.
  const double near = (std::abs(5 - 5.0) + std::abs(10 - 10.0)) / 2;
  const double far = (std::abs(5 - 10.0) + std::abs(10 - 20.0)) / 2;
  const double rest = (1 + 0.2 + 0 + 10 + 2 + 3 + 2) / 7.0;
  const auto s = fixtures::province_isp();
  const std::vector<AttributeCombination> beijing{combo(s, {{"Province", "Beijing"}})};
  EXPECT_NEAR(gps(beijing, beijing_cluster(), {}, s), 1 - (near + rest) / (far + rest), 1e-12);
}

TEST(Gps, ExactGreSliceScoresOne) {
  std::mt19937_64 rng(1);
  auto rows = grid_rows({4, 3}, rng);
  plant(rows, {{"A", "a1"}}, 0.4);
  const auto s = build(rows, 2);
  const std::vector<AttributeCombination> e{combo(s, {{"A", "a1"}})};
  EXPECT_DOUBLE_EQ(gps(e, cluster_of({{3, 1}, {4, 1}, {5, 1}}), {}, s), 1.0);
}

TEST(Gps, NoDeviationAnywhereScoresZero) {
  std::mt19937_64 rng(2);
  const auto s = build(grid_rows({3, 3}, rng), 2);
  const auto all = combinations_in_cuboid(s, cuboids_by_layer(s.schema())[0]);
  EXPECT_DOUBLE_EQ(gps(all, cluster_of({{0, 1}}), {}, s), 0.0);
}

TEST(Gps, Errors) {
  const auto s = fixtures::province_isp();
  EXPECT_THROW(gps(std::vector<AttributeCombination>{}, beijing_cluster(), {}, s), Error);
  const std::vector<AttributeCombination> empty{combo(s, {{"Province", "Zhejiang"}, {"ISP", "China Mobile"}})};
  EXPECT_THROW(gps(empty, beijing_cluster(), {}, s), Error);
}

class RandomSnapshot : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(RandomSnapshot, GpsAtMostOneAndScaleInvariant) {
  std::mt19937_64 rng(GetParam());
  auto rows = grid_rows({5, 4}, rng);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& row : rows) row.real[0] = std::max(0.0, row.forecast[0] * (1.0 + noise(rng)));
  const auto s = build(rows, 2);
  for (auto& row : rows) row.real[0] *= 3.7, row.forecast[0] *= 3.7;
  const auto scaled = build(rows, 2);

  std::uniform_int_distribution<std::size_t> leaf(0, s.leaf_count() - 1);
  const auto cluster = cluster_of({{leaf(rng), 1.0}});
  for (const auto& cuboid : cuboids_by_layer(s.schema())) {
    const auto combos = combinations_in_cuboid(s, cuboid);
    for (std::size_t k = 1; k <= combos.size(); ++k) {
      const std::span<const AttributeCombination> prefix(combos.data(), k);
      const double g = gps(prefix, cluster, {}, s);
      EXPECT_LE(g, 1.0);
      EXPECT_NEAR(gps(prefix, cluster, {}, scaled), g, 1e-9);
    }
    const auto a = search_cuboid(cuboid, cluster, s);
    const auto b = search_cuboid(cuboid, cluster, scaled);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_EQ(a->combinations, b->combinations);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomSnapshot, ::testing::Range<std::uint64_t>(0, 20));

// ---- interpretability and weight -----------------------------------------------

TEST(Interpretability, Examples) {
  const auto s = fixtures::province_isp();
  const std::vector<AttributeCombination> one{combo(s, {{"Province", "Beijing"}})};
  EXPECT_DOUBLE_EQ(interpretability(one), 1.0);
  const std::vector<AttributeCombination> two{combo(s, {{"Province", "Beijing"}, {"ISP", "China Unicom"}}),
                                              combo(s, {{"Province", "Beijing"}, {"ISP", "China Mobile"}})};
  EXPECT_DOUBLE_EQ(interpretability(two), 8.0);
  EXPECT_DOUBLE_EQ(interpretability(std::vector<AttributeCombination>{}), 0.0);
}

TEST(TradeoffWeight, Examples) {
  EXPECT_NEAR(tradeoff_weight(1, 2, std::exp(-1.0)), std::log(2.0) * 2 / std::log(3.0), 1e-12);
  EXPECT_NEAR(tradeoff_weight(1, 2, std::exp(-1.0)), 1.2619, 1e-4);
  EXPECT_NEAR(tradeoff_weight(3, 4, 0.5), std::log(4.0) / 3 * 4 / std::log(5.0) * std::log(2.0), 1e-12);
  EXPECT_NEAR(tradeoff_weight(3, 4, 0.5), 0.7961, 1e-4);
  const double at_one = tradeoff_weight(1, 2, 1.0);
  EXPECT_GT(at_one, 0.0);
  EXPECT_LT(at_one, 1e-6);
  EXPECT_THROW(tradeoff_weight(0, 2, 0.5), Error);
  EXPECT_THROW(tradeoff_weight(1, 2, 0.0), Error);
}

// ---- search --------------------------------------------------------------------

TEST(SearchCuboid, ProvinceIspProvince) {
  const auto s = fixtures::province_isp();
  const Cuboid province{{static_cast<std::uint32_t>(*s.schema().attribute_index("Province"))}};
  const auto cand = search_cuboid(province, beijing_cluster(), s);
  ASSERT_TRUE(cand);
  ASSERT_EQ(cand->combinations.size(), 1u);
  EXPECT_EQ(cand->combinations[0].to_named(s.schema()), (NamedCombination{{"Province", "Beijing"}}));
  EXPECT_NEAR(cand->gps, 0.743, 0.001);
}

TEST(SearchCuboid, SingleCombinationCuboid) {
  std::vector<LeafRow> rows{{{"only", "p"}, {5}, {10}}, {{"only", "q"}, {20}, {20}}};
  const auto s = build(rows, 2);
  const auto cand = search_cuboid(cuboids_by_layer(s.schema())[0], cluster_of({{0, 1}}), s);
  ASSERT_TRUE(cand);
  EXPECT_EQ(cand->combinations, (std::vector<AttributeCombination>{combo(s, {{"A", "only"}})}));
}

TEST(SearchCuboid, NothingPositiveIsEmpty) {
  const auto s = fixtures::province_isp();
  EXPECT_FALSE(search_cuboid(cuboids_by_layer(s.schema())[0], cluster_of({}), s));
}

// Planted prefix on a cuboid with <= 6 combinations: the search must reach
// the best GPS over every non-empty subset.
TEST(SearchCuboid, MatchesExhaustiveSubsets) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    auto rows = grid_rows({6, 5}, rng);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& row : rows) row.real[0] = row.forecast[0] * (1.0 + noise(rng));
    std::vector<int> values{0, 1, 2, 3, 4, 5};
    std::shuffle(values.begin(), values.end(), rng);
    const int planted = 1 + static_cast<int>(rng() % 3);
    std::vector<std::pair<std::size_t, double>> members;
    for (int k = 0; k < planted; ++k) plant(rows, {{"A", "a" + std::to_string(values[k])}}, 0.5);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int k = 0; k < planted; ++k)
        if (rows[r].values[0] == "a" + std::to_string(values[k])) members.emplace_back(r, 1.0);
    const auto s = build(rows, 2);
    const auto cluster = cluster_of(members);
    const auto cuboid = cuboids_by_layer(s.schema())[0];
    const auto combos = combinations_in_cuboid(s, cuboid);
    ASSERT_EQ(combos.size(), 6u);

    double best = -1e300;
    for (unsigned mask = 1; mask < 64; ++mask) {
      std::vector<AttributeCombination> subset;
      for (unsigned i = 0; i < 6; ++i)
        if (mask >> i & 1) subset.push_back(combos[i]);
      best = std::max(best, gps(subset, cluster, {}, s));
    }
    const auto cand = search_cuboid(cuboid, cluster, s);
    ASSERT_TRUE(cand);
    EXPECT_GE(cand->gps, best - 1e-9) << seed;
    EXPECT_EQ(cand->combinations.size(), static_cast<std::size_t>(planted)) << seed;
  }
}

// ---- localization ----------------------------------------------------------------

TEST(Localize, ProvinceIsp) {
  const auto s = fixtures::province_isp();
  const auto report = localize(s);
  ASSERT_EQ(report.per_cluster.size(), 1u);
  EXPECT_EQ(named(report, s), (std::vector<NamedCombination>{{{"Province", "Beijing"}}}));
  ASSERT_TRUE(report.min_gps);
  EXPECT_NEAR(*report.min_gps, 0.743, 0.001);
  EXPECT_TRUE(report.external_root_cause);  // 0.743 < 0.8

  LocalizeConfig cfg;
  cfg.delta_exrc = 0.7;
  EXPECT_FALSE(localize(s, cfg).external_root_cause);
}

TEST(Localize, PlantedLayerOne) {
  std::mt19937_64 rng(4);
  auto rows = grid_rows({6, 5, 4}, rng);
  plant(rows, {{"A", "a2"}}, 0.5);
  const auto s = build(rows, 3);
  const auto report = localize(s);
  EXPECT_EQ(named(report, s), (std::vector<NamedCombination>{{{"A", "a2"}}}));
  ASSERT_EQ(report.per_cluster.size(), 1u);
  EXPECT_DOUBLE_EQ(report.per_cluster[0].gps(), 1.0);
  EXPECT_FALSE(report.external_root_cause);

  // With early stopping disabled the answer does not change.
  LocalizeConfig exhaustive;
  exhaustive.delta = 1.5;
  EXPECT_EQ(named(localize(s, exhaustive), s), named(report, s));
}

TEST(Localize, PlantedLayerTwo) {
  std::mt19937_64 rng(5);
  auto rows = grid_rows({6, 5, 4}, rng);
  plant(rows, {{"A", "a1"}, {"C", "c3"}}, -0.4);
  const auto s = build(rows, 3);
  const auto report = localize(s);
  EXPECT_EQ(named(report, s), (std::vector<NamedCombination>{{{"A", "a1"}, {"C", "c3"}}}));
  LocalizeConfig exhaustive;
  exhaustive.delta = 1.5;
  EXPECT_EQ(named(localize(s, exhaustive), s), named(report, s));
}

TEST(Localize, TwoRootCausesTwoClusters) {
  std::mt19937_64 rng(6);
  auto rows = grid_rows({6, 5, 4}, rng);
  plant(rows, {{"B", "b0"}}, 0.6);
  plant(rows, {{"B", "b3"}}, -0.3);
  const auto s = build(rows, 3);
  const auto report = localize(s);
  EXPECT_EQ(report.per_cluster.size(), 2u);
  EXPECT_EQ(named(report, s), (std::vector<NamedCombination>{{{"B", "b0"}}, {{"B", "b3"}}}));
}

TEST(Localize, UniformDeviationPicksLayerOne) {
  std::mt19937_64 rng(7);
  auto rows = grid_rows({3, 3}, rng);
  for (auto& row : rows) row.real[0] = row.forecast[0] / 2;
  const auto s = build(rows, 2);
  const auto report = localize(s);
  ASSERT_EQ(report.per_cluster.size(), 1u);
  ASSERT_TRUE(report.per_cluster[0].root_cause);
  EXPECT_EQ(interpretability(report.per_cluster[0].root_cause->combinations), 3.0);  // a whole layer-1 cuboid
}

TEST(Localize, NoAnomaly) {
  std::mt19937_64 rng(8);
  const auto s = build(grid_rows({4, 4}, rng), 2);
  const auto report = localize(s);
  EXPECT_TRUE(report.no_anomaly);
  EXPECT_TRUE(report.root_causes.empty());
  EXPECT_FALSE(report.external_root_cause);
  EXPECT_FALSE(report.min_gps);
}

TEST(Localize, ExternalWhenRootCauseAttributeIsMissing) {
  // Plant on (A=a1, B=b1) and drop B: the surviving leaves under A=a1 mix
  // moved and unmoved counts, so no combination explains them.
  std::mt19937_64 rng(9);
  auto rows = grid_rows({5, 5, 6}, rng);
  std::uniform_real_distribution<double> log_f(std::log(5.0), std::log(5000.0));
  for (auto& row : rows) row.real[0] = row.forecast[0] = std::exp(log_f(rng));
  plant(rows, {{"A", "a1"}, {"B", "b1"}}, 0.7);
  plant(rows, {{"A", "a3"}, {"B", "b4"}}, 0.7);
  std::map<std::pair<std::string, std::string>, LeafRow> merged;
  for (const auto& row : rows) {
    auto& m = merged[{row.values[0], row.values[2]}];
    if (m.values.empty()) m = LeafRow{{row.values[0], row.values[2]}, {0}, {0}};
    m.real[0] += row.real[0];
    m.forecast[0] += row.forecast[0];
  }
  std::vector<LeafRow> kept;
  for (auto& [k, row] : merged) kept.push_back(row);
  const Snapshot s({"A", "C"}, MeasureSpec::fundamental("", DistributionFamily::none), kept);
  const auto report = localize(s);
  ASSERT_TRUE(report.min_gps);
  EXPECT_TRUE(report.external_root_cause) << *report.min_gps;
}

TEST(Localize, ConfigValidation) {
  const auto s = fixtures::province_isp();
  LocalizeConfig cfg;
  cfg.delta = 0;
  EXPECT_THROW(localize(s, cfg), Error);
  cfg = {};
  cfg.delta_exrc = 1.5;
  EXPECT_THROW(localize(s, cfg), Error);
  cfg = {};
  cfg.max_layer = 0;
  EXPECT_THROW(localize(s, cfg), Error);
}

// ---- external root causes ------------------------------------------------------------

TEST(External, MonotoneInThreshold) {
  for (double g = 0.0; g <= 1.0; g += 0.05) {
    bool flagged = false;
    for (double t = 0.05; t <= 1.0; t += 0.05) {
      const bool now = determine_external(g, t);
      EXPECT_TRUE(!flagged || now) << g << " " << t;
      flagged = now;
    }
  }
  EXPECT_FALSE(determine_external(std::nullopt, 1.0));
}

TEST(ExrcThreshold, TwoGroups) {
  const std::vector<double> h{0.97, 0.98, 0.99, 0.55, 0.60};
  const double t = select_exrc_threshold(h);
  EXPECT_GT(t, 0.60);
  EXPECT_LE(t, 0.97);
}

TEST(ExrcThreshold, TooFewValuesGiveDefault) {
  EXPECT_DOUBLE_EQ(select_exrc_threshold(std::vector<double>{0.1, 0.2, 0.3}), 0.8);
}

TEST(ExrcThreshold, SingleGroup) {
  const std::vector<double> h{0.95, 0.951, 0.949, 0.95, 0.952, 0.948};
  const double t = select_exrc_threshold(h);
  EXPECT_LE(t, 0.95);
  EXPECT_GE(t, 0.0);
}
