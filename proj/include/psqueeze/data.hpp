#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "psqueeze/csv.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/gre.hpp"
#include "psqueeze/leaf_set.hpp"
#include "psqueeze/measure.hpp"

namespace psqueeze {

/// Attribute names in column order and, per attribute, the sorted list of
/// distinct values observed in the data.
class AttributeSchema {
 public:
  AttributeSchema() = default;
  AttributeSchema(std::vector<std::string> attributes, std::vector<std::vector<std::string>> domains)
      : attributes_(std::move(attributes)), domains_(std::move(domains)) {
    if (attributes_.empty()) throw Error("schema needs at least one attribute");
    if (domains_.size() != attributes_.size()) throw Error("schema needs one domain per attribute");
    for (std::size_t a = 0; a < attributes_.size(); ++a) {
      if (!attribute_lookup_.emplace(attributes_[a], a).second)
        throw Error("duplicate attribute '" + attributes_[a] + "'");
      if (domains_[a].empty()) throw Error("attribute '" + attributes_[a] + "' has an empty domain");
      auto& lookup = value_lookup_.emplace_back();
      for (std::size_t v = 0; v < domains_[a].size(); ++v)
        if (!lookup.emplace(domains_[a][v], static_cast<std::uint32_t>(v)).second)
          throw Error("duplicate value '" + domains_[a][v] + "' in domain of '" + attributes_[a] + "'");
    }
  }

  std::size_t size() const noexcept { return attributes_.size(); }
  const std::vector<std::string>& attributes() const noexcept { return attributes_; }
  const std::string& attribute(std::size_t a) const { return attributes_.at(a); }
  const std::vector<std::string>& domain(std::size_t a) const { return domains_.at(a); }
  const std::string& value(std::size_t a, std::uint32_t v) const { return domains_.at(a).at(v); }

  std::optional<std::size_t> attribute_index(std::string_view name) const {
    const auto it = attribute_lookup_.find(std::string(name));
    if (it == attribute_lookup_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::uint32_t> value_index(std::size_t a, std::string_view value) const {
    const auto& lookup = value_lookup_.at(a);
    const auto it = lookup.find(std::string(value));
    if (it == lookup.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> attributes_;
  std::vector<std::vector<std::string>> domains_;
  std::unordered_map<std::string, std::size_t> attribute_lookup_;
  std::vector<std::unordered_map<std::string, std::uint32_t>> value_lookup_;
};

/// Attribute name -> value. The schema-independent form used in files and
/// when comparing results across snapshots.
using NamedCombination = std::map<std::string, std::string>;

/// Sparse assignment of values to a subset of attributes, stored as
/// (attribute index, value index) pairs sorted by attribute index. The empty
/// combination is the root.
class AttributeCombination {
 public:
  using Binding = std::pair<std::uint32_t, std::uint32_t>;

  AttributeCombination() = default;
  explicit AttributeCombination(std::vector<Binding> bindings) : bindings_(std::move(bindings)) {
    std::sort(bindings_.begin(), bindings_.end());
    for (std::size_t i = 1; i < bindings_.size(); ++i)
      if (bindings_[i].first == bindings_[i - 1].first)
        throw Error("attribute combination binds an attribute twice");
  }

  static AttributeCombination root() { return {}; }

  /// Throws on unknown attributes or values.
  static AttributeCombination from_named(const AttributeSchema& schema, const NamedCombination& named) {
    std::vector<Binding> b;
    for (const auto& [attr, value] : named) {
      const auto a = schema.attribute_index(attr);
      if (!a) throw Error("unknown attribute '" + attr + "'");
      const auto v = schema.value_index(*a, value);
      if (!v) throw Error("unknown value '" + value + "' for attribute '" + attr + "'");
      b.emplace_back(static_cast<std::uint32_t>(*a), *v);
    }
    return AttributeCombination(std::move(b));
  }

  const std::vector<Binding>& bindings() const noexcept { return bindings_; }
  std::size_t size() const noexcept { return bindings_.size(); }
  bool is_root() const noexcept { return bindings_.empty(); }

  std::optional<std::uint32_t> value_of(std::uint32_t attribute) const {
    for (const auto& [a, v] : bindings_)
      if (a == attribute) return v;
    return std::nullopt;
  }

  /// True when every binding of `other` is also a binding of this one.
  bool refines(const AttributeCombination& other) const {
    return std::includes(bindings_.begin(), bindings_.end(), other.bindings_.begin(), other.bindings_.end());
  }

  NamedCombination to_named(const AttributeSchema& schema) const {
    NamedCombination out;
    for (const auto& [a, v] : bindings_) out.emplace(schema.attribute(a), schema.value(a, v));
    return out;
  }

  std::string to_string(const AttributeSchema& schema) const {
    if (bindings_.empty()) return "()";
    std::string s = "(";
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
      if (i) s += " & ";
      s += schema.attribute(bindings_[i].first) + "=" + schema.value(bindings_[i].first, bindings_[i].second);
    }
    return s + ")";
  }

  friend auto operator<=>(const AttributeCombination&, const AttributeCombination&) = default;
  friend bool operator==(const AttributeCombination&, const AttributeCombination&) = default;

 private:
  std::vector<Binding> bindings_;
};

/// A set of attributes; its layer is the number of attributes.
struct Cuboid {
  std::vector<std::uint32_t> attributes;  // ascending attribute indices

  std::size_t layer() const noexcept { return attributes.size(); }

  std::string to_string(const AttributeSchema& schema) const {
    std::vector<std::string> names;
    for (auto a : attributes) names.push_back(schema.attribute(a));
    std::sort(names.begin(), names.end());
    std::string s;
    for (const auto& n : names) s += (s.empty() ? "" : "&") + n;
    return s;
  }

  friend bool operator==(const Cuboid&, const Cuboid&) = default;
};

/// Measure-level (real, forecast) pair.
struct ValuePair {
  double real = 0.0;
  double forecast = 0.0;
};

/// One row of input prior to indexing.
struct LeafRow {
  std::vector<std::string> values;  // one per attribute, schema order
  std::vector<double> real;         // one per fundamental column
  std::vector<double> forecast;
};

/// All leaf attribute combinations at one time point. Immutable once built;
/// every query is a const read.
class Snapshot {
 public:
  Snapshot() = default;

  /// Builds the schema from the observed values and indexes the leaves.
  /// `attributes` gives column order; rows hold one value per attribute and
  /// one real/forecast entry per operand column of `measure`.
  Snapshot(std::vector<std::string> attributes, MeasureSpec measure, std::span<const LeafRow> rows)
      : measure_(std::move(measure)) {
    measure_.validate();
    if (rows.empty()) throw ParseError(0, "no leaves");
    const std::size_t n = attributes.size();
    const std::size_t columns = measure_.operands.size();

    std::vector<std::set<std::string>> seen(n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].values.size() != n) throw ParseError(r + 1, "wrong number of attribute values");
      if (rows[r].real.size() != columns || rows[r].forecast.size() != columns)
        throw ParseError(r + 1, "wrong number of value columns");
      for (std::size_t a = 0; a < n; ++a) seen[a].insert(rows[r].values[a]);
    }
    std::vector<std::vector<std::string>> domains;
    for (auto& s : seen) domains.emplace_back(s.begin(), s.end());
    schema_ = AttributeSchema(std::move(attributes), std::move(domains));

    codes_.resize(rows.size() * n);
    real_.assign(columns, std::vector<double>(rows.size()));
    forecast_.assign(columns, std::vector<double>(rows.size()));
    std::set<std::vector<std::uint32_t>> unique_leaves;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<std::uint32_t> key(n);
      for (std::size_t a = 0; a < n; ++a) key[a] = codes_[r * n + a] = *schema_.value_index(a, rows[r].values[a]);
      if (!unique_leaves.insert(std::move(key)).second) throw ParseError(r + 1, "duplicate leaf");
      for (std::size_t c = 0; c < columns; ++c) {
        const double v = rows[r].real[c];
        const double f = rows[r].forecast[c];
        if (!std::isfinite(v) || !std::isfinite(f)) throw ParseError(r + 1, "non-finite value");
        if (v < 0.0 || f < 0.0) throw ParseError(r + 1, "negative value");
        if (measure_.family == DistributionFamily::poisson && v != std::floor(v))
          throw ParseError(r + 1, "poisson family requires integer real values");
        real_[c][r] = v;
        forecast_[c][r] = f;
      }
    }

    leaf_real_.resize(rows.size());
    leaf_forecast_.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      leaf_real_[r] = compose_leaf(real_, r);
      leaf_forecast_[r] = compose_leaf(forecast_, r);
    }

    index_.resize(n);
    for (std::size_t a = 0; a < n; ++a) index_[a].assign(schema_.domain(a).size(), LeafSet(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t a = 0; a < n; ++a) index_[a][codes_[r * n + a]].insert(r);
  }

  const AttributeSchema& schema() const noexcept { return schema_; }
  const MeasureSpec& measure() const noexcept { return measure_; }
  std::size_t leaf_count() const noexcept { return leaf_real_.size(); }
  std::size_t column_count() const noexcept { return real_.size(); }

  std::uint32_t code(std::size_t row, std::size_t attribute) const { return codes_[row * schema_.size() + attribute]; }

  AttributeCombination leaf(std::size_t row) const {
    std::vector<AttributeCombination::Binding> b;
    for (std::size_t a = 0; a < schema_.size(); ++a) b.emplace_back(static_cast<std::uint32_t>(a), code(row, a));
    return AttributeCombination(std::move(b));
  }

  /// Fundamental column values.
  double real(std::size_t column, std::size_t row) const { return real_[column][row]; }
  double forecast(std::size_t column, std::size_t row) const { return forecast_[column][row]; }
  std::span<const double> real_column(std::size_t column) const { return real_[column]; }
  std::span<const double> forecast_column(std::size_t column) const { return forecast_[column]; }

  /// Measure-level leaf values. A derived leaf whose quotient denominator is
  /// zero has no data and reads as 0.
  double leaf_real(std::size_t row) const { return leaf_real_[row]; }
  double leaf_forecast(std::size_t row) const { return leaf_forecast_[row]; }
  std::span<const double> leaf_reals() const noexcept { return leaf_real_; }
  std::span<const double> leaf_forecasts() const noexcept { return leaf_forecast_; }

  /// Rows whose bindings include every binding of `e`.
  LeafSet leaves_under(const AttributeCombination& e) const {
    if (e.is_root()) return LeafSet::all(leaf_count());
    std::optional<LeafSet> out;
    for (const auto& [a, v] : e.bindings()) {
      if (a >= index_.size() || v >= index_[a].size()) throw Error("attribute combination outside schema");
      if (!out) {
        out = index_[a][v];
      } else {
        *out &= index_[a][v];
      }
    }
    return *out;
  }

  /// Named lookup. Unknown attributes are an error; a value never observed
  /// for a known attribute simply matches no leaf.
  LeafSet leaves_under(const NamedCombination& e) const {
    std::vector<AttributeCombination::Binding> b;
    for (const auto& [attr, value] : e) {
      const auto a = schema_.attribute_index(attr);
      if (!a) throw Error("unknown attribute '" + attr + "'");
      const auto v = schema_.value_index(*a, value);
      if (!v) return LeafSet(leaf_count());
      b.emplace_back(static_cast<std::uint32_t>(*a), *v);
    }
    return leaves_under(AttributeCombination(std::move(b)));
  }

  LeafSet leaves_under(std::span<const AttributeCombination> s) const {
    LeafSet out(leaf_count());
    for (const auto& e : s) out |= leaves_under(e);
    return out;
  }

  /// Per-column sums over `leaves`.
  std::vector<ValuePair> column_sums(const LeafSet& leaves) const {
    std::vector<ValuePair> sums(column_count());
    leaves.for_each([&](std::size_t r) {
      for (std::size_t c = 0; c < column_count(); ++c) {
        sums[c].real += real_[c][r];
        sums[c].forecast += forecast_[c][r];
      }
    });
    return sums;
  }

  /// Applies the measure's composition to fundamental sums.
  ValuePair compose(std::span<const ValuePair> sums) const {
    if (!measure_.derived()) return sums[0];
    return {gre::derived_value(measure_, {sums[0].real, sums[1].real}),
            gre::derived_value(measure_, {sums[0].forecast, sums[1].forecast})};
  }

  /// (v, f) of a set of leaves; each leaf counted once.
  ValuePair aggregate(const LeafSet& leaves) const { return compose(column_sums(leaves)); }

 private:
  double compose_leaf(const std::vector<std::vector<double>>& cols, std::size_t r) const {
    if (!measure_.derived()) return cols[0][r];
    if (measure_.kind == MeasureKind::quotient && cols[1][r] == 0.0) return 0.0;
    return gre::derived_value(measure_, {cols[0][r], cols[1][r]});
  }

  AttributeSchema schema_;
  MeasureSpec measure_;
  std::vector<std::uint32_t> codes_;
  std::vector<std::vector<double>> real_;
  std::vector<std::vector<double>> forecast_;
  std::vector<double> leaf_real_;
  std::vector<double> leaf_forecast_;
  std::vector<std::vector<LeafSet>> index_;  // [attribute][value] -> rows
};

inline LeafSet leaves_under(const Snapshot& snapshot, const AttributeCombination& e) {
  return snapshot.leaves_under(e);
}

/// (v, f) of the union of the slices in `s`. Throws DomainError when a
/// quotient's denominator sums to zero.
inline ValuePair aggregate(const Snapshot& snapshot, std::span<const AttributeCombination> s) {
  if (s.empty()) throw Error("aggregate needs a non-empty set of combinations");
  return snapshot.aggregate(snapshot.leaves_under(s));
}

namespace detail {

inline std::string value_column(std::string_view prefix, const std::string& operand) {
  return operand.empty() ? std::string(prefix) : std::string(prefix) + "_" + operand;
}

}  // namespace detail

/// Reads a snapshot CSV: one column per attribute plus `real_<F>` and
/// `predict_<F>` per operand column F (`real`/`predict` for an unnamed
/// fundamental measure).
inline Snapshot parse_snapshot(std::string_view csv_text, const MeasureSpec& measure) {
  measure.validate();
  const auto records = csv::read(csv_text);
  if (records.empty()) throw ParseError(0, "missing header");
  std::vector<std::string> header;
  for (const auto& h : records.front()) header.push_back(csv::trim(h));

  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> real_cols, forecast_cols;
  for (const auto& op : measure.operands) {
    auto rc = find_column(detail::value_column("real", op));
    auto pc = find_column(detail::value_column("predict", op));
    if (!measure.derived() && !op.empty() && !rc && !pc) {
      rc = find_column("real");
      pc = find_column("predict");
    }
    if (!rc) throw ParseError(0, "missing column '" + detail::value_column("real", op) + "'");
    if (!pc) throw ParseError(0, "missing column '" + detail::value_column("predict", op) + "'");
    real_cols.push_back(*rc);
    forecast_cols.push_back(*pc);
  }

  std::vector<std::size_t> attr_cols;
  std::vector<std::string> attributes;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "real" || header[i] == "predict" || header[i].starts_with("real_") ||
        header[i].starts_with("predict_"))
      continue;
    if (header[i].empty()) throw ParseError(0, "empty column name");
    attr_cols.push_back(i);
    attributes.push_back(header[i]);
  }
  if (attributes.empty()) throw ParseError(0, "no attribute columns");

  std::vector<LeafRow> rows;
  rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size())
      throw ParseError(r, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(rec.size()));
    LeafRow row;
    for (auto c : attr_cols) row.values.push_back(csv::trim(rec[c]));
    auto number = [&](std::size_t c) {
      const auto v = csv::to_double(rec[c]);
      if (!v) throw ParseError(r, "non-numeric value '" + rec[c] + "' in column '" + header[c] + "'");
      if (*v < 0.0) throw ParseError(r, "negative value in column '" + header[c] + "'");
      return *v;
    };
    for (std::size_t k = 0; k < real_cols.size(); ++k) {
      row.real.push_back(number(real_cols[k]));
      row.forecast.push_back(number(forecast_cols[k]));
    }
    rows.push_back(std::move(row));
  }
  return Snapshot(std::move(attributes), measure, rows);
}

/// Inverse of parse_snapshot (values printed with round-trip precision).
inline std::string write_snapshot(const Snapshot& snapshot) {
  const auto& schema = snapshot.schema();
  const auto& ops = snapshot.measure().operands;
  std::string out;
  for (std::size_t a = 0; a < schema.size(); ++a) out += (a ? "," : "") + csv::quote(schema.attribute(a));
  for (const auto& op : ops)
    out += "," + detail::value_column("real", op) + "," + detail::value_column("predict", op);
  out += '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r) {
    for (std::size_t a = 0; a < schema.size(); ++a)
      out += (a ? "," : "") + csv::quote(schema.value(a, snapshot.code(r, a)));
    for (std::size_t c = 0; c < ops.size(); ++c)
      out += "," + num(snapshot.real(c, r)) + "," + num(snapshot.forecast(c, r));
    out += '\n';
  }
  return out;
}

/// Every non-empty attribute subset, ordered by layer and, within a layer,
/// lexicographically by the sorted attribute names.
inline std::vector<Cuboid> cuboids_by_layer(const AttributeSchema& schema) {
  const std::size_t n = schema.size();
  std::vector<std::pair<std::vector<std::string>, Cuboid>> keyed;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    Cuboid c;
    std::vector<std::string> names;
    for (std::size_t a = 0; a < n; ++a)
      if (mask >> a & 1U) {
        c.attributes.push_back(static_cast<std::uint32_t>(a));
        names.push_back(schema.attribute(a));
      }
    std::sort(names.begin(), names.end());
    keyed.emplace_back(std::move(names), std::move(c));
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
    if (x.first.size() != y.first.size()) return x.first.size() < y.first.size();
    return x.first < y.first;
  });
  std::vector<Cuboid> out;
  for (auto& k : keyed) out.push_back(std::move(k.second));
  return out;
}

/// An observed combination of a cuboid together with its descended rows.
struct CuboidCell {
  AttributeCombination combination;
  std::vector<std::uint32_t> rows;
};

/// Projects every leaf onto the cuboid's attributes; one cell per distinct
/// projection, sorted by combination.
inline std::vector<CuboidCell> group_by_cuboid(const Snapshot& snapshot, const Cuboid& cuboid) {
  const auto& attrs = cuboid.attributes;
  const auto& schema = snapshot.schema();
  // Mixed-radix key over the cuboid's attributes; ordering of keys matches
  // lexicographic ordering of the value codes.
  std::vector<std::uint64_t> radix(attrs.size());
  std::uint64_t span = 1;
  for (std::size_t i = attrs.size(); i-- > 0;) {
    radix[i] = span;
    const std::uint64_t m = schema.domain(attrs[i]).size();
    if (span > UINT64_MAX / m) throw Error("cuboid too large to index");
    span *= m;
  }
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(snapshot.leaf_count());
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r) {
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < attrs.size(); ++i) key += radix[i] * snapshot.code(r, attrs[i]);
    keyed[r] = {key, static_cast<std::uint32_t>(r)};
  }
  std::sort(keyed.begin(), keyed.end());

  std::vector<CuboidCell> cells;
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i;
    CuboidCell cell;
    while (j < keyed.size() && keyed[j].first == keyed[i].first) cell.rows.push_back(keyed[j++].second);
    std::vector<AttributeCombination::Binding> b;
    for (auto a : attrs) b.emplace_back(a, snapshot.code(cell.rows.front(), a));
    cell.combination = AttributeCombination(std::move(b));
    cells.push_back(std::move(cell));
    i = j;
  }
  return cells;
}

/// Observed combinations of a cuboid (never one with zero leaves).
inline std::vector<AttributeCombination> combinations_in_cuboid(const Snapshot& snapshot, const Cuboid& cuboid) {
  std::vector<AttributeCombination> out;
  for (auto& cell : group_by_cuboid(snapshot, cuboid)) out.push_back(std::move(cell.combination));
  return out;
}

}  // namespace psqueeze
