#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"

namespace psqueeze::forecast {

/// A leaf is identified by its attribute values in schema order.
using LeafKey = std::vector<std::string>;
using LeafValues = std::map<LeafKey, double>;

/// Moving-average forecast: the mean of each leaf's real values over the
/// last `window` entries of `history` (oldest first). A leaf missing from a
/// time point counts as 0 there.
inline LeafValues ma_forecast(std::span<const LeafValues> history, std::size_t window = 10) {
  if (history.empty()) throw Error("moving-average forecast needs at least one historical snapshot");
  if (window == 0) throw Error("forecast window must be at least 1");
  if (window > history.size())
    throw Error("forecast window " + std::to_string(window) + " exceeds history of " +
                std::to_string(history.size()));
  LeafValues out;
  for (const auto& snap : history.subspan(history.size() - window))
    for (const auto& [leaf, value] : snap) {
      if (value < 0.0) throw Error("negative historical value");
      out[leaf] += value;
    }
  for (auto& [leaf, sum] : out) sum /= static_cast<double>(window);
  return out;
}

inline LeafKey leaf_key(const Snapshot& snapshot, std::size_t row) {
  LeafKey key;
  for (std::size_t a = 0; a < snapshot.schema().size(); ++a)
    key.push_back(snapshot.schema().value(a, snapshot.code(row, a)));
  return key;
}

/// Real values of one fundamental column, keyed by leaf.
inline LeafValues real_values(const Snapshot& snapshot, std::size_t column) {
  LeafValues out;
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r) out.emplace(leaf_key(snapshot, r), snapshot.real(column, r));
  return out;
}

/// Replaces the forecast columns of `current` by moving averages over
/// `history` (oldest first, same attributes and measure). Leaves seen in the
/// history but absent now enter the result with real value 0.
inline Snapshot with_ma_forecast(const Snapshot& current, std::span<const Snapshot> history, std::size_t window = 10) {
  const auto& attrs = current.schema().attributes();
  const std::size_t columns = current.column_count();
  for (const auto& h : history)
    if (h.schema().attributes() != attrs || h.column_count() != columns)
      throw Error("history snapshot has different attributes or value columns");

  std::vector<LeafValues> forecasts;
  for (std::size_t c = 0; c < columns; ++c) {
    std::vector<LeafValues> series;
    for (const auto& h : history) series.push_back(real_values(h, c));
    forecasts.push_back(ma_forecast(series, window));
  }

  std::map<LeafKey, LeafRow> rows;
  for (std::size_t r = 0; r < current.leaf_count(); ++r) {
    auto key = leaf_key(current, r);
    LeafRow row{key, std::vector<double>(columns), std::vector<double>(columns, 0.0)};
    for (std::size_t c = 0; c < columns; ++c) row.real[c] = current.real(c, r);
    rows.emplace(std::move(key), std::move(row));
  }
  for (std::size_t c = 0; c < columns; ++c)
    for (const auto& [key, value] : forecasts[c]) {
      auto it = rows.find(key);
      if (it == rows.end())
        it = rows.emplace(key, LeafRow{key, std::vector<double>(columns, 0.0), std::vector<double>(columns, 0.0)}).first;
      it->second.forecast[c] = value;
    }

  std::vector<LeafRow> flat;
  flat.reserve(rows.size());
  for (auto& [key, row] : rows) flat.push_back(std::move(row));
  return Snapshot(attrs, current.measure(), flat);
}

}  // namespace psqueeze::forecast
