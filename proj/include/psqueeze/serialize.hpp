#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/localize.hpp"
#include "psqueeze/simulate.hpp"

// JSON and on-disk layouts shared by the CLI and the benchmark harness.
namespace psqueeze::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("short write to " + path.string());
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(what + ": " + e.what());
  }
}

/// [{"attr": ..., "value": ...}, ...] in binding order.
inline json combination_json(const NamedCombination& e) {
  json out = json::array();
  for (const auto& [attr, value] : e) out.push_back({{"attr", attr}, {"value", value}});
  return out;
}

inline NamedCombination combination_from_json(const json& j) {
  if (!j.is_array()) throw Error("attribute combination must be a list of {attr, value} objects");
  NamedCombination out;
  for (const auto& b : j) {
    if (!b.is_object() || !b.contains("attr") || !b.contains("value") || !b["attr"].is_string() ||
        !b["value"].is_string())
      throw Error("attribute binding must be {\"attr\": string, \"value\": string}");
    if (!out.emplace(b["attr"].get<std::string>(), b["value"].get<std::string>()).second)
      throw Error("attribute '" + b["attr"].get<std::string>() + "' bound twice");
  }
  return out;
}

inline json combinations_json(const std::vector<AttributeCombination>& s, const AttributeSchema& schema) {
  json out = json::array();
  for (const auto& e : s) out.push_back(combination_json(e.to_named(schema)));
  return out;
}

inline json report_json(const LocalizationReport& report, const Snapshot& snapshot) {
  const auto& schema = snapshot.schema();
  json clusters = json::array();
  for (const auto& c : report.per_cluster) {
    json item{{"bounds", {c.cluster.lower, c.cluster.upper}},
              {"center", c.cluster.center},
              {"mass", c.cluster.mass()},
              {"gps", c.gps()}};
    item["root_cause"] = c.root_cause ? combinations_json(c.root_cause->combinations, schema) : json::array();
    clusters.push_back(std::move(item));
  }
  json out{{"version", kSchemaVersion},
           {"root_causes", combinations_json(report.root_causes, schema)},
           {"per_cluster", std::move(clusters)},
           {"external_root_cause", report.external_root_cause},
           {"no_anomaly", report.no_anomaly},
           {"knee_threshold", report.knee_threshold},
           {"abnormal_leaves", report.abnormal_leaves},
           {"noise_floor", report.noise_floor},
           {"dropped_clusters", report.dropped_clusters},
           {"elapsed_s", report.elapsed_s}};
  out["min_gps"] = report.min_gps ? json(*report.min_gps) : json(nullptr);
  return out;
}

/// bin_center,density rows of the overall deviation-score distribution.
inline std::string histogram_csv(const DeviationDistribution& dist) {
  std::string out = "bin_center,density\n";
  char buf[64];
  for (std::size_t i = 0; i < dist.bins(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f,%.10g\n", dist.center(i), dist.mass(i));
    out += buf;
  }
  return out;
}

// ---- fault directories ----------------------------------------------------

struct FaultRecord {
  Snapshot snapshot;
  std::vector<NamedCombination> truth;  // flattened over root causes
  bool external = false;
  std::vector<std::string> eliminated_attributes;
  std::size_t n_element = 0;
  std::size_t cuboid_layer = 0;
};

inline const char* measure_kind_name(simulate::MeasureKind k) {
  return k == simulate::MeasureKind::success_rate ? "success_rate" : "fundamental";
}

inline void write_fault(const std::filesystem::path& dir, const simulate::SimulatedFault& fault) {
  std::filesystem::create_directories(dir);
  write_file(dir / "snapshot.csv", write_snapshot(fault.snapshot));

  json causes = json::array();
  json magnitudes = json::array();
  for (const auto& rc : fault.ground_truth) {
    json combos = json::array();
    for (const auto& e : rc.combinations) combos.push_back(combination_json(e));
    causes.push_back(std::move(combos));
    magnitudes.push_back(rc.magnitude);
  }
  const json truth{{"version", kSchemaVersion},
                   {"root_causes", std::move(causes)},
                   {"magnitudes", std::move(magnitudes)},
                   {"external", fault.external},
                   {"eliminated_attributes", fault.eliminated_attributes}};
  write_file(dir / "truth.json", truth.dump(2) + "\n");

  const auto& p = fault.params;
  const json params{{"version", kSchemaVersion},
                    {"n_element", p.n_element},
                    {"cuboid_layer", p.cuboid_layer},
                    {"base_noise_sigma", p.base_noise_sigma},
                    {"leaf_noise_sigma", p.leaf_noise_sigma},
                    {"magnitude_range", {p.magnitude_range.lower, p.magnitude_range.upper}},
                    {"min_magnitude_gap", p.min_magnitude_gap},
                    {"seed", p.seed},
                    {"simulated_measure", measure_kind_name(p.measure_kind)},
                    {"round_counts", p.round_counts},
                    {"measure", fault.snapshot.measure().to_string()}};
  write_file(dir / "params.json", params.dump(2) + "\n");
}

inline FaultRecord read_fault(const std::filesystem::path& dir) {
  const json params = parse_json(read_file(dir / "params.json"), (dir / "params.json").string());
  const json truth = parse_json(read_file(dir / "truth.json"), (dir / "truth.json").string());
  FaultRecord out;
  try {
    out.n_element = params.at("n_element").get<std::size_t>();
    out.cuboid_layer = params.at("cuboid_layer").get<std::size_t>();
    const auto measure = MeasureSpec::parse(params.at("measure").get<std::string>());
    out.snapshot = parse_snapshot(read_file(dir / "snapshot.csv"), measure);
    for (const auto& rc : truth.at("root_causes"))
      for (const auto& e : rc) out.truth.push_back(combination_from_json(e));
    out.external = truth.value("external", false);
    if (truth.contains("eliminated_attributes"))
      out.eliminated_attributes = truth["eliminated_attributes"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(dir.string() + ": " + e.what());
  }
  return out;
}

}  // namespace psqueeze::io
