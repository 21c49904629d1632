#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/localize.hpp"
#include "psqueeze/serialize.hpp"

// Scoring of localization results against simulated ground truth.
namespace psqueeze::eval {

struct EvalCase {
  std::set<NamedCombination> predicted;
  std::set<NamedCombination> truth;
  bool predicted_external = false;
  bool truth_external = false;
  double elapsed = 0.0;  // seconds
};

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  /// 2tp / (2tp + fp + fn); 1 when there is nothing to find and nothing found.
  double f1() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

inline MatchCounts match(const EvalCase& c) {
  MatchCounts m;
  for (const auto& e : c.predicted) (c.truth.count(e) ? m.tp : m.fp) += 1;
  for (const auto& e : c.truth)
    if (!c.predicted.count(e)) ++m.fn;
  return m;
}

/// Micro-averaged F1 over the cases.
inline double f1_score(std::span<const EvalCase> cases) {
  MatchCounts total;
  for (const auto& c : cases) total += match(c);
  return total.f1();
}

/// Mean of per-case F1 (diagnostic).
inline double macro_f1(std::span<const EvalCase> cases) {
  if (cases.empty()) return 1.0;
  double s = 0.0;
  for (const auto& c : cases) s += match(c).f1();
  return s / static_cast<double>(cases.size());
}

/// Binary F1 over the external-root-cause flags; 0 when precision and
/// recall are both 0 or undefined.
inline double exrc_f1(std::span<const EvalCase> cases) {
  std::size_t tp = 0, reported = 0, actual = 0;
  for (const auto& c : cases) {
    tp += c.predicted_external && c.truth_external;
    reported += c.predicted_external;
    actual += c.truth_external;
  }
  const double precision = reported ? static_cast<double>(tp) / static_cast<double>(reported) : 0.0;
  const double recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// |sum(v - f)| / sum(f) over all leaves.
inline double anomaly_magnitude(const Snapshot& snapshot) {
  double residual = 0.0, forecast = 0.0;
  for (std::size_t r = 0; r < snapshot.leaf_count(); ++r) {
    residual += snapshot.leaf_real(r) - snapshot.leaf_forecast(r);
    forecast += snapshot.leaf_forecast(r);
  }
  if (!(forecast > 0.0)) throw DomainError("anomaly magnitude undefined: total forecast is zero");
  return std::abs(residual) / forecast;
}

inline EvalCase make_case(const LocalizationReport& report, const Snapshot& snapshot,
                          std::span<const NamedCombination> truth, bool truth_external) {
  EvalCase c;
  for (const auto& e : report.root_causes) c.predicted.insert(e.to_named(snapshot.schema()));
  c.truth.insert(truth.begin(), truth.end());
  c.predicted_external = report.external_root_cause;
  c.truth_external = truth_external;
  c.elapsed = report.elapsed_s;
  return c;
}

using Setting = std::pair<std::size_t, std::size_t>;  // (n_element, cuboid_layer)

struct BenchmarkReport {
  std::map<Setting, double> per_setting;
  std::map<Setting, std::size_t> per_setting_cases;
  std::optional<double> overall_f1;  // empty when no fault was scored
  std::optional<double> macro_f1;
  std::optional<double> exrc_f1;  // only for datasets with eliminated attributes
  double mean_elapsed = 0.0;
  std::size_t cases = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Fault directories below `root` (any directory holding a params.json),
/// sorted by path.
inline std::vector<std::filesystem::path> find_faults(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_directory() &&
        (fs::exists(entry.path() / "params.json") || fs::exists(entry.path() / "snapshot.csv")))
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Localizes every fault of a dataset on `workers` threads and scores the
/// results. Malformed fault directories are skipped and reported.
inline BenchmarkReport run_benchmark(const std::filesystem::path& dataset, const LocalizeConfig& cfg,
                                     std::size_t workers = 1) {
  cfg.validate();
  const auto dirs = find_faults(dataset);

  struct Slot {
    std::optional<EvalCase> result;
    Setting setting{0, 0};
    bool protocol_external = false;
    std::string error;
  };
  std::vector<Slot> slots(dirs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < dirs.size(); i = next++) {
      auto& slot = slots[i];
      try {
        const auto fault = io::read_fault(dirs[i]);
        const auto report = localize(fault.snapshot, cfg);
        slot.result = make_case(report, fault.snapshot, fault.truth, fault.external);
        slot.setting = {fault.n_element, fault.cuboid_layer};
        slot.protocol_external = !fault.eliminated_attributes.empty();
      } catch (const std::exception& e) {
        slot.error = dirs[i].string() + ": " + e.what();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, dirs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  BenchmarkReport report;
  std::map<Setting, std::vector<EvalCase>> by_setting;
  std::vector<EvalCase> all;
  bool protocol_external = false;
  double elapsed = 0.0;
  for (auto& slot : slots) {
    if (!slot.result) {
      ++report.skipped;
      report.warnings.push_back(std::move(slot.error));
      continue;
    }
    protocol_external = protocol_external || slot.protocol_external;
    elapsed += slot.result->elapsed;
    by_setting[slot.setting].push_back(*slot.result);
    all.push_back(std::move(*slot.result));
  }
  report.cases = all.size();
  for (const auto& [setting, cases] : by_setting) {
    report.per_setting[setting] = f1_score(cases);
    report.per_setting_cases[setting] = cases.size();
  }
  if (!all.empty()) {
    report.overall_f1 = f1_score(all);
    report.macro_f1 = eval::macro_f1(all);
    report.mean_elapsed = elapsed / static_cast<double>(all.size());
    if (protocol_external) report.exrc_f1 = eval::exrc_f1(all);
  }
  return report;
}

inline io::json benchmark_json(const BenchmarkReport& r) {
  using io::json;
  json settings = json::array();
  for (const auto& [setting, f1] : r.per_setting)
    settings.push_back({{"n_element", setting.first},
                        {"cuboid_layer", setting.second},
                        {"f1", f1},
                        {"cases", r.per_setting_cases.at(setting)}});
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"version", io::kSchemaVersion},
              {"per_setting", std::move(settings)},
              {"overall_f1", opt(r.overall_f1)},
              {"macro_f1", opt(r.macro_f1)},
              {"exrc_f1", opt(r.exrc_f1)},
              {"mean_elapsed", r.mean_elapsed},
              {"cases", r.cases},
              {"skipped", r.skipped},
              {"warnings", r.warnings}};
}

}  // namespace psqueeze::eval
