// psqueeze: root-cause localization for multi-dimensional KPI snapshots.
//
//   psqueeze localize --snapshot fault.csv --out report.json
//   psqueeze simulate --base synthetic:attrs=4,values=10 --grid all --per-cell 100 --seed 7 --out ds/
//   psqueeze evaluate --dataset ds/ --workers 4 --out bench.json
//   psqueeze exrc-threshold --history min_gps.json

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "psqueeze/psqueeze.hpp"

namespace fs = std::filesystem;
using namespace psqueeze;
using io::json;

namespace {

constexpr int kInputError = 1;
constexpr int kInternalError = 2;

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    io::write_file(out, text);
  }
}

struct LocalizeArgs {
  std::string snapshot;
  std::string history;
  std::string measure = "fundamental";
  double delta = 0.9;
  double delta_exrc = 0.8;
  std::size_t window = 10;
  std::size_t max_layer = 0;
  bool dirac = false;
  std::string hist_out;
  std::string out;
};

std::vector<fs::path> csv_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("history directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  // Timestamped names sort chronologically.
  std::sort(files.begin(), files.end());
  return files;
}

int run_localize(const LocalizeArgs& a) {
  const auto measure = MeasureSpec::parse(a.measure);
  Snapshot snapshot;
  if (!a.history.empty()) {
    auto files = csv_files(a.history);
    fs::path current = a.snapshot;
    if (current.empty()) {
      if (files.size() < 2) throw Error("history needs the fault snapshot plus at least one earlier snapshot");
      current = files.back();
      files.pop_back();
    }
    if (files.empty()) throw Error("history directory holds no earlier snapshots");
    std::vector<Snapshot> past;
    for (const auto& f : files) past.push_back(parse_snapshot(io::read_file(f), measure));
    const auto now = parse_snapshot(io::read_file(current), measure);
    snapshot = forecast::with_ma_forecast(now, past, std::min(a.window, past.size()));
  } else {
    if (a.snapshot.empty()) throw Error("--snapshot or --history is required");
    snapshot = parse_snapshot(io::read_file(a.snapshot), measure);
  }

  LocalizeConfig cfg;
  cfg.delta = a.delta;
  cfg.delta_exrc = a.delta_exrc;
  if (a.max_layer) cfg.max_layer = a.max_layer;
  if (a.dirac) cfg.family_override = DistributionFamily::none;
  const auto report = localize(snapshot, cfg);
  if (!a.hist_out.empty()) io::write_file(a.hist_out, io::histogram_csv(report.overall));
  emit(a.out, io::report_json(report, snapshot).dump(2) + "\n");
  return 0;
}

struct SimulateArgs {
  std::string base;
  std::string base_measure = "fundamental";
  std::string grid = "all";
  std::size_t per_cell = 100;
  std::uint64_t seed = 0;
  double sigma = 0.05;
  double leaf_sigma = 0.05;
  double min_gap = 0.1;
  bool no_round = false;
  std::size_t eliminate = 0;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  Snapshot base;
  if (a.base.starts_with("synthetic:")) {
    base = simulate::synthetic_base(simulate::SyntheticBaseSpec::parse(std::string_view(a.base).substr(10)));
  } else {
    base = parse_snapshot(io::read_file(a.base), MeasureSpec::parse(a.base_measure));
  }
  if (a.eliminate >= base.schema().size()) throw Error("--eliminate must leave at least one attribute");

  std::vector<simulate::SimulationParams> grid;
  for (const auto& [n, l] : simulate::parse_grid(a.grid)) {
    simulate::SimulationParams p;
    p.n_element = n;
    p.cuboid_layer = l;
    p.seed = a.seed;
    p.base_noise_sigma = a.sigma;
    p.leaf_noise_sigma = a.leaf_sigma;
    p.min_magnitude_gap = a.min_gap;
    p.round_counts = !a.no_round;
    p.measure_kind = base.measure().kind == MeasureKind::quotient ? simulate::MeasureKind::success_rate
                                                                   : simulate::MeasureKind::fundamental;
    grid.push_back(p);
  }
  std::vector<simulate::CellResult> cells;
  simulate::generate_dataset(base, grid, a.per_cell, &cells);

  const fs::path root = a.out;
  fs::create_directories(root);
  json manifest{{"version", io::kSchemaVersion}, {"base", a.base}, {"seed", a.seed}, {"eliminate", a.eliminate}};
  json cell_list = json::array();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    const auto dir = root / ("cell_" + std::to_string(cell.params.n_element) + "_" +
                             std::to_string(cell.params.cuboid_layer));
    std::mt19937_64 rng(simulate::derive_seed(a.seed, 0xe11, c));
    for (std::size_t i = 0; i < cell.faults.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "fault_%04zu", i);
      if (a.eliminate == 0) {
        io::write_fault(dir / name, cell.faults[i]);
        continue;
      }
      auto attrs = cell.faults[i].snapshot.schema().attributes();
      std::shuffle(attrs.begin(), attrs.end(), rng);
      attrs.resize(a.eliminate);
      io::write_fault(dir / name, simulate::eliminate_attributes(cell.faults[i], attrs));
    }
    cell_list.push_back({{"n_element", cell.params.n_element},
                         {"cuboid_layer", cell.params.cuboid_layer},
                         {"faults", cell.faults.size()},
                         {"attempts", cell.attempts}});
  }
  manifest["cells"] = std::move(cell_list);
  io::write_file(root / "dataset.json", manifest.dump(2) + "\n");
  return 0;
}

int run_evaluate(const std::string& dataset, std::size_t workers, double delta, double delta_exrc, bool dirac,
                 const std::string& out) {
  LocalizeConfig cfg;
  cfg.delta = delta;
  cfg.delta_exrc = delta_exrc;
  if (dirac) cfg.family_override = DistributionFamily::none;
  const auto report = eval::run_benchmark(dataset, cfg, workers);
  for (const auto& w : report.warnings) std::cerr << "warning: skipped " << w << "\n";
  emit(out, eval::benchmark_json(report).dump(2) + "\n");
  return 0;
}

int run_exrc_threshold(const std::string& history) {
  const json j = io::parse_json(io::read_file(history), history);
  const json& values = j.is_object() && j.contains("min_gps") ? j["min_gps"] : j;
  if (!values.is_array()) throw Error("expected a JSON list of min_gps values (or {\"min_gps\": [...]})");
  std::vector<double> gps;
  for (const auto& v : values) {
    if (!v.is_number()) throw Error("min_gps values must be numbers");
    gps.push_back(v.get<double>());
  }
  std::printf("%.4f\n", select_exrc_threshold(gps));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSqueeze root-cause localization for multi-dimensional KPI data"};
  app.require_subcommand(1);

  LocalizeArgs la;
  auto* loc = app.add_subcommand("localize", "localize the root cause of one fault snapshot");
  loc->add_option("--snapshot", la.snapshot, "fault snapshot CSV");
  loc->add_option("--history", la.history, "directory of earlier snapshot CSVs (moving-average forecast)");
  loc->add_option("--measure", la.measure, "fundamental[:col][@poisson|@none], quotient:a/b or product:a*b")
      ->capture_default_str();
  loc->add_option("--delta", la.delta, "GPS early-stop threshold")->capture_default_str();
  loc->add_option("--delta-exrc", la.delta_exrc, "external root cause threshold")->capture_default_str();
  loc->add_option("--window", la.window, "moving-average window")->capture_default_str()->check(CLI::PositiveNumber);
  loc->add_option("--max-layer", la.max_layer, "deepest cuboid layer to search");
  loc->add_flag("--dirac", la.dirac, "deterministic deviation scores instead of Poisson");
  loc->add_option("--hist-out", la.hist_out, "write the deviation-score density as CSV");
  loc->add_option("--out", la.out, "report JSON (default stdout)");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "generate a simulated fault dataset");
  sim->add_option("--base", sa.base, "base snapshot CSV or synthetic:<key=value,...>")->required();
  sim->add_option("--base-measure", sa.base_measure, "measure of a CSV base")->capture_default_str();
  sim->add_option("--grid", sa.grid, "cells, e.g. all, 1x1,2x3 or 1-3x2")->capture_default_str();
  sim->add_option("--per-cell", sa.per_cell, "faults per cell")->capture_default_str()->check(CLI::PositiveNumber);
  sim->add_option("--seed", sa.seed, "master seed")->capture_default_str();
  sim->add_option("--sigma", sa.sigma, "relative noise on every leaf")->capture_default_str();
  sim->add_option("--leaf-sigma", sa.leaf_sigma, "extra relative noise on affected leaves")->capture_default_str();
  sim->add_option("--min-gap", sa.min_gap, "minimum gap between root-cause magnitudes")->capture_default_str();
  sim->add_flag("--no-round", sa.no_round, "keep simulated counts fractional");
  sim->add_option("--eliminate", sa.eliminate, "drop this many random attributes per fault")->capture_default_str();
  sim->add_option("--out", sa.out, "output directory")->required();

  std::string dataset, eval_out;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  double e_delta = 0.9, e_delta_exrc = 0.8;
  bool e_dirac = false;
  auto* ev = app.add_subcommand("evaluate", "localize and score every fault of a dataset");
  ev->add_option("--dataset", dataset, "dataset directory")->required();
  ev->add_option("--workers", workers, "parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--delta", e_delta, "GPS early-stop threshold")->capture_default_str();
  ev->add_option("--delta-exrc", e_delta_exrc, "external root cause threshold")->capture_default_str();
  ev->add_flag("--dirac", e_dirac, "deterministic deviation scores instead of Poisson");
  ev->add_option("--out", eval_out, "benchmark JSON (default stdout)");

  std::string history;
  auto* ex = app.add_subcommand("exrc-threshold", "choose the external root cause threshold from past faults");
  ex->add_option("--history", history, "JSON list of historical min_gps values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kInputError;
  }

  try {
    if (*loc) return run_localize(la);
    if (*sim) return run_simulate(sa);
    if (*ev) return run_evaluate(dataset, workers, e_delta, e_delta_exrc, e_dirac, eval_out);
    if (*ex) return run_exrc_threshold(history);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kInternalError;
}
