#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mixflow/chart.hpp"
#include "mixflow/csv.hpp"
#include "mixflow/engine.hpp"
#include "mixflow/error.hpp"
#include "mixflow/experiment.hpp"
#include "mixflow/osm.hpp"

namespace mixflow::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw ValidationError("cannot write " + path.string());
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

unsigned default_workers() {
  if (const char* env = std::getenv("MIXFLOW_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("MIXFLOW_WORKERS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<OsmId> parse_corridor(const std::string& text) {
  std::vector<OsmId> ids;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("corridor: bad way id '" + item + "'");
    }
  }
  return ids;
}

struct IngestArgs {
  std::string osm, corridor, out, defaults, name = "osm_corridor";
};

int ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
  IngestDefaults defaults;
  if (!a.defaults.empty()) defaults = IngestDefaults::from_json(read_json(a.defaults));
  const RawGraph graph = parse_osm(read_file(a.osm));
  IngestReport report;
  const Network net = build_network(graph, defaults, parse_corridor(a.corridor), a.name, &report);
  write_file(a.out, serialize(net));
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  out << "links: " << report.links << "\n"
      << "signals: " << report.signals << "\n"
      << "stop signs: " << report.stop_signs << "\n"
      << "total length m: " << format_number(report.total_length) << "\n";
  return 0;
}

struct RunArgs {
  std::string scenario, out, scope, trajectories;
  double penetration = 0.0;
  std::uint64_t seed = 1;
  double duration = 500.0;
  double dt = 0.1;
  bool dump = false;
};

int run_one(const RunArgs& a, std::ostream& out) {
  const Network net = load_network_file(a.scenario);
  RunJob job{&net, a.duration, a.scope.empty() ? default_scope(a.duration) : parse_scope(a.scope), a.penetration,
             a.seed, a.dt, true};
  std::vector<RunResult> rows{run_replication(job)};
  if (a.penetration != 0.0) {
    job.penetration = 0.0;
    rows.push_back(run_replication(job));
    fill_raw_benefit(rows);
    rows.pop_back();
  }
  const std::string csv = results_csv(rows);
  if (a.out.empty())
    out << csv;
  else
    write_file(a.out, csv);

  if (a.dump) {
    const fs::path path = a.trajectories.empty() ? fs::path(a.out.empty() ? "trajectories.csv" : a.out + ".traj.csv")
                                                  : fs::path(a.trajectories);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream traj(path, std::ios::binary);
    if (!traj) throw ValidationError("cannot write " + path.string());
    SimConfig config;
    config.dt = a.dt;
    config.duration = a.duration;
    config.penetration = a.penetration;
    config.seed = a.seed;
    TrajectoryCsvWriter writer(traj, net);
    run_simulation(net, config, writer);
  }
  return 0;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SweepArgs {
  std::string spec, out;
  unsigned workers = 0;
  bool quiet = false;
};

int sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path spec_path(a.spec);
  const SweepSpec spec = SweepSpec::from_json(read_json(a.spec), spec_path.parent_path().string());
  const unsigned workers = a.workers ? a.workers : default_workers();
  const auto started = std::chrono::steady_clock::now();
  std::vector<RunResult> rows = run_sweep(spec, workers, [&](std::size_t done, std::size_t total) {
    if (!a.quiet) err << "\r" << done << "/" << total << std::flush;
  });
  if (!a.quiet) err << "\n";
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  const auto agg = aggregate(rows);
  const auto trends = trend_report(agg, &rows);
  const fs::path dir(a.out);
  write_file(dir / "results.csv", results_csv(rows));
  write_file(dir / "aggregate.csv", aggregate_csv(agg));
  write_file(dir / "trends.txt", format_trends(trends));
  const auto charts = sweep_charts(agg);
  for (const auto& c : charts) write_file(dir / "charts" / c.file_name, render_svg(c));

  nlohmann::json meta = {{"created", timestamp()},
                         {"spec", a.spec},
                         {"workers", workers},
                         {"runs", rows.size()},
                         {"wall_seconds", seconds},
                         {"per_vehicle_denominator", "vehicles that entered the evaluation scope"}};
  write_file(dir / "metadata.json", meta.dump(2) + "\n");

  out << "runs: " << rows.size() << "\n"
      << "aggregate rows: " << agg.size() << "\n"
      << "charts: " << charts.size() << "\n"
      << format_trends(trends);
  return 0;
}

struct ReportArgs {
  std::string aggregate, raw;
};

int report(const ReportArgs& a, std::ostream& out) {
  const auto agg = parse_aggregate_csv(read_file(a.aggregate));
  std::vector<RunResult> raw;
  if (!a.raw.empty()) raw = parse_results_csv(read_file(a.raw));
  out << format_tables(agg) << "\n" << format_trends(trend_report(agg, a.raw.empty() ? nullptr : &raw));
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed human/autonomous traffic simulator and experiment harness", "mixflow"};
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a scenario from an OpenStreetMap extract");
  ingest_cmd->add_option("--osm", ia.osm, "OSM XML file")->required();
  ingest_cmd->add_option("--corridor", ia.corridor, "Comma-separated way ids in travel order")->required();
  ingest_cmd->add_option("--out", ia.out, "Scenario JSON to write")->required();
  ingest_cmd->add_option("--defaults", ia.defaults, "Ingest defaults JSON");
  ingest_cmd->add_option("--name", ia.name, "Scenario name");

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "Run one replication");
  run_cmd->add_option("--scenario", ra.scenario, "Scenario JSON")->required();
  run_cmd->add_option("--penetration", ra.penetration, "AV fraction in [0, 1]")->required();
  run_cmd->add_option("--seed", ra.seed, "Replication seed")->required();
  run_cmd->add_option("--duration", ra.duration, "Simulated seconds")->required();
  run_cmd->add_option("--scope", ra.scope, "node or full (default by duration)");
  run_cmd->add_option("--dt", ra.dt, "Step length in seconds");
  run_cmd->add_option("--out", ra.out, "Results CSV (default stdout)");
  run_cmd->add_flag("--dump-trajectories", ra.dump, "Also write the trajectory CSV");
  run_cmd->add_option("--trajectories", ra.trajectories, "Trajectory CSV path");

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a replication sweep");
  sweep_cmd->add_option("--spec", sa.spec, "Sweep spec JSON")->required();
  sweep_cmd->add_option("--out", sa.out, "Output directory")->required();
  sweep_cmd->add_option("--workers", sa.workers, "Worker threads (default MIXFLOW_WORKERS or core count)");
  sweep_cmd->add_flag("--quiet", sa.quiet, "No progress output");

  ReportArgs pa;
  auto* report_cmd = app.add_subcommand("report", "Print tables and trend verdicts from an aggregate CSV");
  report_cmd->add_option("--aggregate", pa.aggregate, "Aggregate CSV")->required();
  report_cmd->add_option("--raw", pa.raw, "Results CSV for the Welch endpoint test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest_cmd) return ingest(ia, out, err);
    if (*run_cmd) return run_one(ra, out);
    if (*sweep_cmd) return sweep(sa, out, err);
    if (*report_cmd) return report(pa, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

}  // namespace mixflow::cli
