#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/metrics.hpp"
#include "mixflow/net.hpp"

namespace mixflow {

struct DurationScope {
  double duration = 500.0;
  Scope scope = Scope::Node;

  bool operator==(const DurationScope&) const = default;
};

struct SweepSpec {
  std::vector<std::string> scenarios;  // scenario file paths
  std::vector<double> penetrations{0.0, 0.20, 0.35, 0.50, 0.65, 0.80, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<DurationScope> durations{{500.0, Scope::Node}, {3600.0, Scope::Full}};
  double dt = 0.1;
  /// Hard-check gaps and conservation at every step of every run.
  bool check_invariants = true;

  /// Throws ValidationError on a broken grid.
  void validate() const;
  std::size_t run_count() const { return scenarios.size() * durations.size() * penetrations.size() * seeds.size(); }
  /// Reads a spec document; scenario paths are resolved against `base_dir`.
  static SweepSpec from_json(const nlohmann::json& j, const std::string& base_dir = "");
};

/// Default scope of a duration: 500 s evaluates the node, longer runs the
/// full network.
Scope default_scope(double duration);

struct RunResult {
  std::string route;
  double duration = 0.0;
  double penetration = 0.0;
  std::uint64_t seed = 0;
  NodeEvaluationResult metrics;
  double pct_fuel_benefit = 0.0;  // vs the same seed at 0 %
  double min_gap = 0.0;
  std::size_t spawned = 0;
};

struct RunJob {
  const Network* net = nullptr;
  double duration = 500.0;
  Scope scope = Scope::Node;
  double penetration = 0.0;
  std::uint64_t seed = 1;
  double dt = 0.1;
  bool check_invariants = true;
};

/// One replication evaluated in its scope, with the scenario's emission
/// and queue settings (meta.emission_model, meta.queue).
RunResult run_replication(const RunJob& job);

/// Runs `count` independent jobs on up to `workers` threads. Results are
/// indexed by job, so the output does not depend on completion order.
/// The first failure (lowest job index) is rethrown after all workers stop.
void run_parallel(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& job);

using Progress = std::function<void(std::size_t done, std::size_t total)>;

/// Executes every (scenario, duration, penetration, seed) cell.
std::vector<RunResult> run_sweep(const SweepSpec& spec, unsigned workers, const Progress& progress = {});

/// Fills pct_fuel_benefit of each row against the row with the same route,
/// duration, scope and seed at penetration 0.
void fill_raw_benefit(std::vector<RunResult>& rows);

struct AggregateRow {
  std::string route;
  double duration = 0.0;
  Scope scope = Scope::Node;
  double penetration = 0.0;
  double veh_count_mean = 0.0;
  double fuel_per_veh_mean = 0.0;
  double pct_fuel_benefit = 0.0;
  double pct_mobility_change = 0.0;
  double avg_queue_m_mean = 0.0;
  double max_queue_m_mean = 0.0;
  double avg_delay_s_mean = 0.0;
  double avg_stopped_delay_s_mean = 0.0;
  double co_g_per_veh = 0.0;
  double nox_g_per_veh = 0.0;
  double voc_g_per_veh = 0.0;
  double total_stops_mean = 0.0;

  bool operator==(const AggregateRow&) const = default;
};

/// Seed means per cell. Throws ValidationError when a cell misses a seed
/// that another cell of the same group has, or a group has no 0 % cell.
std::vector<AggregateRow> aggregate(const std::vector<RunResult>& rows);

/// Penetration as printed in the CSVs (percent, rounded to 1e-9).
double penetration_pct(double fraction);

std::string results_header();
std::string results_csv(const std::vector<RunResult>& rows);
std::string aggregate_header();
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

/// Reads an aggregate CSV back. Throws ValidationError on malformed input.
std::vector<AggregateRow> parse_aggregate_csv(std::string_view text);
/// Reads a results CSV back. Throws ValidationError on malformed input.
std::vector<RunResult> parse_results_csv(std::string_view text);

enum class Verdict { Improving, Degrading, Flat, NonMonotoneImproving };
std::string_view to_string(Verdict v);

struct MetricTrend {
  std::string metric;
  double rho = 0.0;                 // Spearman, value vs penetration
  double endpoint_change = 0.0;     // value at top of grid minus value at 0
  std::optional<double> welch_p;    // only with per-seed data
  Verdict verdict = Verdict::Flat;
};

struct TrendReport {
  std::string route;
  double duration = 0.0;
  Scope scope = Scope::Node;
  std::vector<MetricTrend> metrics;
};

inline constexpr double kTrendAlpha = 0.05;

/// Classifies one series. `higher_is_better` orients the verdict;
/// `welch_p` (if given) must be below kTrendAlpha for a non-flat verdict.
Verdict classify_trend(const std::vector<double>& values, bool higher_is_better, std::optional<double> welch_p);

/// Trend verdicts per (route, duration, scope). Raw rows, when given, add
/// the Welch endpoint test. Throws ValidationError for fewer than 3 grid
/// points.
std::vector<TrendReport> trend_report(const std::vector<AggregateRow>& rows, const std::vector<RunResult>* raw = nullptr);
std::string format_trends(const std::vector<TrendReport>& reports);

/// Tables in the layout of the published result tables, one per group.
std::string format_tables(const std::vector<AggregateRow>& rows);

}  // namespace mixflow
