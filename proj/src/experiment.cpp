#include "mixflow/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "mixflow/csv.hpp"
#include "mixflow/engine.hpp"
#include "mixflow/error.hpp"
#include "mixflow/stats.hpp"

namespace mixflow {

Scope default_scope(double duration) { return duration <= 500.0 ? Scope::Node : Scope::Full; }

void SweepSpec::validate() const {
  if (scenarios.empty()) throw ValidationError("sweep spec: no scenarios");
  if (penetrations.empty() || penetrations.front() != 0.0)
    throw ValidationError("sweep spec: the penetration grid must start at 0");
  for (std::size_t i = 0; i < penetrations.size(); ++i) {
    if (!(penetrations[i] >= 0.0 && penetrations[i] <= 1.0))
      throw ValidationError("sweep spec: penetrations must lie in [0, 1]");
    if (i > 0 && !(penetrations[i] > penetrations[i - 1]))
      throw ValidationError("sweep spec: penetrations must be strictly increasing");
  }
  if (seeds.empty()) throw ValidationError("sweep spec: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ValidationError("sweep spec: seeds must be distinct");
  if (durations.empty()) throw ValidationError("sweep spec: no durations");
  for (const auto& d : durations) {
    SimConfig c;
    c.dt = dt;
    c.duration = d.duration;
    c.validate();
  }
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ValidationError("sweep spec must be a JSON object");
  SweepSpec s;
  try {
    if (!j.contains("scenarios") || !j.at("scenarios").is_array())
      throw ValidationError("sweep spec: 'scenarios' must be a list of paths");
    for (const auto& p : j.at("scenarios")) {
      std::filesystem::path path(p.get<std::string>());
      if (path.is_relative() && !base_dir.empty()) path = std::filesystem::path(base_dir) / path;
      s.scenarios.push_back(path.lexically_normal().string());
    }
    if (j.contains("penetrations")) s.penetrations = j.at("penetrations").get<std::vector<double>>();
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("durations")) {
      s.durations.clear();
      for (const auto& d : j.at("durations")) {
        if (d.is_number()) {
          s.durations.push_back({d.get<double>(), default_scope(d.get<double>())});
        } else {
          const double dur = d.at("duration").get<double>();
          s.durations.push_back({dur, d.contains("scope") ? parse_scope(d.at("scope").get<std::string>())
                                                          : default_scope(dur)});
        }
      }
    }
    if (j.contains("dt")) s.dt = j.at("dt").get<double>();
    if (j.contains("check_invariants")) s.check_invariants = j.at("check_invariants").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("sweep spec: ") + e.what());
  }
  s.validate();
  return s;
}

RunResult run_replication(const RunJob& job) {
  const Network& net = *job.net;
  SimConfig config;
  config.dt = job.dt;
  config.duration = job.duration;
  config.penetration = job.penetration;
  config.seed = job.seed;
  config.check_invariants = job.check_invariants;

  const auto meta = [&net](const char* key) { return net.meta.contains(key) ? net.meta.at(key) : nlohmann::json(); };
  Simulation sim(net, DriverDefaults::from_json(meta("driver_params")), config);
  MetricsAccumulator acc(net, job.scope, config.dt, FuelEmissionModel::from_json(meta("emission_model")),
                         QueueConfig::from_json(meta("queue")));
  sim.add_observer(&acc);
  sim.run();

  RunResult r;
  r.route = net.name;
  r.duration = job.duration;
  r.penetration = job.penetration;
  r.seed = job.seed;
  r.metrics = acc.result();
  r.min_gap = sim.min_gap();
  r.spawned = sim.spawned();
  return r;
}

void run_parallel(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed.store(true);
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<RunResult> run_sweep(const SweepSpec& spec, unsigned workers, const Progress& progress) {
  spec.validate();
  std::vector<Network> nets;
  for (const auto& path : spec.scenarios) {
    nets.push_back(load_network_file(path));
    if (nets.back().name.empty()) nets.back().name = std::filesystem::path(path).stem().string();
  }

  std::vector<RunJob> jobs;
  for (const auto& net : nets)
    for (const auto& d : spec.durations)
      for (double p : spec.penetrations)
        for (std::uint64_t seed : spec.seeds)
          jobs.push_back({&net, d.duration, d.scope, p, seed, spec.dt, spec.check_invariants});

  std::vector<RunResult> results(jobs.size());
  std::mutex progress_mutex;
  std::size_t done = 0;
  run_parallel(jobs.size(), workers, [&](std::size_t i) {
    try {
      results[i] = run_replication(jobs[i]);
    } catch (const Error& e) {
      std::ostringstream cell;
      cell << "run failed (route " << jobs[i].net->name << ", duration " << format_number(jobs[i].duration)
           << " s, penetration " << format_number(penetration_pct(jobs[i].penetration)) << " %, seed "
           << jobs[i].seed << "): " << e.what();
      if (e.exit_code() == 4) throw SimulationError(cell.str());
      throw ValidationError(cell.str());
    }
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(++done, jobs.size());
    }
  });
  fill_raw_benefit(results);
  return results;
}

namespace {

using GroupKey = std::tuple<std::string, double, Scope>;

GroupKey group_of(const RunResult& r) { return {r.route, r.duration, r.metrics.scope}; }

}  // namespace

void fill_raw_benefit(std::vector<RunResult>& rows) {
  std::map<std::tuple<std::string, double, Scope, std::uint64_t>, double> base;
  for (const auto& r : rows)
    if (r.penetration == 0.0) base[{r.route, r.duration, r.metrics.scope, r.seed}] = r.metrics.fuel_per_vehicle;
  for (auto& r : rows) {
    auto it = base.find({r.route, r.duration, r.metrics.scope, r.seed});
    r.pct_fuel_benefit =
        it == base.end() || !(it->second > 0.0) ? 0.0 : percent_benefit(it->second, r.metrics.fuel_per_vehicle);
    if (r.penetration == 0.0) r.pct_fuel_benefit = 0.0;
  }
}

std::vector<AggregateRow> aggregate(const std::vector<RunResult>& rows) {
  std::map<GroupKey, std::map<double, std::vector<const RunResult*>>> groups;
  for (const auto& r : rows) groups[group_of(r)][r.penetration].push_back(&r);

  std::vector<AggregateRow> out;
  for (auto& [key, cells] : groups) {
    std::set<std::uint64_t> seed_set;
    for (auto& [p, runs] : cells)
      for (const auto* r : runs) seed_set.insert(r->seed);
    if (!cells.count(0.0))
      throw ValidationError("aggregate: route " + std::get<0>(key) + " has no 0 % penetration cell");

    std::size_t first = out.size();
    for (auto& [p, runs] : cells) {
      std::sort(runs.begin(), runs.end(), [](const RunResult* a, const RunResult* b) { return a->seed < b->seed; });
      std::set<std::uint64_t> have;
      for (const auto* r : runs)
        if (!have.insert(r->seed).second)
          throw ValidationError("aggregate: duplicate seed " + std::to_string(r->seed) + " in route " +
                                std::get<0>(key) + " cell " + format_number(penetration_pct(p)) + " %");
      if (have != seed_set)
        throw ValidationError("aggregate: route " + std::get<0>(key) + " cell " + format_number(penetration_pct(p)) +
                              " % is missing seeds");
      auto avg = [&runs](auto field) {
        double s = 0.0;
        for (const auto* r : runs) s += field(*r);
        return s / static_cast<double>(runs.size());
      };
      AggregateRow a;
      a.route = std::get<0>(key);
      a.duration = std::get<1>(key);
      a.scope = std::get<2>(key);
      a.penetration = p;
      a.veh_count_mean = avg([](const RunResult& r) { return static_cast<double>(r.metrics.vehicle_count); });
      a.fuel_per_veh_mean = avg([](const RunResult& r) { return r.metrics.fuel_per_vehicle; });
      a.avg_queue_m_mean = avg([](const RunResult& r) { return r.metrics.avg_queue_m; });
      a.max_queue_m_mean = avg([](const RunResult& r) { return r.metrics.max_queue_m; });
      a.avg_delay_s_mean = avg([](const RunResult& r) { return r.metrics.avg_delay_s; });
      a.avg_stopped_delay_s_mean = avg([](const RunResult& r) { return r.metrics.avg_stopped_delay_s; });
      a.co_g_per_veh = avg([](const RunResult& r) { return r.metrics.co_per_vehicle; });
      a.nox_g_per_veh = avg([](const RunResult& r) { return r.metrics.nox_per_vehicle; });
      a.voc_g_per_veh = avg([](const RunResult& r) { return r.metrics.voc_per_vehicle; });
      a.total_stops_mean = avg([](const RunResult& r) { return static_cast<double>(r.metrics.total_stops); });
      out.push_back(a);
    }
    const AggregateRow base = out[first];
    for (std::size_t i = first; i < out.size(); ++i) {
      AggregateRow& a = out[i];
      if (a.penetration == 0.0) continue;
      a.pct_fuel_benefit = base.fuel_per_veh_mean > 0.0 ? percent_benefit(base.fuel_per_veh_mean, a.fuel_per_veh_mean) : 0.0;
      a.pct_mobility_change =
          base.veh_count_mean > 0.0 ? 100.0 * (a.veh_count_mean - base.veh_count_mean) / base.veh_count_mean : 0.0;
    }
  }
  return out;
}

double penetration_pct(double fraction) { return std::round(fraction * 100.0 * 1e9) / 1e9; }

std::string results_header() {
  return "route,scope,duration_s,penetration_pct,seed,veh_count,total_fuel_gal,fuel_per_veh_gal,pct_fuel_benefit,"
         "co_g,nox_g,voc_g,avg_queue_m,max_queue_m,avg_delay_s,avg_stopped_delay_s,total_stops";
}

std::string results_csv(const std::vector<RunResult>& rows) {
  std::string out = results_header() + "\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out += join_row({r.route, std::string(to_string(m.scope)), format_number(r.duration),
                     format_number(penetration_pct(r.penetration)), std::to_string(r.seed),
                     std::to_string(m.vehicle_count), format_number(m.total_fuel), format_number(m.fuel_per_vehicle),
                     format_number(r.pct_fuel_benefit), format_number(m.co_g), format_number(m.nox_g),
                     format_number(m.voc_g), format_number(m.avg_queue_m), format_number(m.max_queue_m),
                     format_number(m.avg_delay_s), format_number(m.avg_stopped_delay_s),
                     std::to_string(m.total_stops)});
    out += '\n';
  }
  return out;
}

std::string aggregate_header() {
  return "route,duration_s,scope,penetration_pct,veh_count_mean,fuel_per_veh_mean,pct_fuel_benefit,"
         "pct_mobility_change,avg_queue_m_mean,max_queue_m_mean,avg_delay_s_mean,avg_stopped_delay_s_mean,"
         "co_g_per_veh,nox_g_per_veh,voc_g_per_veh,total_stops_mean";
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out = aggregate_header() + "\n";
  for (const auto& a : rows) {
    out += join_row({a.route, format_number(a.duration), std::string(to_string(a.scope)),
                     format_number(penetration_pct(a.penetration)), format_number(a.veh_count_mean),
                     format_number(a.fuel_per_veh_mean), format_number(a.pct_fuel_benefit),
                     format_number(a.pct_mobility_change), format_number(a.avg_queue_m_mean),
                     format_number(a.max_queue_m_mean), format_number(a.avg_delay_s_mean),
                     format_number(a.avg_stopped_delay_s_mean), format_number(a.co_g_per_veh),
                     format_number(a.nox_g_per_veh), format_number(a.voc_g_per_veh),
                     format_number(a.total_stops_mean)});
    out += '\n';
  }
  return out;
}

namespace {

std::size_t parse_count(const std::string& text) {
  const double x = parse_number(text);
  if (x < 0.0 || x != std::floor(x)) throw ValidationError("not a count: '" + text + "'");
  return static_cast<std::size_t>(x);
}

void check_header(const CsvTable& t, const std::string& expected) {
  if (join_row(t.header) != expected) throw ValidationError("unexpected CSV header: " + join_row(t.header));
}

}  // namespace

std::vector<AggregateRow> parse_aggregate_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  check_header(t, aggregate_header());
  std::vector<AggregateRow> out;
  for (const auto& c : t.rows) {
    AggregateRow a;
    a.route = c[0];
    a.duration = parse_number(c[1]);
    a.scope = parse_scope(c[2]);
    a.penetration = parse_number(c[3]) / 100.0;
    double* fields[] = {&a.veh_count_mean,   &a.fuel_per_veh_mean,        &a.pct_fuel_benefit, &a.pct_mobility_change,
                        &a.avg_queue_m_mean, &a.max_queue_m_mean,         &a.avg_delay_s_mean, &a.avg_stopped_delay_s_mean,
                        &a.co_g_per_veh,     &a.nox_g_per_veh,            &a.voc_g_per_veh,    &a.total_stops_mean};
    for (std::size_t k = 0; k < std::size(fields); ++k) *fields[k] = parse_number(c[4 + k]);
    out.push_back(a);
  }
  return out;
}

std::vector<RunResult> parse_results_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  check_header(t, results_header());
  std::vector<RunResult> out;
  for (const auto& c : t.rows) {
    RunResult r;
    auto& m = r.metrics;
    r.route = c[0];
    m.scope = parse_scope(c[1]);
    r.duration = parse_number(c[2]);
    r.penetration = parse_number(c[3]) / 100.0;
    r.seed = parse_count(c[4]);
    m.vehicle_count = parse_count(c[5]);
    m.total_fuel = parse_number(c[6]);
    m.fuel_per_vehicle = parse_number(c[7]);
    r.pct_fuel_benefit = parse_number(c[8]);
    m.co_g = parse_number(c[9]);
    m.nox_g = parse_number(c[10]);
    m.voc_g = parse_number(c[11]);
    m.avg_queue_m = parse_number(c[12]);
    m.max_queue_m = parse_number(c[13]);
    m.avg_delay_s = parse_number(c[14]);
    m.avg_stopped_delay_s = parse_number(c[15]);
    m.total_stops = parse_count(c[16]);
    m.co_per_vehicle = per_vehicle(m.co_g, m.vehicle_count);
    m.nox_per_vehicle = per_vehicle(m.nox_g, m.vehicle_count);
    m.voc_per_vehicle = per_vehicle(m.voc_g, m.vehicle_count);
    out.push_back(r);
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Improving:
      return "improving";
    case Verdict::Degrading:
      return "degrading";
    case Verdict::Flat:
      return "flat";
    case Verdict::NonMonotoneImproving:
      return "non-monotone-improving";
  }
  return "flat";
}

Verdict classify_trend(const std::vector<double>& values, bool higher_is_better, std::optional<double> welch_p) {
  if (values.size() < 3) throw ValidationError("trend needs at least 3 grid points");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) return Verdict::Flat;
  if (welch_p && !(*welch_p < kTrendAlpha)) return Verdict::Flat;
  const double sign = higher_is_better ? 1.0 : -1.0;
  const double change = sign * (values.back() - values.front());
  if (change < 0.0) return Verdict::Degrading;
  if (change == 0.0) return Verdict::Flat;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (sign * (values[i] - values[i - 1]) < 0.0) return Verdict::NonMonotoneImproving;
  return Verdict::Improving;
}

namespace {

struct MetricDef {
  const char* name;
  double (*agg)(const AggregateRow&);
  double (*raw)(const RunResult&);
  bool higher_is_better;
};

const MetricDef kMetrics[] = {
    {"veh_count", [](const AggregateRow& a) { return a.veh_count_mean; },
     [](const RunResult& r) { return static_cast<double>(r.metrics.vehicle_count); }, true},
    {"fuel_per_veh", [](const AggregateRow& a) { return a.fuel_per_veh_mean; },
     [](const RunResult& r) { return r.metrics.fuel_per_vehicle; }, false},
    {"pct_fuel_benefit", [](const AggregateRow& a) { return a.pct_fuel_benefit; },
     [](const RunResult& r) { return r.pct_fuel_benefit; }, true},
    {"avg_queue", [](const AggregateRow& a) { return a.avg_queue_m_mean; },
     [](const RunResult& r) { return r.metrics.avg_queue_m; }, false},
    {"max_queue", [](const AggregateRow& a) { return a.max_queue_m_mean; },
     [](const RunResult& r) { return r.metrics.max_queue_m; }, false},
    {"avg_delay", [](const AggregateRow& a) { return a.avg_delay_s_mean; },
     [](const RunResult& r) { return r.metrics.avg_delay_s; }, false},
    {"avg_stopped_delay", [](const AggregateRow& a) { return a.avg_stopped_delay_s_mean; },
     [](const RunResult& r) { return r.metrics.avg_stopped_delay_s; }, false},
    {"co_per_veh", [](const AggregateRow& a) { return a.co_g_per_veh; },
     [](const RunResult& r) { return r.metrics.co_per_vehicle; }, false},
    {"nox_per_veh", [](const AggregateRow& a) { return a.nox_g_per_veh; },
     [](const RunResult& r) { return r.metrics.nox_per_vehicle; }, false},
    {"voc_per_veh", [](const AggregateRow& a) { return a.voc_g_per_veh; },
     [](const RunResult& r) { return r.metrics.voc_per_vehicle; }, false},
    {"total_stops", [](const AggregateRow& a) { return a.total_stops_mean; },
     [](const RunResult& r) { return static_cast<double>(r.metrics.total_stops); }, false},
};

}  // namespace

std::vector<TrendReport> trend_report(const std::vector<AggregateRow>& rows, const std::vector<RunResult>* raw) {
  std::map<GroupKey, std::vector<const AggregateRow*>> groups;
  for (const auto& a : rows) groups[{a.route, a.duration, a.scope}].push_back(&a);
  std::vector<TrendReport> out;
  for (auto& [key, cells] : groups) {
    std::sort(cells.begin(), cells.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->penetration < b->penetration; });
    if (cells.size() < 3)
      throw ValidationError("trend report: route " + std::get<0>(key) + " has fewer than 3 grid points");
    TrendReport rep{std::get<0>(key), std::get<1>(key), std::get<2>(key), {}};
    std::vector<double> x;
    for (const auto* c : cells) x.push_back(c->penetration);
    for (const auto& def : kMetrics) {
      MetricTrend t;
      t.metric = def.name;
      std::vector<double> y;
      for (const auto* c : cells) y.push_back(def.agg(*c));
      t.rho = spearman(x, y);
      t.endpoint_change = y.back() - y.front();
      if (raw) {
        std::vector<std::pair<std::uint64_t, double>> lo, hi;
        for (const auto& r : *raw) {
          if (group_of(r) != key) continue;
          if (r.penetration == cells.front()->penetration) lo.emplace_back(r.seed, def.raw(r));
          if (r.penetration == cells.back()->penetration) hi.emplace_back(r.seed, def.raw(r));
        }
        std::sort(lo.begin(), lo.end());
        std::sort(hi.begin(), hi.end());
        std::vector<double> a, b;
        for (auto& [s, v] : hi) a.push_back(v);
        for (auto& [s, v] : lo) b.push_back(v);
        if (a.size() >= 2 && b.size() >= 2) t.welch_p = welch_test(a, b).p;
      }
      t.verdict = classify_trend(y, def.higher_is_better, t.welch_p);
      rep.metrics.push_back(t);
    }
    out.push_back(std::move(rep));
  }
  return out;
}

std::string format_trends(const std::vector<TrendReport>& reports) {
  std::string out;
  char line[256];
  for (const auto& rep : reports) {
    out += rep.route + " " + format_number(rep.duration) + " s " + std::string(to_string(rep.scope)) + "\n";
    for (const auto& t : rep.metrics) {
      const std::string p = t.welch_p ? format_number(*t.welch_p) : std::string("n/a");
      std::snprintf(line, sizeof line, "  %-18s rho=%+.3f  change=%-14.6g welch_p=%-12s %s\n", t.metric.c_str(), t.rho,
                    t.endpoint_change, p.c_str(), std::string(to_string(t.verdict)).c_str());
      out += line;
    }
  }
  return out;
}

std::string format_tables(const std::vector<AggregateRow>& rows) {
  std::map<GroupKey, std::vector<const AggregateRow*>> groups;
  for (const auto& a : rows) groups[{a.route, a.duration, a.scope}].push_back(&a);
  std::string out;
  char line[512];
  for (auto& [key, cells] : groups) {
    std::sort(cells.begin(), cells.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->penetration < b->penetration; });
    out += std::get<0>(key) + " | " + format_number(std::get<1>(key)) + " s | " +
           std::string(to_string(std::get<2>(key))) + "\n";
    std::snprintf(line, sizeof line, "%-8s %10s %12s %10s %10s %9s %9s %9s %9s %9s %9s %9s %9s\n", "AV %", "vehicles",
                  "fuel/veh", "fuel ben%", "mobility%", "avg q m", "max q m", "delay s", "stop s", "CO g/v",
                  "NOx g/v", "VOC g/v", "stops");
    out += line;
    for (const auto* a : cells) {
      const std::string label = a->penetration == 0.0 ? "No AV" : format_number(penetration_pct(a->penetration)) + "%";
      std::snprintf(line, sizeof line,
                    "%-8s %10.1f %12.5f %10.3f %10.3f %9.2f %9.2f %9.2f %9.2f %9.3f %9.3f %9.3f %9.1f\n",
                    label.c_str(), a->veh_count_mean, a->fuel_per_veh_mean, a->pct_fuel_benefit,
                    a->pct_mobility_change, a->avg_queue_m_mean, a->max_queue_m_mean, a->avg_delay_s_mean,
                    a->avg_stopped_delay_s_mean, a->co_g_per_veh, a->nox_g_per_veh, a->voc_g_per_veh,
                    a->total_stops_mean);
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mixflow
