#include <stdexcept>

#include "doctest.h"
#include "mixflow/chart.hpp"
#include "mixflow/csv.hpp"
#include "mixflow/error.hpp"
#include "mixflow/experiment.hpp"
#include "support.hpp"

using namespace mixflow;

namespace {

RunResult row(double pen, std::uint64_t seed, double fuel_per_veh, std::size_t count = 100) {
  RunResult r;
  r.route = "r";
  r.duration = 500;
  r.penetration = pen;
  r.seed = seed;
  r.metrics.scope = Scope::Node;
  r.metrics.vehicle_count = count;
  r.metrics.fuel_per_vehicle = fuel_per_veh;
  r.metrics.total_fuel = fuel_per_veh * static_cast<double>(count);
  return r;
}

const std::vector<double> kGrid{0.0, 0.20, 0.35, 0.50, 0.65, 0.80, 1.0};

std::vector<AggregateRow> series(const std::vector<double>& fuel) {
  std::vector<AggregateRow> rows;
  for (std::size_t i = 0; i < kGrid.size(); ++i) {
    AggregateRow a;
    a.route = "r";
    a.duration = 3600;
    a.scope = Scope::Full;
    a.penetration = kGrid[i];
    a.fuel_per_veh_mean = fuel[i];
    rows.push_back(a);
  }
  return rows;
}

Verdict verdict_of(const std::vector<TrendReport>& rep, const std::string& metric) {
  for (const auto& t : rep.at(0).metrics)
    if (t.metric == metric) return t.verdict;
  throw std::runtime_error("no metric " + metric);
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("default protocol size") {
    SweepSpec one;
    one.scenarios = {"a.json"};
    CHECK(one.run_count() == 140);
    SweepSpec four;
    four.scenarios = {"a", "b", "c", "d"};
    CHECK(four.run_count() == 560);
    CHECK(default_scope(500) == Scope::Node);
    CHECK(default_scope(3600) == Scope::Full);
  }

  TEST_CASE("spec parsing") {
    const auto s = SweepSpec::from_json({{"scenarios", {"x.json"}}, {"penetrations", {0.0, 1.0}}, {"seeds", {1}},
                                         {"durations", {20}}},
                                        "/base");
    CHECK(s.run_count() == 2);
    CHECK(s.scenarios[0] == "/base/x.json");
    CHECK_THROWS_AS(SweepSpec::from_json({{"scenarios", {"x"}}, {"penetrations", {1.5}}}), ValidationError);
    CHECK_THROWS_AS(SweepSpec::from_json({{"scenarios", {"x"}}, {"seeds", "many"}}), ValidationError);
    CHECK_THROWS_AS(SweepSpec::from_json({{"scenarios", {"x"}}, {"penetrations", {0.5, 1.0}}}), ValidationError);
  }

  TEST_CASE("small sweep runs every cell") {
    SweepSpec s;
    s.scenarios = {test::scenario_path("route15.json")};
    s.penetrations = {0.0, 1.0};
    s.seeds = {1};
    s.durations = {{20.0, Scope::Node}};
    const auto rows = run_sweep(s, 1);
    CHECK(rows.size() == 2);
    CHECK(rows[0].pct_fuel_benefit == 0.0);
  }

  TEST_CASE("seed means") {
    std::vector<RunResult> rows;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      rows.push_back(row(0.0, seed, 0.01));
      auto r = row(1.0, seed, 0.01);
      r.metrics.avg_queue_m = static_cast<double>(seed);
      rows.push_back(r);
    }
    const auto agg = aggregate(rows);
    REQUIRE(agg.size() == 2);
    CHECK(agg[1].avg_queue_m_mean == 5.5);
    CHECK(agg[1].pct_fuel_benefit == 0.0);
    CHECK(agg[0].pct_fuel_benefit == 0.0);
  }

  TEST_CASE("benefit of seed means") {
    std::vector<RunResult> rows{row(0.0, 1, 0.01144), row(1.0, 1, 0.00977)};
    const auto agg = aggregate(rows);
    CHECK(agg[1].pct_fuel_benefit == doctest::Approx(14.60).epsilon(1e-3));
    CHECK(std::abs(agg[1].pct_fuel_benefit - 14.628) < 0.15);
    fill_raw_benefit(rows);
    CHECK(rows[1].pct_fuel_benefit == doctest::Approx(agg[1].pct_fuel_benefit));
  }

  TEST_CASE("aggregate rejects an unbalanced grid") {
    CHECK_THROWS_AS(aggregate({row(0.0, 1, 0.01), row(0.0, 2, 0.01), row(1.0, 1, 0.01)}), ValidationError);
    CHECK_THROWS_AS(aggregate({row(0.5, 1, 0.01)}), ValidationError);
  }

  TEST_CASE("trend verdicts") {
    CHECK(classify_trend({7, 6, 5, 4, 3, 2, 1}, false, std::nullopt) == Verdict::Improving);
    CHECK(classify_trend({1, 1, 1, 1, 1, 1, 1}, false, std::nullopt) == Verdict::Flat);
    CHECK(classify_trend({0, 7.408, 10.437, 11.279, 10.957, 17.059, 23.578}, true, std::nullopt) ==
          Verdict::NonMonotoneImproving);
    CHECK(classify_trend({1, 2, 3}, false, std::nullopt) == Verdict::Degrading);
    CHECK(classify_trend({3, 2, 1}, false, 0.2) == Verdict::Flat);
    CHECK(classify_trend({3, 2, 1}, false, 0.01) == Verdict::Improving);
    CHECK_THROWS_AS(classify_trend({1, 2}, true, std::nullopt), ValidationError);

    const auto improving = trend_report(series({0.07, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01}));
    CHECK(verdict_of(improving, "fuel_per_veh") == Verdict::Improving);
    const auto table4 = trend_report(series({0.09321, 0.08631, 0.08348, 0.08270, 0.08300, 0.07731, 0.07124}));
    CHECK(verdict_of(table4, "fuel_per_veh") == Verdict::NonMonotoneImproving);
    CHECK(verdict_of(table4, "veh_count") == Verdict::Flat);
  }

  TEST_CASE("CSV round trips") {
    std::vector<RunResult> rows;
    for (std::uint64_t seed = 1; seed <= 3; ++seed)
      for (double p : {0.0, 0.35, 1.0}) {
        auto r = row(p, seed, 0.01 + 0.001 * seed - 0.002 * p, 90 + seed);
        r.metrics.avg_delay_s = 1.0 / 3.0 + seed;
        rows.push_back(r);
      }
    fill_raw_benefit(rows);
    const auto back = parse_results_csv(results_csv(rows));
    REQUIRE(back.size() == rows.size());
    CHECK(results_csv(back) == results_csv(rows));
    const auto agg = aggregate(rows);
    CHECK(parse_aggregate_csv(aggregate_csv(agg)) == agg);
    CHECK(aggregate_csv(agg).substr(0, aggregate_header().size()) == aggregate_header());
    CHECK(penetration_pct(0.35) == 35.0);
    CHECK_THROWS_AS(parse_aggregate_csv("route,duration_s\nr,abc\n"), ValidationError);
    CHECK_THROWS_AS(parse_aggregate_csv(aggregate_header() + "\nr,500,node\n"), ValidationError);
  }

  TEST_CASE("run_parallel rethrows the lowest failing job") {
    std::vector<int> done(20, 0);
    try {
      run_parallel(20, 4, [&](std::size_t i) {
        if (i == 7 || i == 13) throw SimulationError("job " + std::to_string(i));
        done[i] = 1;
      });
      FAIL("expected a failure");
    } catch (const SimulationError& e) {
      CHECK(std::string(e.what()) == "job 7");
    }
  }

  TEST_CASE("charts carry the aggregate values") {
    std::vector<RunResult> rows;
    for (double p : kGrid) rows.push_back(row(p, 1, 0.02 - 0.01 * p, 100 + static_cast<std::size_t>(10 * p)));
    const auto agg = aggregate(rows);
    const auto charts = sweep_charts(agg);
    CHECK(charts.size() == 7);
    const std::string svg = render_svg(charts[0]);
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    for (const auto& a : agg) CHECK(svg.find("data-y=\"" + format_number(a.pct_fuel_benefit) + "\"") != std::string::npos);
    ChartSpec bad = charts[0];
    bad.series[0].values.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
}
