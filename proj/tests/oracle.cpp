#include "oracle.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "support.hpp"

namespace mixflow::test {

Network oracle_network() {
  const char* doc = R"({
    "links": [
      {"id": "a", "length": 300, "lanes": 2, "speed_limit": 15},
      {"id": "b", "length": 200, "lanes": 1, "speed_limit": 10}
    ],
    "connectors": [{"from": {"link": "a", "lane": 0}, "to": {"link": "b", "lane": 0}}],
    "signals": [{"id": "s", "groups": [{"id": "g", "program": [{"state": "green", "duration": 3},
      {"state": "red", "duration": 2}], "heads": [{"link": "b", "position": 150}]}]}],
    "stop_signs": [],
    "inputs": [{"link": "a", "rate": 0, "routes": [{"route": "r", "probability": 1}]}],
    "routes": [{"id": "r", "links": ["a", "b"]}],
    "eval_nodes": [{"id": "n", "capture_length": 100, "approaches": [{"link": "a", "stop_position": 250}]}]
  })";
  return load_network(doc);
}

TrajectoryLog random_log(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };

  TrajectoryLog log;
  log.dt = 0.1;
  const int steps = 1 + pick(100);
  const int count = pick(6);
  for (int i = 0; i < count; ++i) {
    VehicleRecord r;
    r.id = static_cast<VehicleId>(i);
    r.kind = pick(2) ? VehicleKind::AV : VehicleKind::Human;
    r.length = pick(2) ? kVehicleLength : uni(3.5, 12.0);
    r.speed_factor = uni(0.8, 1.2);
    r.enter_step = pick(steps);
    r.spawn_time = static_cast<double>(r.enter_step) * log.dt;
    if (pick(2)) r.exit_step = r.enter_step + 1 + pick(steps);
    log.vehicles.push_back(r);
  }
  log.spawned = log.vehicles.size();

  const double speeds[] = {0.0, 0.05, 0.15, 0.3, 1.2, 1.5, 2.0, 2.5, 3.0, 8.0, 13.0};
  for (int s = 0; s < steps; ++s) {
    StepRecord st;
    st.step = s;
    st.t = s * log.dt;
    st.signals = {s % 50 < 30 ? SignalState::Green : SignalState::Red};
    std::vector<double> used_a0, used_a1, used_b;
    for (const auto& r : log.vehicles) {
      if (s < r.enter_step || (r.exit_step && s >= *r.exit_step)) continue;
      Sample smp;
      smp.vehicle = r.id;
      smp.link = static_cast<std::uint32_t>(pick(4) == 0 ? 1 : 0);
      smp.lane = smp.link == 0 ? pick(2) : 0;
      auto& used = smp.link == 1 ? used_b : (smp.lane == 0 ? used_a0 : used_a1);
      // Distinct fronts per lane; bias towards the measured regions.
      do {
        smp.offset = smp.link == 1 ? uni(100.0, 160.0) : uni(120.0, 260.0);
      } while (std::find(used.begin(), used.end(), smp.offset) != used.end());
      used.push_back(smp.offset);
      smp.speed = pick(3) ? speeds[pick(11)] : uni(0.0, 16.0);
      smp.accel = uni(-3.5, 2.5);
      st.samples.push_back(smp);
    }
    log.steps.push_back(std::move(st));
  }
  return log;
}

namespace {

double rate(const RateCoefficients& c, double v, double a) {
  const double a_pos = a > 0.0 ? a : 0.0;
  return c.c0 + c.c1 * v + c.c3 * v * v * v + c.ca * a_pos * v;
}

struct Region {
  LinkIndex link;
  double lo;
  double hi;
};

}  // namespace

NodeEvaluationResult brute_force_evaluation(const TrajectoryLog& log, const Network& net, Scope scope,
                                            const FuelEmissionModel& model, const QueueConfig& qc) {
  NodeEvaluationResult out;
  out.scope = scope;

  std::vector<Region> regions;
  for (const auto& n : net.eval_nodes)
    for (const auto& a : n.approaches) regions.push_back({a.link, a.stop_position - n.capture_length, a.stop_position});
  auto inside = [&](const Sample& s) {
    if (scope == Scope::Full) return true;
    for (const auto& r : regions)
      if (s.link == r.link && s.offset >= r.lo && s.offset <= r.hi) return true;
    return false;
  };

  std::map<VehicleId, const VehicleRecord*> rec;
  for (const auto& v : log.vehicles) rec[v.id] = &v;

  // Emissions, stopped time and vehicle count, in log order.
  const double h = log.dt / 3600.0;
  double stopped = 0.0;
  std::map<VehicleId, bool> counted;
  for (const auto& st : log.steps)
    for (const auto& s : st.samples) {
      if (!inside(s)) continue;
      counted[s.vehicle] = true;
      out.total_fuel += rate(model.fuel, s.speed, s.accel) * h;
      out.co_g += rate(model.co, s.speed, s.accel) * h;
      out.nox_g += rate(model.nox, s.speed, s.accel) * h;
      out.voc_g += rate(model.voc, s.speed, s.accel) * h;
      if (s.speed < 0.1) stopped += log.dt;
    }
  out.vehicle_count = counted.size();
  const double n = static_cast<double>(out.vehicle_count);
  if (out.vehicle_count > 0) {
    out.fuel_per_vehicle = out.total_fuel / n;
    out.co_per_vehicle = out.co_g / n;
    out.nox_per_vehicle = out.nox_g / n;
    out.voc_per_vehicle = out.voc_g / n;
    out.avg_stopped_delay_s = stopped / n;
  }

  // Per vehicle: stops over its in-region samples; delay over each
  // contiguous in-region visit that ended (left the region or the network).
  double delay_total = 0.0;
  for (const auto& [id, r] : rec) {
    std::vector<std::pair<std::int64_t, const Sample*>> trace;
    for (const auto& st : log.steps)
      for (const auto& s : st.samples)
        if (s.vehicle == id) trace.push_back({st.step, &s});

    bool armed = true;
    std::size_t stops = 0;
    for (const auto& [step, s] : trace) {
      if (!inside(*s)) continue;
      if (armed && s->speed < 0.2) {
        ++stops;
        armed = false;
      } else if (!armed && s->speed > 1.0) {
        armed = true;
      }
    }
    out.total_stops += stops;

    double delay = 0.0;
    double visit = 0.0;
    bool in_visit = false;
    bool finished_any = false;
    for (const auto& [step, s] : trace) {
      if (r->exit_step && step >= *r->exit_step) break;
      if (inside(*s)) {
        in_visit = true;
        const double u = net.links[s->link].speed_limit * std::min(r->speed_factor, 1.0);
        visit += log.dt * (1.0 - s->speed / u);
      } else if (in_visit) {
        delay += visit;
        visit = 0.0;
        in_visit = false;
        finished_any = true;
      }
    }
    const bool exited_in_log = r->exit_step && !log.steps.empty() && *r->exit_step <= log.steps.back().step;
    if (in_visit && exited_in_log) {
      delay += visit;
      finished_any = true;
    }
    if (finished_any) {
      delay_total += delay;
      ++out.completed_vehicles;
    }
  }
  if (out.completed_vehicles > 0) out.avg_delay_s = delay_total / static_cast<double>(out.completed_vehicles);

  // Queues: replay the per-vehicle hysteresis over the whole log, then
  // measure each counter lane by lane.
  struct Counter {
    LinkIndex link;
    double stop;
    double capture;
  };
  std::vector<Counter> counters;
  auto add = [&](LinkIndex l, double stop, double capture) {
    for (const auto& c : counters)
      if (c.link == l && c.stop == stop) return;
    counters.push_back({l, stop, std::min(capture, stop)});
  };
  for (const auto& nd : net.eval_nodes)
    for (const auto& a : nd.approaches) add(a.link, a.stop_position, nd.capture_length);
  if (scope == Scope::Full) {
    for (const auto& sc : net.signal_controllers)
      for (const auto& g : sc.groups)
        for (const auto& hd : g.heads) add(hd.link, hd.position, 250.0);
    for (const auto& s : net.stop_signs) add(s.line.link, s.line.position, 250.0);
  }
  if (counters.empty() || log.steps.empty()) return out;

  std::map<VehicleId, bool> queued;
  std::vector<std::vector<double>> series(counters.size());
  for (const auto& st : log.steps) {
    for (const auto& s : st.samples) {
      bool& q = queued[s.vehicle];
      q = q ? s.speed <= qc.exit_speed : s.speed < qc.enter_speed;
    }
    for (std::size_t c = 0; c < counters.size(); ++c) {
      const auto& ct = counters[c];
      double best = 0.0;
      for (int lane = 0; lane < net.links[ct.link].lane_count; ++lane) {
        std::vector<const Sample*> here;
        for (const auto& s : st.samples)
          if (s.link == ct.link && s.lane == lane && s.offset <= ct.stop) here.push_back(&s);
        const Sample* head = nullptr;
        for (const Sample* s : here)
          if (queued[s->vehicle] && s->offset >= ct.stop - ct.capture && (!head || s->offset > head->offset)) head = s;
        if (!head) continue;
        const Sample* cur = head;
        for (;;) {
          const Sample* next = nullptr;
          for (const Sample* s : here)
            if (s->offset < cur->offset && (!next || s->offset > next->offset)) next = s;
          const double rear = cur->offset - rec[cur->vehicle]->length;
          if (!next || !queued[next->vehicle] || rear - next->offset > qc.max_spacing) break;
          cur = next;
        }
        best = std::max(best, ct.stop - (cur->offset - rec[cur->vehicle]->length));
      }
      series[c].push_back(best);
    }
  }
  double sum = 0.0;
  std::size_t k = 0;
  for (const auto& s : series)
    for (double q : s) {
      sum += q;
      out.max_queue_m = std::max(out.max_queue_m, q);
      ++k;
    }
  out.avg_queue_m = sum / static_cast<double>(k);
  return out;
}

}  // namespace mixflow::test
