#include "mixflow/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mixflow/error.hpp"

namespace mixflow {

namespace {

void check_coefficients(const RateCoefficients& c, const char* name) {
  if (c.c0 < 0.0 || c.c1 < 0.0 || c.c3 < 0.0 || c.ca < 0.0)
    throw ValidationError(std::string("emission model: negative coefficient for ") + name);
}

RateCoefficients read_coefficients(const nlohmann::json& j, const char* key, RateCoefficients fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 4) throw ValidationError(std::string("emission model: '") + key + "' needs 4 numbers");
  for (const auto& x : v)
    if (!x.is_number()) throw ValidationError(std::string("emission model: '") + key + "' needs 4 numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
}

}  // namespace

void FuelEmissionModel::validate() const {
  check_coefficients(fuel, "fuel");
  check_coefficients(co, "co");
  check_coefficients(nox, "nox");
  check_coefficients(voc, "voc");
}

FuelEmissionModel FuelEmissionModel::from_json(const nlohmann::json& j) {
  FuelEmissionModel m;
  if (j.is_null()) return m;
  if (!j.is_object()) throw ValidationError("emission model must be an object");
  m.fuel = read_coefficients(j, "fuel", m.fuel);
  m.co = read_coefficients(j, "co", m.co);
  m.nox = read_coefficients(j, "nox", m.nox);
  m.voc = read_coefficients(j, "voc", m.voc);
  m.validate();
  return m;
}

void QueueConfig::validate() const {
  if (!(enter_speed > 0.0 && exit_speed > enter_speed)) throw ValidationError("queue config: need exit > enter > 0");
  if (!(max_spacing > 0.0)) throw ValidationError("queue config: max spacing must be > 0");
}

QueueConfig QueueConfig::from_json(const nlohmann::json& j) {
  QueueConfig q;
  if (j.is_null()) return q;
  try {
    q.enter_speed = j.value("enter_speed", q.enter_speed);
    q.exit_speed = j.value("exit_speed", q.exit_speed);
    q.max_spacing = j.value("max_spacing", q.max_spacing);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("queue config: fields must be numbers");
  }
  q.validate();
  return q;
}

std::string_view to_string(Scope scope) { return scope == Scope::Node ? "node" : "full"; }

Scope parse_scope(std::string_view text) {
  if (text == "node") return Scope::Node;
  if (text == "full") return Scope::Full;
  throw ValidationError("unknown scope '" + std::string(text) + "' (expected node or full)");
}

double per_vehicle(double total, std::size_t vehicle_count) {
  return vehicle_count == 0 ? 0.0 : total / static_cast<double>(vehicle_count);
}

double percent_benefit(double base_per_vehicle, double case_per_vehicle) {
  if (!(base_per_vehicle > 0.0)) throw ValidationError("percent benefit needs a positive baseline");
  return 100.0 * (base_per_vehicle - case_per_vehicle) / base_per_vehicle;
}

QueueSummary queue_summary(const std::vector<std::vector<double>>& series) {
  double sum = 0.0;
  double max = 0.0;
  std::size_t n = 0;
  for (const auto& s : series) {
    for (double q : s) {
      sum += q;
      max = std::max(max, q);
      ++n;
    }
  }
  if (n == 0) throw ValidationError("queue summary of an empty series");
  return {sum / static_cast<double>(n), max};
}

std::vector<QueueCounter> queue_counters(const Network& net, Scope scope) {
  std::vector<QueueCounter> out;
  auto add = [&out](LinkIndex link, double position, double capture) {
    for (const auto& c : out)
      if (c.link == link && c.stop_position == position) return;
    out.push_back({link, position, std::min(capture, position)});
  };
  for (const auto& node : net.eval_nodes)
    for (const auto& a : node.approaches) add(a.link, a.stop_position, node.capture_length);
  if (scope == Scope::Full) {
    for (const auto& sc : net.signal_controllers)
      for (const auto& g : sc.groups)
        for (const auto& h : g.heads) add(h.link, h.position, kFullScopeCapture);
    for (const auto& s : net.stop_signs) add(s.line.link, s.line.position, kFullScopeCapture);
  }
  return out;
}

bool in_scope(const Network& net, Scope scope, LinkIndex link, double offset) {
  if (scope == Scope::Full) return true;
  for (const auto& node : net.eval_nodes)
    for (const auto& a : node.approaches)
      if (a.link == link && offset <= a.stop_position && offset >= a.stop_position - node.capture_length) return true;
  return false;
}

MetricsAccumulator::MetricsAccumulator(const Network& net, Scope scope, double dt, FuelEmissionModel model,
                                       QueueConfig qc)
    : net_(net), scope_(scope), model_(model), qc_(qc), counters_(queue_counters(net, scope)), dt_(dt) {
  model_.validate();
  qc_.validate();
  counters_by_link_.assign(net_.links.size(), {});
  for (std::size_t i = 0; i < counters_.size(); ++i) counters_by_link_[counters_[i].link].push_back(i);
  queue_series_.assign(counters_.size(), {});
  samples_by_link_.assign(net_.links.size(), {});
}

MetricsAccumulator::Track& MetricsAccumulator::track(VehicleId id) {
  if (tracks_.size() <= id) tracks_.resize(static_cast<std::size_t>(id) + 1);
  return tracks_[id];
}

void MetricsAccumulator::on_enter(const VehicleRecord& vehicle) {
  Track& tr = track(vehicle.id);
  tr.speed_factor = vehicle.speed_factor;
  tr.length = vehicle.length;
}

void MetricsAccumulator::complete(Track& tr) {
  tr.inside = false;
  tr.delay += tr.pending_delay;
  tr.pending_delay = 0.0;
  if (!tr.completed) {
    tr.completed = true;
    ++completed_;
  }
}

void MetricsAccumulator::on_exit(VehicleId vehicle, std::int64_t /*step*/) {
  Track& tr = track(vehicle);
  if (tr.inside) complete(tr);
}

void MetricsAccumulator::on_step(std::int64_t /*step*/, double /*t*/, std::span<const Sample> samples,
                                 std::span<const SignalState> /*signals*/) {
  ++steps_;
  const double h = dt_ / 3600.0;
  for (LinkIndex l : touched_) samples_by_link_[l].clear();
  touched_.clear();

  for (std::uint32_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    Track& tr = track(s.vehicle);
    tr.queued = tr.queued ? s.speed <= qc_.exit_speed : s.speed < qc_.enter_speed;
    if (!counters_by_link_[s.link].empty()) {
      if (samples_by_link_[s.link].empty()) touched_.push_back(s.link);
      samples_by_link_[s.link].push_back(i);
    }

    if (!in_scope(net_, scope_, s.link, s.offset)) {
      if (tr.inside) complete(tr);
      continue;
    }
    if (!tr.seen) {
      tr.seen = true;
      ++vehicle_count_;
    }
    tr.inside = true;
    fuel_ += model_.fuel.rate(s.speed, s.accel) * h;
    co_ += model_.co.rate(s.speed, s.accel) * h;
    nox_ += model_.nox.rate(s.speed, s.accel) * h;
    voc_ += model_.voc.rate(s.speed, s.accel) * h;
    if (s.speed < kStopSpeed) stopped_time_ += dt_;
    tr.stops.observe(s.speed);
    const double u_des = net_.links[s.link].speed_limit * std::min(tr.speed_factor, 1.0);
    tr.pending_delay += dt_ * (1.0 - s.speed / u_des);
  }

  for (std::size_t c = 0; c < counters_.size(); ++c) {
    const QueueCounter& qc = counters_[c];
    double best = 0.0;
    const auto& idx = samples_by_link_[qc.link];
    for (int lane = 0; lane < net_.links[qc.link].lane_count; ++lane) {
      lane_scratch_.clear();
      lane_queued_.clear();
      for (std::uint32_t i : idx) {
        const Sample& s = samples[i];
        if (s.lane != lane || s.offset > qc.stop_position) continue;
        lane_scratch_.push_back({s.offset, s.offset - tracks_[s.vehicle].length});
        lane_queued_.push_back(tracks_[s.vehicle].queued ? 1 : 0);
      }
      std::vector<std::size_t> order(lane_scratch_.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(),
                [this](std::size_t a, std::size_t b) { return lane_scratch_[a].first > lane_scratch_[b].first; });
      std::size_t k = 0;
      while (k < order.size() && !(lane_queued_[order[k]] && lane_scratch_[order[k]].first >= qc.stop_position - qc.capture))
        ++k;
      if (k == order.size() || lane_scratch_[order[k]].first < qc.stop_position - qc.capture) continue;
      double rear = lane_scratch_[order[k]].second;
      for (std::size_t j = k + 1; j < order.size(); ++j) {
        const auto& next = lane_scratch_[order[j]];
        if (!lane_queued_[order[j]] || rear - next.first > qc_.max_spacing) break;
        rear = next.second;
      }
      best = std::max(best, qc.stop_position - rear);
    }
    queue_series_[c].push_back(best);
  }
}

NodeEvaluationResult MetricsAccumulator::result() const {
  NodeEvaluationResult r;
  r.scope = scope_;
  r.vehicle_count = vehicle_count_;
  r.total_fuel = fuel_;
  r.co_g = co_;
  r.nox_g = nox_;
  r.voc_g = voc_;
  r.fuel_per_vehicle = per_vehicle(fuel_, vehicle_count_);
  r.co_per_vehicle = per_vehicle(co_, vehicle_count_);
  r.nox_per_vehicle = per_vehicle(nox_, vehicle_count_);
  r.voc_per_vehicle = per_vehicle(voc_, vehicle_count_);
  if (steps_ > 0 && !counters_.empty()) {
    const QueueSummary q = queue_summary(queue_series_);
    r.avg_queue_m = q.avg;
    r.max_queue_m = q.max;
  }
  double delay = 0.0;
  for (const auto& tr : tracks_) {
    if (tr.completed) delay += tr.delay;
    r.total_stops += tr.stops.stops;
  }
  r.completed_vehicles = completed_;
  r.avg_delay_s = per_vehicle(delay, completed_);
  r.avg_stopped_delay_s = per_vehicle(stopped_time_, vehicle_count_);
  return r;
}

NodeEvaluationResult node_evaluation(const TrajectoryLog& log, const Network& net, Scope scope,
                                     const FuelEmissionModel& model, const QueueConfig& qc) {
  MetricsAccumulator acc(net, scope, log.dt, model, qc);
  replay(log, acc);
  return acc.result();
}

}  // namespace mixflow
