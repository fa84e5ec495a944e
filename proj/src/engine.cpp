#include "mixflow/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "mixflow/csv.hpp"
#include "mixflow/error.hpp"

namespace mixflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kNoRank = std::numeric_limits<std::size_t>::max();
constexpr double kAchievableHorizon = 100.0;  // m, leader range for lane speed comparison
constexpr double kLaneChangeCooldown = 3.0;   // s between routine changes
constexpr double kRerouteDistance = 50.0;     // m before a lane end where a missed change is given up

}  // namespace

std::string_view to_string(VehicleKind kind) { return kind == VehicleKind::AV ? "AV" : "Human"; }

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
  if (!(penetration >= 0.0 && penetration <= 1.0)) throw ValidationError("penetration must lie in [0, 1]");
  if (!(duration > 0.0)) throw ValidationError("duration must be > 0");
  const double steps = duration / dt;
  if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
    throw ValidationError("duration must be a multiple of dt");
}

std::int64_t SimConfig::step_count() const { return static_cast<std::int64_t>(std::llround(duration / dt)); }

// ---------------------------------------------------------------------------
// Observers

void TrajectoryRecorder::on_enter(const VehicleRecord& vehicle) {
  log_.vehicles.push_back(vehicle);
  ++log_.spawned;
}

void TrajectoryRecorder::on_exit(VehicleId vehicle, std::int64_t step) {
  auto it = std::lower_bound(log_.vehicles.begin(), log_.vehicles.end(), vehicle,
                             [](const VehicleRecord& r, VehicleId id) { return r.id < id; });
  if (it != log_.vehicles.end() && it->id == vehicle) it->exit_step = step;
}

void TrajectoryRecorder::on_step(std::int64_t step, double t, std::span<const Sample> samples,
                                 std::span<const SignalState> signals) {
  // Vehicles enter out of id order when entry queues hold them back.
  if (!std::is_sorted(log_.vehicles.begin(), log_.vehicles.end(),
                      [](const VehicleRecord& a, const VehicleRecord& b) { return a.id < b.id; }))
    std::sort(log_.vehicles.begin(), log_.vehicles.end(),
              [](const VehicleRecord& a, const VehicleRecord& b) { return a.id < b.id; });
  log_.steps.push_back({step, t, {samples.begin(), samples.end()}, {signals.begin(), signals.end()}});
}

void replay(const TrajectoryLog& log, StepObserver& observer) {
  std::vector<const VehicleRecord*> by_enter;
  std::vector<const VehicleRecord*> by_exit;
  for (const auto& v : log.vehicles) {
    by_enter.push_back(&v);
    if (v.exit_step) by_exit.push_back(&v);
  }
  auto order = [](auto key) {
    return [key](const VehicleRecord* a, const VehicleRecord* b) {
      return key(*a) != key(*b) ? key(*a) < key(*b) : a->id < b->id;
    };
  };
  std::stable_sort(by_enter.begin(), by_enter.end(), order([](const VehicleRecord& r) { return r.enter_step; }));
  std::stable_sort(by_exit.begin(), by_exit.end(), order([](const VehicleRecord& r) { return *r.exit_step; }));

  std::size_t e = 0;
  std::size_t x = 0;
  for (const auto& s : log.steps) {
    while (e < by_enter.size() && by_enter[e]->enter_step <= s.step) observer.on_enter(*by_enter[e++]);
    while (x < by_exit.size() && *by_exit[x]->exit_step <= s.step) {
      observer.on_exit(by_exit[x]->id, *by_exit[x]->exit_step);
      ++x;
    }
    observer.on_step(s.step, s.t, s.samples, s.signals);
  }
}

TrajectoryCsvWriter::TrajectoryCsvWriter(std::ostream& out, const Network& net) : out_(out), net_(net) {
  out_ << "t,veh_id,kind,link,offset_m,speed_mps,accel_mps2\n";
}

void TrajectoryCsvWriter::on_enter(const VehicleRecord& vehicle) {
  if (kinds_.size() <= vehicle.id) kinds_.resize(vehicle.id + 1, VehicleKind::Human);
  kinds_[vehicle.id] = vehicle.kind;
}

void TrajectoryCsvWriter::on_step(std::int64_t /*step*/, double t, std::span<const Sample> samples,
                                  std::span<const SignalState> /*signals*/) {
  const std::string ts = format_number(t);
  for (const auto& s : samples) {
    out_ << ts << ',' << s.vehicle << ',' << to_string(kinds_[s.vehicle]) << ',' << net_.links[s.link].id << ','
         << format_number(s.offset) << ',' << format_number(s.speed) << ',' << format_number(s.accel) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(const Network& net, const DriverDefaults& drivers, const SimConfig& config)
    : net_(net), drivers_(drivers), config_(config), streams_(config.seed), min_gap_(kInf) {
  config_.validate();
  lanes_.assign(net_.lane_slot_count(), {});
  entry_queues_.assign(net_.inputs.size(), {});
  heads_by_link_.assign(net_.links.size(), {});
  stops_by_link_.assign(net_.links.size(), {});

  std::size_t flat = 0;
  for (const auto& sc : net_.signal_controllers) {
    group_base_.push_back(flat);
    for (std::size_t g = 0; g < sc.groups.size(); ++g) {
      for (const auto& h : sc.groups[g].heads) {
        heads_by_link_[h.link].push_back({flat + g, head_group_.size(), h});
        head_group_.push_back(flat + g);
      }
    }
    flat += sc.groups.size();
  }
  for (std::size_t i = 0; i < net_.stop_signs.size(); ++i)
    stops_by_link_[net_.stop_signs[i].line.link].push_back({i, net_.stop_signs[i].line});
  for (auto& hs : heads_by_link_)
    std::stable_sort(hs.begin(), hs.end(), [](const HeadRef& a, const HeadRef& b) { return a.line.position < b.line.position; });
  for (auto& ss : stops_by_link_)
    std::stable_sort(ss.begin(), ss.end(), [](const StopRef& a, const StopRef& b) { return a.line.position < b.line.position; });
  signal_states_.assign(flat, SignalState::Red);
  update_signals();
}

std::size_t Simulation::entry_queued() const {
  std::size_t n = 0;
  for (const auto& q : entry_queues_) n += q.size();
  return n;
}

void Simulation::update_signals() {
  const double t = time();
  for (std::size_t c = 0; c < net_.signal_controllers.size(); ++c) {
    const auto& sc = net_.signal_controllers[c];
    for (std::size_t g = 0; g < sc.groups.size(); ++g) signal_states_[group_base_[c] + g] = sc.state(g, t);
  }
}

void Simulation::refresh_desired_speed(VehicleState& v) const {
  const double limit = net_.links[v.pos.link].speed_limit;
  set_desired_speed(v.params, v.kind == VehicleKind::AV ? limit : v.speed_factor * limit);
}

void Simulation::rebuild_lanes() {
  for (auto& slot : lanes_) slot.clear();
  for (std::size_t i = 0; i < vehicles_.size(); ++i)
    lanes_[net_.lane_slot(vehicles_[i].pos.link, vehicles_[i].pos.lane)].push_back(static_cast<std::uint32_t>(i));
  slot_rank_.assign(vehicles_.size(), 0);
  for (auto& slot : lanes_) {
    if (slot.size() > 1) {
      std::sort(slot.begin(), slot.end(), [this](std::uint32_t a, std::uint32_t b) {
        const auto& va = vehicles_[a];
        const auto& vb = vehicles_[b];
        return va.pos.offset != vb.pos.offset ? va.pos.offset < vb.pos.offset : va.id > vb.id;
      });
    }
    for (std::size_t r = 0; r < slot.size(); ++r) slot_rank_[slot[r]] = static_cast<std::uint32_t>(r);
  }
}

void Simulation::index_vehicle(std::size_t index) {
  const auto& v = vehicles_[index];
  auto& slot = lanes_[net_.lane_slot(v.pos.link, v.pos.lane)];
  auto it = std::lower_bound(slot.begin(), slot.end(), v.pos.offset,
                             [this](std::uint32_t a, double off) { return vehicles_[a].pos.offset < off; });
  slot.insert(it, static_cast<std::uint32_t>(index));
  if (slot_rank_.size() < vehicles_.size()) slot_rank_.resize(vehicles_.size(), 0);
  for (std::size_t r = 0; r < slot.size(); ++r) slot_rank_[slot[r]] = static_cast<std::uint32_t>(r);
}

void Simulation::move_lane(std::size_t index, int lane) {
  auto& v = vehicles_[index];
  auto& old_slot = lanes_[net_.lane_slot(v.pos.link, v.pos.lane)];
  old_slot.erase(old_slot.begin() + slot_rank_[index]);
  for (std::size_t r = 0; r < old_slot.size(); ++r) slot_rank_[old_slot[r]] = static_cast<std::uint32_t>(r);
  v.pos.lane = lane;
  index_vehicle(index);
}

void Simulation::place_vehicle(VehicleState vehicle) {
  auto it = std::lower_bound(vehicles_.begin(), vehicles_.end(), vehicle.id,
                             [](const VehicleState& s, VehicleId id) { return s.id < id; });
  vehicles_.insert(it, std::move(vehicle));
  next_id_ = std::max(next_id_, vehicles_.back().id + 1);
  ++spawned_;
  rebuild_lanes();
}

std::optional<Simulation::Leader> Simulation::find_leader(LinkIndex link, int lane, double offset, std::size_t route,
                                                          std::size_t route_index, std::size_t first_rank,
                                                          double max_gap) const {
  const auto& chain = net_.routes[route].links;
  double base = -offset;
  bool first = true;
  while (base <= max_gap) {
    const auto& slot = lanes_[net_.lane_slot(link, lane)];
    std::size_t start = 0;
    if (first) {
      if (first_rank != kNoRank) {
        start = first_rank;
      } else {
        auto it = std::lower_bound(slot.begin(), slot.end(), offset,
                                   [this](std::uint32_t a, double off) { return vehicles_[a].pos.offset < off; });
        start = static_cast<std::size_t>(it - slot.begin());
      }
    }
    if (start < slot.size()) {
      const auto& u = vehicles_[slot[start]];
      const double gap = base + u.pos.offset - u.length;
      if (gap > max_gap) return std::nullopt;
      return Leader{slot[start], gap};
    }
    if (route_index + 1 >= chain.size()) return std::nullopt;
    const LinkIndex next = chain[route_index + 1];
    auto nl = net_.next_lane(link, lane, next);
    if (!nl) return std::nullopt;
    base += net_.links[link].length;
    link = next;
    lane = *nl;
    ++route_index;
    first = false;
  }
  return std::nullopt;
}

std::optional<Simulation::Leader> Simulation::leader_in_lane(std::size_t index, int lane, double max_gap) const {
  const auto& v = vehicles_[index];
  const std::size_t rank = lane == v.pos.lane ? slot_rank_[index] + 1 : kNoRank;
  return find_leader(v.pos.link, lane, v.pos.offset, v.route, v.route_index, rank, max_gap);
}

std::optional<Simulation::Leader> Simulation::follower_in_lane(std::size_t index, int lane) const {
  const auto& v = vehicles_[index];
  const auto& slot = lanes_[net_.lane_slot(v.pos.link, lane)];
  std::size_t end;  // followers are slot[0 .. end)
  if (lane == v.pos.lane) {
    end = slot_rank_[index];
  } else {
    auto it = std::lower_bound(slot.begin(), slot.end(), v.pos.offset,
                               [this](std::uint32_t a, double off) { return vehicles_[a].pos.offset < off; });
    end = static_cast<std::size_t>(it - slot.begin());
  }
  if (end > 0) {
    const auto& u = vehicles_[slot[end - 1]];
    return Leader{slot[end - 1], v.pos.offset - v.length - u.pos.offset};
  }
  double base = v.pos.offset - v.length;
  LinkIndex link = v.pos.link;
  int l = lane;
  while (base <= kLookahead) {
    auto up = net_.incoming(link, l);
    if (!up) return std::nullopt;
    link = up->first;
    l = up->second;
    base += net_.links[link].length;
    const auto& s = lanes_[net_.lane_slot(link, l)];
    if (!s.empty()) {
      const auto& u = vehicles_[s.back()];
      return Leader{s.back(), base - u.pos.offset};
    }
  }
  return std::nullopt;
}

double Simulation::lane_end_gap(std::size_t index, int lane) const {
  const auto& v = vehicles_[index];
  const auto& chain = net_.routes[v.route].links;
  LinkIndex link = v.pos.link;
  std::size_t ri = v.route_index;
  double base = -v.pos.offset;
  while (base <= kLookahead) {
    if (ri + 1 >= chain.size()) return kInf;
    auto nl = net_.next_lane(link, lane, chain[ri + 1]);
    if (!nl) return base + net_.links[link].length;
    base += net_.links[link].length;
    link = chain[ri + 1];
    lane = *nl;
    ++ri;
  }
  return kInf;
}

bool Simulation::lane_valid_for_route(const VehicleState& v, int lane) const {
  const auto& chain = net_.routes[v.route].links;
  if (v.route_index + 1 >= chain.size()) return true;
  return net_.next_lane(v.pos.link, lane, chain[v.route_index + 1]).has_value();
}

double Simulation::achievable_speed(std::size_t index, int lane) const {
  const double desired = desired_speed(vehicles_[index].params);
  auto leader = leader_in_lane(index, lane, kAchievableHorizon);
  if (!leader) return desired;
  return std::min(desired, vehicles_[leader->index].v);
}

Perception Simulation::perceive(std::size_t index) {
  auto& me = vehicles_[index];
  const auto& chain = net_.routes[me.route].links;
  const std::size_t k = static_cast<std::size_t>(perception_count(me.params));
  const double dt = config_.dt;
  const double b_comf = comfort_decel(me.params);

  std::erase_if(me.amber_latches,
                [this](const auto& l) { return signal_states_[head_group_[l.first]] != SignalState::Amber; });

  Perception out;
  LinkIndex link = me.pos.link;
  int lane = me.pos.lane;
  std::size_t ri = me.route_index;
  double base = -me.pos.offset;
  bool first = true;
  bool dwell_seen = false;
  while (true) {
    const std::size_t before = out.objects.size();
    const double from = first ? me.pos.offset : 0.0;

    const auto& slot = lanes_[net_.lane_slot(link, lane)];
    std::size_t taken = 0;
    for (std::size_t j = first ? slot_rank_[index] + 1 : 0; j < slot.size() && taken < k; ++j, ++taken) {
      const auto& u = vehicles_[slot[j]];
      const double gap = base + u.pos.offset - u.length;
      if (gap > kLookahead) break;
      out.objects.push_back({ObjectKind::Vehicle, gap, u.v, u.kind == VehicleKind::AV, u.id});
    }

    for (const auto& h : heads_by_link_[link]) {
      if (!h.line.covers(lane) || h.line.position < from) continue;
      const double gap = base + h.line.position;
      if (gap > kLookahead) break;
      const SignalState state = signal_states_[h.flat_group];
      if (state == SignalState::Amber) {
        auto latch = std::find_if(me.amber_latches.begin(), me.amber_latches.end(),
                                  [&](const auto& l) { return l.first == h.head; });
        if (latch == me.amber_latches.end()) {
          const bool stop = signal_constraint(state, gap, me.v, b_comf).has_value();
          me.amber_latches.emplace_back(h.head, stop);
          latch = me.amber_latches.end() - 1;
        }
        if (latch->second) out.objects.push_back({ObjectKind::SignalLine, gap, 0.0});
      } else if (auto obj = signal_constraint(state, gap, me.v, b_comf)) {
        out.objects.push_back(*obj);
      }
    }

    for (const auto& s : stops_by_link_[link]) {
      if (!s.line.covers(lane) || s.line.position < from) continue;
      if (static_cast<int>(s.sign) == me.cleared_stop) continue;
      const double gap = base + s.line.position;
      if (gap > kLookahead) break;
      if (!dwell_seen) {
        dwell_seen = true;
        me.stop_dwell = update_stop_dwell(me.stop_dwell, gap, me.v, dt);
        if (!stop_sign_constraint(gap, me.v, me.stop_dwell)) {
          me.cleared_stop = static_cast<int>(s.sign);
          me.stop_dwell = 0.0;
          continue;
        }
      }
      out.objects.push_back({ObjectKind::StopLine, gap, 0.0});
    }

    std::stable_sort(out.objects.begin() + static_cast<std::ptrdiff_t>(before), out.objects.end(),
                     [](const PerceivedObject& a, const PerceivedObject& b) { return a.gap < b.gap; });
    if (out.objects.size() >= k) break;
    if (ri + 1 >= chain.size()) break;
    const LinkIndex next = chain[ri + 1];
    auto nl = net_.next_lane(link, lane, next);
    const double link_end = base + net_.links[link].length;
    if (!nl) {
      if (link_end <= kLookahead) out.objects.push_back({ObjectKind::RouteEnd, link_end, 0.0});
      break;
    }
    if (link_end > kLookahead) break;
    base = link_end;
    link = next;
    lane = *nl;
    ++ri;
    first = false;
  }
  if (!dwell_seen) me.stop_dwell = 0.0;
  if (out.objects.size() > k) out.objects.resize(k);
  return out;
}

LaneChangeDecision Simulation::decide_lane_change(std::size_t index) {
  auto& me = vehicles_[index];
  const Link& link = net_.links[me.pos.link];
  LaneChangeSituation s;
  Urgency urgency = Urgency::Routine;

  if (!lane_valid_for_route(me, me.pos.lane) && link.length - me.pos.offset < kRerouteDistance) reroute(index);
  if (!lane_valid_for_route(me, me.pos.lane)) {
    int best = -1;
    for (int l = 0; l < link.lane_count; ++l)
      if (lane_valid_for_route(me, l) && (best < 0 || std::abs(l - me.pos.lane) < std::abs(best - me.pos.lane)))
        best = l;
    if (best < 0) return {};
    urgency = Urgency::RouteRequired;
    s.target_lane = me.pos.lane + (best > me.pos.lane ? 1 : -1);
    s.distance_to_mandatory = link.length - me.pos.offset;
  } else {
    if (time() - me.last_lane_change < kLaneChangeCooldown || link.lane_count < 2) return {};
    const double to_end = link.length - me.pos.offset;
    s.own_achievable_speed = achievable_speed(index, me.pos.lane);
    for (int l : {me.pos.lane - 1, me.pos.lane + 1}) {
      if (l < 0 || l >= link.lane_count) continue;
      if (!lane_valid_for_route(me, l) && to_end < kLookahead) continue;
      const double ach = achievable_speed(index, l);
      if (!s.target_lane || ach > s.target_achievable_speed) {
        s.target_lane = l;
        s.target_achievable_speed = ach;
      }
    }
    if (!s.target_lane) return {};
  }

  const int target = *s.target_lane;
  if (auto lead = leader_in_lane(index, target, kLookahead)) {
    const auto& u = vehicles_[lead->index];
    s.leader = Neighbor{lead->gap, u.v, u.kind == VehicleKind::AV, u.id};
  }
  if (auto fol = follower_in_lane(index, target)) {
    const auto& u = vehicles_[fol->index];
    s.follower = Neighbor{fol->gap, u.v, u.kind == VehicleKind::AV, u.id, standstill_distance(u.params),
                          max_decel(u.params)};
  }
  LaneChangeDecision d = lane_change_decision(me.v, me.params, s, urgency, config_.dt);
  if (d.change && !change_feasible(index, target)) d.change = false;
  return d;
}

bool Simulation::reroute(std::size_t index) {
  auto& me = vehicles_[index];
  for (std::size_t r = 0; r < net_.routes.size(); ++r) {
    const auto& chain = net_.routes[r].links;
    for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
      if (chain[k] != me.pos.link || !net_.next_lane(me.pos.link, me.pos.lane, chain[k + 1])) continue;
      me.route = r;
      me.route_index = k;
      return true;
    }
  }
  return false;
}

bool Simulation::change_feasible(std::size_t index, int lane) const {
  const auto& me = vehicles_[index];
  const double dt = config_.dt;
  const double b = max_decel(me.params);
  if (safe_speed(lane_end_gap(index, lane), 0.0, b, dt) < me.v - b * dt) return false;
  if (auto lead = leader_in_lane(index, lane, kLookahead)) {
    if (lead->gap <= 0.0) return false;
    if (safe_speed(lead->gap, vehicles_[lead->index].v, b, dt) < me.v - b * dt) return false;
  }
  if (auto fol = follower_in_lane(index, lane)) {
    const auto& u = vehicles_[fol->index];
    const double bf = max_decel(u.params);
    if (fol->gap <= 0.0) return false;
    if (safe_speed(fol->gap, me.v, bf, dt) < u.v - bf * dt) return false;
  }
  return true;
}

void Simulation::arrivals() {
  const double t0 = time();
  const double dt = config_.dt;
  for (std::size_t i = 0; i < net_.inputs.size(); ++i) {
    const FlowInput& in = net_.inputs[i];
    const unsigned n = streams_.arrivals.poisson(in.rate * dt / 3600.0);
    for (unsigned k = 0; k < n; ++k) {
      VehicleState s;
      s.id = next_id_++;
      s.input = i;
      s.spawn_time = t0;
      s.kind = streams_.composition.uniform() < config_.penetration ? VehicleKind::AV : VehicleKind::Human;
      const double z = streams_.driver_params.uniform();
      const double percentile = streams_.driver_params.uniform();
      const double spread = streams_.driver_params.uniform();
      const double pick = streams_.routing.uniform();
      if (s.kind == VehicleKind::AV) {
        s.params = drivers_.av;
        s.speed_factor = 1.0;
      } else {
        W74Params h = drivers_.human;
        h.z = z;
        h.accel_curve.percentile = percentile;
        s.params = h;
        s.speed_factor = in.human_speed_factor.mean + in.human_speed_factor.half_width * (2.0 * spread - 1.0);
      }
      double acc = 0.0;
      s.route = in.routes.back().route;
      for (const auto& rs : in.routes) {
        acc += rs.probability;
        if (pick < acc) {
          s.route = rs.route;
          break;
        }
      }
      entry_queues_[i].push_back(std::move(s));
      ++spawned_;
    }
  }

  bool inserted = false;
  for (std::size_t i = 0; i < net_.inputs.size(); ++i)
    while (!entry_queues_[i].empty() && try_insert(i)) inserted = true;
  if (inserted) {
    std::sort(vehicles_.begin(), vehicles_.end(), [](const VehicleState& a, const VehicleState& b) { return a.id < b.id; });
    rebuild_lanes();
  }
}

bool Simulation::try_insert(std::size_t input) {
  VehicleState& cand = entry_queues_[input].front();
  const LinkIndex link = net_.inputs[input].link;
  const double dt = config_.dt;
  const double b = max_decel(cand.params);

  int best_lane = -1;
  double best_gap = -kInf;
  std::optional<Leader> best_leader;
  for (int lane = 0; lane < net_.links[link].lane_count; ++lane) {
    auto lead = find_leader(link, lane, 0.0, cand.route, 0, kNoRank, kLookahead);
    const double gap = lead ? lead->gap : kInf;
    if (gap > best_gap) {
      best_gap = gap;
      best_lane = lane;
      best_leader = lead;
    }
  }
  if (best_leader && best_gap < standstill_distance(cand.params)) return false;

  VehicleState s = std::move(cand);
  entry_queues_[input].pop_front();
  s.pos = {link, best_lane, 0.0};
  s.route_index = 0;
  s.enter_step = step_index_ + 1;
  refresh_desired_speed(s);
  s.v = desired_speed(s.params);
  if (best_leader) {
    const auto& u = vehicles_[best_leader->index];
    s.v = std::min(s.v, safe_speed(best_gap, u.v, b, dt));
    if (best_gap <= kAchievableHorizon) s.v = std::min(s.v, u.v);
  }
  vehicles_.push_back(std::move(s));
  const std::size_t idx = vehicles_.size() - 1;
  index_vehicle(idx);
  VehicleState& placed = vehicles_[idx];
  placed.v = std::min(placed.v, safe_speed(lane_end_gap(idx, best_lane), 0.0, b, dt));
  const Perception p = perceive(idx);
  for (const auto& obj : p.objects) placed.v = std::min(placed.v, safe_speed(obj.gap, obj.speed, b, dt));
  placed.v = std::max(0.0, placed.v);

  const VehicleRecord rec{placed.id, placed.kind, placed.length, placed.speed_factor, placed.route,
                          placed.spawn_time, placed.enter_step, std::nullopt};
  for (auto* o : observers_) o->on_enter(rec);
  return true;
}

void Simulation::step() {
  if (finished()) return;
  const double dt = config_.dt;
  const double t0 = time();
  update_signals();
  arrivals();

  const std::size_t n = vehicles_.size();
  for (auto& v : vehicles_) refresh_desired_speed(v);

  // Lane changes, decided against the frozen state and applied by id.
  std::vector<LaneChangeDecision> decisions(n);
  for (std::size_t i = 0; i < n; ++i) decisions[i] = decide_lane_change(i);
  std::vector<VehicleId> coop_requests;
  for (std::size_t i = 0; i < n; ++i) {
    if (decisions[i].cooperating_follower) coop_requests.push_back(*decisions[i].cooperating_follower);
    if (!decisions[i].change) continue;
    if (!change_feasible(i, decisions[i].target_lane)) continue;
    move_lane(i, decisions[i].target_lane);
    vehicles_[i].last_lane_change = t0;
    ++lane_changes_;
  }

  // Longitudinal control against the post-change arrangement.
  std::vector<double> accel(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = vehicles_[i];
    const Perception p = perceive(i);
    const double b = max_decel(v.params);
    double a = drive_accel(v.v, p, v.params, dt);
    a = std::min(a, (safe_speed(lane_end_gap(i, v.pos.lane), 0.0, b, dt) - v.v) / dt);
    if (v.coop_cap) a = std::min(a, 0.0);
    accel[i] = std::max(a, std::max(-b, -v.v / dt));
  }
  std::sort(coop_requests.begin(), coop_requests.end());
  for (auto& v : vehicles_) v.coop_cap = std::binary_search(coop_requests.begin(), coop_requests.end(), v.id);

  // Semi-implicit Euler, then link transitions.
  ++step_index_;
  std::vector<std::size_t> leaving;
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = vehicles_[i];
    v.a = accel[i];
    v.v = std::max(0.0, v.v + v.a * dt);
    const double ds = v.v * dt;
    v.pos.offset += ds;
    v.distance += ds;
    const auto& chain = net_.routes[v.route].links;
    while (v.pos.offset > net_.links[v.pos.link].length) {
      if (v.route_index + 1 >= chain.size()) {
        leaving.push_back(i);
        break;
      }
      const LinkIndex next = chain[v.route_index + 1];
      auto nl = net_.next_lane(v.pos.link, v.pos.lane, next);
      if (!nl) {
        std::ostringstream msg;
        msg << "step " << step_index_ << ": vehicle " << v.id << " overran the end of lane " << v.pos.lane
            << " on link '" << net_.links[v.pos.link].id << "'";
        throw SimulationError(msg.str());
      }
      v.pos.offset -= net_.links[v.pos.link].length;
      v.pos.link = next;
      v.pos.lane = *nl;
      ++v.route_index;
    }
  }
  if (!leaving.empty()) {
    for (std::size_t i : leaving)
      for (auto* o : observers_) o->on_exit(vehicles_[i].id, step_index_);
    exited_ += leaving.size();
    std::vector<bool> gone(n, false);
    for (std::size_t i : leaving) gone[i] = true;
    std::size_t w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (gone[i]) continue;
      if (w != i) vehicles_[w] = std::move(vehicles_[i]);
      ++w;
    }
    vehicles_.resize(w);
  }
  rebuild_lanes();
  if (config_.check_invariants) check_invariants();
  emit_step();
}

void Simulation::check_invariants() {
  auto fail = [this](const VehicleState& a, const VehicleState& b, double gap) {
    std::ostringstream msg;
    msg << "step " << step_index_ << ": negative gap " << gap << " m between vehicle " << b.id << " and leader " << a.id;
    throw SimulationError(msg.str());
  };
  for (LinkIndex l = 0; l < net_.links.size(); ++l) {
    for (int lane = 0; lane < net_.links[l].lane_count; ++lane) {
      const auto& slot = lanes_[net_.lane_slot(l, lane)];
      for (std::size_t r = 1; r < slot.size(); ++r) {
        const auto& lead = vehicles_[slot[r]];
        const auto& fol = vehicles_[slot[r - 1]];
        const double gap = lead.pos.offset - lead.length - fol.pos.offset;
        min_gap_ = std::min(min_gap_, gap);
        if (gap < 0.0) fail(lead, fol, gap);
      }
      if (slot.empty()) continue;
      auto up = net_.incoming(l, lane);
      if (!up) continue;
      const auto& up_slot = lanes_[net_.lane_slot(up->first, up->second)];
      if (up_slot.empty()) continue;
      const auto& fol = vehicles_[up_slot.back()];
      const auto& chain = net_.routes[fol.route].links;
      if (fol.route_index + 1 >= chain.size() || chain[fol.route_index + 1] != l) continue;
      const auto& lead = vehicles_[slot.front()];
      const double gap = lead.pos.offset - lead.length + net_.links[up->first].length - fol.pos.offset;
      min_gap_ = std::min(min_gap_, gap);
      if (gap < 0.0) fail(lead, fol, gap);
    }
  }
  if (spawned_ != vehicles_.size() + exited_ + entry_queued()) {
    std::ostringstream msg;
    msg << "step " << step_index_ << ": conservation violated (spawned " << spawned_ << ", present "
        << vehicles_.size() << ", exited " << exited_ << ", queued " << entry_queued() << ")";
    throw SimulationError(msg.str());
  }
}

void Simulation::emit_step() {
  if (observers_.empty()) return;
  samples_.clear();
  for (const auto& v : vehicles_)
    samples_.push_back({v.id, static_cast<std::uint32_t>(v.pos.link), v.pos.lane, v.pos.offset, v.v, v.a});
  const double t = time();
  for (auto* o : observers_) o->on_step(step_index_, t, samples_, signal_states_);
}

void Simulation::run() {
  while (!finished()) step();
}

void run_simulation(const Network& net, const SimConfig& config, StepObserver& observer) {
  const DriverDefaults drivers =
      DriverDefaults::from_json(net.meta.contains("driver_params") ? net.meta.at("driver_params") : nlohmann::json());
  Simulation sim(net, drivers, config);
  sim.add_observer(&observer);
  sim.run();
}

TrajectoryLog simulate(const Network& net, const SimConfig& config) {
  TrajectoryRecorder recorder(config.dt);
  run_simulation(net, config, recorder);
  return std::move(recorder.log());
}

}  // namespace mixflow
