#include "mixflow/driver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mixflow/error.hpp"

namespace mixflow {

namespace {

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin());
  const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_line(ObjectKind k) { return k != ObjectKind::Vehicle; }

// Distance covered from now on when braking at b every step, starting from
// speed u at the next update.
double braking_travel(double u, double b, double dt) {
  if (u <= 0.0) return 0.0;
  const double step = b * dt;
  const double m = std::floor(u / step);
  return dt * (m * u - step * m * (m + 1.0) / 2.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// AccelCurve

double AccelCurve::at(double v) const {
  const double lo = interpolate(speeds, min, v);
  const double mid = interpolate(speeds, median, v);
  const double hi = interpolate(speeds, max, v);
  if (percentile <= 0.5) return lo + 2.0 * percentile * (mid - lo);
  return mid + (2.0 * percentile - 1.0) * (hi - mid);
}

double AccelCurve::median_at(double v) const { return interpolate(speeds, median, v); }
double AccelCurve::max_at(double v) const { return interpolate(speeds, max, v); }

bool AccelCurve::deterministic() const { return min == median && median == max; }

void AccelCurve::validate() const {
  const std::size_t n = speeds.size();
  if (n < 2 || min.size() != n || median.size() != n || max.size() != n)
    throw ValidationError("accel curve: grids must have equal length >= 2");
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(speeds[i] > speeds[i - 1])) throw ValidationError("accel curve: speeds must increase strictly");
    if (!(min[i] <= median[i] && median[i] <= max[i])) throw ValidationError("accel curve: need min <= median <= max");
    if (!(min[i] > 0.0)) throw ValidationError("accel curve: accelerations must be > 0");
    if (i > 0 && speeds[i - 1] >= 5.0 && median[i] > median[i - 1])
      throw ValidationError("accel curve: median must not increase beyond 5 m/s");
  }
  if (!(percentile >= 0.0 && percentile <= 1.0)) throw ValidationError("accel curve: percentile must lie in [0, 1]");
}

AccelCurve AccelCurve::human_default(double spread) {
  AccelCurve c;
  c.speeds = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0};
  c.median = {3.0, 2.8, 2.2, 1.7, 1.3, 1.0, 0.8, 0.6, 0.5};
  for (double m : c.median) {
    c.min.push_back(m * (1.0 - spread));
    c.max.push_back(m * (1.0 + spread));
  }
  return c;
}

AccelCurve AccelCurve::collapsed(const AccelCurve& from) {
  AccelCurve c = from;
  c.min = from.median;
  c.max = from.median;
  c.percentile = 0.5;
  return c;
}

void W74Params::validate() const {
  if (!(ax > 0.0)) throw ValidationError("human params: ax must be > 0");
  if (!(bx_add >= 0.0 && bx_mult >= 0.0)) throw ValidationError("human params: bx terms must be >= 0");
  if (!(z >= 0.0 && z <= 1.0)) throw ValidationError("human params: z must lie in [0, 1]");
  if (!(b_comf > 0.0 && b_max >= b_comf)) throw ValidationError("human params: need b_max >= b_comf > 0");
  if (perception_count < 1) throw ValidationError("human params: perception count must be >= 1");
  if (!(sdx_factor >= 1.0)) throw ValidationError("human params: sdx factor must be >= 1");
  if (!(b_accept > 0.0)) throw ValidationError("human params: b_accept must be > 0");
  accel_curve.validate();
}

void AvParams::validate() const {
  if (!(s0 > 0.0 && t_gap > 0.0)) throw ValidationError("av params: s0 and t_gap must be > 0");
  if (!(k_gap > 0.0 && k_speed > 0.0)) throw ValidationError("av params: gains must be > 0");
  if (!(b_comf > 0.0 && b_max >= b_comf)) throw ValidationError("av params: need b_max >= b_comf > 0");
  if (perception_count < 1) throw ValidationError("av params: perception count must be >= 1");
  if (!(b_accept > 0.0)) throw ValidationError("av params: b_accept must be > 0");
  accel_curve.validate();
  if (!accel_curve.deterministic()) throw ValidationError("av params: accel curve must be collapsed onto its median");
}

// ---------------------------------------------------------------------------
// Longitudinal laws

double w74_safety_distance(double v, const W74Params& p) {
  return p.ax + (p.bx_add + p.bx_mult * p.z) * std::sqrt(std::max(0.0, v));
}

double safe_speed(double gap, double object_speed, double b, double dt) {
  constexpr double kMargin = 1e-6;
  if (!std::isfinite(gap)) return std::numeric_limits<double>::infinity();
  const double budget = gap - kMargin + braking_travel(object_speed, b, dt);
  if (budget <= 0.0) return 0.0;
  const double step = b * dt;
  // Largest n with F(n*step) <= budget, where F(n*step) = dt*step*n(n+1)/2.
  const double unit = dt * step / 2.0;
  double n = std::floor((-1.0 + std::sqrt(1.0 + 4.0 * budget / unit)) / 2.0);
  while (n > 0.0 && unit * n * (n + 1.0) > budget) n -= 1.0;
  while (unit * (n + 1.0) * (n + 2.0) <= budget) n += 1.0;
  return n * step + (budget - unit * n * (n + 1.0)) / (dt * (n + 1.0));
}

double human_accel(double v, const Perception& perception, const W74Params& p, double dt) {
  const double curve = p.accel_curve.at(v);
  double a = std::clamp((p.desired_speed - v) / dt, -p.b_comf, curve);
  const double d = w74_safety_distance(v, p);
  for (const auto& obj : perception.objects) {
    a = std::min(a, (safe_speed(obj.gap, obj.speed, p.b_max, dt) - v) / dt);
    const double g = is_line(obj.kind) ? obj.gap + p.ax - kLineStopMargin : obj.gap;
    double a_obj;
    if (g < p.ax) {
      a_obj = -p.b_max;
    } else {
      const double law = p.k_speed * (obj.speed - v) + p.k_gap * (g - d);
      // Beyond SDX the driver only reacts while closing in (law < 0).
      if (g > p.sdx_factor * d && law >= 0.0) continue;
      a_obj = std::clamp(law, -p.b_comf, curve);
    }
    a = std::min(a, a_obj);
  }
  return std::max(a, std::max(-p.b_max, -v / dt));
}

double av_accel(double v, const Perception& perception, const AvParams& p, double dt) {
  const double curve = p.accel_curve.median_at(v);
  double a = std::clamp((p.desired_speed - v) / dt, -p.b_comf, curve);
  const double desired = p.s0 + p.t_gap * v;
  for (const auto& obj : perception.objects) {
    const double g = is_line(obj.kind) ? obj.gap + p.s0 - kLineStopMargin : obj.gap;
    const double law = p.k_speed * (obj.speed - v) + p.k_gap * (g - desired);
    a = std::min(a, std::clamp(law, -p.b_max, curve));
    a = std::min(a, (safe_speed(obj.gap, obj.speed, p.b_max, dt) - v) / dt);
  }
  return std::max(a, std::max(-p.b_max, -v / dt));
}

std::optional<PerceivedObject> signal_constraint(SignalState state, double distance, double v, double b_comf) {
  PerceivedObject line{ObjectKind::SignalLine, distance, 0.0};
  switch (state) {
    case SignalState::Green:
      return std::nullopt;
    case SignalState::Amber: {
      if (v <= 0.0) return line;
      if (distance <= 0.0) return std::nullopt;
      const double required = v * v / (2.0 * distance);
      if (required <= b_comf) return line;
      return std::nullopt;
    }
    case SignalState::Red:
      return line;
  }
  return std::nullopt;
}

std::optional<PerceivedObject> stop_sign_constraint(double distance, double /*v*/, double dwell) {
  if (dwell >= kStopDwell - 1e-9) return std::nullopt;
  return PerceivedObject{ObjectKind::StopLine, distance, 0.0};
}

double update_stop_dwell(double dwell, double distance, double v, double dt) {
  if (distance <= kStopReach && v < kStopSpeed) return dwell + dt;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Lane changing

double follower_decel_needed(double follower_speed, double changer_speed, double gap, double standstill) {
  if (gap <= standstill) return std::numeric_limits<double>::infinity();
  if (follower_speed <= changer_speed) return 0.0;
  const double dv = follower_speed - changer_speed;
  return dv * dv / (2.0 * (gap - standstill));
}

double urgency_gap_scale(Urgency urgency, double distance_to_mandatory) {
  if (urgency == Urgency::Routine) return 1.0;
  return 0.5 + 0.5 * std::clamp(distance_to_mandatory / kMandatoryRampLength, 0.0, 1.0);
}

LaneChangeDecision lane_change_decision(double v, const DriverParams& self, const LaneChangeSituation& s,
                                        Urgency urgency, double dt) {
  LaneChangeDecision out;
  if (!s.target_lane) return out;
  out.target_lane = *s.target_lane;
  const bool motivated = urgency == Urgency::RouteRequired ||
                         s.target_achievable_speed >= s.own_achievable_speed + kLaneChangeSpeedGain;
  if (!motivated) return out;

  const double scale = urgency_gap_scale(urgency, s.distance_to_mandatory);
  const double b_self = max_decel(self);
  const double b_accept = std::visit([](const auto& p) { return p.b_accept; }, self);
  bool safe = true;
  if (s.leader) {
    if (s.leader->gap < scale * desired_gap(self, v)) safe = false;
    if (safe_speed(s.leader->gap, s.leader->speed, b_self, dt) < v - b_self * dt) safe = false;
  }
  if (s.follower) {
    const auto& f = *s.follower;
    if (follower_decel_needed(f.speed, v, f.gap, scale * f.standstill) > b_accept) safe = false;
    if (safe_speed(f.gap, v, f.b_max, dt) < f.speed - f.b_max * dt) safe = false;
  }
  if (safe) {
    out.change = true;
    return out;
  }
  const auto* av = std::get_if<AvParams>(&self);
  if (av && av->coop_lane_change && v > kStopSpeed && s.follower && s.follower->is_av) out.cooperating_follower = s.follower->vehicle;
  return out;
}

// ---------------------------------------------------------------------------
// Variant helpers

double desired_gap(const DriverParams& p, double v) {
  return std::visit(overloaded{[v](const W74Params& h) { return w74_safety_distance(v, h); },
                               [v](const AvParams& a) { return a.s0 + a.t_gap * v; }},
                    p);
}

double standstill_distance(const DriverParams& p) {
  return std::visit(overloaded{[](const W74Params& h) { return h.ax; }, [](const AvParams& a) { return a.s0; }}, p);
}

double max_decel(const DriverParams& p) {
  return std::visit([](const auto& x) { return x.b_max; }, p);
}

double comfort_decel(const DriverParams& p) {
  return std::visit([](const auto& x) { return x.b_comf; }, p);
}

int perception_count(const DriverParams& p) {
  return std::visit([](const auto& x) { return x.perception_count; }, p);
}

double desired_speed(const DriverParams& p) {
  return std::visit([](const auto& x) { return x.desired_speed; }, p);
}

void set_desired_speed(DriverParams& p, double v) {
  std::visit([v](auto& x) { x.desired_speed = v; }, p);
}

double drive_accel(double v, const Perception& perception, const DriverParams& p, double dt) {
  return std::visit(overloaded{[&](const W74Params& h) { return human_accel(v, perception, h, dt); },
                               [&](const AvParams& a) { return av_accel(v, perception, a, dt); }},
                    p);
}

bool is_av(const DriverParams& p) { return std::holds_alternative<AvParams>(p); }

// ---------------------------------------------------------------------------
// Config

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("driver params: field '") + key + "' has the wrong type");
  }
}

AccelCurve read_curve(const nlohmann::json& j, double spread, bool collapse) {
  AccelCurve base = AccelCurve::human_default(spread);
  if (j.contains("accel_curve")) {
    const auto& c = j.at("accel_curve");
    std::vector<double> speeds, median;
    read(c, "speeds", speeds);
    read(c, "median", median);
    if (speeds.size() != median.size() || speeds.size() < 2)
      throw ValidationError("driver params: accel_curve speeds and median must have equal length >= 2");
    base.speeds = speeds;
    base.median = median;
    base.min.clear();
    base.max.clear();
    for (double m : median) {
      base.min.push_back(m * (1.0 - spread));
      base.max.push_back(m * (1.0 + spread));
    }
  }
  return collapse ? AccelCurve::collapsed(base) : base;
}

}  // namespace

DriverDefaults DriverDefaults::from_json(const nlohmann::json& j) {
  DriverDefaults d;
  if (!j.is_null() && !j.is_object()) throw ValidationError("driver params must be an object");
  const nlohmann::json human = j.is_object() && j.contains("human") ? j.at("human") : nlohmann::json::object();
  const nlohmann::json av = j.is_object() && j.contains("av") ? j.at("av") : nlohmann::json::object();

  double spread = 0.30;
  read(human, "accel_spread", spread);
  if (!(spread >= 0.0 && spread < 1.0)) throw ValidationError("driver params: accel_spread must lie in [0, 1)");
  d.human.accel_curve = read_curve(human, spread, false);
  read(human, "ax", d.human.ax);
  read(human, "bx_add", d.human.bx_add);
  read(human, "bx_mult", d.human.bx_mult);
  read(human, "b_comf", d.human.b_comf);
  read(human, "b_max", d.human.b_max);
  read(human, "perception_count", d.human.perception_count);
  read(human, "sdx_factor", d.human.sdx_factor);
  read(human, "k_speed", d.human.k_speed);
  read(human, "k_gap", d.human.k_gap);
  read(human, "b_accept", d.human.b_accept);

  d.av.accel_curve = read_curve(human, spread, true);
  read(av, "s0", d.av.s0);
  read(av, "t_gap", d.av.t_gap);
  read(av, "k_gap", d.av.k_gap);
  read(av, "k_speed", d.av.k_speed);
  read(av, "b_comf", d.av.b_comf);
  read(av, "b_max", d.av.b_max);
  read(av, "perception_count", d.av.perception_count);
  read(av, "coop_lane_change", d.av.coop_lane_change);
  read(av, "b_accept", d.av.b_accept);

  d.human.validate();
  d.av.validate();
  if (d.human.b_max != d.av.b_max)
    throw ValidationError("driver params: human and AV b_max must match (the follow guard assumes one fleet bound)");
  return d;
}

}  // namespace mixflow
