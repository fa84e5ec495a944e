#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mixflow/net.hpp"

namespace mixflow {

/// Achievable acceleration as a function of speed. Each grid point carries a
/// (min, median, max) triple; `percentile` picks a driver's curve between
/// min (0), median (0.5) and max (1). Linear between grid points, flat
/// outside the grid.
struct AccelCurve {
  std::vector<double> speeds;  // m/s, strictly increasing
  std::vector<double> min;
  std::vector<double> median;
  std::vector<double> max;
  double percentile = 0.5;

  double at(double v) const;
  double median_at(double v) const;
  double max_at(double v) const;
  bool deterministic() const;  // min == median == max everywhere

  /// Throws ValidationError if the grid or the ordering is broken.
  void validate() const;

  /// Median curve widened to median*(1 -+ spread).
  static AccelCurve human_default(double spread = 0.30);
  /// Median curve with min and max collapsed onto it.
  static AccelCurve collapsed(const AccelCurve& from);
};

struct W74Params {
  double ax = 2.0;       // standstill distance, m
  double bx_add = 2.0;
  double bx_mult = 3.0;
  double z = 0.5;        // per-driver, drawn at spawn
  double desired_speed = 13.9;
  AccelCurve accel_curve = AccelCurve::human_default();
  double b_comf = 3.0;
  double b_max = 3.5;
  int perception_count = 2;
  double sdx_factor = 1.5;
  double k_speed = 0.5;  // s^-1
  double k_gap = 0.25;   // s^-2
  double b_accept = 2.0;

  void validate() const;
};

struct AvParams {
  double s0 = 1.0;
  double t_gap = 0.6;
  double k_gap = 0.23;
  double k_speed = 0.74;
  double desired_speed = 13.9;
  AccelCurve accel_curve = AccelCurve::collapsed(AccelCurve::human_default());
  double b_comf = 3.0;
  double b_max = 3.5;
  int perception_count = 10;
  bool coop_lane_change = true;
  double b_accept = 3.0;

  void validate() const;
};

using DriverParams = std::variant<W74Params, AvParams>;

enum class ObjectKind { Vehicle, SignalLine, StopLine, RouteEnd };

struct PerceivedObject {
  ObjectKind kind = ObjectKind::Vehicle;
  double gap = 0.0;    // front bumper to rear bumper (or to the line), m
  double speed = 0.0;  // m/s
  bool is_av = false;
  std::uint32_t vehicle = 0;
};

struct Perception {
  std::vector<PerceivedObject> objects;  // ordered by gap
};

/// Distance at which a line object is held: vehicles stop this far short.
inline constexpr double kLineStopMargin = 0.5;
inline constexpr double kLookahead = 300.0;

double w74_safety_distance(double v, const W74Params& p);

/// Highest speed after this step from which the vehicle can still stop
/// behind an object `gap` ahead moving at `object_speed`, assuming both
/// brake at `b` from the next step on (discrete-time, semi-implicit Euler).
double safe_speed(double gap, double object_speed, double b, double dt);

double human_accel(double v, const Perception& perception, const W74Params& p, double dt);
double av_accel(double v, const Perception& perception, const AvParams& p, double dt);

/// Red: stationary object at the line. Amber: object iff v^2/(2 d) <= b_comf.
/// Green: none.
std::optional<PerceivedObject> signal_constraint(SignalState state, double distance, double v, double b_comf);

inline constexpr double kStopSpeed = 0.1;     // m/s
inline constexpr double kStopReach = 2.0;     // m from the line
inline constexpr double kStopDwell = 1.0;     // s

/// Stationary object at the line until the dwell (time spent below
/// kStopSpeed within kStopReach of the line) reaches kStopDwell.
std::optional<PerceivedObject> stop_sign_constraint(double distance, double v, double dwell);

/// Dwell timer update for one step; resets when the vehicle is not stopped
/// at the line.
double update_stop_dwell(double dwell, double distance, double v, double dt);

enum class Urgency { Routine, RouteRequired };

struct Neighbor {
  double gap = 0.0;
  double speed = 0.0;
  bool is_av = false;
  std::uint32_t vehicle = 0;
  double standstill = 2.0;  // follower only
  double b_max = 3.5;       // follower only
};

struct LaneChangeSituation {
  std::optional<int> target_lane;       // nullopt: no usable adjacent lane
  double own_achievable_speed = 0.0;
  double target_achievable_speed = 0.0;
  std::optional<Neighbor> leader;       // in the target lane
  std::optional<Neighbor> follower;     // in the target lane
  double distance_to_mandatory = 1e9;   // m, route-required only
};

struct LaneChangeDecision {
  bool change = false;
  int target_lane = 0;
  std::optional<std::uint32_t> cooperating_follower;
};

inline constexpr double kLaneChangeSpeedGain = 0.5;   // m/s
inline constexpr double kMandatoryRampLength = 200.0; // m

/// Deceleration a follower needs to slow from its speed to the changer's
/// before closing to its standstill distance.
double follower_decel_needed(double follower_speed, double changer_speed, double gap, double standstill);

/// Required-gap scale for route-required changes: 1 far away, 0.5 at the
/// mandatory point.
double urgency_gap_scale(Urgency urgency, double distance_to_mandatory);

LaneChangeDecision lane_change_decision(double v, const DriverParams& self, const LaneChangeSituation& s,
                                        Urgency urgency, double dt);

// Uniform accessors over both driver variants.
double desired_gap(const DriverParams& p, double v);
double standstill_distance(const DriverParams& p);
double max_decel(const DriverParams& p);
double comfort_decel(const DriverParams& p);
int perception_count(const DriverParams& p);
double desired_speed(const DriverParams& p);
void set_desired_speed(DriverParams& p, double v);
double drive_accel(double v, const Perception& perception, const DriverParams& p, double dt);
bool is_av(const DriverParams& p);

/// Fleet-wide defaults, overridable from a scenario's `meta.driver_params`.
struct DriverDefaults {
  W74Params human;
  AvParams av;

  static DriverDefaults from_json(const nlohmann::json& j);
};

}  // namespace mixflow
