#include <cmath>
#include <limits>

#include "doctest.h"
#include "mixflow/driver.hpp"
#include "mixflow/error.hpp"

using namespace mixflow;

namespace {

constexpr double kDt = 0.1;

Perception ahead(double gap, double speed) { return {{{ObjectKind::Vehicle, gap, speed}}}; }

}  // namespace

TEST_SUITE("driver") {
  TEST_CASE("W74 safety distance") {
    W74Params p;
    p.ax = 2;
    p.bx_add = 2;
    p.bx_mult = 3;
    p.z = 0.5;
    CHECK(w74_safety_distance(10, p) == doctest::Approx(2 + 3.5 * std::sqrt(10.0)));
    CHECK(w74_safety_distance(10, p) == doctest::Approx(13.068).epsilon(1e-4));
    CHECK(w74_safety_distance(0, p) == 2.0);
    p.z = 1.0;
    CHECK(w74_safety_distance(4, p) == doctest::Approx(12.0));
  }

  TEST_CASE("human free flow at the desired speed") {
    W74Params p;
    p.desired_speed = 13.9;
    CHECK(human_accel(13.9, {}, p, kDt) == doctest::Approx(0.0));
  }

  TEST_CASE("human following equilibrium") {
    W74Params p;
    const double d = w74_safety_distance(10, p);
    CHECK(human_accel(10, ahead(d, 10), p, kDt) == doctest::Approx(0.0));
  }

  TEST_CASE("human following law by hand") {
    W74Params p;
    p.b_comf = 3.0;
    const double d = w74_safety_distance(10, p);
    CHECK(d == doctest::Approx(13.068).epsilon(1e-4));
    // k_speed (v_o - v) + k_gap (g - d) = 0.5 * (8 - 10) + 0
    CHECK(human_accel(10, ahead(d, 8), p, kDt) == doctest::Approx(-1.0));
  }

  TEST_CASE("AV equilibrium and hand values") {
    AvParams p;
    CHECK(av_accel(10, ahead(p.s0 + p.t_gap * 10, 10), p, kDt) == doctest::Approx(0.0));
    // d* = 1 + 0.6 * 10 = 7; a = 0.23 * (10 - 7)
    CHECK(av_accel(10, ahead(10, 10), p, kDt) == doctest::Approx(0.69));
    // d* = 10; a = 0.74 * (10 - 15) = -3.7, clamped to -b_max
    CHECK(av_accel(15, ahead(10, 10), p, kDt) == doctest::Approx(-3.5));
  }

  TEST_CASE("never commands a speed it cannot stop from") {
    W74Params h;
    AvParams a;
    for (double v : {0.0, 5.0, 13.9, 25.0})
      for (double gap : {0.5, 3.0, 10.0, 40.0})
        for (double vo : {0.0, 5.0, 15.0}) {
          const double vh = std::max(0.0, v + human_accel(v, ahead(gap, vo), h, kDt) * kDt);
          const double va = std::max(0.0, v + av_accel(v, ahead(gap, vo), a, kDt) * kDt);
          const double floor_h = std::max(0.0, v - h.b_max * kDt);
          const double floor_a = std::max(0.0, v - a.b_max * kDt);
          CHECK(vh <= std::max(floor_h, safe_speed(gap, vo, h.b_max, kDt)) + 1e-9);
          CHECK(va <= std::max(floor_a, safe_speed(gap, vo, a.b_max, kDt)) + 1e-9);
        }
  }

  TEST_CASE("safe speed") {
    CHECK(std::isinf(safe_speed(std::numeric_limits<double>::infinity(), 0.0, 3.5, kDt)));
    CHECK(safe_speed(0.0, 0.0, 3.5, kDt) == doctest::Approx(0.0));
    CHECK(safe_speed(50.0, 0.0, 3.5, kDt) > safe_speed(20.0, 0.0, 3.5, kDt));
  }

  TEST_CASE("signal constraint") {
    CHECK_FALSE(signal_constraint(SignalState::Green, 10, 10, 3));
    auto red = signal_constraint(SignalState::Red, 50, 10, 3);
    REQUIRE(red);
    CHECK(red->gap == 50.0);
    CHECK(red->speed == 0.0);
    CHECK(10.0 * 10.0 / (2 * 50.0) == doctest::Approx(1.0));
    // 13^2 / 20 = 8.45 > 3: proceed
    CHECK_FALSE(signal_constraint(SignalState::Amber, 10, 13, 3));
    CHECK(signal_constraint(SignalState::Amber, 50, 10, 3));
  }

  TEST_CASE("stop sign dwell") {
    SUBCASE("approaching, never stopped") { CHECK(stop_sign_constraint(30, 8, 0.0)); }
    SUBCASE("stopped 1.2 s at the line") {
      double dwell = 0.0;
      for (int i = 0; i < 12; ++i) dwell = update_stop_dwell(dwell, 1.0, 0.0, kDt);
      CHECK_FALSE(stop_sign_constraint(1.0, 0.0, dwell));
    }
    SUBCASE("rolling at 0.5 m/s") {
      double dwell = 0.0;
      for (int i = 0; i < 30; ++i) dwell = update_stop_dwell(dwell, 1.0, 0.5, kDt);
      CHECK(dwell == 0.0);
      CHECK(stop_sign_constraint(1.0, 0.5, dwell));
    }
    SUBCASE("stopped too far from the line") {
      double dwell = 0.0;
      for (int i = 0; i < 30; ++i) dwell = update_stop_dwell(dwell, 5.0, 0.0, kDt);
      CHECK(stop_sign_constraint(5.0, 0.0, dwell));
    }
  }

  TEST_CASE("lane change: no adjacent lane") {
    LaneChangeSituation s;
    CHECK_FALSE(lane_change_decision(10, W74Params{}, s, Urgency::Routine, kDt).change);
  }

  TEST_CASE("lane change: faster empty lane") {
    LaneChangeSituation s;
    s.target_lane = 1;
    s.own_achievable_speed = 5.0;
    s.target_achievable_speed = 13.9;
    const auto d = lane_change_decision(10, W74Params{}, s, Urgency::Routine, kDt);
    CHECK(d.change);
    CHECK(d.target_lane == 1);
  }

  TEST_CASE("lane change: follower would brake too hard") {
    CHECK(follower_decel_needed(14, 10, 4, 2) == doctest::Approx(4.0));
    LaneChangeSituation s;
    s.target_lane = 1;
    s.own_achievable_speed = 5.0;
    s.target_achievable_speed = 13.9;
    s.follower = Neighbor{4.0, 14.0, false, 7, 2.0, 3.5};
    CHECK_FALSE(lane_change_decision(10, W74Params{}, s, Urgency::Routine, kDt).change);
  }

  TEST_CASE("lane change decision table") {
    // Enumerated rule: change iff motivated, the leader gap is at least the
    // (urgency-scaled) desired gap and holdable, and the follower needs no
    // more than the changer's b_accept and can still stop.
    const double v = 10.0;
    int changes = 0;
    for (int driver = 0; driver < 2; ++driver) {
      const DriverParams self = driver ? DriverParams{AvParams{}} : DriverParams{W74Params{}};
      const double b_accept = driver ? 3.0 : 2.0;
      for (Urgency u : {Urgency::Routine, Urgency::RouteRequired})
        for (double gain : {0.0, 0.4, 0.6, 5.0})
          for (double lgap : {-1.0, 3.0, 8.0, 20.0, 60.0})
            for (double fgap : {-1.0, 2.5, 6.0, 15.0, 50.0})
              for (double fspeed : {5.0, 10.0, 16.0})
                for (double dist : {0.0, 100.0, 1e9}) {
                  LaneChangeSituation s;
                  s.target_lane = 0;
                  s.own_achievable_speed = 8.0;
                  s.target_achievable_speed = 8.0 + gain;
                  s.distance_to_mandatory = dist;
                  if (lgap >= 0) s.leader = Neighbor{lgap, 9.0};
                  if (fgap >= 0) s.follower = Neighbor{fgap, fspeed, true, 3, 2.0, 3.5};
                  const bool motivated = u == Urgency::RouteRequired || gain >= 0.5;
                  const double scale = u == Urgency::Routine ? 1.0 : 0.5 + 0.5 * std::min(1.0, dist / 200.0);
                  bool ok = motivated;
                  if (s.leader)
                    ok = ok && lgap >= scale * desired_gap(self, v) &&
                         safe_speed(lgap, 9.0, max_decel(self), kDt) >= v - max_decel(self) * kDt;
                  if (s.follower) {
                    const double stand = scale * 2.0;
                    const double need = fgap <= stand ? 1e300
                                        : fspeed <= v ? 0.0
                                                      : (fspeed - v) * (fspeed - v) / (2 * (fgap - stand));
                    ok = ok && need <= b_accept && safe_speed(fgap, v, 3.5, kDt) >= fspeed - 3.5 * kDt;
                  }
                  const auto d = lane_change_decision(v, self, s, u, kDt);
                  CHECK(d.change == ok);
                  if (d.change) ++changes;
                  if (!d.change && motivated && driver == 1 && s.follower) CHECK(d.cooperating_follower == 3u);
                  if (driver == 0) CHECK_FALSE(d.cooperating_follower);
                }
    }
    CHECK(changes > 0);
  }

  TEST_CASE("acceleration curve") {
    const AccelCurve c = AccelCurve::human_default();
    c.validate();
    CHECK(c.at(5.0) > 0.0);
    const AccelCurve flat = AccelCurve::collapsed(c);
    CHECK(flat.deterministic());
    CHECK(flat.at(5.0) == doctest::Approx(c.median_at(5.0)));
    AccelCurve broken = c;
    broken.speeds = {5.0, 1.0};
    CHECK_THROWS_AS(broken.validate(), ValidationError);
  }
}
