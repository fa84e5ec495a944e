#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace mixflow {

using LinkIndex = std::size_t;

enum class LinkKind { Urban, Freeway };
enum class SignalState { Red, Amber, Green };

std::string_view to_string(LinkKind kind);
std::string_view to_string(SignalState state);

struct Link {
  std::string id;
  double length = 0.0;       // m
  int lane_count = 1;
  double speed_limit = 0.0;  // m/s
  LinkKind kind = LinkKind::Urban;

  bool operator==(const Link&) const = default;
};

/// Lane-level continuation from the end of one link onto the start of another.
struct Connector {
  LinkIndex from_link = 0;
  int from_lane = 0;
  LinkIndex to_link = 0;
  int to_lane = 0;

  bool operator==(const Connector&) const = default;
};

/// A stop line on a link. An empty lane means every lane of the link.
struct StopLine {
  LinkIndex link = 0;
  std::optional<int> lane;
  double position = 0.0;  // m from link start

  bool covers(int l) const { return !lane || *lane == l; }
  bool operator==(const StopLine&) const = default;
};

struct Phase {
  SignalState state = SignalState::Red;
  double duration = 0.0;  // s

  bool operator==(const Phase&) const = default;
};

/// One signal group: a fixed-time program shared by a set of heads.
struct SignalGroup {
  std::string id;
  std::vector<Phase> program;
  std::vector<StopLine> heads;

  double cycle() const;
  SignalState state_at(double cycle_time) const;
  bool operator==(const SignalGroup&) const = default;
};

/// Fixed-time controller of one intersection. All groups share the cycle.
struct SignalController {
  std::string id;
  double offset = 0.0;  // s
  std::vector<SignalGroup> groups;
  bool assumed = false;  // program is an assumption, not measured data

  double cycle() const;
  SignalState state(std::size_t group, double t) const;
  bool operator==(const SignalController&) const = default;
};

struct StopSign {
  std::string id;
  StopLine line;

  bool operator==(const StopSign&) const = default;
};

struct RouteShare {
  std::size_t route = 0;
  double probability = 1.0;

  bool operator==(const RouteShare&) const = default;
};

/// Spread of the human desired-speed factor (fraction of the link limit).
struct SpeedFactorSpread {
  double mean = 0.95;
  double half_width = 0.095;

  bool operator==(const SpeedFactorSpread&) const = default;
};

struct FlowInput {
  LinkIndex link = 0;
  double rate = 0.0;  // veh/h
  std::vector<RouteShare> routes;
  SpeedFactorSpread human_speed_factor;

  bool operator==(const FlowInput&) const = default;
};

struct Route {
  std::string id;
  std::vector<LinkIndex> links;

  bool operator==(const Route&) const = default;
};

struct Approach {
  LinkIndex link = 0;
  double stop_position = 0.0;

  bool operator==(const Approach&) const = default;
};

struct EvalNode {
  std::string id;
  std::vector<Approach> approaches;
  double capture_length = 0.0;  // m upstream of each stop position

  bool operator==(const EvalNode&) const = default;
};

/// Immutable road network. Build with load_network(); the lookup tables are
/// derived from the public data by build_index().
class Network {
 public:
  std::string name;
  std::vector<Link> links;
  std::vector<Connector> connectors;
  std::vector<SignalController> signal_controllers;
  std::vector<StopSign> stop_signs;
  std::vector<FlowInput> inputs;
  std::vector<Route> routes;
  std::vector<EvalNode> eval_nodes;
  nlohmann::json meta = nlohmann::json::object();

  /// Validates every invariant and builds the lookup tables.
  /// Throws ValidationError naming the offending entity.
  void build_index();

  std::optional<LinkIndex> find_link(std::string_view id) const;
  std::optional<std::size_t> find_route(std::string_view id) const;

  /// Lane on `to` reached from (from, lane), if a connector exists.
  std::optional<int> next_lane(LinkIndex from, int lane, LinkIndex to) const;
  /// The unique upstream (link, lane) feeding (link, lane), if any.
  std::optional<std::pair<LinkIndex, int>> incoming(LinkIndex link, int lane) const;

  /// Dense index of (link, lane) in [0, lane_slot_count()).
  std::size_t lane_slot(LinkIndex link, int lane) const { return lane_base_[link] + static_cast<std::size_t>(lane); }
  std::size_t lane_slot_count() const { return lane_slot_total_; }

  double route_length(std::size_t route) const;

  bool operator==(const Network& other) const;

 private:
  std::vector<std::size_t> lane_base_;
  std::size_t lane_slot_total_ = 0;
  std::vector<std::vector<std::pair<LinkIndex, int>>> outgoing_;  // per lane slot
  std::vector<std::optional<std::pair<LinkIndex, int>>> incoming_;
};

/// Parses and validates a scenario document.
/// Throws ParseError on malformed JSON and ValidationError on schema,
/// referential or geometric violations.
Network load_network(std::string_view document);
Network load_network_file(const std::string& path);

/// Canonical serialization (stable key order, pretty printed).
nlohmann::json to_json(const Network& net);
std::string serialize(const Network& net);

struct LanePosition {
  LinkIndex link = 0;
  int lane = 0;
  double offset = 0.0;

  bool operator==(const LanePosition&) const = default;
};

struct Exited {
  bool operator==(const Exited&) const = default;
};

using Advanced = std::variant<LanePosition, Exited>;

/// Arc-length advance along the route chain. Throws ValidationError when
/// `pos` is not on `route` or `distance` is negative.
Advanced advance_position(const LanePosition& pos, double distance, const Route& route, const Network& net);

/// Free-flow travel time: each link at min(desired_speed, limit), no
/// interaction with other vehicles or traffic control.
double theoretical_travel_time(const Route& route, double desired_speed, const Network& net);

}  // namespace mixflow
