#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mixflow/net.hpp"

namespace mixflow {

using OsmId = std::int64_t;
using Tags = std::map<std::string, std::string>;

struct OsmNode {
  OsmId id = 0;
  double lat = 0.0;
  double lon = 0.0;
  Tags tags;
};

struct OsmWay {
  OsmId id = 0;
  std::vector<OsmId> refs;
  Tags tags;
};

struct RawGraph {
  std::vector<OsmNode> nodes;
  std::vector<OsmWay> ways;

  const OsmNode* find_node(OsmId id) const;
  const OsmWay* find_way(OsmId id) const;

 private:
  friend RawGraph parse_osm(std::string_view xml);
  std::unordered_map<OsmId, std::size_t> node_index_;
  std::unordered_map<OsmId, std::size_t> way_index_;
};

/// Reads `node` and `way` elements with their tags; relations are ignored.
/// Throws ParseError on malformed XML and on a way referencing an unknown
/// node (naming the way).
RawGraph parse_osm(std::string_view xml);

struct IngestDefaults {
  std::map<std::string, int> lanes{{"motorway", 2},    {"trunk", 2},       {"primary", 2},  {"secondary", 1},
                                   {"tertiary", 1},    {"residential", 1}, {"unclassified", 1}, {"service", 1},
                                   {"motorway_link", 1}, {"trunk_link", 1}, {"primary_link", 1}};
  std::map<std::string, double> speed{{"motorway", 29.1},  {"trunk", 24.6},       {"primary", 20.1},
                                      {"secondary", 17.9}, {"tertiary", 15.6},    {"residential", 13.9},
                                      {"unclassified", 13.9}, {"service", 6.7},   {"motorway_link", 20.1},
                                      {"trunk_link", 17.9}, {"primary_link", 15.6}};
  int fallback_lanes = 1;
  double fallback_speed = 13.9;  // m/s
  double mph = 0.44704;          // m/s per unit
  double kmh = 1.0 / 3.6;
  double knots = 0.514444;
  double input_rate = 600.0;  // veh/h on the corridor entry

  /// Throws ValidationError unless every default is > 0.
  void validate() const;
  static IngestDefaults from_json(const nlohmann::json& j);

  int lanes_for(const std::string& highway) const;
  double speed_for(const std::string& highway) const;
};

/// "N mph" -> N * 0.44704; "N" or "N km/h" -> N / 3.6; "N knots". Anything
/// else gives `fallback` and appends a warning when `warnings` is set.
/// Never throws.
double parse_speed_limit(std::string_view value, double fallback, std::vector<std::string>* warnings = nullptr,
                         const IngestDefaults& defaults = {});

/// Great-circle distance in meters (mean Earth radius 6371008.8 m).
double haversine_m(double lat1, double lon1, double lat2, double lon2);

struct IngestReport {
  std::size_t links = 0;
  std::size_t signals = 0;
  std::size_t stop_signs = 0;
  double total_length = 0.0;
  std::vector<std::string> warnings;
};

/// Builds a corridor network from ordered, chainable ways: one link per
/// segment between junctions, a signal controller (default 90 s program,
/// marked assumed) per traffic_signals node and a stop sign per stop node.
/// Throws ValidationError on a missing or non-chainable way or a
/// zero-length segment.
Network build_network(const RawGraph& g, const IngestDefaults& defaults, const std::vector<OsmId>& corridor,
                      const std::string& name = "osm_corridor", IngestReport* report = nullptr);

}  // namespace mixflow
