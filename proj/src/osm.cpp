#include "mixflow/osm.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "mixflow/error.hpp"

namespace mixflow {

namespace pt = boost::property_tree;

const OsmNode* RawGraph::find_node(OsmId id) const {
  auto it = node_index_.find(id);
  return it == node_index_.end() ? nullptr : &nodes[it->second];
}

const OsmWay* RawGraph::find_way(OsmId id) const {
  auto it = way_index_.find(id);
  return it == way_index_.end() ? nullptr : &ways[it->second];
}

namespace {

template <class T>
T attribute(const pt::ptree& element, const char* name, const char* what) {
  auto v = element.get_optional<std::string>(std::string("<xmlattr>.") + name);
  if (!v) throw ParseError(std::string(what) + " without a '" + name + "' attribute");
  T out{};
  auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw ParseError(std::string(what) + ": bad '" + name + "' attribute '" + *v + "'");
  return out;
}

Tags read_tags(const pt::ptree& element) {
  Tags tags;
  for (const auto& [key, child] : element) {
    if (key != "tag") continue;
    auto k = child.get_optional<std::string>("<xmlattr>.k");
    auto v = child.get_optional<std::string>("<xmlattr>.v");
    if (k && v) tags[*k] = *v;
  }
  return tags;
}

std::string tag(const Tags& tags, const std::string& key) {
  auto it = tags.find(key);
  return it == tags.end() ? std::string() : it->second;
}

}  // namespace

RawGraph parse_osm(std::string_view xml) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(xml)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("malformed OSM XML: ") + e.what());
  }
  auto root = tree.get_child_optional("osm");
  if (!root) throw ParseError("malformed OSM XML: no <osm> root element");

  RawGraph g;
  for (const auto& [key, element] : *root) {
    if (key == "node") {
      OsmNode n;
      n.id = attribute<OsmId>(element, "id", "node");
      n.lat = attribute<double>(element, "lat", "node");
      n.lon = attribute<double>(element, "lon", "node");
      n.tags = read_tags(element);
      g.node_index_[n.id] = g.nodes.size();
      g.nodes.push_back(std::move(n));
    } else if (key == "way") {
      OsmWay w;
      w.id = attribute<OsmId>(element, "id", "way");
      for (const auto& [k, child] : element)
        if (k == "nd") w.refs.push_back(attribute<OsmId>(child, "ref", "way nd"));
      w.tags = read_tags(element);
      g.way_index_[w.id] = g.ways.size();
      g.ways.push_back(std::move(w));
    }
  }
  for (const auto& w : g.ways)
    for (OsmId ref : w.refs)
      if (!g.find_node(ref))
        throw ParseError("way " + std::to_string(w.id) + " references unknown node " + std::to_string(ref));
  return g;
}

void IngestDefaults::validate() const {
  for (const auto& [k, v] : lanes)
    if (v < 1) throw ValidationError("ingest defaults: lane count for '" + k + "' must be >= 1");
  for (const auto& [k, v] : speed)
    if (!(v > 0.0)) throw ValidationError("ingest defaults: speed for '" + k + "' must be > 0");
  if (fallback_lanes < 1 || !(fallback_speed > 0.0) || !(mph > 0.0) || !(kmh > 0.0) || !(knots > 0.0) ||
      !(input_rate > 0.0))
    throw ValidationError("ingest defaults: all defaults must be > 0");
}

IngestDefaults IngestDefaults::from_json(const nlohmann::json& j) {
  IngestDefaults d;
  try {
    if (j.contains("lanes"))
      for (const auto& [k, v] : j.at("lanes").items()) d.lanes[k] = v.get<int>();
    if (j.contains("speed"))
      for (const auto& [k, v] : j.at("speed").items()) d.speed[k] = v.get<double>();
    d.fallback_lanes = j.value("fallback_lanes", d.fallback_lanes);
    d.fallback_speed = j.value("fallback_speed", d.fallback_speed);
    d.input_rate = j.value("input_rate", d.input_rate);
    if (j.contains("units")) {
      const auto& u = j.at("units");
      d.mph = u.value("mph", d.mph);
      d.kmh = u.value("kmh", d.kmh);
      d.knots = u.value("knots", d.knots);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ingest defaults: ") + e.what());
  }
  d.validate();
  return d;
}

int IngestDefaults::lanes_for(const std::string& highway) const {
  auto it = lanes.find(highway);
  return it == lanes.end() ? fallback_lanes : it->second;
}

double IngestDefaults::speed_for(const std::string& highway) const {
  auto it = speed.find(highway);
  return it == speed.end() ? fallback_speed : it->second;
}

double parse_speed_limit(std::string_view value, double fallback, std::vector<std::string>* warnings,
                         const IngestDefaults& defaults) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  auto fail = [&]() {
    if (warnings && !value.empty())
      warnings->push_back("unparseable maxspeed '" + std::string(value) + "', using the class default");
    return fallback;
  };
  const std::string_view s = trim(value);
  if (s.empty()) return fallback;
  double n = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), n);
  if (res.ec != std::errc() || !std::isfinite(n) || !(n > 0.0)) return fail();
  const std::string_view unit = trim(std::string_view(res.ptr, static_cast<std::size_t>(s.data() + s.size() - res.ptr)));
  if (unit.empty() || unit == "km/h" || unit == "kmh" || unit == "kph") return n * defaults.kmh;
  if (unit == "mph") return n * defaults.mph;
  if (unit == "knots") return n * defaults.knots;
  return fail();
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kRadius = 6371008.8;
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  const double dlat = (lat2 - lat1) * kDeg;
  const double dlon = (lon2 - lon1) * kDeg;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kRadius * std::asin(std::min(1.0, std::sqrt(a)));
}

Network build_network(const RawGraph& g, const IngestDefaults& defaults, const std::vector<OsmId>& corridor,
                      const std::string& name, IngestReport* report) {
  defaults.validate();
  if (corridor.empty()) throw ValidationError("corridor is empty");

  // Orient the ways into one chain.
  std::vector<std::pair<const OsmWay*, std::vector<OsmId>>> chain;
  std::set<OsmId> listed;
  for (OsmId id : corridor) {
    if (!listed.insert(id).second) throw ValidationError("corridor lists way " + std::to_string(id) + " twice");
    const OsmWay* w = g.find_way(id);
    if (!w) throw ValidationError("corridor way " + std::to_string(id) + " is not in the extract");
    if (w->refs.size() < 2) throw ValidationError("corridor way " + std::to_string(id) + " has fewer than 2 nodes");
    chain.emplace_back(w, w->refs);
  }
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    auto& a = chain[i].second;
    auto& b = chain[i + 1].second;
    if (i == 0 && a.front() != b.front() && a.front() != b.back() && a.back() != b.front() && a.back() != b.back())
      throw ValidationError("corridor ways " + std::to_string(chain[i].first->id) + " and " +
                            std::to_string(chain[i + 1].first->id) + " do not share an end node");
    if (i == 0 && (a.front() == b.front() || a.front() == b.back())) std::reverse(a.begin(), a.end());
    if (b.back() == a.back()) std::reverse(b.begin(), b.end());
    if (b.front() != a.back())
      throw ValidationError("corridor ways " + std::to_string(chain[i].first->id) + " and " +
                            std::to_string(chain[i + 1].first->id) + " do not chain");
  }

  std::unordered_map<OsmId, int> way_count;
  for (const auto& w : g.ways) {
    std::set<OsmId> distinct(w.refs.begin(), w.refs.end());
    for (OsmId n : distinct) ++way_count[n];
  }

  Network net;
  net.name = name;
  net.meta = {{"name", name},
              {"source", "OpenStreetMap extract"},
              {"assumptions", {"signal programs are the default 90 s cycle; they cannot be derived from the extract",
                               "input rate is the ingest default and needs calibration"}}};
  IngestReport rep;

  struct Pending {
    OsmId node;
    LinkIndex link;
    double position;
  };
  std::vector<Pending> signal_nodes;
  std::vector<Pending> stop_nodes;
  std::set<OsmId> seen_control;

  for (const auto& [way, refs] : chain) {
    const std::string highway = tag(way->tags, "highway");
    int lanes = defaults.lanes_for(highway);
    for (const char* key : {"lanes:forward", "lanes"}) {
      const std::string v = tag(way->tags, key);
      int n = 0;
      auto res = std::from_chars(v.data(), v.data() + v.size(), n);
      if (!v.empty() && res.ec == std::errc() && res.ptr == v.data() + v.size() && n >= 1) {
        lanes = n;
        break;
      }
    }
    const double limit = parse_speed_limit(tag(way->tags, "maxspeed"), defaults.speed_for(highway), &rep.warnings, defaults);
    const bool freeway = highway.rfind("motorway", 0) == 0 || highway.rfind("trunk", 0) == 0;

    std::size_t segment = 0;
    double length = 0.0;
    std::vector<std::pair<OsmId, double>> controls;  // (node, position) on the open link
    auto control_at = [&](OsmId id, double pos) {
      const OsmNode* n = g.find_node(id);
      const std::string h = tag(n->tags, "highway");
      if ((h == "traffic_signals" || h == "stop") && seen_control.insert(id).second) controls.emplace_back(id, pos);
    };
    control_at(refs.front(), 0.0);
    for (std::size_t k = 1; k < refs.size(); ++k) {
      const OsmNode* a = g.find_node(refs[k - 1]);
      const OsmNode* b = g.find_node(refs[k]);
      length += haversine_m(a->lat, a->lon, b->lat, b->lon);
      control_at(refs[k], length);
      const bool last = k + 1 == refs.size();
      if (!last && way_count[refs[k]] < 2) continue;
      const std::string id = "w" + std::to_string(way->id) + "_" + std::to_string(segment++);
      if (!(length > 0.0)) throw ValidationError("zero-length segment " + id);
      const LinkIndex li = net.links.size();
      net.links.push_back({id, length, lanes, limit, freeway ? LinkKind::Freeway : LinkKind::Urban});
      for (const auto& [node, pos] : controls) {
        const std::string h = tag(g.find_node(node)->tags, "highway");
        (h == "traffic_signals" ? signal_nodes : stop_nodes).push_back({node, li, pos});
      }
      controls.clear();
      rep.total_length += length;
      length = 0.0;
    }
  }

  for (std::size_t i = 0; i + 1 < net.links.size(); ++i) {
    const int n = std::min(net.links[i].lane_count, net.links[i + 1].lane_count);
    for (int lane = 0; lane < n; ++lane) net.connectors.push_back({i, lane, i + 1, lane});
  }
  for (const auto& s : signal_nodes) {
    SignalController sc;
    sc.id = "n" + std::to_string(s.node);
    sc.assumed = true;
    sc.groups.push_back({"main",
                         {{SignalState::Green, 45.0}, {SignalState::Amber, 3.0}, {SignalState::Red, 42.0}},
                         {StopLine{s.link, std::nullopt, s.position}}});
    net.signal_controllers.push_back(std::move(sc));
  }
  for (const auto& s : stop_nodes)
    net.stop_signs.push_back({"n" + std::to_string(s.node), StopLine{s.link, std::nullopt, s.position}});

  Route route{"corridor", {}};
  for (LinkIndex i = 0; i < net.links.size(); ++i) route.links.push_back(i);
  net.routes.push_back(route);
  net.inputs.push_back({0, defaults.input_rate, {{0, 1.0}}, {}});
  net.build_index();

  rep.links = net.links.size();
  rep.signals = net.signal_controllers.size();
  rep.stop_signs = net.stop_signs.size();
  if (report) *report = std::move(rep);
  return net;
}

}  // namespace mixflow
