#include "mixflow/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mixflow/error.hpp"

namespace mixflow {

using nlohmann::json;

std::string_view to_string(LinkKind kind) { return kind == LinkKind::Urban ? "urban" : "freeway"; }

std::string_view to_string(SignalState state) {
  switch (state) {
    case SignalState::Red:
      return "red";
    case SignalState::Amber:
      return "amber";
    case SignalState::Green:
      return "green";
  }
  return "red";
}

double SignalGroup::cycle() const {
  double c = 0.0;
  for (const auto& p : program) c += p.duration;
  return c;
}

SignalState SignalGroup::state_at(double cycle_time) const {
  double acc = 0.0;
  for (const auto& p : program) {
    acc += p.duration;
    if (cycle_time < acc) return p.state;
  }
  return program.back().state;
}

double SignalController::cycle() const { return groups.empty() ? 0.0 : groups.front().cycle(); }

SignalState SignalController::state(std::size_t group, double t) const {
  const double c = cycle();
  double tau = std::fmod(t - offset, c);
  if (tau < 0) tau += c;
  return groups[group].state_at(tau);
}

// ---------------------------------------------------------------------------
// Index and validation

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

void check_line(const Network& net, const StopLine& line, const std::string& what) {
  const Link& link = net.links.at(line.link);
  if (line.lane && (*line.lane < 0 || *line.lane >= link.lane_count))
    invalid(what + ": lane " + std::to_string(*line.lane) + " does not exist on link '" + link.id + "'");
  if (!(line.position >= 0.0 && line.position <= link.length))
    invalid(what + ": position " + std::to_string(line.position) + " m lies beyond link '" + link.id + "' (" +
            std::to_string(link.length) + " m)");
}

}  // namespace

void Network::build_index() {
  std::set<std::string> ids;
  for (const auto& l : links) {
    if (!ids.insert(l.id).second) invalid("duplicate link id '" + l.id + "'");
    if (!(l.length > 0.0)) invalid("link '" + l.id + "': length must be > 0");
    if (l.lane_count < 1) invalid("link '" + l.id + "': lane count must be >= 1");
    if (!(l.speed_limit > 0.0)) invalid("link '" + l.id + "': speed limit must be > 0");
  }

  lane_base_.assign(links.size(), 0);
  lane_slot_total_ = 0;
  for (std::size_t i = 0; i < links.size(); ++i) {
    lane_base_[i] = lane_slot_total_;
    lane_slot_total_ += static_cast<std::size_t>(links[i].lane_count);
  }
  outgoing_.assign(lane_slot_total_, {});
  incoming_.assign(lane_slot_total_, std::nullopt);

  for (const auto& c : connectors) {
    if (c.from_link >= links.size() || c.to_link >= links.size()) invalid("connector references an unknown link");
    const Link& from = links[c.from_link];
    const Link& to = links[c.to_link];
    if (c.from_lane < 0 || c.from_lane >= from.lane_count)
      invalid("dangling connector: lane " + std::to_string(c.from_lane) + " of link '" + from.id + "'");
    if (c.to_lane < 0 || c.to_lane >= to.lane_count)
      invalid("dangling connector: lane " + std::to_string(c.to_lane) + " of link '" + to.id + "'");
    auto& in = incoming_[lane_slot(c.to_link, c.to_lane)];
    if (in)
      invalid("lane " + std::to_string(c.to_lane) + " of link '" + to.id +
              "' has more than one incoming connector (merges must use lane changes)");
    in = std::make_pair(c.from_link, c.from_lane);
    auto& out = outgoing_[lane_slot(c.from_link, c.from_lane)];
    for (const auto& o : out)
      if (o.first == c.to_link)
        invalid("lane " + std::to_string(c.from_lane) + " of link '" + from.id + "' has two connectors into link '" +
                to.id + "'");
    out.emplace_back(c.to_link, c.to_lane);
  }

  ids.clear();
  for (const auto& sc : signal_controllers) {
    if (!ids.insert(sc.id).second) invalid("duplicate signal controller id '" + sc.id + "'");
    if (sc.groups.empty()) invalid("signal '" + sc.id + "' has no signal groups");
    const double cycle = sc.cycle();
    for (const auto& g : sc.groups) {
      if (g.program.empty()) invalid("signal '" + sc.id + "' group '" + g.id + "' has an empty program");
      for (const auto& p : g.program)
        if (!(p.duration > 0.0)) invalid("signal '" + sc.id + "' group '" + g.id + "': phase durations must be > 0");
      if (!(g.cycle() > 0.0)) invalid("signal '" + sc.id + "': cycle must be > 0");
      if (std::abs(g.cycle() - cycle) > 1e-9)
        invalid("signal '" + sc.id + "': all groups must share one cycle length");
      for (const auto& h : g.heads) check_line(*this, h, "signal '" + sc.id + "'");
    }
  }

  ids.clear();
  for (const auto& s : stop_signs) {
    if (!ids.insert(s.id).second) invalid("duplicate stop sign id '" + s.id + "'");
    check_line(*this, s.line, "stop sign '" + s.id + "'");
  }

  ids.clear();
  for (const auto& r : routes) {
    if (!ids.insert(r.id).second) invalid("duplicate route id '" + r.id + "'");
    if (r.links.empty()) invalid("route '" + r.id + "' is empty");
    std::set<LinkIndex> seen;
    for (std::size_t i = 0; i < r.links.size(); ++i) {
      if (r.links[i] >= links.size()) invalid("route '" + r.id + "' references an unknown link");
      if (!seen.insert(r.links[i]).second) invalid("route '" + r.id + "' visits link '" + links[r.links[i]].id + "' twice");
      if (i == 0) continue;
      const LinkIndex a = r.links[i - 1];
      const LinkIndex b = r.links[i];
      bool joined = false;
      for (int lane = 0; lane < links[a].lane_count && !joined; ++lane) joined = next_lane(a, lane, b).has_value();
      if (!joined)
        invalid("route '" + r.id + "' is not connected between '" + links[a].id + "' and '" + links[b].id + "'");
    }
  }

  for (const auto& in : inputs) {
    const std::string where = "input on link '" + (in.link < links.size() ? links[in.link].id : std::string("?")) + "'";
    if (in.link >= links.size()) invalid("input references an unknown link");
    if (!(in.rate >= 0.0)) invalid(where + ": rate must be >= 0");
    if (in.routes.empty()) invalid(where + ": no routes");
    double sum = 0.0;
    for (const auto& rs : in.routes) {
      if (rs.route >= routes.size()) invalid(where + ": unknown route");
      if (routes[rs.route].links.front() != in.link)
        invalid(where + ": route '" + routes[rs.route].id + "' does not start on the input link");
      if (!(rs.probability >= 0.0)) invalid(where + ": negative route probability");
      sum += rs.probability;
    }
    if (std::abs(sum - 1.0) > 1e-9) invalid(where + ": route probabilities must sum to 1");
    for (int lane = 0; lane < links[in.link].lane_count; ++lane)
      if (incoming(in.link, lane)) invalid(where + ": input links must not have incoming connectors");
    if (!(in.human_speed_factor.mean > 0.0) || !(in.human_speed_factor.half_width >= 0.0) ||
        in.human_speed_factor.half_width >= in.human_speed_factor.mean)
      invalid(where + ": invalid human speed factor spread");
  }

  ids.clear();
  for (const auto& n : eval_nodes) {
    if (!ids.insert(n.id).second) invalid("duplicate eval node id '" + n.id + "'");
    if (n.approaches.empty()) invalid("eval node '" + n.id + "' has no approaches");
    if (!(n.capture_length > 0.0)) invalid("eval node '" + n.id + "': capture length must be > 0");
    for (const auto& a : n.approaches) {
      if (a.link >= links.size()) invalid("eval node '" + n.id + "' references an unknown link");
      const Link& l = links[a.link];
      if (n.capture_length > l.length)
        invalid("eval node '" + n.id + "': capture region exceeds link '" + l.id + "' length");
      if (!(a.stop_position >= 0.0 && a.stop_position <= l.length))
        invalid("eval node '" + n.id + "': stop position beyond link '" + l.id + "'");
    }
  }
}

std::optional<LinkIndex> Network::find_link(std::string_view id) const {
  for (std::size_t i = 0; i < links.size(); ++i)
    if (links[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> Network::find_route(std::string_view id) const {
  for (std::size_t i = 0; i < routes.size(); ++i)
    if (routes[i].id == id) return i;
  return std::nullopt;
}

std::optional<int> Network::next_lane(LinkIndex from, int lane, LinkIndex to) const {
  for (const auto& [link, l] : outgoing_[lane_slot(from, lane)])
    if (link == to) return l;
  return std::nullopt;
}

std::optional<std::pair<LinkIndex, int>> Network::incoming(LinkIndex link, int lane) const {
  return incoming_[lane_slot(link, lane)];
}

double Network::route_length(std::size_t route) const {
  double total = 0.0;
  for (LinkIndex l : routes.at(route).links) total += links[l].length;
  return total;
}

bool Network::operator==(const Network& o) const {
  return name == o.name && links == o.links && connectors == o.connectors &&
         signal_controllers == o.signal_controllers && stop_signs == o.stop_signs && inputs == o.inputs &&
         routes == o.routes && eval_nodes == o.eval_nodes && meta == o.meta;
}

// ---------------------------------------------------------------------------
// JSON schema

namespace {

std::string field_path(const std::string& ctx, const std::string& key) { return ctx.empty() ? key : ctx + "." + key; }

const json& require(const json& obj, const std::string& key, const std::string& ctx) {
  if (!obj.is_object()) invalid("schema: '" + ctx + "' must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) invalid("schema: missing field '" + field_path(ctx, key) + "'");
  return *it;
}

double number(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_number()) invalid("schema: field '" + field_path(ctx, key) + "' must be a number");
  return v.get<double>();
}

int integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) invalid("schema: field '" + path + "' must be an integer");
  return v.get<int>();
}

std::string text(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_string()) invalid("schema: field '" + field_path(ctx, key) + "' must be a string");
  return v.get<std::string>();
}

const json& array(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_array()) invalid("schema: field '" + field_path(ctx, key) + "' must be an array");
  return v;
}

LinkIndex link_ref(const Network& net, const json& obj, const std::string& key, const std::string& ctx) {
  const std::string id = text(obj, key, ctx);
  auto idx = net.find_link(id);
  if (!idx) invalid("dangling reference: '" + field_path(ctx, key) + "' names unknown link '" + id + "'");
  return *idx;
}

StopLine parse_line(const Network& net, const json& j, const std::string& ctx) {
  StopLine line;
  line.link = link_ref(net, j, "link", ctx);
  if (j.contains("lane")) line.lane = integer(j.at("lane"), ctx + ".lane");
  line.position = number(j, "position", ctx);
  return line;
}

SignalState parse_state(const std::string& s, const std::string& ctx) {
  if (s == "red") return SignalState::Red;
  if (s == "amber") return SignalState::Amber;
  if (s == "green") return SignalState::Green;
  invalid("schema: '" + ctx + "' state must be red, amber or green");
}

json line_json(const Network& net, const StopLine& line) {
  json j = json::object();
  j["link"] = net.links[line.link].id;
  if (line.lane) j["lane"] = *line.lane;
  j["position"] = line.position;
  return j;
}

}  // namespace

Network load_network(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) invalid("schema: scenario document must be a JSON object");

  Network net;
  if (doc.contains("meta")) {
    net.meta = doc.at("meta");
    if (!net.meta.is_object()) invalid("schema: field 'meta' must be an object");
    if (net.meta.contains("name")) {
      if (!net.meta.at("name").is_string()) invalid("schema: field 'meta.name' must be a string");
      net.name = net.meta.at("name").get<std::string>();
    }
  }

  const json& links = array(doc, "links", "");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const std::string ctx = "links[" + std::to_string(i) + "]";
    const json& j = links[i];
    Link l;
    l.id = text(j, "id", ctx);
    l.length = number(j, "length", ctx);
    l.lane_count = integer(require(j, "lanes", ctx), ctx + ".lanes");
    l.speed_limit = number(j, "speed_limit", ctx);
    const std::string kind = j.contains("kind") ? text(j, "kind", ctx) : "urban";
    if (kind == "urban")
      l.kind = LinkKind::Urban;
    else if (kind == "freeway")
      l.kind = LinkKind::Freeway;
    else
      invalid("schema: '" + ctx + ".kind' must be urban or freeway");
    net.links.push_back(std::move(l));
  }

  const json& connectors = array(doc, "connectors", "");
  for (std::size_t i = 0; i < connectors.size(); ++i) {
    const std::string ctx = "connectors[" + std::to_string(i) + "]";
    const json& from = require(connectors[i], "from", ctx);
    const json& to = require(connectors[i], "to", ctx);
    Connector c;
    c.from_link = link_ref(net, from, "link", ctx + ".from");
    c.from_lane = integer(require(from, "lane", ctx + ".from"), ctx + ".from.lane");
    c.to_link = link_ref(net, to, "link", ctx + ".to");
    c.to_lane = integer(require(to, "lane", ctx + ".to"), ctx + ".to.lane");
    net.connectors.push_back(c);
  }

  const json& signals = array(doc, "signals", "");
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const std::string ctx = "signals[" + std::to_string(i) + "]";
    const json& j = signals[i];
    SignalController sc;
    sc.id = text(j, "id", ctx);
    sc.offset = j.contains("offset") ? number(j, "offset", ctx) : 0.0;
    if (j.contains("assumed")) {
      if (!j.at("assumed").is_boolean()) invalid("schema: '" + ctx + ".assumed' must be a boolean");
      sc.assumed = j.at("assumed").get<bool>();
    }
    const json& groups = array(j, "groups", ctx);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string gctx = ctx + ".groups[" + std::to_string(g) + "]";
      SignalGroup grp;
      grp.id = text(groups[g], "id", gctx);
      const json& program = array(groups[g], "program", gctx);
      for (std::size_t p = 0; p < program.size(); ++p) {
        const std::string pctx = gctx + ".program[" + std::to_string(p) + "]";
        grp.program.push_back({parse_state(text(program[p], "state", pctx), pctx), number(program[p], "duration", pctx)});
      }
      const json& heads = array(groups[g], "heads", gctx);
      for (std::size_t h = 0; h < heads.size(); ++h)
        grp.heads.push_back(parse_line(net, heads[h], gctx + ".heads[" + std::to_string(h) + "]"));
      sc.groups.push_back(std::move(grp));
    }
    net.signal_controllers.push_back(std::move(sc));
  }

  const json& stops = array(doc, "stop_signs", "");
  for (std::size_t i = 0; i < stops.size(); ++i) {
    const std::string ctx = "stop_signs[" + std::to_string(i) + "]";
    net.stop_signs.push_back({text(stops[i], "id", ctx), parse_line(net, stops[i], ctx)});
  }

  const json& routes = array(doc, "routes", "");
  for (std::size_t i = 0; i < routes.size(); ++i) {
    const std::string ctx = "routes[" + std::to_string(i) + "]";
    Route r;
    r.id = text(routes[i], "id", ctx);
    const json& chain = array(routes[i], "links", ctx);
    for (std::size_t k = 0; k < chain.size(); ++k) {
      if (!chain[k].is_string()) invalid("schema: '" + ctx + ".links' must hold link ids");
      auto idx = net.find_link(chain[k].get<std::string>());
      if (!idx) invalid("dangling reference: route '" + r.id + "' names unknown link '" + chain[k].get<std::string>() + "'");
      r.links.push_back(*idx);
    }
    net.routes.push_back(std::move(r));
  }

  const json& inputs = array(doc, "inputs", "");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string ctx = "inputs[" + std::to_string(i) + "]";
    const json& j = inputs[i];
    FlowInput in;
    in.link = link_ref(net, j, "link", ctx);
    in.rate = number(j, "rate", ctx);
    const json& shares = array(j, "routes", ctx);
    for (std::size_t k = 0; k < shares.size(); ++k) {
      const std::string sctx = ctx + ".routes[" + std::to_string(k) + "]";
      const std::string rid = text(shares[k], "route", sctx);
      auto r = net.find_route(rid);
      if (!r) invalid("dangling reference: '" + sctx + "' names unknown route '" + rid + "'");
      in.routes.push_back({*r, number(shares[k], "probability", sctx)});
    }
    if (j.contains("human_speed_factor")) {
      const json& f = j.at("human_speed_factor");
      in.human_speed_factor = {number(f, "mean", ctx + ".human_speed_factor"),
                               number(f, "half_width", ctx + ".human_speed_factor")};
    }
    net.inputs.push_back(std::move(in));
  }

  const json& nodes = array(doc, "eval_nodes", "");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string ctx = "eval_nodes[" + std::to_string(i) + "]";
    EvalNode n;
    n.id = text(nodes[i], "id", ctx);
    n.capture_length = number(nodes[i], "capture_length", ctx);
    const json& approaches = array(nodes[i], "approaches", ctx);
    for (std::size_t k = 0; k < approaches.size(); ++k) {
      const std::string actx = ctx + ".approaches[" + std::to_string(k) + "]";
      n.approaches.push_back({link_ref(net, approaches[k], "link", actx), number(approaches[k], "stop_position", actx)});
    }
    net.eval_nodes.push_back(std::move(n));
  }

  net.build_index();
  return net;
}

Network load_network_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read scenario file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_network(ss.str());
}

json to_json(const Network& net) {
  json doc = json::object();
  json meta = net.meta;
  if (!net.name.empty()) meta["name"] = net.name;
  doc["meta"] = meta;

  json links = json::array();
  for (const auto& l : net.links)
    links.push_back({{"id", l.id},
                     {"length", l.length},
                     {"lanes", l.lane_count},
                     {"speed_limit", l.speed_limit},
                     {"kind", std::string(to_string(l.kind))}});
  doc["links"] = links;

  json connectors = json::array();
  for (const auto& c : net.connectors)
    connectors.push_back({{"from", {{"link", net.links[c.from_link].id}, {"lane", c.from_lane}}},
                          {"to", {{"link", net.links[c.to_link].id}, {"lane", c.to_lane}}}});
  doc["connectors"] = connectors;

  json signals = json::array();
  for (const auto& sc : net.signal_controllers) {
    json groups = json::array();
    for (const auto& g : sc.groups) {
      json program = json::array();
      for (const auto& p : g.program) program.push_back({{"state", std::string(to_string(p.state))}, {"duration", p.duration}});
      json heads = json::array();
      for (const auto& h : g.heads) heads.push_back(line_json(net, h));
      groups.push_back({{"id", g.id}, {"program", program}, {"heads", heads}});
    }
    signals.push_back({{"id", sc.id}, {"offset", sc.offset}, {"assumed", sc.assumed}, {"groups", groups}});
  }
  doc["signals"] = signals;

  json stops = json::array();
  for (const auto& s : net.stop_signs) {
    json j = line_json(net, s.line);
    j["id"] = s.id;
    stops.push_back(j);
  }
  doc["stop_signs"] = stops;

  json inputs = json::array();
  for (const auto& in : net.inputs) {
    json shares = json::array();
    for (const auto& rs : in.routes) shares.push_back({{"route", net.routes[rs.route].id}, {"probability", rs.probability}});
    inputs.push_back({{"link", net.links[in.link].id},
                      {"rate", in.rate},
                      {"routes", shares},
                      {"human_speed_factor", {{"mean", in.human_speed_factor.mean}, {"half_width", in.human_speed_factor.half_width}}}});
  }
  doc["inputs"] = inputs;

  json routes = json::array();
  for (const auto& r : net.routes) {
    json chain = json::array();
    for (LinkIndex l : r.links) chain.push_back(net.links[l].id);
    routes.push_back({{"id", r.id}, {"links", chain}});
  }
  doc["routes"] = routes;

  json nodes = json::array();
  for (const auto& n : net.eval_nodes) {
    json approaches = json::array();
    for (const auto& a : n.approaches) approaches.push_back({{"link", net.links[a.link].id}, {"stop_position", a.stop_position}});
    nodes.push_back({{"id", n.id}, {"capture_length", n.capture_length}, {"approaches", approaches}});
  }
  doc["eval_nodes"] = nodes;
  return doc;
}

std::string serialize(const Network& net) { return to_json(net).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Route arithmetic

Advanced advance_position(const LanePosition& pos, double distance, const Route& route, const Network& net) {
  if (!(distance >= 0.0)) throw ValidationError("advance distance must be >= 0");
  auto it = std::find(route.links.begin(), route.links.end(), pos.link);
  if (it == route.links.end() || pos.lane < 0 || pos.lane >= net.links[pos.link].lane_count || pos.offset < 0.0 ||
      pos.offset > net.links[pos.link].length)
    throw ValidationError("position is not on route '" + route.id + "'");

  LanePosition p = pos;
  p.offset += distance;
  std::size_t idx = static_cast<std::size_t>(it - route.links.begin());
  while (p.offset > net.links[p.link].length) {
    if (idx + 1 == route.links.size()) return Exited{};
    const LinkIndex next = route.links[idx + 1];
    auto lane = net.next_lane(p.link, p.lane, next);
    if (!lane) {
      // The lane ends here for this route; continue on the first lane that
      // does connect.
      for (int l = 0; l < net.links[p.link].lane_count && !lane; ++l) lane = net.next_lane(p.link, l, next);
    }
    p.offset -= net.links[p.link].length;
    p.link = next;
    p.lane = *lane;
    ++idx;
  }
  return p;
}

double theoretical_travel_time(const Route& route, double desired_speed, const Network& net) {
  double t = 0.0;
  for (LinkIndex l : route.links) t += net.links[l].length / std::min(desired_speed, net.links[l].speed_limit);
  return t;
}

}  // namespace mixflow
