#include "support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mixflow/engine.hpp"

namespace mixflow::test {

namespace {

std::string env_dir(const char* var, const char* fallback) {
  const char* v = std::getenv(var);
  return v ? v : fallback;
}

}  // namespace

std::string scenario_path(const std::string& file) {
  return std::filesystem::absolute(env_dir("MIXFLOW_SCENARIOS", "scenarios") + "/" + file).lexically_normal().string();
}

std::string fixture_path(const std::string& file) {
  return std::filesystem::absolute(env_dir("MIXFLOW_FIXTURES", "tests/fixtures") + "/" + file).lexically_normal().string();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mixflow_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

Network chain_network(const std::vector<double>& lengths, const std::vector<double>& limits, double rate, int lanes) {
  nlohmann::json doc = {{"meta", {{"name", "chain"}}}, {"links", nlohmann::json::array()},
                        {"connectors", nlohmann::json::array()}, {"signals", nlohmann::json::array()},
                        {"stop_signs", nlohmann::json::array()}, {"inputs", nlohmann::json::array()},
                        {"routes", nlohmann::json::array()}, {"eval_nodes", nlohmann::json::array()}};
  nlohmann::json route = nlohmann::json::array();
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::string id = "l" + std::to_string(i);
    doc["links"].push_back({{"id", id}, {"length", lengths[i]}, {"lanes", lanes}, {"speed_limit", limits[i]}});
    route.push_back(id);
    if (i > 0)
      for (int lane = 0; lane < lanes; ++lane)
        doc["connectors"].push_back({{"from", {{"link", "l" + std::to_string(i - 1)}, {"lane", lane}}},
                                     {"to", {{"link", id}, {"lane", lane}}}});
  }
  doc["routes"].push_back({{"id", "r"}, {"links", route}});
  doc["inputs"].push_back({{"link", "l0"}, {"rate", rate}, {"routes", {{{"route", "r"}, {"probability", 1.0}}}}});
  return load_network(doc.dump());
}

Composition first_spawns(std::size_t count, double penetration, std::uint64_t seed) {
  constexpr int kInputs = 30;
  constexpr double kRate = 1200.0;
  nlohmann::json doc = {{"links", nlohmann::json::array()},      {"connectors", nlohmann::json::array()},
                        {"signals", nlohmann::json::array()},    {"stop_signs", nlohmann::json::array()},
                        {"inputs", nlohmann::json::array()},     {"routes", nlohmann::json::array()},
                        {"eval_nodes", nlohmann::json::array()}};
  for (int i = 0; i < kInputs; ++i) {
    const std::string id = "in" + std::to_string(i);
    doc["links"].push_back({{"id", id}, {"length", 100.0}, {"lanes", 1}, {"speed_limit", 13.9}});
    doc["routes"].push_back({{"id", id}, {"links", {id}}});
    doc["inputs"].push_back({{"link", id}, {"rate", kRate}, {"routes", {{{"route", id}, {"probability", 1.0}}}}});
  }
  const Network net = load_network(doc.dump());
  SimConfig config;
  config.penetration = penetration;
  config.seed = seed;
  config.duration = 1.15 * static_cast<double>(count) * 3600.0 / (kInputs * kRate);
  config.check_invariants = false;
  const TrajectoryLog log = simulate(net, config);
  Composition c;
  for (const auto& v : log.vehicles) {
    if (c.spawns == count) break;
    ++c.spawns;
    if (v.kind == VehicleKind::AV) ++c.avs;
  }
  return c;
}

}  // namespace mixflow::test
