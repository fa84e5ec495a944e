#pragma once

#include <string>

#include "mixflow/net.hpp"

namespace mixflow::test {

std::string scenario_path(const std::string& file);
std::string fixture_path(const std::string& file);
std::string read_text(const std::string& path);

/// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& name);

/// Straight chain of single-lane links (lengths, limits), one route "r"
/// over all of them, one input on the first link.
Network chain_network(const std::vector<double>& lengths, const std::vector<double>& limits, double rate = 0.0,
                      int lanes = 1);

}  // namespace mixflow::test

namespace mixflow::test {

struct Composition {
  std::size_t spawns = 0;
  std::size_t avs = 0;
};

/// Kinds of the first `count` vehicles (by id) entering a wide multi-input
/// network at `penetration`.
Composition first_spawns(std::size_t count, double penetration, std::uint64_t seed);

}  // namespace mixflow::test
