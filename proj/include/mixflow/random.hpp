#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mixflow {

/// One reproducible substream. std::mt19937_64 output is fully specified by
/// the standard; the samplers below avoid the implementation-defined
/// <random> distributions so draws are identical across toolchains.
class Substream {
 public:
  explicit Substream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Poisson by inversion; one uniform per draw. Intended for small means.
  unsigned poisson(double mean);

 private:
  std::mt19937_64 engine_;
};

/// Named substreams derived from a master seed. Consuming one never
/// perturbs another.
struct RandomStream {
  explicit RandomStream(std::uint64_t master_seed);

  Substream arrivals;
  Substream composition;
  Substream driver_params;
  Substream routing;

  static std::uint64_t derive(std::uint64_t master_seed, std::string_view name);
};

}  // namespace mixflow
