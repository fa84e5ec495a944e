#pragma once

#include <cstdint>

#include "mixflow/engine.hpp"
#include "mixflow/metrics.hpp"

namespace mixflow::test {

/// Two links: a two-lane approach with an evaluation node and a one-lane
/// exit link with a signal head.
Network oracle_network();

/// Up to 5 vehicles over up to 100 steps at random positions and speeds
/// on `oracle_network()`, with speeds clustered around the queue and stop
/// thresholds.
TrajectoryLog random_log(std::uint64_t seed);

/// Direct recomputation of every evaluation field from the log, written
/// without the streaming accumulator.
NodeEvaluationResult brute_force_evaluation(const TrajectoryLog& log, const Network& net, Scope scope,
                                            const FuelEmissionModel& model = {}, const QueueConfig& qc = {});

}  // namespace mixflow::test
