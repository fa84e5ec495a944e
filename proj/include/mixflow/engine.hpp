#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mixflow/driver.hpp"
#include "mixflow/net.hpp"
#include "mixflow/random.hpp"

namespace mixflow {

using VehicleId = std::uint32_t;

enum class VehicleKind : std::uint8_t { Human, AV };

std::string_view to_string(VehicleKind kind);

inline constexpr double kVehicleLength = 4.5;

struct SimConfig {
  double dt = 0.1;
  double duration = 500.0;
  double penetration = 0.0;
  std::uint64_t seed = 1;
  /// Hard-check conservation and non-negative gaps every step.
  bool check_invariants = true;

  /// Throws ValidationError unless dt > 0, penetration in [0, 1] and
  /// duration is a positive multiple of dt.
  void validate() const;
  std::int64_t step_count() const;
};

struct VehicleState {
  VehicleId id = 0;
  VehicleKind kind = VehicleKind::Human;
  DriverParams params;
  double speed_factor = 1.0;  // desired speed as a fraction of the link limit
  std::size_t input = 0;
  std::size_t route = 0;
  std::size_t route_index = 0;
  LanePosition pos;
  double v = 0.0;
  double a = 0.0;
  double spawn_time = 0.0;
  std::int64_t enter_step = 0;
  double stop_dwell = 0.0;
  int cleared_stop = -1;
  double length = kVehicleLength;
  double distance = 0.0;
  double last_lane_change = -1e9;
  bool coop_cap = false;
  std::vector<std::pair<std::size_t, bool>> amber_latches;  // head -> stop?
};

struct Sample {
  VehicleId vehicle = 0;
  std::uint32_t link = 0;
  std::int32_t lane = 0;
  double offset = 0.0;  // front bumper, m from link start
  double speed = 0.0;
  double accel = 0.0;

  bool operator==(const Sample&) const = default;
};

struct VehicleRecord {
  VehicleId id = 0;
  VehicleKind kind = VehicleKind::Human;
  double length = kVehicleLength;
  double speed_factor = 1.0;
  std::size_t route = 0;
  double spawn_time = 0.0;
  std::int64_t enter_step = 0;               // first step with a sample
  std::optional<std::int64_t> exit_step;     // step during which it left

  bool operator==(const VehicleRecord&) const = default;
};

/// Receives the run as it happens. Within one step the order is: on_enter
/// for inserted vehicles, on_exit for removed ones, then on_step.
class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_enter(const VehicleRecord& /*vehicle*/) {}
  virtual void on_exit(VehicleId /*vehicle*/, std::int64_t /*step*/) {}
  virtual void on_step(std::int64_t step, double t, std::span<const Sample> samples,
                       std::span<const SignalState> signals) = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  double t = 0.0;
  std::vector<Sample> samples;  // ascending vehicle id
  std::vector<SignalState> signals;

  bool operator==(const StepRecord&) const = default;
};

struct TrajectoryLog {
  double dt = 0.1;
  std::vector<VehicleRecord> vehicles;  // ascending id
  std::vector<StepRecord> steps;
  std::size_t spawned = 0;

  bool operator==(const TrajectoryLog&) const = default;
};

class TrajectoryRecorder : public StepObserver {
 public:
  explicit TrajectoryRecorder(double dt) { log_.dt = dt; }
  void on_enter(const VehicleRecord& vehicle) override;
  void on_exit(VehicleId vehicle, std::int64_t step) override;
  void on_step(std::int64_t step, double t, std::span<const Sample> samples,
               std::span<const SignalState> signals) override;
  TrajectoryLog& log() { return log_; }

 private:
  TrajectoryLog log_;
};

/// Feeds a recorded log to an observer in the engine's event order.
void replay(const TrajectoryLog& log, StepObserver& observer);

/// CSV dump: t,veh_id,kind,link,offset_m,speed_mps,accel_mps2
class TrajectoryCsvWriter : public StepObserver {
 public:
  TrajectoryCsvWriter(std::ostream& out, const Network& net);
  void on_enter(const VehicleRecord& vehicle) override;
  void on_step(std::int64_t step, double t, std::span<const Sample> samples,
               std::span<const SignalState> signals) override;

 private:
  std::ostream& out_;
  const Network& net_;
  std::vector<VehicleKind> kinds_;
};

/// Deterministic fixed-step simulation of one replication.
class Simulation {
 public:
  Simulation(const Network& net, const DriverDefaults& drivers, const SimConfig& config);

  void add_observer(StepObserver* observer) { observers_.push_back(observer); }

  /// Advances one step of length dt. Throws SimulationError on an internal
  /// consistency violation, naming the step and the vehicles involved.
  void step();
  void run();
  bool finished() const { return step_index_ >= config_.step_count(); }

  std::int64_t step_index() const { return step_index_; }
  double time() const { return static_cast<double>(step_index_) * config_.dt; }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  std::size_t spawned() const { return spawned_; }
  std::size_t exited() const { return exited_; }
  std::size_t entry_queued() const;
  /// Smallest bumper-to-bumper gap seen after any step (infinity if none).
  double min_gap() const { return min_gap_; }
  std::size_t lane_changes() const { return lane_changes_; }

  /// Signal state of a flattened (controller, group) index at time t.
  const std::vector<SignalState>& signal_states() const { return signal_states_; }

  /// Injects a vehicle directly (tests). The vehicle keeps its id, lane,
  /// offset and speed.
  void place_vehicle(VehicleState vehicle);

  /// Builds the perception of vehicle `index` as of the current state.
  Perception perceive(std::size_t index);

 private:
  struct HeadRef {
    std::size_t flat_group;
    std::size_t head;  // global head index
    StopLine line;
  };
  struct StopRef {
    std::size_t sign;
    StopLine line;
  };
  struct Leader {
    std::size_t index;
    double gap;
  };

  void arrivals();
  bool try_insert(std::size_t input);
  void update_signals();
  void rebuild_lanes();
  void index_vehicle(std::size_t index);
  std::optional<Leader> find_leader(LinkIndex link, int lane, double offset, std::size_t route,
                                    std::size_t route_index, std::size_t first_rank, double max_gap) const;
  std::optional<Leader> leader_in_lane(std::size_t index, int lane, double max_gap) const;
  std::optional<Leader> follower_in_lane(std::size_t index, int lane) const;
  double lane_end_gap(std::size_t index, int lane) const;
  bool lane_valid_for_route(const VehicleState& v, int lane) const;
  double achievable_speed(std::size_t index, int lane) const;
  LaneChangeDecision decide_lane_change(std::size_t index);
  bool change_feasible(std::size_t index, int lane) const;
  /// Switches to a route that continues from the current lane (a missed
  /// exit or merge). Returns false if no route does.
  bool reroute(std::size_t index);
  void move_lane(std::size_t index, int lane);
  void refresh_desired_speed(VehicleState& v) const;
  void check_invariants();
  void emit_step();

  const Network& net_;
  DriverDefaults drivers_;
  SimConfig config_;
  RandomStream streams_;

  std::vector<VehicleState> vehicles_;                 // ascending id
  std::vector<std::vector<std::uint32_t>> lanes_;      // per lane slot, ascending offset
  std::vector<std::uint32_t> slot_rank_;               // per vehicle: position in its lane slot
  std::vector<std::deque<VehicleState>> entry_queues_;
  std::vector<std::vector<HeadRef>> heads_by_link_;
  std::vector<std::vector<StopRef>> stops_by_link_;
  std::vector<std::size_t> group_base_;
  std::vector<std::size_t> head_group_;                // global head -> flat group
  std::vector<SignalState> signal_states_;
  std::vector<StepObserver*> observers_;
  std::vector<Sample> samples_;

  std::int64_t step_index_ = 0;
  VehicleId next_id_ = 0;
  std::size_t spawned_ = 0;
  std::size_t exited_ = 0;
  std::size_t lane_changes_ = 0;
  double min_gap_;
};

/// Runs a replication to completion, streaming into `observer`.
void run_simulation(const Network& net, const SimConfig& config, StepObserver& observer);
/// Runs a replication and returns the full trajectory log.
TrajectoryLog simulate(const Network& net, const SimConfig& config);

}  // namespace mixflow
