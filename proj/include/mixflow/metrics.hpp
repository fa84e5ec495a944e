#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mixflow/engine.hpp"
#include "mixflow/net.hpp"

namespace mixflow {

/// rate(v, a) = c0 + c1*v + c3*v^3 + ca*max(a, 0)*v, per hour.
struct RateCoefficients {
  double c0 = 0.0;
  double c1 = 0.0;
  double c3 = 0.0;
  double ca = 0.0;

  double rate(double v, double a) const { return c0 + c1 * v + c3 * v * v * v + ca * (a > 0.0 ? a : 0.0) * v; }
  bool operator==(const RateCoefficients&) const = default;
};

struct FuelEmissionModel {
  RateCoefficients fuel{0.30, 0.032, 1.8e-5, 0.09};  // gal/h
  RateCoefficients co{20.0, 1.5, 0.0, 4.0};          // g/h
  RateCoefficients nox{2.0, 0.25, 0.0, 0.6};
  RateCoefficients voc{3.0, 0.3, 0.0, 0.5};

  /// Throws ValidationError if any coefficient is negative.
  void validate() const;
  static FuelEmissionModel from_json(const nlohmann::json& j);
};

struct QueueConfig {
  double enter_speed = 1.39;  // m/s
  double exit_speed = 2.78;
  double max_spacing = 20.0;  // m

  void validate() const;
  static QueueConfig from_json(const nlohmann::json& j);
};

enum class Scope { Node, Full };

std::string_view to_string(Scope scope);
Scope parse_scope(std::string_view text);

/// Capture length used for the queue counters of a full-network evaluation.
inline constexpr double kFullScopeCapture = 250.0;

struct NodeEvaluationResult {
  Scope scope = Scope::Node;
  std::size_t vehicle_count = 0;
  double total_fuel = 0.0;  // gal
  double fuel_per_vehicle = 0.0;
  double co_g = 0.0;
  double nox_g = 0.0;
  double voc_g = 0.0;
  double co_per_vehicle = 0.0;
  double nox_per_vehicle = 0.0;
  double voc_per_vehicle = 0.0;
  double avg_queue_m = 0.0;
  double max_queue_m = 0.0;
  double avg_delay_s = 0.0;
  double avg_stopped_delay_s = 0.0;
  std::size_t total_stops = 0;
  std::size_t completed_vehicles = 0;  // vehicles contributing to avg_delay_s

  bool operator==(const NodeEvaluationResult&) const = default;
};

double per_vehicle(double total, std::size_t vehicle_count);
/// 100 (base - value) / base. Throws ValidationError if base <= 0.
double percent_benefit(double base_per_vehicle, double case_per_vehicle);

struct QueueSummary {
  double avg = 0.0;
  double max = 0.0;
};

/// Mean and maximum over every step of every approach series.
/// Throws ValidationError when there are no samples at all.
QueueSummary queue_summary(const std::vector<std::vector<double>>& series);

/// Stop-event automaton: a stop counts when armed and v < 0.2, rearming
/// once v > 1.0.
struct StopCounter {
  static constexpr double kEnter = 0.2;
  static constexpr double kRearm = 1.0;
  bool armed = true;
  std::size_t stops = 0;

  void observe(double v) {
    if (armed && v < kEnter) {
      ++stops;
      armed = false;
    } else if (!armed && v > kRearm) {
      armed = true;
    }
  }
};

/// A stop line whose upstream queue is measured.
struct QueueCounter {
  LinkIndex link = 0;
  double stop_position = 0.0;
  double capture = 0.0;
};

/// Queue counters of a scope: the evaluation node approaches for node
/// scope; every signal head, stop sign and node approach otherwise.
std::vector<QueueCounter> queue_counters(const Network& net, Scope scope);

/// Whether a sample position lies in the measured region.
bool in_scope(const Network& net, Scope scope, LinkIndex link, double offset);

/// Streaming metric accumulator. Attach to a run, or feed a recorded log
/// with replay().
class MetricsAccumulator : public StepObserver {
 public:
  MetricsAccumulator(const Network& net, Scope scope, double dt, FuelEmissionModel model = {}, QueueConfig qc = {});

  void on_enter(const VehicleRecord& vehicle) override;
  void on_exit(VehicleId vehicle, std::int64_t step) override;
  void on_step(std::int64_t step, double t, std::span<const Sample> samples,
               std::span<const SignalState> signals) override;

  NodeEvaluationResult result() const;
  /// Per-step queue length of each counter (max over its lanes).
  const std::vector<std::vector<double>>& queue_series() const { return queue_series_; }

 private:
  struct Track {
    double speed_factor = 1.0;
    double length = kVehicleLength;
    bool seen = false;
    bool inside = false;
    bool completed = false;
    bool queued = false;
    double pending_delay = 0.0;
    double delay = 0.0;
    StopCounter stops;
  };

  Track& track(VehicleId id);
  void complete(Track& tr);

  const Network& net_;
  Scope scope_;
  FuelEmissionModel model_;
  QueueConfig qc_;
  std::vector<QueueCounter> counters_;
  std::vector<std::vector<std::size_t>> counters_by_link_;
  double dt_;
  std::size_t steps_ = 0;

  std::vector<Track> tracks_;
  std::size_t vehicle_count_ = 0;
  double fuel_ = 0.0;
  double co_ = 0.0;
  double nox_ = 0.0;
  double voc_ = 0.0;
  double stopped_time_ = 0.0;
  double delay_sum_ = 0.0;
  std::size_t completed_ = 0;
  std::vector<std::vector<double>> queue_series_;
  std::vector<std::vector<std::uint32_t>> samples_by_link_;
  std::vector<LinkIndex> touched_;
  std::vector<std::pair<double, double>> lane_scratch_;  // (front, rear) of queued-or-not vehicles
  std::vector<char> lane_queued_;
};

/// Evaluates a recorded log.
NodeEvaluationResult node_evaluation(const TrajectoryLog& log, const Network& net, Scope scope,
                                     const FuelEmissionModel& model = {}, const QueueConfig& qc = {});

}  // namespace mixflow
