#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "atsc/netmodel.hpp"

namespace atsc {

struct Vehicle {
  int id = -1;
  std::vector<LaneId> route;  // entry lane ... exit lane, pairwise road-connected
  int route_index = 0;
  double position = 0.0;  // m from lane start; meaningless while queued
  bool queued = false;
  int entered_at = 0;  // sim-seconds
};

struct InsertionEvent {
  int time = 0;  // sim-seconds, event fires when the clock reaches it
  LaneId origin = -1;
  LaneId destination = -1;
};

struct InsertionSchedule {
  std::vector<InsertionEvent> events;  // times non-decreasing
  std::string scenario_name;
};

/// "count/window": count vehicles spread uniformly over [0, window).
struct ScenarioSpec {
  long count = 0;
  int window = 0;
  std::string name;

  static ScenarioSpec parse(const std::string& text);  // "2000/2000" etc.
};

/// count events at times floor(i * window / count), origin/destination drawn
/// uniformly from the entry/exit lane sets of the seeded stream.
InsertionSchedule make_schedule(const TrafficNetwork& net, const ScenarioSpec& scenario,
                                std::uint64_t seed);

struct PhaseController {
  int active_phase = 0;
  std::optional<int> pending_phase;
  int yellow_remaining = 0;  // in [0, yellow_time]; all-red while > 0
};

/// Deterministic point-queue simulator. Vehicles travel at free-flow speed,
/// join a vertical FIFO queue in the last sensor_range metres of each lane,
/// and discharge at the lane's saturation rate when the downstream signal
/// permits the queue head's movement. Clock advances in 1 s ticks.
class Simulation {
 public:
  Simulation(const TrafficNetwork& net, InsertionSchedule schedule, int yellow_time = 2);

  /// Requests a phase switch. Same phase: no-op. During yellow the pending
  /// phase is replaced without restarting the timer.
  void apply_action(AgentId agent, int phase_id);

  /// Advances the clock by 1 s: controller timers, insertions, free-flow
  /// movement, queue discharge.
  void tick();

  /// Queued vehicles (speed 0 < 0.1 m/s) summed over the agent's incoming lanes.
  int measure_queue(AgentId agent) const;

  /// Per incoming lane, vehicles within sensor_range of the stop line
  /// (queued or still moving). Order matches Intersection::incoming_lanes.
  std::vector<int> measure_wave(AgentId agent) const;

  int running_vehicles() const { return static_cast<int>(vehicles_.size()); }
  long inserted() const { return inserted_; }
  long arrived() const { return arrived_; }
  int clock() const { return clock_; }
  int yellow_time() const { return yellow_time_; }

  const PhaseController& controller(AgentId agent) const;
  const TrafficNetwork& network() const { return *net_; }

  /// Queue length of one lane (test and greedy helpers).
  int lane_queue(LaneId lane) const;
  int lane_occupancy(LaneId lane) const;
  int lane_capacity(LaneId lane) const;

  /// Drops a vehicle into an arbitrary state; tests use this to build the
  /// measurement examples directly. Counts as inserted.
  int place_vehicle(const std::vector<LaneId>& route, int route_index, double position,
                    bool queued);

  /// Shortest-hop lane route (BFS, ascending-id expansion, u-turns only as a
  /// fallback). Cached per OD pair.
  const std::vector<LaneId>& route_between(LaneId origin, LaneId destination);

 private:
  struct LaneRt {
    std::vector<int> traveling;  // vehicle ids in entry order (uniform speed keeps it sorted)
    std::deque<int> queue;       // FIFO at the stop line
    double credit = 0.0;         // accumulated saturation service
    int capacity = 1;
  };

  bool movement_permitted(const Lane& lane, int head_vehicle) const;
  void insert_from_backlog();

  const TrafficNetwork* net_;
  InsertionSchedule schedule_;
  size_t next_event_ = 0;
  int yellow_time_;
  int clock_ = 0;
  long inserted_ = 0;
  long arrived_ = 0;
  int next_vehicle_id_ = 0;
  std::vector<PhaseController> controllers_;       // by agent index in agent_graph.vertices
  std::vector<bool> all_red_this_tick_;            // controller was in yellow as the tick began
  std::vector<LaneRt> lanes_;                      // by lane index
  std::unordered_map<int, Vehicle> vehicles_;      // never iterated by the dynamics
  std::vector<std::deque<InsertionEvent>> backlog_;  // by entry-lane order, overflow waits here
  std::map<std::pair<LaneId, LaneId>, std::vector<LaneId>> route_cache_;
  std::unordered_map<AgentId, int> agent_index_;
};

}  // namespace atsc
