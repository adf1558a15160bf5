#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace atsc {

using AgentId = int;
using NodeId = int;
using LaneId = int;

/// Graph over the signalized intersections. Two agents are neighbors when
/// their hop distance is at most neighbor_threshold (1 by default).
struct AgentGraph {
  std::vector<AgentId> vertices;                   // ascending
  std::vector<std::pair<AgentId, AgentId>> edges;  // normalized first < second, ascending
  int neighbor_threshold = 1;

  bool has_vertex(AgentId id) const;
  /// Agents within neighbor_threshold hops of i, excluding i. Ascending order.
  std::vector<AgentId> neighbors(AgentId i) const;
};

/// BFS hop count between two agents; disconnected pairs yield nullopt.
std::optional<int> hop_distance(const AgentGraph& graph, AgentId i, AgentId j);

/// neighbors(i) plus i itself, ascending order.
std::vector<AgentId> local_region(const AgentGraph& graph, AgentId i);

struct Lane {
  LaneId id = -1;
  NodeId from_node = -1;
  NodeId to_node = -1;
  double length = 0.0;            // m
  double free_flow_speed = 13.9;  // m/s
  double saturation_rate = 0.5;   // vehicles/s discharged during green
  double sensor_range = 50.0;     // m upstream of the stop line
};

/// One signal phase: the set of (incoming lane, outgoing lane) movements it
/// allows simultaneously.
struct Phase {
  int id = 0;
  std::vector<std::pair<LaneId, LaneId>> permitted_movements;

  bool permits(LaneId in, LaneId out) const;
  bool serves(LaneId in) const;  // in appears in at least one movement
};

struct Intersection {
  NodeId id = -1;
  double x = 0.0, y = 0.0;
  bool signalized = false;
  std::vector<LaneId> incoming_lanes;  // fixed order; defines wave vector layout
  std::vector<LaneId> outgoing_lanes;
  std::vector<Phase> phases;
};

struct TrafficNetwork {
  std::vector<Intersection> intersections;  // ascending id
  std::vector<Lane> lanes;                  // ascending id
  AgentGraph agent_graph;                   // vertices = signalized intersections
  std::vector<LaneId> entry_lanes;          // ascending
  std::vector<LaneId> exit_lanes;           // ascending

  const Lane& lane(LaneId id) const;
  const Intersection& node(NodeId id) const;
  int lane_index(LaneId id) const;
  int node_index(NodeId id) const;
  bool has_lane(LaneId id) const;

  std::unordered_map<LaneId, int> lane_index_;
  std::unordered_map<NodeId, int> node_index_;
};

/// Derives indices, entry/exit lanes and the agent graph from raw nodes and
/// lanes, then checks the structural invariants. Boundary stubs are the
/// unsignalized nodes with at most one lane in and one lane out; their
/// outgoing lanes are entries, their incoming lanes are exits. Agent-graph
/// edges connect signalized intersections reachable from one another through
/// unsignalized nodes only.
TrafficNetwork finalize_network(std::vector<Intersection> intersections, std::vector<Lane> lanes);

/// Bidirectional Manhattan grid of rows x cols signalized intersections with
/// entry/exit stubs on every boundary side. phases_per_node 2 gives NS/EW
/// green; above 2, through and turning movements get separate phases.
/// rng_seed is accepted for interface stability; construction is
/// deterministic and does not consume it.
TrafficNetwork build_grid(int rows, int cols, double lane_length, int phases_per_node,
                          std::uint64_t rng_seed);

/// Line-oriented network description (grammar in README):
///   node <id> <x> <y> <signalized 0|1>
///   lane <id> <from> <to> <length> <speed> [saturation] [sensor_range]
///   phase <node> <phase-id> <incoming-lane>...
TrafficNetwork load_network(const std::string& path);
void save_network(const TrafficNetwork& net, const std::string& path);

}  // namespace atsc
