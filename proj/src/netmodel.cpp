#include "atsc/netmodel.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace atsc {

namespace {

std::map<AgentId, std::vector<AgentId>> adjacency(const AgentGraph& g) {
  std::map<AgentId, std::vector<AgentId>> adj;
  for (AgentId v : g.vertices) adj[v];
  for (const auto& [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& [v, ns] : adj) std::sort(ns.begin(), ns.end());
  return adj;
}

}  // namespace

bool AgentGraph::has_vertex(AgentId id) const {
  return std::binary_search(vertices.begin(), vertices.end(), id);
}

std::vector<AgentId> AgentGraph::neighbors(AgentId i) const {
  if (!has_vertex(i)) throw std::invalid_argument("AgentGraph: unknown agent id");
  const auto adj = adjacency(*this);
  // BFS out to neighbor_threshold hops
  std::vector<AgentId> out;
  std::map<AgentId, int> dist;
  dist[i] = 0;
  std::deque<AgentId> frontier{i};
  while (!frontier.empty()) {
    AgentId v = frontier.front();
    frontier.pop_front();
    if (dist[v] == neighbor_threshold) continue;
    for (AgentId w : adj.at(v)) {
      if (dist.count(w)) continue;
      dist[w] = dist[v] + 1;
      out.push_back(w);
      frontier.push_back(w);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<int> hop_distance(const AgentGraph& graph, AgentId i, AgentId j) {
  if (!graph.has_vertex(i) || !graph.has_vertex(j))
    throw std::invalid_argument("hop_distance: unknown agent id");
  if (i == j) return 0;
  const auto adj = adjacency(graph);
  std::map<AgentId, int> dist;
  dist[i] = 0;
  std::deque<AgentId> frontier{i};
  while (!frontier.empty()) {
    AgentId v = frontier.front();
    frontier.pop_front();
    for (AgentId w : adj.at(v)) {
      if (dist.count(w)) continue;
      dist[w] = dist[v] + 1;
      if (w == j) return dist[w];
      frontier.push_back(w);
    }
  }
  return std::nullopt;
}

std::vector<AgentId> local_region(const AgentGraph& graph, AgentId i) {
  auto region = graph.neighbors(i);  // throws on unknown id
  region.push_back(i);
  std::sort(region.begin(), region.end());
  return region;
}

bool Phase::permits(LaneId in, LaneId out) const {
  return std::find(permitted_movements.begin(), permitted_movements.end(),
                   std::make_pair(in, out)) != permitted_movements.end();
}

bool Phase::serves(LaneId in) const {
  return std::any_of(permitted_movements.begin(), permitted_movements.end(),
                     [in](const auto& m) { return m.first == in; });
}

const Lane& TrafficNetwork::lane(LaneId id) const { return lanes[lane_index(id)]; }
const Intersection& TrafficNetwork::node(NodeId id) const { return intersections[node_index(id)]; }

int TrafficNetwork::lane_index(LaneId id) const {
  auto it = lane_index_.find(id);
  if (it == lane_index_.end()) throw std::invalid_argument("TrafficNetwork: unknown lane id");
  return it->second;
}

int TrafficNetwork::node_index(NodeId id) const {
  auto it = node_index_.find(id);
  if (it == node_index_.end()) throw std::invalid_argument("TrafficNetwork: unknown node id");
  return it->second;
}

bool TrafficNetwork::has_lane(LaneId id) const { return lane_index_.count(id) > 0; }

TrafficNetwork finalize_network(std::vector<Intersection> intersections, std::vector<Lane> lanes) {
  TrafficNetwork net;
  std::sort(intersections.begin(), intersections.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(lanes.begin(), lanes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  net.intersections = std::move(intersections);
  net.lanes = std::move(lanes);
  for (size_t i = 0; i < net.lanes.size(); ++i) net.lane_index_[net.lanes[i].id] = int(i);
  for (size_t i = 0; i < net.intersections.size(); ++i)
    net.node_index_[net.intersections[i].id] = int(i);

  for (const Lane& l : net.lanes) {
    if (l.length <= 0 || l.saturation_rate <= 0 || l.sensor_range > l.length)
      throw std::invalid_argument("finalize_network: lane geometry invalid");
    if (!net.node_index_.count(l.from_node) || !net.node_index_.count(l.to_node))
      throw std::invalid_argument("finalize_network: lane references unknown node");
  }

  // derive per-node incoming/outgoing lists in ascending lane order
  for (auto& node : net.intersections) {
    node.incoming_lanes.clear();
    node.outgoing_lanes.clear();
  }
  for (const Lane& l : net.lanes) {
    net.intersections[net.node_index(l.to_node)].incoming_lanes.push_back(l.id);
    net.intersections[net.node_index(l.from_node)].outgoing_lanes.push_back(l.id);
  }

  // boundary stubs: unsignalized, at most one lane in and one out
  for (const auto& node : net.intersections) {
    if (node.signalized) continue;
    if (node.incoming_lanes.size() <= 1 && node.outgoing_lanes.size() <= 1) {
      for (LaneId l : node.outgoing_lanes) net.entry_lanes.push_back(l);
      for (LaneId l : node.incoming_lanes) net.exit_lanes.push_back(l);
    }
  }
  std::sort(net.entry_lanes.begin(), net.entry_lanes.end());
  std::sort(net.exit_lanes.begin(), net.exit_lanes.end());

  // agent graph: signalized nodes, connected when reachable through
  // unsignalized nodes only (either direction)
  std::set<std::pair<AgentId, AgentId>> edges;
  std::map<NodeId, std::vector<NodeId>> road_adj;
  for (const Lane& l : net.lanes) {
    road_adj[l.from_node].push_back(l.to_node);
    road_adj[l.to_node].push_back(l.from_node);
  }
  for (const auto& node : net.intersections) {
    if (!node.signalized) continue;
    net.agent_graph.vertices.push_back(node.id);
    std::set<NodeId> seen{node.id};
    std::deque<NodeId> frontier{node.id};
    while (!frontier.empty()) {
      NodeId v = frontier.front();
      frontier.pop_front();
      auto it = road_adj.find(v);
      if (it == road_adj.end()) continue;
      for (NodeId w : it->second) {
        if (seen.count(w)) continue;
        seen.insert(w);
        if (net.node(w).signalized) {
          edges.emplace(std::min(node.id, w), std::max(node.id, w));
        } else {
          frontier.push_back(w);
        }
      }
    }
  }
  net.agent_graph.edges.assign(edges.begin(), edges.end());

  // signal invariants
  for (const auto& node : net.intersections) {
    if (!node.signalized) continue;
    if (node.phases.size() < 2)
      throw std::invalid_argument("finalize_network: signalized intersection needs >= 2 phases");
    for (const Phase& p : node.phases) {
      if (p.permitted_movements.empty())
        throw std::invalid_argument("finalize_network: empty phase");
      for (const auto& [in, out] : p.permitted_movements) {
        if (std::find(node.incoming_lanes.begin(), node.incoming_lanes.end(), in) ==
                node.incoming_lanes.end() ||
            std::find(node.outgoing_lanes.begin(), node.outgoing_lanes.end(), out) ==
                node.outgoing_lanes.end())
          throw std::invalid_argument("finalize_network: phase movement not incident to node");
      }
    }
    for (LaneId in : node.incoming_lanes) {
      bool served = std::any_of(node.phases.begin(), node.phases.end(),
                                [in](const Phase& p) { return p.serves(in); });
      if (!served)
        throw std::invalid_argument("finalize_network: incoming lane served by no phase");
    }
  }
  return net;
}

namespace {

// grid directions in construction order: N, E, S, W
constexpr int kDr[4] = {-1, 0, 1, 0};
constexpr int kDc[4] = {0, 1, 0, -1};

// axis of a road segment from its displacement: 0 = NS, 1 = EW
int segment_axis(double dx, double dy) { return std::abs(dy) >= std::abs(dx) ? 0 : 1; }

}  // namespace

TrafficNetwork build_grid(int rows, int cols, double lane_length, int phases_per_node,
                          std::uint64_t /*rng_seed*/) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("build_grid: zero dimensions");
  if (lane_length < 100.0) throw std::invalid_argument("build_grid: lane_length must be >= 100 m");
  if (phases_per_node < 2) throw std::invalid_argument("build_grid: need >= 2 phases per node");

  std::vector<Intersection> nodes;
  std::vector<Lane> lanes;
  auto grid_id = [cols](int r, int c) { return r * cols + c; };

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Intersection n;
      n.id = grid_id(r, c);
      n.x = c * lane_length;
      n.y = r * lane_length;
      n.signalized = true;
      nodes.push_back(n);
    }

  int next_node = rows * cols;
  int next_lane = 0;
  auto add_lane_pair = [&](NodeId a, NodeId b) {
    Lane fwd;
    fwd.id = next_lane++;
    fwd.from_node = a;
    fwd.to_node = b;
    fwd.length = lane_length;
    lanes.push_back(fwd);
    Lane rev = fwd;
    rev.id = next_lane++;
    rev.from_node = b;
    rev.to_node = a;
    lanes.push_back(rev);
  };

  // interior roads eastwards/southwards so each pair is created once;
  // boundary sides get a stub node with an entry and an exit lane
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      for (int d = 0; d < 4; ++d) {
        int rr = r + kDr[d], cc = c + kDc[d];
        bool inside = rr >= 0 && rr < rows && cc >= 0 && cc < cols;
        if (inside) {
          if (d == 1 || d == 2) add_lane_pair(grid_id(r, c), grid_id(rr, cc));
        } else {
          Intersection stub;
          stub.id = next_node++;
          stub.x = cc * lane_length;
          stub.y = rr * lane_length;
          stub.signalized = false;
          nodes.push_back(stub);
          add_lane_pair(stub.id, grid_id(r, c));  // entry first, exit second
        }
      }
    }

  // phases from lane axes; movements permit every outgoing lane so no route
  // can deadlock at a green
  std::map<NodeId, std::pair<double, double>> coord;
  for (const auto& n : nodes) coord[n.id] = {n.x, n.y};
  for (auto& node : nodes) {
    if (!node.signalized) continue;
    std::vector<LaneId> in, out;
    for (const Lane& l : lanes) {
      if (l.to_node == node.id) in.push_back(l.id);
      if (l.from_node == node.id) out.push_back(l.id);
    }
    auto axis_of = [&](LaneId lid) {
      const Lane& l = lanes[lid];
      auto [fx, fy] = coord[l.from_node];
      return segment_axis(node.x - fx, node.y - fy);
    };
    auto turn_of = [&](LaneId in_id, LaneId out_id) {
      // through = outgoing continues the incoming axis
      const Lane& ol = lanes[out_id];
      auto [tx, ty] = coord[ol.to_node];
      return axis_of(in_id) == segment_axis(tx - node.x, ty - node.y) ? 0 : 1;
    };
    int phase_id = 0;
    for (int axis = 0; axis < 2; ++axis) {
      if (phases_per_node <= 2) {
        Phase p;
        p.id = phase_id++;
        for (LaneId i : in)
          if (axis_of(i) == axis)
            for (LaneId o : out) p.permitted_movements.emplace_back(i, o);
        node.phases.push_back(std::move(p));
      } else {
        for (int turn = 0; turn < 2; ++turn) {
          Phase p;
          p.id = phase_id++;
          for (LaneId i : in)
            if (axis_of(i) == axis)
              for (LaneId o : out)
                if (turn_of(i, o) == turn) p.permitted_movements.emplace_back(i, o);
          node.phases.push_back(std::move(p));
        }
      }
    }
  }

  return finalize_network(std::move(nodes), std::move(lanes));
}

TrafficNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_network: cannot open " + path);
  std::vector<Intersection> nodes;
  std::vector<Lane> lanes;
  struct PhaseLine {
    NodeId node;
    int id;
    std::vector<LaneId> in_lanes;
  };
  std::vector<PhaseLine> phase_lines;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string kind;
    if (!(ss >> kind) || kind[0] == '#') continue;
    if (kind == "node") {
      Intersection n;
      int sig = 0;
      if (!(ss >> n.id >> n.x >> n.y >> sig))
        throw std::runtime_error("load_network: bad node line " + std::to_string(lineno));
      n.signalized = sig != 0;
      nodes.push_back(n);
    } else if (kind == "lane") {
      Lane l;
      if (!(ss >> l.id >> l.from_node >> l.to_node >> l.length >> l.free_flow_speed))
        throw std::runtime_error("load_network: bad lane line " + std::to_string(lineno));
      double v;
      if (ss >> v) l.saturation_rate = v;
      if (ss >> v) l.sensor_range = v;
      lanes.push_back(l);
    } else if (kind == "phase") {
      PhaseLine p;
      if (!(ss >> p.node >> p.id))
        throw std::runtime_error("load_network: bad phase line " + std::to_string(lineno));
      LaneId lid;
      while (ss >> lid) p.in_lanes.push_back(lid);
      phase_lines.push_back(std::move(p));
    } else {
      throw std::runtime_error("load_network: unknown keyword '" + kind + "' at line " +
                               std::to_string(lineno));
    }
  }

  // expand phase lines: every listed incoming lane may move to any outgoing
  for (const auto& pl : phase_lines) {
    auto it = std::find_if(nodes.begin(), nodes.end(),
                           [&](const Intersection& n) { return n.id == pl.node; });
    if (it == nodes.end()) throw std::runtime_error("load_network: phase for unknown node");
    Phase p;
    p.id = pl.id;
    for (LaneId in_id : pl.in_lanes)
      for (const Lane& l : lanes)
        if (l.from_node == pl.node) p.permitted_movements.emplace_back(in_id, l.id);
    it->phases.push_back(std::move(p));
  }
  for (auto& n : nodes)
    std::sort(n.phases.begin(), n.phases.end(),
              [](const Phase& a, const Phase& b) { return a.id < b.id; });

  return finalize_network(std::move(nodes), std::move(lanes));
}

void save_network(const TrafficNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_network: cannot write " + path);
  out << "# nodes: id x y signalized\n";
  for (const auto& n : net.intersections)
    out << "node " << n.id << ' ' << n.x << ' ' << n.y << ' ' << (n.signalized ? 1 : 0) << '\n';
  out << "# lanes: id from to length speed saturation sensor_range\n";
  for (const auto& l : net.lanes)
    out << "lane " << l.id << ' ' << l.from_node << ' ' << l.to_node << ' ' << l.length << ' '
        << l.free_flow_speed << ' ' << l.saturation_rate << ' ' << l.sensor_range << '\n';
  out << "# phases: node phase-id incoming-lane...\n";
  for (const auto& n : net.intersections)
    for (const auto& p : n.phases) {
      std::vector<LaneId> served;
      for (LaneId in : n.incoming_lanes)
        if (p.serves(in)) served.push_back(in);
      out << "phase " << n.id << ' ' << p.id;
      for (LaneId l : served) out << ' ' << l;
      out << '\n';
    }
}

}  // namespace atsc
