#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>

#include "atsc/netmodel.hpp"

using namespace atsc;

TEST_CASE("grid shapes") {
  SUBCASE("1x1: one agent, four entries and exits, no edges") {
    const auto net = build_grid(1, 1, 200.0, 2, 7);
    CHECK(net.agent_graph.vertices.size() == 1);
    CHECK(net.entry_lanes.size() == 4);
    CHECK(net.exit_lanes.size() == 4);
    CHECK(net.agent_graph.edges.empty());
  }
  SUBCASE("2x2: four agents with exactly two neighbors each") {
    const auto net = build_grid(2, 2, 200.0, 2, 7);
    CHECK(net.agent_graph.vertices.size() == 4);
    for (AgentId v : net.agent_graph.vertices)
      CHECK(net.agent_graph.neighbors(v).size() == 2);
  }
  SUBCASE("3x3: center has four neighbors, corners two") {
    const auto net = build_grid(3, 3, 200.0, 2, 7);
    CHECK(net.agent_graph.neighbors(4).size() == 4);
    for (AgentId corner : {0, 2, 6, 8})
      CHECK(net.agent_graph.neighbors(corner).size() == 2);
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(build_grid(0, 3, 200.0, 2, 7), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(3, 0, 200.0, 2, 7), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(2, 2, 50.0, 2, 7), std::invalid_argument);
  }
}

TEST_CASE("hop distance") {
  const auto net = build_grid(3, 3, 200.0, 2, 7);
  const auto& g = net.agent_graph;
  CHECK(hop_distance(g, 4, 4) == 0);
  CHECK(hop_distance(g, 4, 1) == 1);
  CHECK(hop_distance(g, 0, 8) == 4);  // opposite corners

  SUBCASE("disconnected pairs are distinguished, not numeric") {
    AgentGraph iso;
    iso.vertices = {0, 1, 2};
    iso.edges = {{0, 1}};
    CHECK(hop_distance(iso, 0, 1) == 1);
    CHECK_FALSE(hop_distance(iso, 0, 2).has_value());
  }
  SUBCASE("unknown ids rejected") {
    CHECK_THROWS_AS(hop_distance(g, 0, 99), std::invalid_argument);
  }
}

TEST_CASE("local region") {
  SUBCASE("isolated agent is its own region") {
    AgentGraph g;
    g.vertices = {5};
    CHECK(local_region(g, 5) == std::vector<AgentId>{5});
  }
  SUBCASE("2x2 corner: itself plus the two grid-adjacent agents") {
    const auto net = build_grid(2, 2, 200.0, 2, 7);
    CHECK(local_region(net.agent_graph, 0) == std::vector<AgentId>{0, 1, 2});
  }
  SUBCASE("3x3 center: five ids, ascending") {
    const auto net = build_grid(3, 3, 200.0, 2, 7);
    CHECK(local_region(net.agent_graph, 4) == std::vector<AgentId>{1, 3, 4, 5, 7});
  }
  SUBCASE("unknown id") {
    AgentGraph g;
    g.vertices = {0};
    CHECK_THROWS_AS(local_region(g, 3), std::invalid_argument);
  }
}

TEST_CASE("graph properties brute force") {
  const auto net = build_grid(5, 5, 200.0, 2, 7);  // 25 agents
  const auto& g = net.agent_graph;
  for (AgentId i : g.vertices) {
    for (AgentId j : g.vertices) {
      const auto dij = hop_distance(g, i, j);
      CHECK(dij == hop_distance(g, j, i));
      for (AgentId k : g.vertices) {
        const auto dik = hop_distance(g, i, k);
        const auto dkj = hop_distance(g, k, j);
        if (dik && dkj) {
          REQUIRE(dij.has_value());
          CHECK(*dij <= *dik + *dkj);
        }
      }
    }
    // neighbor symmetry and region containment
    for (AgentId j : g.neighbors(i)) {
      const auto nj = g.neighbors(j);
      CHECK(std::find(nj.begin(), nj.end(), i) != nj.end());
    }
    const auto region = local_region(g, i);
    CHECK(std::binary_search(region.begin(), region.end(), i));
  }
}

TEST_CASE("phase movements stay incident to their intersection") {
  for (int phases : {2, 4}) {
    const auto net = build_grid(2, 3, 150.0, phases, 7);
    for (const auto& node : net.intersections) {
      if (!node.signalized) continue;
      CHECK(node.phases.size() >= 2);
      for (const auto& p : node.phases) {
        CHECK_FALSE(p.permitted_movements.empty());
        for (const auto& [in, out] : p.permitted_movements) {
          CHECK(std::find(node.incoming_lanes.begin(), node.incoming_lanes.end(), in) !=
                node.incoming_lanes.end());
          CHECK(std::find(node.outgoing_lanes.begin(), node.outgoing_lanes.end(), out) !=
                node.outgoing_lanes.end());
        }
      }
      for (LaneId in : node.incoming_lanes) {
        const bool served = std::any_of(node.phases.begin(), node.phases.end(),
                                        [in](const Phase& p) { return p.serves(in); });
        CHECK(served);
      }
    }
  }
}

TEST_CASE("network description file round trip") {
  const auto net = build_grid(2, 2, 200.0, 2, 7);
  const std::string path = "netmodel_roundtrip.net.txt";
  save_network(net, path);
  const auto back = load_network(path);
  CHECK(back.agent_graph.vertices == net.agent_graph.vertices);
  CHECK(back.agent_graph.edges == net.agent_graph.edges);
  CHECK(back.entry_lanes == net.entry_lanes);
  CHECK(back.exit_lanes == net.exit_lanes);
  CHECK(back.lanes.size() == net.lanes.size());
  for (size_t i = 0; i < net.lanes.size(); ++i) {
    CHECK(back.lanes[i].from_node == net.lanes[i].from_node);
    CHECK(back.lanes[i].to_node == net.lanes[i].to_node);
    CHECK(back.lanes[i].length == net.lanes[i].length);
  }
  for (const auto& node : net.intersections)
    CHECK(back.node(node.id).phases.size() == node.phases.size());
  std::remove(path.c_str());
}
