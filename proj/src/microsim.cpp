#include "atsc/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "atsc/rng.hpp"

namespace atsc {

ScenarioSpec ScenarioSpec::parse(const std::string& text) {
  auto slash = text.find('/');
  if (slash == std::string::npos)
    throw std::invalid_argument("scenario must be '<count>/<window>', got '" + text + "'");
  ScenarioSpec s;
  try {
    s.count = std::stol(text.substr(0, slash));
    s.window = std::stoi(text.substr(slash + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("scenario must be '<count>/<window>', got '" + text + "'");
  }
  if (s.count < 0 || s.window <= 0)
    throw std::invalid_argument("scenario needs count >= 0 and window > 0");
  s.name = text;
  return s;
}

InsertionSchedule make_schedule(const TrafficNetwork& net, const ScenarioSpec& scenario,
                                std::uint64_t seed) {
  if (net.entry_lanes.empty() || net.exit_lanes.empty())
    throw std::invalid_argument("make_schedule: network has no entry or exit lanes");
  InsertionSchedule sched;
  sched.scenario_name = scenario.name;
  sched.events.reserve(scenario.count);
  Rng rng(seed);
  for (long i = 0; i < scenario.count; ++i) {
    InsertionEvent ev;
    ev.time = static_cast<int>(i * static_cast<long>(scenario.window) / scenario.count);
    ev.origin = net.entry_lanes[rng.uniform_int(static_cast<int>(net.entry_lanes.size()))];
    ev.destination = net.exit_lanes[rng.uniform_int(static_cast<int>(net.exit_lanes.size()))];
    sched.events.push_back(ev);
  }
  return sched;
}

Simulation::Simulation(const TrafficNetwork& net, InsertionSchedule schedule, int yellow_time)
    : net_(&net), schedule_(std::move(schedule)), yellow_time_(yellow_time) {
  lanes_.resize(net.lanes.size());
  for (size_t i = 0; i < net.lanes.size(); ++i)
    lanes_[i].capacity = std::max(1, static_cast<int>(std::floor(net.lanes[i].length / 7.5)));
  controllers_.resize(net.agent_graph.vertices.size());
  all_red_this_tick_.assign(net.agent_graph.vertices.size(), false);
  for (size_t i = 0; i < net.agent_graph.vertices.size(); ++i)
    agent_index_[net.agent_graph.vertices[i]] = static_cast<int>(i);
  backlog_.resize(net.entry_lanes.size());
}

const PhaseController& Simulation::controller(AgentId agent) const {
  auto it = agent_index_.find(agent);
  if (it == agent_index_.end()) throw std::invalid_argument("Simulation: unknown agent");
  return controllers_[it->second];
}

void Simulation::apply_action(AgentId agent, int phase_id) {
  auto it = agent_index_.find(agent);
  if (it == agent_index_.end()) throw std::invalid_argument("apply_action: unknown agent");
  const auto& phases = net_->node(agent).phases;
  if (phase_id < 0 || phase_id >= static_cast<int>(phases.size()))
    throw std::invalid_argument("apply_action: phase does not belong to this intersection");
  PhaseController& pc = controllers_[it->second];
  if (phase_id == pc.active_phase) return;
  if (yellow_time_ == 0) {
    pc.active_phase = phase_id;
    pc.pending_phase.reset();
    return;
  }
  if (pc.pending_phase) {
    pc.pending_phase = phase_id;  // yellow timer keeps running
  } else {
    pc.pending_phase = phase_id;
    pc.yellow_remaining = yellow_time_;
  }
}

bool Simulation::movement_permitted(const Lane& lane, int head_vehicle) const {
  const Intersection& node = net_->node(lane.to_node);
  if (!node.signalized) return true;
  int idx = agent_index_.at(node.id);
  if (all_red_this_tick_[idx]) return false;
  const Vehicle& v = vehicles_.at(head_vehicle);
  const Phase& phase = node.phases[controllers_[idx].active_phase];
  if (v.route_index + 1 < static_cast<int>(v.route.size()))
    return phase.permits(lane.id, v.route[v.route_index + 1]);
  return phase.serves(lane.id);  // route ends here
}

void Simulation::insert_from_backlog() {
  for (size_t e = 0; e < backlog_.size(); ++e) {
    const LaneId lane_id = net_->entry_lanes[e];
    const int li = net_->lane_index(lane_id);
    auto& rt = lanes_[li];
    while (!backlog_[e].empty() &&
           static_cast<int>(rt.traveling.size() + rt.queue.size()) < rt.capacity) {
      const InsertionEvent ev = backlog_[e].front();
      backlog_[e].pop_front();
      Vehicle v;
      v.id = next_vehicle_id_++;
      v.route = route_between(ev.origin, ev.destination);
      v.route_index = 0;
      v.position = 0.0;
      v.entered_at = clock_;
      vehicles_.emplace(v.id, v);
      rt.traveling.push_back(v.id);
      ++inserted_;
    }
  }
}

void Simulation::tick() {
  // 1. signal controllers
  for (size_t i = 0; i < controllers_.size(); ++i) {
    PhaseController& pc = controllers_[i];
    all_red_this_tick_[i] = pc.yellow_remaining > 0;
    if (pc.yellow_remaining > 0) {
      --pc.yellow_remaining;
      if (pc.yellow_remaining == 0 && pc.pending_phase) {
        pc.active_phase = *pc.pending_phase;
        pc.pending_phase.reset();
      }
    }
  }

  // 2. scheduled insertions (overflow waits in per-entry backlogs)
  while (next_event_ < schedule_.events.size() &&
         schedule_.events[next_event_].time <= clock_) {
    const InsertionEvent& ev = schedule_.events[next_event_];
    auto it = std::lower_bound(net_->entry_lanes.begin(), net_->entry_lanes.end(), ev.origin);
    if (it == net_->entry_lanes.end() || *it != ev.origin)
      throw std::invalid_argument("tick: schedule origin is not an entry lane");
    backlog_[it - net_->entry_lanes.begin()].push_back(ev);
    ++next_event_;
  }
  insert_from_backlog();

  // 3. free-flow movement; vehicles reaching the sensor zone join the queue
  for (size_t li = 0; li < lanes_.size(); ++li) {
    auto& rt = lanes_[li];
    if (rt.traveling.empty()) continue;
    const Lane& lane = net_->lanes[li];
    const double zone_start = lane.length - lane.sensor_range;
    std::vector<int> still;
    still.reserve(rt.traveling.size());
    for (int vid : rt.traveling) {
      Vehicle& v = vehicles_.at(vid);
      v.position += lane.free_flow_speed;
      if (v.position >= zone_start) {
        v.queued = true;
        rt.queue.push_back(vid);
      } else {
        still.push_back(vid);
      }
    }
    rt.traveling = std::move(still);
  }

  // 4. queue discharge at the saturation rate, gated by the signal and by
  //    downstream spillback
  for (size_t li = 0; li < lanes_.size(); ++li) {
    auto& rt = lanes_[li];
    const Lane& lane = net_->lanes[li];
    if (rt.queue.empty() || !movement_permitted(lane, rt.queue.front())) {
      rt.credit = 0.0;
      continue;
    }
    rt.credit = std::min(rt.credit + lane.saturation_rate, std::max(1.0, lane.saturation_rate));
    while (rt.credit >= 1.0 && !rt.queue.empty() &&
           movement_permitted(lane, rt.queue.front())) {
      const int vid = rt.queue.front();
      Vehicle& v = vehicles_.at(vid);
      if (v.route_index + 1 < static_cast<int>(v.route.size())) {
        const int ni = net_->lane_index(v.route[v.route_index + 1]);
        auto& next_rt = lanes_[ni];
        if (static_cast<int>(next_rt.traveling.size() + next_rt.queue.size()) >=
            next_rt.capacity)
          break;  // spillback: head blocked, credit is kept (capped)
        rt.queue.pop_front();
        v.route_index += 1;
        v.position = 0.0;
        v.queued = false;
        next_rt.traveling.push_back(vid);
      } else {
        rt.queue.pop_front();
        vehicles_.erase(vid);
        ++arrived_;
      }
      rt.credit -= 1.0;
    }
  }

  ++clock_;
}

int Simulation::measure_queue(AgentId agent) const {
  const Intersection& node = net_->node(agent);
  if (!node.signalized) throw std::invalid_argument("measure_queue: agent not signalized");
  int total = 0;
  for (LaneId l : node.incoming_lanes) total += static_cast<int>(lanes_[net_->lane_index(l)].queue.size());
  return total;
}

std::vector<int> Simulation::measure_wave(AgentId agent) const {
  const Intersection& node = net_->node(agent);
  if (!node.signalized) throw std::invalid_argument("measure_wave: agent not signalized");
  std::vector<int> wave;
  wave.reserve(node.incoming_lanes.size());
  for (LaneId lid : node.incoming_lanes) {
    const Lane& lane = net_->lane(lid);
    const auto& rt = lanes_[net_->lane_index(lid)];
    int n = static_cast<int>(rt.queue.size());
    for (int vid : rt.traveling)
      if (vehicles_.at(vid).position >= lane.length - lane.sensor_range) ++n;
    wave.push_back(n);
  }
  return wave;
}

int Simulation::lane_queue(LaneId lane) const {
  return static_cast<int>(lanes_[net_->lane_index(lane)].queue.size());
}

int Simulation::lane_occupancy(LaneId lane) const {
  const auto& rt = lanes_[net_->lane_index(lane)];
  return static_cast<int>(rt.traveling.size() + rt.queue.size());
}

int Simulation::lane_capacity(LaneId lane) const {
  return lanes_[net_->lane_index(lane)].capacity;
}

int Simulation::place_vehicle(const std::vector<LaneId>& route, int route_index, double position,
                              bool queued) {
  if (route.empty() || route_index < 0 || route_index >= static_cast<int>(route.size()))
    throw std::invalid_argument("place_vehicle: bad route position");
  Vehicle v;
  v.id = next_vehicle_id_++;
  v.route = route;
  v.route_index = route_index;
  v.position = position;
  v.queued = queued;
  v.entered_at = clock_;
  auto& rt = lanes_[net_->lane_index(route[route_index])];
  if (queued)
    rt.queue.push_back(v.id);
  else
    rt.traveling.push_back(v.id);
  vehicles_.emplace(v.id, std::move(v));
  ++inserted_;
  return next_vehicle_id_ - 1;
}

const std::vector<LaneId>& Simulation::route_between(LaneId origin, LaneId destination) {
  const auto key = std::make_pair(origin, destination);
  auto cached = route_cache_.find(key);
  if (cached != route_cache_.end()) return cached->second;

  auto bfs = [&](bool allow_uturn) -> std::vector<LaneId> {
    std::map<LaneId, LaneId> parent;
    parent[origin] = origin;
    std::deque<LaneId> frontier{origin};
    while (!frontier.empty()) {
      const LaneId cur = frontier.front();
      frontier.pop_front();
      if (cur == destination) break;
      const Lane& cl = net_->lane(cur);
      for (LaneId nxt : net_->node(cl.to_node).outgoing_lanes) {  // ascending id order
        if (parent.count(nxt)) continue;
        const Lane& nl = net_->lane(nxt);
        if (!allow_uturn && nl.to_node == cl.from_node) continue;
        parent[nxt] = cur;
        frontier.push_back(nxt);
      }
    }
    if (!parent.count(destination)) return {};
    std::vector<LaneId> path;
    for (LaneId l = destination; l != origin; l = parent[l]) path.push_back(l);
    path.push_back(origin);
    std::reverse(path.begin(), path.end());
    return path;
  };

  std::vector<LaneId> path = bfs(false);
  if (path.empty()) path = bfs(true);
  if (path.empty())
    throw std::runtime_error("route_between: no route from lane " + std::to_string(origin) +
                             " to lane " + std::to_string(destination));
  return route_cache_.emplace(key, std::move(path)).first->second;
}

}  // namespace atsc
