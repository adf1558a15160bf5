#include "atsc/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atsc {

namespace {

Vector normalized_wave(const Simulation& sim, AgentId agent, Scalar divisor) {
  const std::vector<int> wave = sim.measure_wave(agent);
  Vector v(wave.size());
  for (size_t i = 0; i < wave.size(); ++i) v[static_cast<int>(i)] = wave[i] / divisor;
  return clip_states(std::move(v));
}

}  // namespace

Scalar local_reward(const Simulation& sim, AgentId agent, Scalar norm_divisor) {
  return clip_reward(sim.measure_queue(agent) / norm_divisor);
}

Scalar global_average_reward(const Simulation& sim, const std::vector<AgentId>& agents,
                             Scalar norm_divisor) {
  if (agents.empty()) throw std::invalid_argument("global_average_reward: no agents");
  Scalar total = 0.0;
  for (AgentId a : agents) total += local_reward(sim, a, norm_divisor);
  return total / static_cast<Scalar>(agents.size());
}

Scalar spatial_reward(const Simulation& sim, const AgentGraph& graph, AgentId agent,
                      Scalar alpha, Scalar norm_divisor) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("spatial_reward: alpha in [0,1]");
  const auto neighbors = graph.neighbors(agent);
  Scalar total = local_reward(sim, agent, norm_divisor);
  for (AgentId j : neighbors) total += alpha * local_reward(sim, j, norm_divisor);
  return total / static_cast<Scalar>(neighbors.size() + 1);
}

Vector n_step_returns(const Vector& rewards, Scalar bootstrap_value, Scalar gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("n_step_returns: gamma in [0,1]");
  Vector out(rewards.size());
  Scalar acc = bootstrap_value;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

Vector advantage(const Vector& returns, const Vector& values) {
  if (returns.size() != values.size()) throw std::invalid_argument("advantage: shape mismatch");
  return returns - values;
}

Scalar actor_loss(const Vector& logp_taken, const Vector& advantages,
                  const std::vector<Vector>& policies, Scalar beta) {
  if (logp_taken.size() != advantages.size() ||
      policies.size() != static_cast<size_t>(logp_taken.size()))
    throw std::invalid_argument("actor_loss: shape mismatch");
  Scalar loss = -logp_taken.dot(advantages);
  for (const Vector& pi : policies) loss -= beta * entropy(pi);
  return loss;
}

Scalar critic_loss(const Vector& returns, const Vector& values) {
  if (returns.size() != values.size()) throw std::invalid_argument("critic_loss: shape mismatch");
  return 0.5 * (returns - values).squaredNorm();
}

Vector actor_dlogits(const Vector& policy, const Vector& log_policy, int action,
                     Scalar advantage, Scalar beta) {
  // d/dz of -log pi(u) A: -A (e_u - pi)
  Vector d = advantage * policy;
  d[action] -= advantage;
  // d/dz of -beta H: beta * pi .* (log pi + H)
  const Scalar h = entropy(policy);
  d.array() += beta * policy.array() * (log_policy.array() + h);
  return d;
}

Observation ia2c_observe(const Simulation& sim, AgentId agent, Scalar wave_divisor,
                         const std::vector<AgentId>& neighbors) {
  Observation obs;
  obs.own_wave = normalized_wave(sim, agent, wave_divisor);
  std::vector<Vector> waves;
  int total = 0;
  for (AgentId j : neighbors) {
    waves.push_back(normalized_wave(sim, j, wave_divisor));
    total += static_cast<int>(waves.back().size());
  }
  obs.neighbor_waves.resize(total);
  int at = 0;
  for (const Vector& w : waves) {
    obs.neighbor_waves.segment(at, w.size()) = w;
    at += static_cast<int>(w.size());
  }
  obs.fingerprints = Vector();
  return obs;
}

Observation ia2c_observe(const Simulation& sim, AgentId agent, Scalar wave_divisor) {
  return ia2c_observe(sim, agent, wave_divisor,
                      sim.network().agent_graph.neighbors(agent));
}

Observation ma2c_observe(const Simulation& sim, AgentId agent, Scalar alpha,
                         Scalar wave_divisor, const std::vector<AgentId>& neighbors,
                         const std::vector<Vector>& neighbor_policies) {
  if (neighbor_policies.size() != neighbors.size())
    throw std::invalid_argument("ma2c_observe: one policy per neighbor required");
  Observation obs = ia2c_observe(sim, agent, wave_divisor, neighbors);
  obs.neighbor_waves *= alpha;  // own wave stays unscaled
  int fp_total = 0;
  for (const Vector& p : neighbor_policies) fp_total += static_cast<int>(p.size());
  obs.fingerprints.resize(fp_total);
  int at = 0;
  for (const Vector& p : neighbor_policies) {
    obs.fingerprints.segment(at, p.size()) = p;
    at += static_cast<int>(p.size());
  }
  return obs;
}

ActResult act(const RecurrentNet& actor, const Observation& obs, const LstmCarry& carry,
              Rng& rng) {
  ActResult res;
  res.policy = actor.step(obs.wave_input(), obs.fingerprints, carry, &res.carry);
  const Scalar u = rng.uniform();
  Scalar cdf = 0.0;
  res.action = static_cast<int>(res.policy.size()) - 1;
  for (int i = 0; i < res.policy.size(); ++i) {
    cdf += res.policy[i];
    if (u < cdf) {
      res.action = i;
      break;
    }
  }
  res.log_prob = std::log(res.policy[res.action]);
  return res;
}

int greedy_action(const Simulation& sim, AgentId agent) {
  const Intersection& node = sim.network().node(agent);
  if (!node.signalized) throw std::invalid_argument("greedy_action: agent not signalized");
  const std::vector<int> wave = sim.measure_wave(agent);
  int best = 0;
  long best_score = -1;
  for (size_t p = 0; p < node.phases.size(); ++p) {
    long score = 0;
    for (size_t l = 0; l < node.incoming_lanes.size(); ++l)
      if (node.phases[p].serves(node.incoming_lanes[l])) score += wave[l];
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(p);
    }
  }
  return best;
}

QLearner make_q_learner(bool dnn, int state_dim, int n_actions, const std::vector<int>& hidden,
                        Rng& rng) {
  QLearner q;
  q.n_actions = n_actions;
  q.net = MlpNet(state_dim, dnn ? hidden : std::vector<int>{}, n_actions);
  q.net.init(rng);
  return q;
}

int iql_act(const QLearner& q, const Vector& state, Rng& rng) {
  if (q.epsilon > 0.0 && rng.uniform() < q.epsilon) return rng.uniform_int(q.n_actions);
  const Vector qs = q.q_values(state);
  int best = 0;
  for (int i = 1; i < qs.size(); ++i)
    if (qs[i] > qs[best]) best = i;
  return best;
}

IqlUpdateStats iql_update(QLearner& q, const Vector& state, int action, Scalar reward,
                          const Vector& next_state, bool done, Scalar gamma, Scalar lr,
                          Scalar grad_cap) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("iql_update: gamma in [0,1]");
  Scalar target = reward;
  if (!done) target += gamma * q.q_values(next_state).maxCoeff();
  const MlpTape tape = q.net.forward_tape(state);
  const Scalar delta = tape.out[action] - target;
  Vector dout = Vector::Zero(q.n_actions);
  dout[action] = delta;  // gradient of 1/2 delta^2
  Vector grad = q.net.backward(tape, dout);
  IqlUpdateStats stats;
  stats.grad_norm = cap_gradients(grad, grad_cap);
  stats.td_loss = 0.5 * delta * delta;
  q.net.params -= lr * grad;
  return stats;
}

}  // namespace atsc
