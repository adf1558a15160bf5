#include "atsc/trainer.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace atsc {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Ma2c: return "ma2c";
    case Algorithm::Ia2c: return "ia2c";
    case Algorithm::IqlLr: return "iql_lr";
    case Algorithm::IqlDnn: return "iql_dnn";
    case Algorithm::Greedy: return "greedy";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ma2c") return Algorithm::Ma2c;
  if (s == "ia2c") return Algorithm::Ia2c;
  if (s == "iql_lr") return Algorithm::IqlLr;
  if (s == "iql_dnn") return Algorithm::IqlDnn;
  if (s == "greedy") return Algorithm::Greedy;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

void TrainConfig::validate() const {
  if (ts <= 0 || dt <= 0 || batch <= 0 || ty < 0)
    throw std::invalid_argument("config: ts, dt, batch must be positive");
  if (ts % dt != 0) throw std::invalid_argument("config: dt must divide ts");
  if (interactions_per_episode() % batch != 0)
    throw std::invalid_argument("config: batch must divide ts/dt");
  if (gamma < 0 || gamma > 1 || alpha < 0 || alpha > 1 || beta < 0)
    throw std::invalid_argument("config: gamma, alpha in [0,1], beta >= 0");
  if (eta_theta <= 0 || eta_psi <= 0 || reward_norm <= 0 || wave_norm <= 0 || grad_cap <= 0)
    throw std::invalid_argument("config: rates, norms and grad cap must be positive");
  if (scenario.window > ts)
    throw std::invalid_argument("config: insertion window must fit in the episode");
  if (total_sim_seconds <= 0) throw std::invalid_argument("config: nothing to simulate");
}

MultiAgentSystem::MultiAgentSystem(const TrafficNetwork& net, const TrainConfig& cfg)
    : net_(&net), cfg_(cfg) {
  cfg.validate();
  const AgentGraph& g = net.agent_graph;
  if (g.vertices.empty()) throw std::invalid_argument("network has no signalized agents");
  if (is_a2c(cfg.algorithm)) {
    for (AgentId id : g.vertices) {
      A2cAgent a;
      a.id = id;
      a.neighbors = g.neighbors(id);
      const Intersection& node = net.node(id);
      a.n_actions = static_cast<int>(node.phases.size());
      int wave_dim = static_cast<int>(node.incoming_lanes.size());
      int fp_dim = 0;
      for (AgentId j : a.neighbors) {
        wave_dim += static_cast<int>(net.node(j).incoming_lanes.size());
        if (cfg.algorithm == Algorithm::Ma2c)
          fp_dim += static_cast<int>(net.node(j).phases.size());
      }
      RecurrentNetSpec actor_spec;
      actor_spec.wave_dim = wave_dim;
      actor_spec.fp_dim = fp_dim;
      actor_spec.fc_size = cfg.fc_size;
      actor_spec.fp_fc_size = cfg.fp_fc_size;
      actor_spec.lstm_size = cfg.lstm_size;
      actor_spec.out_dim = a.n_actions;
      actor_spec.softmax_head = true;
      RecurrentNetSpec critic_spec = actor_spec;
      critic_spec.out_dim = 1;
      critic_spec.softmax_head = false;
      a.actor = RecurrentNet(actor_spec);
      a.critic = RecurrentNet(critic_spec);
      a.actor_opt = RmsPropState::make(a.actor.param_count(), cfg.eta_theta, cfg.rmsprop_decay,
                                       cfg.rmsprop_epsilon);
      a.critic_opt = RmsPropState::make(a.critic.param_count(), cfg.eta_psi, cfg.rmsprop_decay,
                                        cfg.rmsprop_epsilon);
      a.actor_carry = a.critic_carry = a.actor_carry_batch = LstmCarry::zero(cfg.lstm_size);
      a.last_policy = Vector::Constant(a.n_actions, 1.0 / a.n_actions);
      a2c.push_back(std::move(a));
    }
  } else if (is_iql(cfg.algorithm)) {
    for (AgentId id : g.vertices) {
      QAgent qa;
      qa.id = id;
      const Intersection& node = net.node(id);
      qa.n_actions = static_cast<int>(node.phases.size());
      const int state_dim = 2 * static_cast<int>(node.incoming_lanes.size());
      qa.q.n_actions = qa.n_actions;
      qa.q.net = MlpNet(state_dim,
                        cfg.algorithm == Algorithm::IqlDnn ? cfg.iql_hidden : std::vector<int>{},
                        qa.n_actions);
      qa.prev_wave = Vector::Zero(node.incoming_lanes.size());
      ql.push_back(std::move(qa));
    }
  }
}

void MultiAgentSystem::init_params(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& a : a2c) {
    a.actor.init(rng);
    a.critic.init(rng);
    a.actor_snapshot = a.actor.params;
    a.critic_snapshot = a.critic.params;
    a.actor_opt.acc.setZero();
    a.critic_opt.acc.setZero();
  }
  for (auto& qa : ql) qa.q.net.init(rng);
}

StepLosses learning_step(const TrainConfig& cfg, MultiAgentSystem::A2cAgent& agent) {
  ExperienceBatch& batch = agent.batch;
  const int T = static_cast<int>(batch.items.size());
  if (T == 0) throw std::invalid_argument("learning_step: empty batch");

  std::vector<Vector> waves(T), fps(T);
  Vector rewards(T);
  for (int t = 0; t < T; ++t) {
    waves[t] = batch.items[t].obs.wave_input();
    fps[t] = batch.items[t].obs.fingerprints;
    rewards[t] = batch.items[t].reward;
  }

  // parameters are refreshed into the snapshot after every step, so the
  // replay values double as V_{psi-}(h_t)
  assert((agent.critic.params.array() == agent.critic_snapshot.array()).all());
  const auto tape_c = agent.critic.forward_sequence(waves, fps, agent.critic_carry);
  Vector values(T);
  for (int t = 0; t < T; ++t) values[t] = tape_c[t].out[0];
  const LstmCarry carry_end = agent.critic.carry_after(tape_c);

  Scalar v_boot = 0.0;
  if (!batch.terminal) {
    // V_{psi-}(h_{t_B}): snapshot parameters, and the critic's stored carry
    // stays at the batch boundary
    std::swap(agent.critic.params, agent.critic_snapshot);
    v_boot = agent.critic.step(batch.bootstrap.wave_input(), batch.bootstrap.fingerprints,
                               carry_end, nullptr)[0];
    std::swap(agent.critic.params, agent.critic_snapshot);
  }

  const Vector returns = n_step_returns(rewards, v_boot, cfg.gamma);
  const Vector adv = advantage(returns, values);

  // actor replay reproduces the interaction pass exactly: same parameters,
  // same carry at batch start
  const auto tape_a = agent.actor.forward_sequence(waves, fps, agent.actor_carry_batch);
  std::vector<Vector> dlogits_a(T), policies(T);
  Vector logp(T);
  for (int t = 0; t < T; ++t) {
    const Vector log_pi = log_softmax(tape_a[t].logits);
    policies[t] = tape_a[t].out;
    logp[t] = log_pi[batch.items[t].action];
    dlogits_a[t] = actor_dlogits(policies[t], log_pi, batch.items[t].action, adv[t], cfg.beta);
  }

  StepLosses out;
  out.actor_loss = actor_loss(logp, adv, policies, cfg.beta);
  out.critic_loss = critic_loss(returns, values);

  Vector grad_a = agent.actor.backward(tape_a, dlogits_a);
  out.actor_grad_norm = cap_gradients(grad_a, cfg.grad_cap);
  rmsprop_update(agent.actor_opt, agent.actor.params, grad_a);

  std::vector<Vector> dlogits_c(T);
  for (int t = 0; t < T; ++t) dlogits_c[t] = Vector::Constant(1, values[t] - returns[t]);
  Vector grad_c = agent.critic.backward(tape_c, dlogits_c);
  out.critic_grad_norm = cap_gradients(grad_c, cfg.grad_cap);
  rmsprop_update(agent.critic_opt, agent.critic.params, grad_c);

  agent.actor_snapshot = agent.actor.params;
  agent.critic_snapshot = agent.critic.params;
  agent.critic_carry = carry_end;
  return out;
}

namespace {

struct ClipTracker {
  RunRecord* rec;

  void state(const Vector& v) {
    for (int i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) rec->finite = false;
      rec->state_min = std::min(rec->state_min, v[i]);
      rec->state_max = std::max(rec->state_max, v[i]);
      if (v[i] < 0.0 || v[i] > 2.0) ++rec->clip_violations;
    }
  }
  void observation(const Observation& o) {
    state(o.own_wave);
    state(o.neighbor_waves);
    state(o.fingerprints);
  }
  void reward(Scalar r) {
    if (!std::isfinite(r)) rec->finite = false;
    rec->reward_min = std::min(rec->reward_min, r);
    rec->reward_max = std::max(rec->reward_max, r);
    if (r < -2.0 || r > 2.0) ++rec->clip_violations;
  }
  void grad(Scalar norm, Scalar cap) {
    if (!std::isfinite(norm)) rec->finite = false;
    rec->max_grad_norm = std::max(rec->max_grad_norm, norm);
    if (norm > cap + 1e-9) ++rec->clip_violations;
  }
  void loss(Scalar l) {
    if (!std::isfinite(l)) rec->finite = false;
  }
};

}  // namespace

void run_episode(const TrainConfig& cfg, MultiAgentSystem& sys, std::uint64_t schedule_seed,
                 Rng& action_rng, bool learn, int episode_index, int total_episodes,
                 RunRecord& record) {
  const TrafficNetwork& net = sys.network();
  const std::vector<AgentId>& agents = net.agent_graph.vertices;
  Simulation sim(net, make_schedule(net, cfg.scenario, schedule_seed), cfg.ty);
  const int ipe = cfg.interactions_per_episode();
  const Algorithm algo = cfg.algorithm;
  ClipTracker track{&record};

  auto agent_index = [&agents](AgentId id) {
    return static_cast<int>(std::lower_bound(agents.begin(), agents.end(), id) - agents.begin());
  };

  for (auto& a : sys.a2c) {
    a.actor_carry = a.critic_carry = a.actor_carry_batch = LstmCarry::zero(cfg.lstm_size);
    a.batch.items.clear();
    a.batch.terminal = false;
    a.last_policy = Vector::Constant(a.n_actions, 1.0 / a.n_actions);
  }
  for (auto& qa : sys.ql) {
    qa.prev_wave = Vector::Zero(net.node(qa.id).incoming_lanes.size());
    qa.has_pending = false;
  }

  auto observe = [&](const MultiAgentSystem::A2cAgent& a) {
    if (algo == Algorithm::Ma2c) {
      std::vector<Vector> pols;
      pols.reserve(a.neighbors.size());
      for (AgentId j : a.neighbors) pols.push_back(sys.a2c[agent_index(j)].last_policy);
      return ma2c_observe(sim, a.id, cfg.alpha, cfg.wave_norm, a.neighbors, pols);
    }
    return ia2c_observe(sim, a.id, cfg.wave_norm, a.neighbors);
  };

  const double total_interactions = static_cast<double>(total_episodes) * ipe;
  Scalar episode_queue = 0.0;
  Scalar window_queue = 0.0;
  Scalar window_td = 0.0;
  Scalar window_grad = 0.0;
  int window_n = 0;
  int step_idx = 0;

  for (int k = 0; k < ipe; ++k) {
    const bool last = k == ipe - 1;

    std::vector<Observation> obs;
    std::vector<ActResult> acted;
    if (is_a2c(algo)) {
      obs.resize(sys.a2c.size());
      acted.resize(sys.a2c.size());
      for (size_t i = 0; i < sys.a2c.size(); ++i) {
        obs[i] = observe(sys.a2c[i]);
        track.observation(obs[i]);
      }
      for (size_t i = 0; i < sys.a2c.size(); ++i) {
        auto& a = sys.a2c[i];
        acted[i] = act(a.actor, obs[i], a.actor_carry, action_rng);
        a.actor_carry = acted[i].carry;
        sim.apply_action(a.id, acted[i].action);
      }
      for (size_t i = 0; i < sys.a2c.size(); ++i) sys.a2c[i].last_policy = acted[i].policy;
    } else if (algo == Algorithm::Greedy) {
      for (AgentId id : agents) sim.apply_action(id, greedy_action(sim, id));
    } else {
      const double progress = (episode_index * static_cast<double>(ipe) + k) / total_interactions;
      const Scalar eps =
          learn ? std::max(cfg.iql_eps_final,
                           1.0 + (cfg.iql_eps_final - 1.0) * std::min(1.0, progress / 0.5))
                : 0.0;
      for (auto& qa : sys.ql) {
        const Vector wave = ia2c_observe(sim, qa.id, cfg.wave_norm, {}).own_wave;
        Vector state(2 * wave.size());
        state << wave, qa.prev_wave;
        track.state(state);
        if (learn && qa.has_pending) {
          const auto st = iql_update(qa.q, qa.last_state, qa.last_action, qa.last_reward, state,
                                     false, cfg.gamma, cfg.eta_theta, cfg.grad_cap);
          track.grad(st.grad_norm, cfg.grad_cap);
          window_td += st.td_loss;
          window_grad = std::max(window_grad, st.grad_norm);
        }
        qa.q.epsilon = eps;
        const int action = iql_act(qa.q, state, action_rng);
        sim.apply_action(qa.id, action);
        qa.last_state = state;
        qa.last_action = action;
        qa.prev_wave = wave;
      }
    }

    for (int t = 0; t < cfg.dt; ++t) {
      sim.tick();
      record.running_vehicles.push_back(sim.running_vehicles());
    }

    Scalar queue_sum = 0.0;
    for (AgentId id : agents) queue_sum += sim.measure_queue(id);
    episode_queue += queue_sum;
    window_queue += queue_sum;
    ++window_n;

    if (is_a2c(algo)) {
      for (size_t i = 0; i < sys.a2c.size(); ++i) {
        auto& a = sys.a2c[i];
        const Scalar penalty =
            algo == Algorithm::Ma2c
                ? spatial_reward(sim, net.agent_graph, a.id, cfg.alpha, cfg.reward_norm)
                : global_average_reward(sim, agents, cfg.reward_norm);
        const Scalar stored = -penalty;  // queues enter the losses as penalties
        track.reward(stored);
        if (learn) a.batch.items.push_back({obs[i], acted[i].action, stored, last});
      }
      if (learn && (static_cast<int>(sys.a2c[0].batch.items.size()) == cfg.batch || last)) {
        const Scalar window_avg = window_queue / window_n;
        for (auto& a : sys.a2c) {
          a.batch.terminal = last;
          a.batch.bootstrap = observe(a);
          track.observation(a.batch.bootstrap);
        }
        for (auto& a : sys.a2c) {
          const StepLosses sl = learning_step(cfg, a);
          track.grad(sl.actor_grad_norm, cfg.grad_cap);
          track.grad(sl.critic_grad_norm, cfg.grad_cap);
          track.loss(sl.actor_loss);
          track.loss(sl.critic_loss);
          record.steps.push_back({episode_index, step_idx, a.id, sl.actor_loss, sl.critic_loss,
                                  sl.actor_grad_norm, sl.critic_grad_norm, window_avg});
          a.batch.items.clear();
          a.actor_carry_batch = a.actor_carry;
        }
        ++step_idx;
        window_queue = 0.0;
        window_n = 0;
      }
    } else if (is_iql(algo)) {
      const Scalar stored = -global_average_reward(sim, agents, cfg.reward_norm);
      track.reward(stored);
      for (auto& qa : sys.ql) {
        qa.last_reward = stored;
        qa.has_pending = true;
      }
      if (last && learn) {
        // close out the episode: terminal transition, no bootstrap
        for (auto& qa : sys.ql) {
          const Vector wave = ia2c_observe(sim, qa.id, cfg.wave_norm, {}).own_wave;
          Vector state(2 * wave.size());
          state << wave, qa.prev_wave;
          const auto st = iql_update(qa.q, qa.last_state, qa.last_action, qa.last_reward, state,
                                     true, cfg.gamma, cfg.eta_theta, cfg.grad_cap);
          track.grad(st.grad_norm, cfg.grad_cap);
          window_td += st.td_loss;
          window_grad = std::max(window_grad, st.grad_norm);
          qa.has_pending = false;
        }
      }
      if (learn && ((k + 1) % cfg.batch == 0 || last)) {
        const Scalar window_avg = window_queue / window_n;
        const Scalar mean_td = window_td / (window_n * static_cast<Scalar>(sys.ql.size()));
        record.steps.push_back({episode_index, step_idx, -1, 0.0, mean_td, 0.0, window_grad,
                                window_avg});
        ++step_idx;
        window_queue = 0.0;
        window_td = 0.0;
        window_grad = 0.0;
        window_n = 0;
      }
    }
  }

  record.episode_avg_queue.push_back(episode_queue / ipe);
  record.episodes += 1;
  record.interactions_per_episode = ipe;
  record.ticks_per_episode = cfg.ts;
}

std::pair<MultiAgentSystem, RunRecord> train(const TrainConfig& cfg, const TrafficNetwork& net) {
  cfg.validate();
  MultiAgentSystem sys(net, cfg);
  sys.init_params(mix_seed(cfg.train_seed, 0xA11));
  Rng action_rng(mix_seed(cfg.train_seed, 0xAC7));
  Rng schedule_rng(mix_seed(cfg.train_seed, 0x5EED));
  RunRecord record;
  const int episodes = cfg.episodes();
  const auto t0 = std::chrono::steady_clock::now();
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t s = cfg.seed_mode == TrainConfig::SeedMode::PseudoRandom
                                ? cfg.train_seed
                                : schedule_rng.next_u64();
    run_episode(cfg, sys, s, action_rng, is_learner(cfg.algorithm), e, episodes, record);
  }
  record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(sys), std::move(record)};
}

bool success_criterion(const RunRecord& record, Scalar threshold) {
  const auto& q = record.episode_avg_queue;
  if (q.empty()) throw std::invalid_argument("success_criterion: empty record");
  const int n = static_cast<int>(q.size());
  const int quart = std::max(1, n / 4);
  Scalar first = 0.0, final = 0.0;
  for (int i = 0; i < quart; ++i) first += q[i];
  for (int i = n - quart; i < n; ++i) final += q[i];
  first /= quart;
  final /= quart;
  return final < threshold * first;
}

}  // namespace atsc
