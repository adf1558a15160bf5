#pragma once

#include <vector>

#include "atsc/microsim.hpp"
#include "atsc/neuralcore.hpp"

namespace atsc {

/// Per-agent network input. Waves are normalized (divided by the wave norm)
/// and clipped to [0, 2] before they land here; MA2C additionally scales the
/// neighbor block by alpha. Fingerprint entries are probabilities, one block
/// per neighbor in ascending id order.
struct Observation {
  Vector own_wave;
  Vector neighbor_waves;
  Vector fingerprints;

  Vector wave_input() const {
    Vector v(own_wave.size() + neighbor_waves.size());
    if (v.size() > 0) v << own_wave, neighbor_waves;
    return v;
  }
};

struct Experience {
  Observation obs;
  int action = 0;
  Scalar reward = 0.0;
  bool done = false;
};

/// Rolling per-agent buffer; 40 entries at paper settings, shorter only when
/// an episode terminates early. `bootstrap` is the observation at t_B.
struct ExperienceBatch {
  std::vector<Experience> items;
  Observation bootstrap;
  bool terminal = false;
};

// --- rewards -----------------------------------------------------------
// All reward helpers return the queue penalty magnitude, normalized and
// clipped; the trainer negates it when storing (queues are penalties).

/// Queue sum over the agent's incoming lanes, divided by norm_divisor and
/// clipped to [-2, 2].
Scalar local_reward(const Simulation& sim, AgentId agent, Scalar norm_divisor);

/// Mean of local_reward over all agents (the IA2C / IQL signal).
Scalar global_average_reward(const Simulation& sim, const std::vector<AgentId>& agents,
                             Scalar norm_divisor);

/// (r_i + alpha * sum_j r_j) / |local region|, neighbors one hop out.
Scalar spatial_reward(const Simulation& sim, const AgentGraph& graph, AgentId agent,
                      Scalar alpha, Scalar norm_divisor);

// --- returns and losses --------------------------------------------------

/// R_t = sum_{tau=t}^{T-1} gamma^(tau-t) r_tau + gamma^(T-t) * bootstrap.
Vector n_step_returns(const Vector& rewards, Scalar bootstrap_value, Scalar gamma);

/// A_t = R_t - V_t, elementwise.
Vector advantage(const Vector& returns, const Vector& values);

/// -sum_t log pi(u_t) A_t - beta sum_t H(pi_t). Minimizing ascends return and
/// entropy.
Scalar actor_loss(const Vector& logp_taken, const Vector& advantages,
                  const std::vector<Vector>& policies, Scalar beta);

/// 1/2 sum_t (R_t - V_t)^2.
Scalar critic_loss(const Vector& returns, const Vector& values);

/// Loss gradient at the actor's head pre-activation for one step.
Vector actor_dlogits(const Vector& policy, const Vector& log_policy, int action,
                     Scalar advantage, Scalar beta);

// --- observations ---------------------------------------------------------

/// Own wave plus neighbor waves, all normalized and clipped, unscaled; no
/// fingerprints.
Observation ia2c_observe(const Simulation& sim, AgentId agent, Scalar wave_divisor,
                         const std::vector<AgentId>& neighbors);
Observation ia2c_observe(const Simulation& sim, AgentId agent, Scalar wave_divisor);

/// Own wave unscaled, neighbor waves scaled by alpha, neighbor policies from
/// the previous interaction appended as fingerprints.
Observation ma2c_observe(const Simulation& sim, AgentId agent, Scalar alpha,
                         Scalar wave_divisor, const std::vector<AgentId>& neighbors,
                         const std::vector<Vector>& neighbor_policies);

// --- action selection -------------------------------------------------

struct ActResult {
  int action = 0;
  Scalar log_prob = 0.0;
  LstmCarry carry;
  Vector policy;  // kept as the agent's fingerprint for the next step
};

/// Categorical sample from the actor's softmax head.
ActResult act(const RecurrentNet& actor, const Observation& obs, const LstmCarry& carry,
              Rng& rng);

/// Phase with the largest wave sum over the incoming lanes it serves; ties go
/// to the lowest phase id.
int greedy_action(const Simulation& sim, AgentId agent);

// --- independent Q-learning baselines -------------------------------------

/// Q regressor: linear per-action weights (IQL-LR) or a two-hidden-layer MLP
/// (IQL-DNN). Both update online on single transitions, no replay buffer and
/// no target network.
struct QLearner {
  MlpNet net;  // hidden {} for the linear variant
  int n_actions = 0;
  Scalar epsilon = 1.0;

  Vector q_values(const Vector& state) const { return net.forward(state); }
};

QLearner make_q_learner(bool dnn, int state_dim, int n_actions, const std::vector<int>& hidden,
                        Rng& rng);

/// Epsilon-greedy over q_values; argmax ties to the lowest action.
int iql_act(const QLearner& q, const Vector& state, Rng& rng);

struct IqlUpdateStats {
  Scalar td_loss = 0.0;    // 1/2 delta^2
  Scalar grad_norm = 0.0;  // post-cap
};

/// One gradient step on the squared TD error toward r + gamma max_a' Q(s',a').
IqlUpdateStats iql_update(QLearner& q, const Vector& state, int action, Scalar reward,
                          const Vector& next_state, bool done, Scalar gamma, Scalar lr,
                          Scalar grad_cap);

}  // namespace atsc
