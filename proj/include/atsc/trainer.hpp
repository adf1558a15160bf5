#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atsc/agents.hpp"

namespace atsc {

enum class Algorithm { Ma2c, Ia2c, IqlLr, IqlDnn, Greedy };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);
inline bool is_a2c(Algorithm a) { return a == Algorithm::Ma2c || a == Algorithm::Ia2c; }
inline bool is_iql(Algorithm a) { return a == Algorithm::IqlLr || a == Algorithm::IqlDnn; }
inline bool is_learner(Algorithm a) { return a != Algorithm::Greedy; }

struct TrainConfig {
  Algorithm algorithm = Algorithm::Ma2c;
  int ts = 3600;  // simulated seconds per episode
  int dt = 5;     // agent interaction period
  int ty = 2;     // yellow time
  int batch = 40;
  Scalar gamma = 0.99;
  Scalar alpha = 0.9;
  Scalar beta = 0.01;
  Scalar eta_theta = 5e-4;
  Scalar eta_psi = 2.5e-4;
  Scalar reward_norm = 25.0;  // queue sum divisor before reward clipping
  Scalar wave_norm = 5.0;     // per-lane wave divisor before state clipping
  Scalar rmsprop_decay = 0.99;
  Scalar rmsprop_epsilon = 1e-5;
  Scalar grad_cap = 40.0;
  long total_sim_seconds = 100L * 3600L;
  ScenarioSpec scenario{720, 2000, "720/2000"};
  enum class SeedMode { PseudoRandom, FullyRandom } seed_mode = SeedMode::PseudoRandom;
  std::uint64_t train_seed = 42;
  std::vector<std::uint64_t> test_seeds{10400, 20200, 31000, 3101, 122, 42, 20200, 33333};
  Scalar success_threshold = 0.8;
  int fc_size = 128;
  int fp_fc_size = 64;
  int lstm_size = 64;
  std::vector<int> iql_hidden{64, 64};
  Scalar iql_eps_final = 0.01;  // annealed linearly from 1 over the first half

  int interactions_per_episode() const { return ts / dt; }
  int learning_steps_per_episode() const { return interactions_per_episode() / batch; }
  int episodes() const {
    return static_cast<int>((total_sim_seconds + ts - 1) / ts);
  }
  void validate() const;
};

/// One row per learning step per agent.
struct StepStats {
  int episode = 0;
  int step = 0;   // learning step index within the episode
  AgentId agent = 0;
  Scalar actor_loss = 0.0;
  Scalar critic_loss = 0.0;
  Scalar actor_grad_norm = 0.0;  // post-cap
  Scalar critic_grad_norm = 0.0;
  Scalar avg_queue = 0.0;  // batch-window mean of the summed agent queues
};

struct RunRecord {
  std::vector<StepStats> steps;
  std::vector<Scalar> episode_avg_queue;  // episode mean of summed agent queues
  std::vector<int> running_vehicles;      // per tick, episodes concatenated
  // observed extremes across the run, for clip conformance checks
  Scalar state_min = 0.0, state_max = 0.0;
  Scalar reward_min = 0.0, reward_max = 0.0;
  Scalar max_grad_norm = 0.0;
  long clip_violations = 0;
  bool finite = true;
  int episodes = 0;
  int interactions_per_episode = 0;
  int ticks_per_episode = 0;
  double wall_clock_seconds = 0.0;  // kept out of the serialized form
};

/// All per-agent learning state for one algorithm on one network.
class MultiAgentSystem {
 public:
  struct A2cAgent {
    AgentId id = 0;
    std::vector<AgentId> neighbors;  // ascending
    int n_actions = 0;
    RecurrentNet actor, critic;
    Vector actor_snapshot, critic_snapshot;  // params after the last learning step
    RmsPropState actor_opt, critic_opt;
    LstmCarry actor_carry, critic_carry;  // episode-scoped histories
    LstmCarry actor_carry_batch;          // actor carry at the current batch start
    ExperienceBatch batch;
    Vector last_policy;  // fingerprint source, pi_{t-1}
  };

  struct QAgent {
    AgentId id = 0;
    int n_actions = 0;
    QLearner q;
    Vector prev_wave;  // previous normalized wave; state is [wave_t; wave_{t-1}]
    Vector last_state;
    int last_action = 0;
    Scalar last_reward = 0.0;
    bool has_pending = false;
  };

  MultiAgentSystem(const TrafficNetwork& net, const TrainConfig& cfg);

  /// Orthogonal init of every network from one seeded stream, agent order.
  void init_params(std::uint64_t seed);

  const TrafficNetwork& network() const { return *net_; }
  const TrainConfig& config() const { return cfg_; }

  std::vector<A2cAgent> a2c;  // ascending agent id; empty unless algorithm is a2c
  std::vector<QAgent> ql;     // ascending agent id; empty unless algorithm is iql

 private:
  const TrafficNetwork* net_;
  TrainConfig cfg_;
};

struct StepLosses {
  Scalar actor_loss = 0.0;
  Scalar critic_loss = 0.0;
  Scalar actor_grad_norm = 0.0;
  Scalar critic_grad_norm = 0.0;
};

/// One learning step on a full (or episode-tail) batch: n-step returns with
/// the frozen critic snapshot, advantages, BPTT, gradient cap, RMSprop, then
/// snapshot refresh. Advances the critic's episode carry by the batch; the
/// bootstrap evaluation leaves it untouched.
StepLosses learning_step(const TrainConfig& cfg, MultiAgentSystem::A2cAgent& agent);

/// Simulates one episode of cfg.ts seconds: every dt observe -> act -> tick*dt
/// -> reward for all agents; every `batch` interactions one learning step per
/// agent (when learning). Appends to record. Evaluation runs pass learn=false
/// (IQL then acts greedily).
void run_episode(const TrainConfig& cfg, MultiAgentSystem& sys, std::uint64_t schedule_seed,
                 Rng& action_rng, bool learn, int episode_index, int total_episodes,
                 RunRecord& record);

/// Episodes until total_sim_seconds is covered. PseudoRandom reuses train_seed
/// for every episode's insertion schedule; FullyRandom draws a fresh seed per
/// episode from a master stream.
std::pair<MultiAgentSystem, RunRecord> train(const TrainConfig& cfg, const TrafficNetwork& net);

/// Final-quartile mean average-queue < threshold x first-quartile mean.
bool success_criterion(const RunRecord& record, Scalar threshold = 0.8);

}  // namespace atsc
