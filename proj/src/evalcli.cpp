#include "atsc/evalcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

namespace atsc {

using nlohmann::json;

EvalReport evaluate(const TrainConfig& cfg, MultiAgentSystem& sys, const ScenarioSpec& scenario,
                    const std::vector<std::uint64_t>& seeds) {
  TrainConfig ecfg = cfg;
  ecfg.algorithm = sys.config().algorithm;
  ecfg.scenario = scenario;
  ecfg.validate();
  EvalReport rep;
  rep.algorithm = to_string(ecfg.algorithm);
  rep.scenario = scenario.name;
  rep.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    RunRecord tmp;
    Rng action_rng(mix_seed(seed, 0xE7A1));
    run_episode(ecfg, sys, seed, action_rng, /*learn=*/false, 0, 1, tmp);
    rep.avg_queue.push_back(tmp.episode_avg_queue.front());
  }
  const int n = static_cast<int>(rep.avg_queue.size());
  if (n > 0) {
    Scalar sum = 0.0;
    for (Scalar v : rep.avg_queue) sum += v;
    rep.mean = sum / n;
    Scalar var = 0.0;
    for (Scalar v : rep.avg_queue) var += (v - rep.mean) * (v - rep.mean);
    rep.stddev = std::sqrt(var / n);
  }
  return rep;
}

std::vector<CrossRow> cross_test(const TrainConfig& cfg, const TrafficNetwork& net,
                                 MultiAgentSystem& sys,
                                 const std::vector<ScenarioSpec>& scenarios) {
  std::vector<CrossRow> rows;
  TrainConfig gcfg = cfg;
  gcfg.algorithm = Algorithm::Greedy;
  MultiAgentSystem greedy_sys(net, gcfg);
  for (const ScenarioSpec& sc : scenarios) {
    CrossRow row;
    row.scenario = sc.name;
    row.policy = evaluate(cfg, sys, sc, cfg.test_seeds);
    row.greedy = evaluate(gcfg, greedy_sys, sc, cfg.test_seeds);
    rows.push_back(std::move(row));
  }
  return rows;
}

StabilityResult stability_suite(const TrainConfig& cfg, const TrafficNetwork& net, int n_runs) {
  if (!is_learner(cfg.algorithm))
    throw std::invalid_argument("stability_suite: greedy is not a learner");
  if (n_runs < 1) throw std::invalid_argument("stability_suite: need n_runs >= 1");

  unsigned workers = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("ATSC_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) workers = static_cast<unsigned>(v);
  }
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_runs)));

  std::vector<char> success(n_runs, 0);
  std::vector<Scalar> final_queue(n_runs, 0.0);
  auto worker = [&](unsigned w) {
    for (int r = static_cast<int>(w); r < n_runs; r += static_cast<int>(workers)) {
      TrainConfig c = cfg;
      c.train_seed = cfg.train_seed + static_cast<std::uint64_t>(r);
      auto [sys, rec] = train(c, net);
      success[r] = success_criterion(rec, cfg.success_threshold) ? 1 : 0;
      const int n = static_cast<int>(rec.episode_avg_queue.size());
      const int quart = std::max(1, n / 4);
      Scalar s = 0.0;
      for (int i = n - quart; i < n; ++i) s += rec.episode_avg_queue[i];
      final_queue[r] = s / quart;
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker, w);
  worker(0);
  for (auto& t : pool) t.join();

  StabilityResult res;
  res.algorithm = cfg.algorithm;
  res.runs = n_runs;
  for (int r = 0; r < n_runs; ++r) {
    res.per_run.push_back(success[r] != 0);
    res.final_avg_queue.push_back(final_queue[r]);
    if (success[r]) ++res.successes;
  }
  return res;
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'T', 'S', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string arch_string(const MultiAgentSystem& sys) {
  std::ostringstream os;
  os << to_string(sys.config().algorithm);
  for (const auto& a : sys.a2c) {
    const auto& s = a.actor.spec();
    os << "|a" << a.id << ':' << s.wave_dim << ':' << s.fp_dim << ':' << s.out_dim << ':'
       << s.fc_size << ':' << s.fp_fc_size << ':' << s.lstm_size;
  }
  for (const auto& qa : sys.ql)
    os << "|q" << qa.id << ':' << qa.q.net.param_count() << ':' << qa.n_actions;
  return os.str();
}

void write_u8(std::ostream& o, std::uint8_t v) { o.put(static_cast<char>(v)); }
void write_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }

void write_block(std::ostream& o, const Vector& v) {
  write_u64(o, static_cast<std::uint64_t>(v.size()));
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

std::uint8_t read_u8(std::istream& i) { return static_cast<std::uint8_t>(i.get()); }
std::uint32_t read_u32(std::istream& i) {
  std::uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& i) {
  std::uint64_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void read_block(std::istream& i, Vector& v, const char* what) {
  const std::uint64_t n = read_u64(i);
  if (n != static_cast<std::uint64_t>(v.size()))
    throw std::runtime_error(std::string("checkpoint: ") + what + " block size mismatch");
  i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
  if (!i) throw std::runtime_error("checkpoint: truncated file");
}

}  // namespace

void save_checkpoint(const MultiAgentSystem& sys, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  write_u8(out, kVersion);
  write_u8(out, static_cast<std::uint8_t>(sys.config().algorithm));
  write_u32(out, static_cast<std::uint32_t>(sys.a2c.size() + sys.ql.size()));
  write_u64(out, fnv1a(arch_string(sys)));
  for (const auto& a : sys.a2c) {
    write_u32(out, static_cast<std::uint32_t>(a.id));
    write_block(out, a.actor.params);
    write_block(out, a.critic.params);
    write_block(out, a.actor_opt.acc);
    write_block(out, a.critic_opt.acc);
  }
  for (const auto& qa : sys.ql) {
    write_u32(out, static_cast<std::uint32_t>(qa.id));
    write_block(out, qa.q.net.params);
  }
}

Algorithm checkpoint_algorithm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint8_t version = read_u8(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " (this build reads v" + std::to_string(kVersion) + ")");
  return static_cast<Algorithm>(read_u8(in));
}

void load_checkpoint(MultiAgentSystem& sys, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint8_t version = read_u8(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const Algorithm algo = static_cast<Algorithm>(read_u8(in));
  if (algo != sys.config().algorithm)
    throw std::runtime_error("checkpoint: algorithm mismatch (" + to_string(algo) + " vs " +
                             to_string(sys.config().algorithm) + ")");
  const std::uint32_t n_agents = read_u32(in);
  if (n_agents != sys.a2c.size() + sys.ql.size())
    throw std::runtime_error("checkpoint: agent count mismatch");
  const std::uint64_t hash = read_u64(in);
  if (hash != fnv1a(arch_string(sys)))
    throw std::runtime_error(
        "checkpoint: architecture hash mismatch; network or config incompatible (format v" +
        std::to_string(kVersion) + ")");
  for (auto& a : sys.a2c) {
    const std::uint32_t id = read_u32(in);
    if (static_cast<AgentId>(id) != a.id) throw std::runtime_error("checkpoint: agent order");
    read_block(in, a.actor.params, "actor");
    read_block(in, a.critic.params, "critic");
    read_block(in, a.actor_opt.acc, "actor optimizer");
    read_block(in, a.critic_opt.acc, "critic optimizer");
    a.actor_snapshot = a.actor.params;
    a.critic_snapshot = a.critic.params;
  }
  for (auto& qa : sys.ql) {
    const std::uint32_t id = read_u32(in);
    if (static_cast<AgentId>(id) != qa.id) throw std::runtime_error("checkpoint: agent order");
    read_block(in, qa.q.net.params, "q");
  }
}

// --- record / report json ----------------------------------------------

void save_record(const RunRecord& r, const std::string& path) {
  json j;
  j["episodes"] = r.episodes;
  j["interactions_per_episode"] = r.interactions_per_episode;
  j["ticks_per_episode"] = r.ticks_per_episode;
  j["episode_avg_queue"] = r.episode_avg_queue;
  j["running_vehicles"] = r.running_vehicles;
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({s.episode, s.step, s.agent, s.actor_loss, s.critic_loss, s.actor_grad_norm,
                     s.critic_grad_norm, s.avg_queue});
  j["steps"] = std::move(steps);
  j["state_min"] = r.state_min;
  j["state_max"] = r.state_max;
  j["reward_min"] = r.reward_min;
  j["reward_max"] = r.reward_max;
  j["max_grad_norm"] = r.max_grad_norm;
  j["clip_violations"] = r.clip_violations;
  j["finite"] = r.finite;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_record: cannot write " + path);
  out << j.dump() << '\n';
}

RunRecord load_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_record: cannot open " + path);
  json j;
  in >> j;
  RunRecord r;
  r.episodes = j.at("episodes").get<int>();
  r.interactions_per_episode = j.at("interactions_per_episode").get<int>();
  r.ticks_per_episode = j.at("ticks_per_episode").get<int>();
  r.episode_avg_queue = j.at("episode_avg_queue").get<std::vector<Scalar>>();
  r.running_vehicles = j.at("running_vehicles").get<std::vector<int>>();
  for (const auto& row : j.at("steps")) {
    StepStats s;
    s.episode = row.at(0).get<int>();
    s.step = row.at(1).get<int>();
    s.agent = row.at(2).get<int>();
    s.actor_loss = row.at(3).get<Scalar>();
    s.critic_loss = row.at(4).get<Scalar>();
    s.actor_grad_norm = row.at(5).get<Scalar>();
    s.critic_grad_norm = row.at(6).get<Scalar>();
    s.avg_queue = row.at(7).get<Scalar>();
    r.steps.push_back(s);
  }
  r.state_min = j.at("state_min").get<Scalar>();
  r.state_max = j.at("state_max").get<Scalar>();
  r.reward_min = j.at("reward_min").get<Scalar>();
  r.reward_max = j.at("reward_max").get<Scalar>();
  r.max_grad_norm = j.at("max_grad_norm").get<Scalar>();
  r.clip_violations = j.at("clip_violations").get<long>();
  r.finite = j.at("finite").get<bool>();
  return r;
}

void save_report(const EvalReport& rep, const std::string& path) {
  json j;
  j["algorithm"] = rep.algorithm;
  j["scenario"] = rep.scenario;
  j["seeds"] = rep.seeds;
  j["avg_queue"] = rep.avg_queue;
  j["mean"] = rep.mean;
  j["stddev"] = rep.stddev;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report: cannot write " + path);
  out << j.dump() << '\n';
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_report: cannot open " + path);
  json j;
  in >> j;
  EvalReport rep;
  rep.algorithm = j.at("algorithm").get<std::string>();
  rep.scenario = j.at("scenario").get<std::string>();
  rep.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  rep.avg_queue = j.at("avg_queue").get<std::vector<Scalar>>();
  rep.mean = j.at("mean").get<Scalar>();
  rep.stddev = j.at("stddev").get<Scalar>();
  return rep;
}

// --- exports ---------------------------------------------------------------

namespace {

std::string fmt_g17(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SeriesData {
  std::vector<std::string> columns;
  std::vector<std::vector<Scalar>> rows;
};

SeriesData record_series(const RunRecord& r, ExportSeries series) {
  SeriesData d;
  switch (series) {
    case ExportSeries::Queue: {
      d.columns = {"step", "episode", "avg_queue"};
      if (r.steps.empty()) {
        for (size_t e = 0; e < r.episode_avg_queue.size(); ++e)
          d.rows.push_back({static_cast<Scalar>(e), static_cast<Scalar>(e),
                            r.episode_avg_queue[e]});
      } else {
        int global = -1;
        int last_ep = -1, last_step = -1;
        for (const auto& s : r.steps) {
          if (s.episode != last_ep || s.step != last_step) {
            ++global;
            last_ep = s.episode;
            last_step = s.step;
            d.rows.push_back({static_cast<Scalar>(global), static_cast<Scalar>(s.episode),
                              s.avg_queue});
          }
        }
      }
      break;
    }
    case ExportSeries::Vehicles: {
      d.columns = {"tick", "running_vehicles"};
      for (size_t t = 0; t < r.running_vehicles.size(); ++t)
        d.rows.push_back({static_cast<Scalar>(t), static_cast<Scalar>(r.running_vehicles[t])});
      break;
    }
    case ExportSeries::Losses: {
      d.columns = {"step", "episode", "agent", "actor_loss", "critic_loss",
                   "actor_grad_norm", "critic_grad_norm"};
      int global = -1;
      int last_ep = -1, last_step = -1;
      for (const auto& s : r.steps) {
        if (s.episode != last_ep || s.step != last_step) {
          ++global;
          last_ep = s.episode;
          last_step = s.step;
        }
        d.rows.push_back({static_cast<Scalar>(global), static_cast<Scalar>(s.episode),
                          static_cast<Scalar>(s.agent), s.actor_loss, s.critic_loss,
                          s.actor_grad_norm, s.critic_grad_norm});
      }
      break;
    }
  }
  return d;
}

void write_series(const SeriesData& d, ExportFormat format, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export: cannot write " + path);
  if (format == ExportFormat::Csv) {
    for (size_t c = 0; c < d.columns.size(); ++c)
      out << d.columns[c] << (c + 1 < d.columns.size() ? "," : "");
    out << '\n';
    for (const auto& row : d.rows) {
      for (size_t c = 0; c < row.size(); ++c)
        out << fmt_g17(row[c]) << (c + 1 < row.size() ? "," : "");
      out << '\n';
    }
  } else {
    json j;
    j["columns"] = d.columns;
    j["rows"] = d.rows;
    out << j.dump() << '\n';
  }
}

}  // namespace

void export_record(const RunRecord& record, ExportSeries series, ExportFormat format,
                   const std::string& path) {
  write_series(record_series(record, series), format, path);
}

void export_report(const EvalReport& report, ExportFormat format, const std::string& path) {
  SeriesData d;
  d.columns = {"seed", "avg_queue"};
  for (size_t i = 0; i < report.seeds.size(); ++i)
    d.rows.push_back({static_cast<Scalar>(report.seeds[i]), report.avg_queue[i]});
  write_series(d, format, path);
}

// --- config file and CLI -----------------------------------------------

void apply_config_file(const std::string& path, CliOptions& opt) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  int episodes = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value at line " + std::to_string(lineno));
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\n");
      const auto e = s.find_last_not_of(" \t\r\n");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    TrainConfig& c = opt.cfg;
    try {
      if (key == "alpha") c.alpha = std::stod(val);
      else if (key == "gamma") c.gamma = std::stod(val);
      else if (key == "beta") c.beta = std::stod(val);
      else if (key == "batch") c.batch = std::stoi(val);
      else if (key == "dt") c.dt = std::stoi(val);
      else if (key == "ts") c.ts = std::stoi(val);
      else if (key == "ty") c.ty = std::stoi(val);
      else if (key == "eta_theta") c.eta_theta = std::stod(val);
      else if (key == "eta_psi") c.eta_psi = std::stod(val);
      else if (key == "reward_norm") c.reward_norm = std::stod(val);
      else if (key == "wave_norm") c.wave_norm = std::stod(val);
      else if (key == "grad_cap") c.grad_cap = std::stod(val);
      else if (key == "success_threshold") c.success_threshold = std::stod(val);
      else if (key == "algo") c.algorithm = algorithm_from_string(val);
      else if (key == "scenario") c.scenario = ScenarioSpec::parse(val);
      else if (key == "seed") c.train_seed = std::stoull(val);
      else if (key == "seed_mode") {
        if (val == "pseudo_random") c.seed_mode = TrainConfig::SeedMode::PseudoRandom;
        else if (val == "fully_random") c.seed_mode = TrainConfig::SeedMode::FullyRandom;
        else throw std::invalid_argument("seed_mode must be pseudo_random or fully_random");
      }
      else if (key == "episodes") episodes = std::stoi(val);
      else if (key == "sim_seconds") c.total_sim_seconds = std::stol(val);
      else if (key == "grid") opt.grid = val;
      else if (key == "net") opt.net_file = val;
      else if (key == "lane_length") opt.lane_length = std::stod(val);
      else if (key == "phases") opt.phases = std::stoi(val);
      else if (key == "out") opt.out_prefix = val;
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for '" + key + "' at line " +
                                  std::to_string(lineno));
    }
  }
  if (episodes > 0) opt.cfg.total_sim_seconds = static_cast<long>(episodes) * opt.cfg.ts;
}

TrafficNetwork resolve_network(const CliOptions& opt, std::uint64_t seed) {
  if (!opt.net_file.empty()) return load_network(opt.net_file);
  int rows = 0, cols = 0;
  if (std::sscanf(opt.grid.c_str(), "%dx%d", &rows, &cols) != 2)
    throw std::invalid_argument("grid must look like '3x3', got '" + opt.grid + "'");
  return build_grid(rows, cols, opt.lane_length, opt.phases, seed);
}

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s, const TrainConfig& cfg) {
  if (s == "default") return cfg.test_seeds;
  std::vector<std::uint64_t> seeds;
  for (const auto& tok : split_csv(s)) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

void print_report(const EvalReport& rep) {
  std::printf("%-8s %-12s", rep.algorithm.c_str(), rep.scenario.c_str());
  for (Scalar v : rep.avg_queue) std::printf(" %8.2f", v);
  std::printf(" | mean %8.2f std %7.2f\n", rep.mean, rep.stddev);
}

struct CommonFlags {
  std::string config_file;
  std::string algo;
  std::string scenario;
  std::string seed_mode;
  int episodes = -1;
};

void add_common(CLI::App* cmd, CliOptions& opt, CommonFlags& fl) {
  cmd->add_option("--config", fl.config_file, "key=value config file (flags override it)");
  cmd->add_option("--algo", fl.algo, "ma2c|ia2c|iql_lr|iql_dnn|greedy");
  cmd->add_option("--grid", opt.grid, "synthetic grid ROWSxCOLS (default 3x3)");
  cmd->add_option("--net", opt.net_file, "network description file (overrides --grid)");
  cmd->add_option("--lane-length", opt.lane_length, "grid lane length [m]");
  cmd->add_option("--phases", opt.phases, "phases per grid intersection");
  cmd->add_option("--scenario", fl.scenario, "insertions as count/window, e.g. 2000/2000");
  cmd->add_option("--episodes", fl.episodes, "training episodes (sets sim seconds)");
  cmd->add_option("--sim-seconds", opt.cfg.total_sim_seconds, "total simulated seconds");
  cmd->add_option("--seed", opt.cfg.train_seed, "training seed");
  cmd->add_option("--seed-mode", fl.seed_mode, "pseudo_random|fully_random");
  cmd->add_option("--alpha", opt.cfg.alpha, "spatial discount factor");
  cmd->add_option("--gamma", opt.cfg.gamma, "return discount factor");
  cmd->add_option("--beta", opt.cfg.beta, "entropy weight");
  cmd->add_option("--batch", opt.cfg.batch, "batch buffer size");
  cmd->add_option("--dt", opt.cfg.dt, "interaction period [s]");
  cmd->add_option("--ts", opt.cfg.ts, "episode length [s]");
  cmd->add_option("--ty", opt.cfg.ty, "yellow time [s]");
  cmd->add_option("--eta-theta", opt.cfg.eta_theta, "actor learning rate");
  cmd->add_option("--eta-psi", opt.cfg.eta_psi, "critic learning rate");
  cmd->add_option("--reward-norm", opt.cfg.reward_norm, "queue divisor before reward clip");
  cmd->add_option("--wave-norm", opt.cfg.wave_norm, "wave divisor before state clip");
  cmd->add_option("--grad-cap", opt.cfg.grad_cap, "gradient norm cap");
  cmd->add_option("--success-threshold", opt.cfg.success_threshold,
                  "final/first quartile ratio counted as success");
  cmd->add_option("--out", opt.out_prefix, "output file prefix");
}

// config file first, then explicit flags win; CLI11 already wrote flag values,
// so file values are applied to a scratch copy and only unset fields move over
void merge_config(const CLI::App* cmd, CliOptions& opt, CommonFlags& fl) {
  if (!fl.config_file.empty()) {
    CliOptions file_opt;  // defaults
    apply_config_file(fl.config_file, file_opt);
    CliOptions merged = file_opt;
    // every flag the user actually passed beats the file
    auto given = [cmd](const std::string& name) { return cmd->count(name) > 0; };
    if (given("--grid")) merged.grid = opt.grid;
    if (given("--net")) merged.net_file = opt.net_file;
    if (given("--lane-length")) merged.lane_length = opt.lane_length;
    if (given("--phases")) merged.phases = opt.phases;
    if (given("--out")) merged.out_prefix = opt.out_prefix;
    if (given("--sim-seconds")) merged.cfg.total_sim_seconds = opt.cfg.total_sim_seconds;
    if (given("--seed")) merged.cfg.train_seed = opt.cfg.train_seed;
    if (given("--alpha")) merged.cfg.alpha = opt.cfg.alpha;
    if (given("--gamma")) merged.cfg.gamma = opt.cfg.gamma;
    if (given("--beta")) merged.cfg.beta = opt.cfg.beta;
    if (given("--batch")) merged.cfg.batch = opt.cfg.batch;
    if (given("--dt")) merged.cfg.dt = opt.cfg.dt;
    if (given("--ts")) merged.cfg.ts = opt.cfg.ts;
    if (given("--ty")) merged.cfg.ty = opt.cfg.ty;
    if (given("--eta-theta")) merged.cfg.eta_theta = opt.cfg.eta_theta;
    if (given("--eta-psi")) merged.cfg.eta_psi = opt.cfg.eta_psi;
    if (given("--reward-norm")) merged.cfg.reward_norm = opt.cfg.reward_norm;
    if (given("--wave-norm")) merged.cfg.wave_norm = opt.cfg.wave_norm;
    if (given("--grad-cap")) merged.cfg.grad_cap = opt.cfg.grad_cap;
    if (given("--success-threshold"))
      merged.cfg.success_threshold = opt.cfg.success_threshold;
    opt = merged;
  }
  if (!fl.algo.empty()) opt.cfg.algorithm = algorithm_from_string(fl.algo);
  if (!fl.scenario.empty()) opt.cfg.scenario = ScenarioSpec::parse(fl.scenario);
  if (!fl.seed_mode.empty()) {
    if (fl.seed_mode == "pseudo_random")
      opt.cfg.seed_mode = TrainConfig::SeedMode::PseudoRandom;
    else if (fl.seed_mode == "fully_random")
      opt.cfg.seed_mode = TrainConfig::SeedMode::FullyRandom;
    else
      throw std::invalid_argument("seed-mode must be pseudo_random or fully_random");
  }
  if (fl.episodes > 0)
    opt.cfg.total_sim_seconds = static_cast<long>(fl.episodes) * opt.cfg.ts;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Multi-agent reinforcement learning for adaptive traffic signal control"};
  app.require_subcommand(0, 1);

  CliOptions opt;
  CommonFlags fl;

  auto* cmd_train = app.add_subcommand("train", "train a policy and write checkpoint + record");
  add_common(cmd_train, opt, fl);

  std::string ckpt_path, seeds_str = "default";
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint over test seeds");
  add_common(cmd_eval, opt, fl);
  cmd_eval->add_option("--checkpoint", ckpt_path, "checkpoint file (omit for --algo greedy)");
  cmd_eval->add_option("--seeds", seeds_str, "'default' (the 8 paper seeds) or a comma list");

  std::string scenarios_str;
  auto* cmd_cross = app.add_subcommand("cross", "cross-test a checkpoint across vehicle loads");
  add_common(cmd_cross, opt, fl);
  cmd_cross->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  cmd_cross->add_option("--scenarios", scenarios_str, "comma list, e.g. 2000/2000,3600/3600")
      ->required();
  cmd_cross->add_option("--seeds", seeds_str, "'default' or a comma list");

  std::string algos_str = "ma2c,ia2c";
  int n_runs = 5;
  auto* cmd_stab = app.add_subcommand("stability", "success counts over repeated trainings");
  add_common(cmd_stab, opt, fl);
  cmd_stab->add_option("--algos", algos_str, "comma list of learners");
  cmd_stab->add_option("--runs", n_runs, "training replicas per algorithm");

  std::string record_path, report_path, series_str = "queue", format_str = "csv", out_file;
  auto* cmd_export = app.add_subcommand("export", "plot-ready series from a record or report");
  cmd_export->add_option("--record", record_path, "record json from train");
  cmd_export->add_option("--report", report_path, "report json from eval");
  cmd_export->add_option("--series", series_str, "queue|vehicles|losses (records only)");
  cmd_export->add_option("--format", format_str, "csv|json");
  cmd_export->add_option("--out", out_file, "output file")->required();

  auto* cmd_gennet = app.add_subcommand("gen-net", "write a grid network description file");
  add_common(cmd_gennet, opt, fl);

  if (argc <= 1) {
    std::cout << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    if (cmd_train->parsed()) {
      merge_config(cmd_train, opt, fl);
      opt.cfg.validate();
      const TrafficNetwork net = resolve_network(opt, opt.cfg.train_seed);
      std::printf("training %s on %zu agents, %d episodes, scenario %s, seed %llu\n",
                  to_string(opt.cfg.algorithm).c_str(), net.agent_graph.vertices.size(),
                  opt.cfg.episodes(), opt.cfg.scenario.name.c_str(),
                  static_cast<unsigned long long>(opt.cfg.train_seed));
      auto [sys, record] = train(opt.cfg, net);
      save_record(record, opt.out_prefix + ".record.json");
      std::printf("record: %s.record.json (%d episodes, final avg queue %.2f, %.1f s)\n",
                  opt.out_prefix.c_str(), record.episodes, record.episode_avg_queue.back(),
                  record.wall_clock_seconds);
      if (is_learner(opt.cfg.algorithm)) {
        save_checkpoint(sys, opt.out_prefix + ".ckpt");
        std::printf("checkpoint: %s.ckpt\n", opt.out_prefix.c_str());
      }
    } else if (cmd_eval->parsed()) {
      merge_config(cmd_eval, opt, fl);
      if (ckpt_path.empty() && opt.cfg.algorithm != Algorithm::Greedy)
        throw std::invalid_argument("eval needs --checkpoint (or --algo greedy)");
      const TrafficNetwork net = resolve_network(opt, opt.cfg.train_seed);
      if (!ckpt_path.empty()) opt.cfg.algorithm = checkpoint_algorithm(ckpt_path);
      MultiAgentSystem sys(net, opt.cfg);
      if (!ckpt_path.empty()) load_checkpoint(sys, ckpt_path);
      const auto seeds = parse_seeds(seeds_str, opt.cfg);
      const EvalReport rep = evaluate(opt.cfg, sys, opt.cfg.scenario, seeds);
      print_report(rep);
      save_report(rep, opt.out_prefix + ".report.json");
      std::printf("report: %s.report.json\n", opt.out_prefix.c_str());
    } else if (cmd_cross->parsed()) {
      merge_config(cmd_cross, opt, fl);
      const TrafficNetwork net = resolve_network(opt, opt.cfg.train_seed);
      opt.cfg.algorithm = checkpoint_algorithm(ckpt_path);
      opt.cfg.test_seeds = parse_seeds(seeds_str, opt.cfg);
      MultiAgentSystem sys(net, opt.cfg);
      load_checkpoint(sys, ckpt_path);
      std::vector<ScenarioSpec> scenarios;
      for (const auto& s : split_csv(scenarios_str)) scenarios.push_back(ScenarioSpec::parse(s));
      const auto rows = cross_test(opt.cfg, net, sys, scenarios);
      json j = json::array();
      for (const auto& row : rows) {
        print_report(row.policy);
        print_report(row.greedy);
        json jr;
        jr["scenario"] = row.scenario;
        jr["policy"] = {{"mean", row.policy.mean}, {"stddev", row.policy.stddev},
                        {"avg_queue", row.policy.avg_queue}};
        jr["greedy"] = {{"mean", row.greedy.mean}, {"stddev", row.greedy.stddev},
                        {"avg_queue", row.greedy.avg_queue}};
        j.push_back(std::move(jr));
      }
      std::ofstream out(opt.out_prefix + ".cross.json");
      out << j.dump() << '\n';
      std::printf("cross table: %s.cross.json\n", opt.out_prefix.c_str());
    } else if (cmd_stab->parsed()) {
      merge_config(cmd_stab, opt, fl);
      const TrafficNetwork net = resolve_network(opt, opt.cfg.train_seed);
      json j = json::array();
      for (const auto& a : split_csv(algos_str)) {
        TrainConfig c = opt.cfg;
        c.algorithm = algorithm_from_string(a);
        const StabilityResult res = stability_suite(c, net, n_runs);
        std::printf("%-8s %d/%d successful runs\n", a.c_str(), res.successes, res.runs);
        json jr;
        jr["algorithm"] = a;
        jr["runs"] = res.runs;
        jr["successes"] = res.successes;
        jr["per_run"] = res.per_run;
        jr["final_avg_queue"] = res.final_avg_queue;
        j.push_back(std::move(jr));
      }
      std::ofstream out(opt.out_prefix + ".stability.json");
      out << j.dump() << '\n';
      std::printf("stability table: %s.stability.json\n", opt.out_prefix.c_str());
    } else if (cmd_export->parsed()) {
      const ExportFormat format = format_str == "json" ? ExportFormat::Json
                                  : format_str == "csv"
                                      ? ExportFormat::Csv
                                      : throw std::invalid_argument("format must be csv|json");
      if (!record_path.empty()) {
        ExportSeries series;
        if (series_str == "queue") series = ExportSeries::Queue;
        else if (series_str == "vehicles") series = ExportSeries::Vehicles;
        else if (series_str == "losses") series = ExportSeries::Losses;
        else throw std::invalid_argument("series must be queue|vehicles|losses");
        export_record(load_record(record_path), series, format, out_file);
      } else if (!report_path.empty()) {
        export_report(load_report(report_path), format, out_file);
      } else {
        throw std::invalid_argument("export needs --record or --report");
      }
      std::printf("wrote %s\n", out_file.c_str());
    } else if (cmd_gennet->parsed()) {
      merge_config(cmd_gennet, opt, fl);
      const TrafficNetwork net = resolve_network(opt, opt.cfg.train_seed);
      const std::string path = opt.out_prefix + ".net.txt";
      save_network(net, path);
      std::printf("network: %s (%zu nodes, %zu lanes, %zu agents)\n", path.c_str(),
                  net.intersections.size(), net.lanes.size(), net.agent_graph.vertices.size());
    } else {
      std::cout << app.help();
      return 2;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace atsc
