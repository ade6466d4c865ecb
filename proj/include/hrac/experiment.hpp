#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adjacency.hpp"
#include "agent.hpp"
#include "exact_analysis.hpp"
#include "grid_env.hpp"
#include "json.hpp"
#include "mdp.hpp"

namespace hrac {

inline constexpr const char* kCodeVersion = "hrac-lab 0.1.0";
inline constexpr const char* kEnvPrefix = "HRAC_";

struct ExperimentConfig {
  Task env = Task::maze;
  Variant variant = Variant::hrac;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir = "runs";
  std::string layout;  // ASCII layout file; empty selects the built-in layout
  TrainConfig train;

  static ExperimentConfig defaults(Task env, Variant variant) {
    ExperimentConfig c;
    c.env = env;
    c.variant = variant;
    c.train.env.task = env;
    c.train.agent = AgentConfig::defaults(env, variant);
    return c;
  }

  Layout load_layout() const { return layout.empty() ? default_layout(env) : Layout::load(layout); }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& a = t.agent;
  return {{"env", to_string(c.env)},
          {"variant", to_string(c.variant)},
          {"seeds", c.seeds},
          {"out_dir", c.out_dir},
          {"layout", c.layout},
          {"total_steps", t.total_steps},
          {"eval_interval", t.eval_interval},
          {"eval_episodes", t.eval_episodes},
          {"random_action_prob", t.env.random_action_prob},
          {"episode_limit", t.env.episode_limit},
          {"adjacency",
           {{"pretrain_steps", t.pretrain_steps},
            {"pretrain_epochs", t.pretrain_epochs},
            {"online_interval", t.online_interval},
            {"online_epochs", t.online_epochs},
            {"batch", t.adjacency_batch},
            {"lr", t.adjacency_lr},
            {"eps_k", t.eps_k},
            {"delta", t.delta}}},
          {"agent",
           {{"k", a.k},
            {"gamma_hi", a.gamma_hi},
            {"gamma_lo", a.gamma_lo},
            {"eta", a.eta},
            {"actor_lr_hi", a.actor_lr_hi},
            {"critic_lr_hi", a.critic_lr_hi},
            {"replay_capacity", a.replay_capacity},
            {"batch_hi", a.batch_hi},
            {"tau", a.tau},
            {"policy_delay", a.policy_delay},
            {"explore_sigma", a.explore_sigma},
            {"target_noise", a.target_noise},
            {"target_noise_clip", a.target_noise_clip},
            {"reward_scale_hi", a.reward_scale_hi},
            {"actor_lr_lo", a.actor_lr_lo},
            {"critic_lr_lo", a.critic_lr_lo},
            {"entropy_weight", a.entropy_weight},
            {"reward_scale_lo", a.reward_scale_lo},
            {"negreward_penalty", a.negreward_penalty},
            {"hidden_hi", a.hidden_hi},
            {"hidden_lo", a.hidden_lo}}}};
}

namespace detail {

// Rejects keys of `user` absent from `schema`, naming the dotted path.
inline void check_keys(const nlohmann::json& user, const nlohmann::json& schema, const std::string& prefix) {
  if (!user.is_object()) throw std::invalid_argument("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw std::invalid_argument("config: unknown key '" + path + "'");
    if (schema.at(it.key()).is_object()) check_keys(it.value(), schema.at(it.key()), path);
  }
}

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument("config: bad value for '" + path + "'");
  }
}

inline void env_paths(const nlohmann::json& schema, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = schema.begin(); it != schema.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      env_paths(it.value(), path, out);
    else
      out.push_back(path);
  }
}

}  // namespace detail

/// Environment variable for a dotted config key: HRAC_ + upper case, dots as underscores.
inline std::string env_var_name(const std::string& dotted) {
  std::string out = kEnvPrefix;
  for (char c : dotted) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Copies HRAC_* variables onto `user` (values parsed as JSON, falling back to plain strings).
inline void apply_env_overrides(nlohmann::json& user, const std::function<const char*(const char*)>& getenv_fn) {
  std::vector<std::string> paths;
  detail::env_paths(to_json(ExperimentConfig{}), "", paths);
  for (const auto& path : paths) {
    const char* raw = getenv_fn(env_var_name(path).c_str());
    if (raw == nullptr) continue;
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = std::string(raw);
    nlohmann::json* node = &user;
    std::stringstream parts(path);
    std::string part;
    std::vector<std::string> keys;
    while (std::getline(parts, part, '.')) keys.push_back(part);
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) node = &(*node)[keys[i]];
    (*node)[keys.back()] = value;
  }
}

/// Defaults for the chosen env and variant, overlaid with `user`. Unknown keys throw with their name.
inline ExperimentConfig config_from_json(const nlohmann::json& user) {
  if (!user.is_object()) throw std::invalid_argument("config: top level must be an object");
  const Task env = parse_task(user.value("env", std::string("maze")));
  const Variant variant = parse_variant(user.value("variant", std::string("hrac")));
  nlohmann::json j = to_json(ExperimentConfig::defaults(env, variant));
  detail::check_keys(user, j, "");
  j.merge_patch(user);

  ExperimentConfig c = ExperimentConfig::defaults(env, variant);
  using detail::field;
  c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", "seeds");
  c.out_dir = field<std::string>(j, "out_dir", "out_dir");
  c.layout = field<std::string>(j, "layout", "layout");
  auto& t = c.train;
  t.total_steps = field<long>(j, "total_steps", "total_steps");
  t.eval_interval = field<long>(j, "eval_interval", "eval_interval");
  t.eval_episodes = field<int>(j, "eval_episodes", "eval_episodes");
  t.env.random_action_prob = field<double>(j, "random_action_prob", "random_action_prob");
  t.env.episode_limit = field<int>(j, "episode_limit", "episode_limit");
  const auto& adj = j.at("adjacency");
  t.pretrain_steps = field<long>(adj, "pretrain_steps", "adjacency.pretrain_steps");
  t.pretrain_epochs = field<std::size_t>(adj, "pretrain_epochs", "adjacency.pretrain_epochs");
  t.online_interval = field<long>(adj, "online_interval", "adjacency.online_interval");
  t.online_epochs = field<std::size_t>(adj, "online_epochs", "adjacency.online_epochs");
  t.adjacency_batch = field<std::size_t>(adj, "batch", "adjacency.batch");
  t.adjacency_lr = field<double>(adj, "lr", "adjacency.lr");
  t.eps_k = field<float>(adj, "eps_k", "adjacency.eps_k");
  t.delta = field<float>(adj, "delta", "adjacency.delta");
  const auto& ag = j.at("agent");
  auto& a = t.agent;
  auto num = [&](const char* key) { return field<double>(ag, key, std::string("agent.") + key); };
  a.k = field<int>(ag, "k", "agent.k");
  a.gamma_hi = num("gamma_hi");
  a.gamma_lo = num("gamma_lo");
  a.eta = num("eta");
  a.actor_lr_hi = num("actor_lr_hi");
  a.critic_lr_hi = num("critic_lr_hi");
  a.replay_capacity = field<std::size_t>(ag, "replay_capacity", "agent.replay_capacity");
  a.batch_hi = field<std::size_t>(ag, "batch_hi", "agent.batch_hi");
  a.tau = num("tau");
  a.policy_delay = field<int>(ag, "policy_delay", "agent.policy_delay");
  a.explore_sigma = num("explore_sigma");
  a.target_noise = num("target_noise");
  a.target_noise_clip = num("target_noise_clip");
  a.reward_scale_hi = num("reward_scale_hi");
  a.actor_lr_lo = num("actor_lr_lo");
  a.critic_lr_lo = num("critic_lr_lo");
  a.entropy_weight = num("entropy_weight");
  a.reward_scale_lo = num("reward_scale_lo");
  a.negreward_penalty = num("negreward_penalty");
  a.hidden_hi = field<std::vector<std::size_t>>(ag, "hidden_hi", "agent.hidden_hi");
  a.hidden_lo = field<std::vector<std::size_t>>(ag, "hidden_lo", "agent.hidden_lo");

  a.check();
  if (t.total_steps <= 0) throw std::invalid_argument("config: 'total_steps' must be positive");
  if (t.eval_interval <= 0) throw std::invalid_argument("config: 'eval_interval' must be positive");
  if (t.eval_episodes <= 0) throw std::invalid_argument("config: 'eval_episodes' must be positive");
  if (t.env.random_action_prob < 0.0 || t.env.random_action_prob > 1.0)
    throw std::invalid_argument("config: 'random_action_prob' must lie in [0, 1]");
  if (c.seeds.empty()) throw std::invalid_argument("config: 'seeds' is empty");
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Runs.

inline constexpr const char* kEvalHeader = "env_step,mean_return,std_err,seed,variant";
inline constexpr const char* kSuccessHeader = "env_step,success_rate,seed,variant";
inline constexpr const char* kSubgoalHeader = "env_step,train_adjacent_fraction,eval_adjacent_fraction,seed,variant";

/// Per-seed configuration snapshot stored next to the outputs.
inline nlohmann::json run_snapshot(const ExperimentConfig& c, std::uint64_t seed) {
  auto j = to_json(c);
  j["seeds"] = {seed};
  j.erase("out_dir");
  return {{"code_version", kCodeVersion}, {"config", j}};
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

/// Trains one seed into `dir`. A directory holding an identical snapshot and a done marker is reused.
/// Returns true when training actually ran.
inline bool run_seed(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir, bool reuse = true) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto snapshot = run_snapshot(c, seed);
  const auto snap_path = dir / "config.json", done_path = dir / "done";
  if (reuse && fs::exists(done_path) && fs::exists(snap_path) && read_json_file(snap_path.string()) == snapshot)
    return false;
  fs::remove(done_path);
  write_text_atomic(snap_path, snapshot.dump(2) + "\n");

  const std::string tag = std::to_string(seed) + "," + to_string(c.variant);
  std::ofstream eval(dir / "eval.csv", std::ios::trunc), success(dir / "success.csv", std::ios::trunc),
      subgoal(dir / "subgoal_adjacency.csv", std::ios::trunc);
  if (!eval || !success || !subgoal) throw std::runtime_error("cannot write outputs in " + dir.string());
  eval << kEvalHeader << "\n" << std::flush;
  success << kSuccessHeader << "\n" << std::flush;
  subgoal << kSubgoalHeader << "\n" << std::flush;

  TrainConfig t = c.train;
  t.seed = seed;
  TrainHooks hooks;
  hooks.on_record = [&](const EvalRecord& r, const HierarchicalAgent&) {
    // one complete row per write
    eval << (std::to_string(r.env_step) + "," + format_double(r.mean_return) + "," + format_double(r.std_err) + "," +
             tag + "\n")
         << std::flush;
    success << (std::to_string(r.env_step) + "," + format_double(r.success_rate) + "," + tag + "\n") << std::flush;
    subgoal << (std::to_string(r.env_step) + "," + format_double(r.train_adjacent_fraction) + "," +
                format_double(r.eval_adjacent_fraction) + "," + tag + "\n")
            << std::flush;
  };
  hooks.on_finish = [&](const HierarchicalAgent& agent, const AdjacencyMatrix* matrix) {
    write_text_atomic(dir / "checkpoint.json", agent.to_json().dump() + "\n");
    if (matrix != nullptr) matrix->save((dir / "adjacency_matrix.txt").string());
  };
  const auto start = std::chrono::steady_clock::now();
  const auto result = train(t, c.load_layout(), hooks);
  if (!result.finite) throw std::runtime_error("training produced non-finite parameters in " + dir.string());
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text_atomic(done_path, nlohmann::json{{"elapsed_seconds", elapsed}, {"finite", result.finite}}.dump() + "\n");
  return true;
}

/// Output directory of one seed: out_dir itself for a single-seed config, else out_dir/seed_<n>.
inline std::filesystem::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.seeds.size() == 1) return c.out_dir;
  return std::filesystem::path(c.out_dir) / ("seed_" + std::to_string(seed));
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("csv: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t col = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(std::stod(r.at(col)));
    return out;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

/// Trailing rolling mean.
inline std::vector<double> rolling_mean(const std::vector<double>& v, std::size_t window) {
  if (window == 0) throw std::invalid_argument("rolling_mean: window >= 1");
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

struct SeedStats {
  double mean = 0.0;
  double std_err = 0.0;
};

inline SeedStats across_seeds(const std::vector<double>& v) {
  SeedStats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x / static_cast<double>(v.size());
  if (v.size() > 1) {
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.std_err = std::sqrt(var / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Verification suites.

struct VerifyOutcome {
  bool pass = true;
  nlohmann::json report;
};

inline std::vector<TabularMdp> verify_instances(std::size_t count, std::uint64_t seed, double stochasticity,
                                                std::size_t max_states) {
  std::vector<TabularMdp> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n = 2 + (seed + i) % (max_states - 1);
    out.push_back(random_mdp(n, 1 + i % 3, seed * 1000 + i, stochasticity));
  }
  return out;
}

inline VerifyOutcome finish(nlohmann::json instances, const std::string& suite) {
  VerifyOutcome v;
  std::size_t passed = 0;
  for (const auto& i : instances) passed += i.at("pass").get<bool>();
  v.pass = passed == instances.size();
  v.report = {{"suite", suite},
              {"aggregate", {{"instances", instances.size()}, {"passed", passed}, {"pass", v.pass}}},
              {"instances", std::move(instances)}};
  return v;
}

inline VerifyOutcome rejected(const std::string& suite, const std::string& why) {
  return {false, {{"suite", suite}, {"status", why}, {"aggregate", {{"pass", false}}}}};
}

inline VerifyOutcome verify_lemma1(std::size_t n, std::uint64_t seed, const TabularMdp* input = nullptr) {
  if (input != nullptr && !input->is_deterministic()) return rejected("lemma1", "rejected: deterministic only");
  const auto mdps = input ? std::vector<TabularMdp>{*input} : verify_instances(n, seed, 0.0, 8);
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < mdps.size(); ++i) {
    const auto r = lemma1_check(mdps[i]);
    out.push_back({{"instance", i}, {"n_states", mdps[i].n_states}, {"checked", r.checked}, {"pass", r.pass},
                   {"failures", r.failures}});
  }
  return finish(std::move(out), "lemma1");
}

inline VerifyOutcome verify_theorem1(std::size_t n, std::uint64_t seed, const TabularMdp* input = nullptr) {
  if (input != nullptr && !input->is_deterministic()) return rejected("theorem1", "rejected: deterministic only");
  const auto mdps = input ? std::vector<TabularMdp>{*input} : verify_instances(n, seed, 0.0, 8);
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < mdps.size(); ++i) {
    const std::size_t k = 1 + i % 3, horizon = 1 + i % 4;
    const auto r = theorem1_check(mdps[i], k, horizon);
    out.push_back({{"instance", i}, {"k", k}, {"horizon", horizon}, {"checked", r.checked},
                   {"surrogates", r.surrogates}, {"max_q_diff", r.max_q_diff}, {"pass", r.pass}});
  }
  return finish(std::move(out), "theorem1");
}

/// Stochastic instances, plus deterministic ones (every fourth) that exercise the zero-mismatch clause.
inline VerifyOutcome verify_theorem2(std::size_t n, std::uint64_t seed) {
  nlohmann::json out = nlohmann::json::array();
  auto check = [&](const TabularMdp& base, std::size_t i, const std::string& kind) {
    TabularMdp mdp = base;
    mdp.gamma = i % 2 ? 0.9 : 0.5;
    const std::size_t k = 1 + i % 3;
    const auto model = make_high_level_model(mdp, k_step_kernel(mdp, optimal_goal_policy(mdp), k), seed + i);
    const auto r = theorem2_check(mdp, model, seed + i);
    const bool zero_ok = r.mu_k >= 1e-12 || (r.gap <= 1e-9 && r.bound == 0.0);
    auto j = to_json(r);
    j["kind"] = kind;
    j["zero_mismatch_ok"] = zero_ok;
    j["pass"] = r.pass && zero_ok;
    out.push_back(std::move(j));
  };
  const auto stochastic = verify_instances(n, seed, 0.5, 6);
  for (std::size_t i = 0; i < stochastic.size(); ++i) check(stochastic[i], i, "stochastic");
  const auto deterministic = verify_instances((n + 3) / 4, seed + 7, 0.0, 6);
  for (std::size_t i = 0; i < deterministic.size(); ++i) check(deterministic[i], i, "deterministic");
  return finish(std::move(out), "theorem2");
}

/// Two states, one action: s0 reaches s1 with probability p, s1 returns.
inline TabularMdp geometric_mdp(double p) {
  auto mdp = TabularMdp::zeros(2, 1);
  mdp.transition[mdp.index(0, 0, 1)] = p;
  mdp.transition[mdp.index(0, 0, 0)] = 1.0 - p;
  mdp.transition[mdp.index(1, 0, 0)] = 1.0;
  return mdp;
}

/// BFS agreement and region equality on deterministic instances, triangle inequality and
/// G_A within G_AM on stochastic ones too, and the geometric example.
inline VerifyOutcome verify_distance(std::size_t n, std::uint64_t seed) {
  nlohmann::json out = nlohmann::json::array();
  auto run = [&](const TabularMdp& mdp, std::size_t i, bool deterministic) {
    const auto d = shortest_transition_distance(mdp);
    const std::size_t ns = mdp.n_states;
    bool bfs_ok = true, triangle_ok = true, inclusion_ok = true, equality_ok = true;
    if (deterministic)
      for (StateIndex s = 0; s < ns; ++s) {
        const auto hops = bfs_hops(mdp, s);
        for (StateIndex t = 0; t < ns; ++t) bfs_ok = bfs_ok && d(s, t) == static_cast<double>(hops[t]);
      }
    for (StateIndex a = 0; a < ns; ++a)
      for (StateIndex b = 0; b < ns; ++b)
        for (StateIndex c = 0; c < ns; ++c) triangle_ok = triangle_ok && d(a, c) <= d(a, b) + d(b, c) + 1e-9;
    for (StateIndex s = 0; s < ns; ++s)
      for (std::size_t k = 1; k <= 4; ++k) {
        const auto avg = adjacent_region_avg(mdp, d, s, k), max = adjacent_region_max(mdp, s, k);
        inclusion_ok = inclusion_ok && std::includes(max.begin(), max.end(), avg.begin(), avg.end());
        if (deterministic) equality_ok = equality_ok && avg == max;
      }
    out.push_back({{"instance", i},
                   {"kind", deterministic ? "deterministic" : "stochastic"},
                   {"n_states", ns},
                   {"bfs_exact", bfs_ok},
                   {"triangle", triangle_ok},
                   {"region_inclusion", inclusion_ok},
                   {"region_equality", equality_ok},
                   {"pass", bfs_ok && triangle_ok && inclusion_ok && equality_ok}});
  };
  const auto det = verify_instances(n, seed, 0.0, 8);
  for (std::size_t i = 0; i < det.size(); ++i) run(det[i], i, true);
  const auto sto = verify_instances(n, seed + 1, 0.5, 6);
  for (std::size_t i = 0; i < sto.size(); ++i) run(sto[i], n + i, false);
  for (double p : {0.1, 0.25, 0.5, 1.0}) {
    const double d = shortest_transition_distance(geometric_mdp(p))(0, 1);
    out.push_back({{"instance", "geometric"}, {"p", p}, {"d", d}, {"expected", 1.0 / p},
                   {"pass", std::abs(d - 1.0 / p) <= 1e-8}});
  }
  return finish(std::move(out), "distance");
}

struct SoundnessRun {
  SoundnessReport report;
  std::size_t cells = 0;
};

/// Uniform-random behaviour on Maze for `steps` steps, then the matrix checked against the exported oracle.
inline SoundnessRun random_policy_soundness(long steps, std::uint64_t seed, int k = 10, double noise = 0.25) {
  GridEnvConfig cfg;
  cfg.task = Task::maze;
  cfg.random_action_prob = noise;
  GridEnv env(cfg, std::nullopt, seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, kNumActions - 1);
  TrajectoryBuffer buffer;
  long done = 0;
  for (std::uint64_t ep = 0; done < steps; ++ep) {
    std::vector<Cell> cells{env.reset(seed * 100003 + ep).cell()};
    while (!env.done() && done < steps) {
      cells.push_back(env.step(pick(rng)).state.cell());
      ++done;
    }
    buffer.record(std::move(cells));
  }
  AdjacencyMatrix m(k);
  m.update(buffer);
  const auto nav = export_navigation(env.layout(), noise);
  return {check_soundness(m, nav, shortest_transition_distance(nav.mdp)), m.size()};
}

inline VerifyOutcome verify_adjacency_soundness(std::size_t n, std::uint64_t seed, long steps = 20000) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto run = random_policy_soundness(steps, seed + i);
    const auto& r = run.report;
    out.push_back({{"instance", i},
                   {"seed", seed + i},
                   {"steps", steps},
                   {"visited_cells", run.cells},
                   {"ones", r.ones},
                   {"violations", r.violations},
                   {"hop_violations", r.hop_violations},
                   {"max_violating_distance", r.max_violating_distance},
                   {"coverage", r.coverage()},
                   {"pass", r.violations == 0 && r.coverage() >= 0.9}});
  }
  return finish(std::move(out), "adjacency-soundness");
}

inline VerifyOutcome verify(const std::string& suite, std::size_t n, std::uint64_t seed, const TabularMdp* input = nullptr) {
  if (suite == "lemma1") return verify_lemma1(n, seed, input);
  if (suite == "theorem1") return verify_theorem1(n, seed, input);
  if (input != nullptr) throw std::invalid_argument("--mdp: only the lemma1 and theorem1 suites take an input MDP");
  if (suite == "theorem2") return verify_theorem2(n, seed);
  if (suite == "distance") return verify_distance(n, seed);
  if (suite == "adjacency-soundness") return verify_adjacency_soundness(n, seed);
  throw std::invalid_argument("suite: unknown suite '" + suite + "'");
}

// ---------------------------------------------------------------------------

/// Reads the adjacency network out of an agent checkpoint (or a bare adjacency checkpoint).
inline AdjacencyNetwork load_psi(const std::string& path) {
  const auto j = read_json_file(path);
  if (j.value("format", "") == "hrac-agent-v1") {
    if (!j.contains("psi")) throw std::invalid_argument("checkpoint: variant '" + j.value("variant", "?") + "' has no adjacency network");
    return AdjacencyNetwork::from_json(j.at("psi"));
  }
  return AdjacencyNetwork::from_json(j);
}

inline Cell parse_cell(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("probe: expected x,y");
  try {
    std::size_t used_x = 0, used_y = 0;
    const int x = std::stoi(text.substr(0, comma), &used_x), y = std::stoi(text.substr(comma + 1), &used_y);
    if (used_x != comma || used_y != text.size() - comma - 1) throw std::invalid_argument("trailing");
    return {x, y};
  } catch (const std::logic_error&) {
    throw std::invalid_argument("probe: expected x,y");
  }
}

}  // namespace hrac
