#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "hrac/experiment.hpp"

using namespace hrac;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json small_run(const std::string& variant, const fs::path& out) {
  return {{"env", "maze"},
          {"variant", variant},
          {"seeds", {4}},
          {"out_dir", out.string()},
          {"total_steps", 1000},
          {"eval_interval", 500},
          {"adjacency", {{"pretrain_steps", 500}, {"pretrain_epochs", 1}, {"online_epochs", 1}}},
          {"agent", {{"hidden_hi", {16}}, {"hidden_lo", {16}}}}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsMatchHyperparameterTables) {
  const auto c = config_from_json(nlohmann::json::object());
  const auto& a = c.train.agent;
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(a.k, 10);
  EXPECT_DOUBLE_EQ(a.gamma_hi, 0.99);
  EXPECT_DOUBLE_EQ(a.gamma_lo, 0.99);
  EXPECT_DOUBLE_EQ(a.eta, 20.0);
  EXPECT_DOUBLE_EQ(a.actor_lr_hi, 1e-4);
  EXPECT_DOUBLE_EQ(a.critic_lr_hi, 1e-3);
  EXPECT_DOUBLE_EQ(a.tau, 0.001);
  EXPECT_EQ(a.policy_delay, 2);
  EXPECT_EQ(a.batch_hi, 64u);
  EXPECT_DOUBLE_EQ(a.actor_lr_lo, 1e-4);
  EXPECT_DOUBLE_EQ(a.critic_lr_lo, 1e-4);
  EXPECT_DOUBLE_EQ(a.entropy_weight, 0.01);
  EXPECT_EQ(a.hidden_lo, (std::vector<std::size_t>{300, 300}));
  EXPECT_DOUBLE_EQ(c.train.adjacency_lr, 2e-4);
  EXPECT_EQ(c.train.adjacency_batch, 64u);
  EXPECT_EQ(c.train.pretrain_epochs, 50u);
  EXPECT_EQ(c.train.online_epochs, 25u);
  EXPECT_FLOAT_EQ(c.train.eps_k, 1.0f);
  EXPECT_FLOAT_EQ(c.train.delta, 0.2f);
  EXPECT_EQ(c.train.eval_interval, 5000);
  EXPECT_EQ(c.train.eval_episodes, 5);
  EXPECT_DOUBLE_EQ(c.train.env.random_action_prob, 0.25);
  const auto kc = config_from_json({{"env", "keychest"}});
  EXPECT_DOUBLE_EQ(kc.train.agent.explore_sigma, 5.0);
  EXPECT_EQ(kc.train.agent.replay_capacity, 20000u);
}

TEST(Config, UnknownKeyNamed) {
  try {
    config_from_json({{"agent", {{"etaa", 3}}}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'agent.etaa'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(config_from_json({{"stepz", 3}}), std::invalid_argument);
}

TEST(Config, UnknownVariantNamesField) {
  try {
    config_from_json({{"variant", "hiro"}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_EQ(std::string(e.what()).rfind("variant", 0), 0u) << e.what();
  }
}

TEST(Config, BadValueNamed) {
  try {
    config_from_json({{"agent", {{"k", "ten"}}}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'agent.k'"), std::string::npos);
  }
  EXPECT_THROW(config_from_json({{"agent", {{"k", 1}}}}), std::invalid_argument);
}

TEST(Config, RoundTrip) {
  const auto c = config_from_json({{"variant", "noadj"}, {"total_steps", 1234}, {"agent", {{"eta", 3.5}}}});
  EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c));
  EXPECT_EQ(c.train.total_steps, 1234);
  EXPECT_DOUBLE_EQ(c.train.agent.eta, 3.5);
}

TEST(Config, EnvironmentOverrides) {
  const std::map<std::string, std::string> vars{
      {"HRAC_AGENT_ETA", "7.5"}, {"HRAC_TOTAL_STEPS", "42"}, {"HRAC_VARIANT", "vanilla"}, {"HRAC_SEEDS", "[9]"}};
  nlohmann::json user{{"total_steps", 10}};
  apply_env_overrides(user, [&](const char* name) -> const char* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  });
  const auto c = config_from_json(user);
  EXPECT_DOUBLE_EQ(c.train.agent.eta, 7.5);
  EXPECT_EQ(c.train.total_steps, 42);
  EXPECT_EQ(c.variant, Variant::vanilla);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{9}));
  EXPECT_EQ(env_var_name("adjacency.pretrain_steps"), "HRAC_ADJACENCY_PRETRAIN_STEPS");
}

TEST(Run, WritesOutputsAndIsReproducible) {
  const auto out = fresh_dir("run_repro");
  const auto c = config_from_json(small_run("hrac", out));
  ASSERT_EQ(seed_dir(c, 4), out);
  EXPECT_TRUE(run_seed(c, 4, out));
  for (const char* f : {"eval.csv", "success.csv", "subgoal_adjacency.csv", "config.json", "checkpoint.json",
                        "adjacency_matrix.txt", "done"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto eval = read_csv((out / "eval.csv").string());
  EXPECT_EQ(eval.header, (std::vector<std::string>{"env_step", "mean_return", "std_err", "seed", "variant"}));
  ASSERT_EQ(eval.rows.size(), 2u);
  EXPECT_EQ(eval.rows[0][0], "500");
  EXPECT_EQ(eval.rows[1][0], "1000");
  EXPECT_EQ(eval.rows[1][3], "4");
  EXPECT_EQ(eval.rows[1][4], "hrac");
  const std::string first = slurp(out / "eval.csv");
  EXPECT_FALSE(run_seed(c, 4, out));  // cached
  EXPECT_TRUE(run_seed(c, 4, out, false));
  EXPECT_EQ(slurp(out / "eval.csv"), first);
  const auto snap = read_json_file((out / "config.json").string());
  EXPECT_EQ(snap.at("code_version"), kCodeVersion);
  EXPECT_EQ(config_from_json(snap.at("config")).train.total_steps, 1000);
}

TEST(Run, ChangedConfigRetrains) {
  const auto out = fresh_dir("run_changed");
  auto user = small_run("vanilla", out);
  EXPECT_TRUE(run_seed(config_from_json(user), 4, out));
  user["agent"]["tau"] = 0.01;
  EXPECT_TRUE(run_seed(config_from_json(user), 4, out));
  EXPECT_FALSE(fs::exists(out / "adjacency_matrix.txt"));
}

TEST(Run, MultipleSeedsGetSubdirectories) {
  auto c = config_from_json({{"seeds", {1, 2}}, {"out_dir", "x"}});
  EXPECT_EQ(seed_dir(c, 2), fs::path("x") / "seed_2");
}

TEST(Heatmap, FromRunCheckpoint) {
  const auto out = fresh_dir("run_heat");
  const auto c = config_from_json(small_run("hrac", out));
  run_seed(c, 4, out);
  const auto psi = load_psi((out / "checkpoint.json").string());
  const auto csv = (out / "heat.csv").string();
  write_heatmap(psi, default_layout(Task::maze), parse_cell("1,1"), csv);
  const auto t = read_csv(csv);
  EXPECT_EQ(t.rows.size(), default_layout(Task::maze).free_cells().size());
  EXPECT_THROW(parse_cell("1;1"), std::invalid_argument);
  EXPECT_THROW(parse_cell("1,x"), std::invalid_argument);
}

TEST(Heatmap, VanillaCheckpointHasNoNetwork) {
  const auto out = fresh_dir("run_heat_vanilla");
  run_seed(config_from_json(small_run("vanilla", out)), 4, out);
  EXPECT_THROW(load_psi((out / "checkpoint.json").string()), std::invalid_argument);
}

TEST(Smoothing, WindowOneIsIdentity) {
  const std::vector<double> v{1, 5, -2, 4};
  EXPECT_EQ(rolling_mean(v, 1), v);
  const auto w = rolling_mean(v, 2);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 3.0);
  EXPECT_DOUBLE_EQ(w[3], 1.0);
}

TEST(Smoothing, AcrossSeeds) {
  const auto s = across_seeds({1.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.std_err, 1.0);
}

TEST(Verify, Lemma1RejectsStochasticInput) {
  const auto mdp = random_mdp(4, 2, 1, 0.5);
  const auto v = verify("lemma1", 1, 0, &mdp);
  EXPECT_FALSE(v.pass);
  EXPECT_EQ(v.report.at("status"), "rejected: deterministic only");
}

TEST(Verify, SmallSweepsPass) {
  for (const char* suite : {"lemma1", "theorem1", "theorem2", "distance"}) {
    const auto v = verify(suite, 10, 3);
    EXPECT_TRUE(v.pass) << suite;
    EXPECT_TRUE(v.report.at("aggregate").at("pass").get<bool>());
    EXPECT_GE(v.report.at("instances").size(), 10u);
  }
  EXPECT_THROW(verify("lemma2", 1, 0), std::invalid_argument);
}

TEST(Verify, SoundnessReportFields) {
  const auto v = verify_adjacency_soundness(1, 0, 2000);
  const auto& i = v.report.at("instances").at(0);
  for (const char* key : {"violations", "coverage", "ones", "visited_cells"}) EXPECT_TRUE(i.contains(key)) << key;
}
