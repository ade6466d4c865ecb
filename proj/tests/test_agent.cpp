#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "hrac/agent.hpp"

using namespace hrac;
using MatD = nn::Matrix<double>;

namespace {

MatD random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TrainConfig quick_config(Variant v, long steps) {
  TrainConfig cfg;
  cfg.env.task = Task::maze;
  cfg.agent = AgentConfig::defaults(Task::maze, v);
  cfg.agent.hidden_hi = {32, 32};
  cfg.agent.hidden_lo = {32, 32};
  cfg.seed = 3;
  cfg.total_steps = steps;
  cfg.eval_interval = 500;
  cfg.pretrain_steps = 600;
  cfg.pretrain_epochs = 1;
  cfg.online_interval = 800;
  cfg.online_epochs = 1;
  return cfg;
}

}  // namespace

TEST(Variant, RoundTrip) {
  for (Variant v : {Variant::hrac, Variant::hrac_o, Variant::noadj, Variant::negreward, Variant::vanilla})
    EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Variant, UnknownNamesField) {
  try {
    parse_variant("hiro");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("variant"), std::string::npos);
  }
}

TEST(AgentConfig, Defaults) {
  const auto maze = AgentConfig::defaults(Task::maze, Variant::hrac);
  EXPECT_EQ(maze.k, 10);
  EXPECT_DOUBLE_EQ(maze.eta, 20.0);
  EXPECT_DOUBLE_EQ(maze.explore_sigma, 3.0);
  EXPECT_EQ(maze.replay_capacity, 10000u);
  const auto kc = AgentConfig::defaults(Task::keychest, Variant::hrac);
  EXPECT_DOUBLE_EQ(kc.explore_sigma, 5.0);
  EXPECT_EQ(kc.replay_capacity, 20000u);
  EXPECT_DOUBLE_EQ(AgentConfig::defaults(Task::maze, Variant::vanilla).eta, 0.0);
  EXPECT_DOUBLE_EQ(AgentConfig::defaults(Task::maze, Variant::negreward).eta, 0.0);
}

TEST(AgentConfig, Invariants) {
  AgentConfig c;
  c.k = 1;
  EXPECT_THROW(c.check(), std::invalid_argument);
  c = AgentConfig{};
  c.eta = -1;
  EXPECT_THROW(c.check(), std::invalid_argument);
}

TEST(IntrinsicReward, Examples) {
  GridEnvState s;
  s.x = 3;
  s.y = 4;
  EXPECT_EQ(intrinsic_reward({3.2, 4.1}, s), 1.0);
  s.x = 4;
  EXPECT_EQ(intrinsic_reward({3.2, 4.1}, s), 0.0);
  EXPECT_EQ(intrinsic_reward(goal_of(s), s), 1.0);
}

TEST(HighLevel, DeterministicWithoutExplorationAndInsideBox) {
  std::mt19937_64 rng(0);
  const auto layout = default_layout(Task::maze);
  const auto cfg = AgentConfig::defaults(Task::maze, Variant::hrac);
  HighLevelPolicy hl(2, cfg, SubgoalBox::for_layout(layout, false), rng);
  GridEnvState s;
  s.x = 1;
  s.y = 1;
  const std::vector<float> f{0.1f, 0.1f};
  const auto g1 = hl.select_subgoal(f, s, false, rng), g2 = hl.select_subgoal(f, s, false, rng);
  EXPECT_EQ(g1, g2);
  for (int i = 0; i < 2000; ++i) {
    std::array<float, 2> a{};
    const auto g = hl.select_subgoal(f, s, true, rng, &a);
    EXPECT_LE(std::abs(a[0]), 1.0f);
    EXPECT_LE(std::abs(a[1]), 1.0f);
    EXPECT_LE(std::abs(g.gx - s.x), 6.5 + 1e-6);
    EXPECT_LE(std::abs(g.gy - s.y), 8.5 + 1e-6);
  }
}

TEST(HighLevel, ExplorationNoiseScale) {
  // near-zero actor output, so the clipped noise is almost unclipped at sigma = 3 grid cells
  std::mt19937_64 rng(1);
  auto cfg = AgentConfig::defaults(Task::maze, Variant::hrac);
  HighLevelPolicy hl(2, cfg, SubgoalBox::for_layout(default_layout(Task::maze), false), rng);
  const std::vector<float> f{0.0f, 0.0f};
  const auto base = hl.act(f, false, rng);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double dy = (hl.act(f, true, rng)[1] - base[1]) * 8.5;
    sum += dy;
    sum2 += dy * dy;
  }
  const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 3.0, 0.15);
}

TEST(HighLevel, ReplayFifo) {
  std::mt19937_64 rng(0);
  auto cfg = AgentConfig::defaults(Task::maze, Variant::vanilla);
  cfg.replay_capacity = 64;
  HighLevelPolicy hl(2, cfg, SubgoalBox::for_layout(default_layout(Task::maze), true), rng);
  for (int i = 0; i < 100; ++i) {
    HighLevelPolicy::Transition t;
    t.state = {0, 0};
    t.next_state = {0, 0};
    t.reward = static_cast<float>(i);
    hl.store(t);
  }
  EXPECT_EQ(hl.replay_size(), 64u);
  float lo = 1e9f;
  for (const auto& t : hl.replay()) lo = std::min(lo, t.reward);
  EXPECT_EQ(lo, 36.0f);
}

TEST(AdjacencyHinge, ZeroAtOwnPosition) {
  AdjacencyNetwork psi(10, 0);
  nn::Matrix<float> pos(2, 3);
  pos << 1, 5, 9, 1, 3, 15;
  EXPECT_EQ(adjacency_hinge<float>(psi.net(), 1.0f, 0.1f, pos, pos), 0.0f);
}

TEST(AdjacencyHinge, FarSubgoalPositiveAndGrowing) {
  AdjacencyNetwork psi(10, 0);
  nn::Matrix<float> from(2, 1), near(2, 1), far(2, 1), farther(2, 1);
  from << 1, 1;
  near << 60, 60;
  far << 120, 120;
  farther << 240, 240;
  const float a = adjacency_hinge<float>(psi.net(), 1.0f, 0.1f, from, near);
  const float b = adjacency_hinge<float>(psi.net(), 1.0f, 0.1f, from, far);
  const float c = adjacency_hinge<float>(psi.net(), 1.0f, 0.1f, from, farther);
  EXPECT_GT(b, 0.0f);
  EXPECT_LE(a, b);
  EXPECT_LT(b, c);
}

TEST(AdjacencyHinge, GoalGradientFiniteDifferences) {
  std::mt19937_64 rng(5);
  nn::Mlp<double> psi({2, 128, 128, 128, 32}, nn::Activation::identity, rng);
  const MatD from = random_matrix(2, 6, 1, 4.0), goals = random_matrix(2, 6, 2, 4.0);
  MatD d;
  const double eps = 0.05;
  const double loss = adjacency_hinge<double>(psi, eps, 0.1, from, goals, &d);
  ASSERT_GT(loss, 0.0);
  auto res = hrac_test::check_input_gradient(
      [&](const MatD& g) { return adjacency_hinge<double>(psi, eps, 0.1, from, g); }, goals, d, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Td3, TargetsUseMinOfTwinCritics) {
  // linear critics Q(s, a) = w . [s; a] + b with hand-chosen weights
  std::mt19937_64 rng(0);
  nn::Mlp<double> q1({2, 1}, nn::Activation::identity, rng), q2({2, 1}, nn::Activation::identity, rng);
  q1.layers()[0].w << 1.0, 0.0;
  q1.layers()[0].b << 0.0;
  q2.layers()[0].w << 0.0, 1.0;
  q2.layers()[0].b << 0.0;
  MatD s(1, 2), a(1, 2);
  s << 2.0, 5.0;
  a << 3.0, 1.0;
  // sample 0: Q1 = 2, Q2 = 3 -> min 2; sample 1: Q1 = 5, Q2 = 1 -> min 1 (terminal, ignored)
  const auto y = td3_targets<double>(q1, q2, s, a, {1.0, 0.5}, {0.0, 1.0}, 0.9);
  EXPECT_NEAR(y(0, 0), 1.0 + 0.9 * 2.0, 1e-12);
  EXPECT_NEAR(y(0, 1), 0.5, 1e-12);
}

TEST(Td3, CriticRegressionGradients) {
  std::mt19937_64 rng(2);
  nn::Mlp<double> critic({4, 300, 300, 1}, nn::Activation::identity, rng);
  const MatD x = random_matrix(4, 5, 3), y = random_matrix(1, 5, 4);
  const auto r = critic_regression<double>(critic, x, y);
  auto res = hrac_test::check_parameter_gradients(
      critic, [&](const nn::Mlp<double>& c) { return critic_regression<double>(c, x, y).loss; }, r.grads, 400, 1);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Td3, ActorObjectiveGradients) {
  std::mt19937_64 rng(7);
  nn::Mlp<double> actor({2, 300, 300, 2}, nn::Activation::tanh, rng);
  nn::Mlp<double> critic({4, 300, 300, 1}, nn::Activation::identity, rng);
  nn::Mlp<double> psi({2, 128, 128, 128, 32}, nn::Activation::identity, rng);
  const MatD s = random_matrix(2, 6, 11, 0.5);
  AdjacencyPenalty<double> pen;
  pen.psi = &psi;
  pen.eps = 0.01;
  pen.eta = 20.0;
  pen.positions = random_matrix(2, 6, 12, 4.0);
  pen.origin = pen.positions;
  const auto r = actor_objective<double>(actor, critic, s, &pen);
  ASSERT_GT(r.adj_term, 0.0);
  auto res = hrac_test::check_parameter_gradients(
      actor, [&](const nn::Mlp<double>& a) { return actor_objective<double>(a, critic, s, &pen).loss; }, r.grads, 400,
      3, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Td3, ZeroEtaMatchesUnconstrained) {
  std::mt19937_64 rng(8);
  nn::Mlp<double> actor({2, 16, 2}, nn::Activation::tanh, rng), critic({4, 16, 1}, nn::Activation::identity, rng);
  nn::Mlp<double> psi({2, 8, 4}, nn::Activation::identity, rng);
  const MatD s = random_matrix(2, 4, 1);
  AdjacencyPenalty<double> pen;
  pen.psi = &psi;
  pen.eps = 0.0;
  pen.eta = 0.0;
  pen.positions = random_matrix(2, 4, 2, 5.0);
  pen.origin = pen.positions;
  const auto with = actor_objective<double>(actor, critic, s, &pen), without = actor_objective<double>(actor, critic, s, nullptr);
  EXPECT_EQ(with.loss, without.loss);
  for (std::size_t l = 0; l < with.grads.w.size(); ++l) {
    EXPECT_EQ(with.grads.w[l], without.grads.w[l]);
    EXPECT_EQ(with.grads.b[l], without.grads.b[l]);
  }
}

TEST(Td3, NonAdjacentBatchGivesAdjacencyGradient) {
  std::mt19937_64 rng(9);
  nn::Mlp<double> actor({2, 16, 2}, nn::Activation::tanh, rng), critic({4, 16, 1}, nn::Activation::identity, rng);
  nn::Mlp<double> psi({2, 16, 8}, nn::Activation::identity, rng);
  const MatD s = random_matrix(2, 4, 3);
  AdjacencyPenalty<double> pen;
  pen.psi = &psi;
  pen.eps = 0.0;  // every subgoal away from the current position is non-adjacent
  pen.eta = 20.0;
  pen.positions = random_matrix(2, 4, 4, 3.0);
  pen.origin = pen.positions;
  const auto r = actor_objective<double>(actor, critic, s, &pen);
  EXPECT_GT(r.adj_term, 0.0);
  EXPECT_GT(r.d_action_adj.norm(), 0.0);
}

TEST(A2c, ReturnsBootstrap) {
  const auto r = discounted_returns<double>({1.0, 0.0, 2.0}, 10.0, 0.5);
  EXPECT_DOUBLE_EQ(r[2], 2.0 + 5.0);
  EXPECT_DOUBLE_EQ(r[1], 3.5);
  EXPECT_DOUBLE_EQ(r[0], 1.0 + 1.75);
}

TEST(A2c, HandWorkedSingleTransition) {
  // linear actor with logits (0, ln 2, 0, 0), constant critic 0.5, action 1, return 1
  std::mt19937_64 rng(0);
  nn::Mlp<double> actor({1, 4}, nn::Activation::identity, rng), critic({1, 1}, nn::Activation::identity, rng);
  actor.layers()[0].w.setZero();
  actor.layers()[0].b << 0.0, std::log(2.0), 0.0, 0.0;
  critic.layers()[0].w.setZero();
  critic.layers()[0].b << 0.5;
  const MatD x = MatD::Constant(1, 1, 1.0);
  const auto r = a2c_gradients<double>(actor, critic, x, {1}, {1.0}, 0.01);
  // p = (0.2, 0.4, 0.2, 0.2), advantage 0.5, H = 1.3321790
  EXPECT_NEAR(r.entropy, 1.3321790, 1e-6);
  EXPECT_NEAR(r.actor.b[0](0), 0.0994455, 1e-6);
  EXPECT_NEAR(r.actor.b[0](1), -0.2983364, 1e-6);
  EXPECT_NEAR(r.actor.b[0](2), 0.0994455, 1e-6);
  EXPECT_NEAR(r.critic.b[0](0), -0.5, 1e-12);
  EXPECT_NEAR(r.critic_loss, 0.125, 1e-12);
  EXPECT_NEAR(r.actor_loss, -std::log(0.4) * 0.5 - 0.01 * 1.3321790, 1e-6);
}

TEST(A2c, ZeroAdvantageLeavesOnlyEntropy) {
  std::mt19937_64 rng(1);
  nn::Mlp<double> actor({3, 8, 4}, nn::Activation::identity, rng), critic({3, 8, 1}, nn::Activation::identity, rng);
  const MatD x = random_matrix(3, 4, 2);
  const MatD v = critic.forward(x);
  std::vector<double> returns(4);
  for (int i = 0; i < 4; ++i) returns[static_cast<std::size_t>(i)] = v(0, i);
  const auto no_entropy = a2c_gradients<double>(actor, critic, x, {0, 1, 2, 3}, returns, 0.0);
  for (const auto& w : no_entropy.actor.w) EXPECT_LT(w.norm(), 1e-12);
  const auto with_entropy = a2c_gradients<double>(actor, critic, x, {0, 1, 2, 3}, returns, 0.01);
  EXPECT_GT(with_entropy.actor.w.back().norm(), 0.0);
}

TEST(A2c, EntropyStationaryAtUniformLogits) {
  std::mt19937_64 rng(2);
  nn::Mlp<double> actor({2, 4}, nn::Activation::identity, rng), critic({2, 1}, nn::Activation::identity, rng);
  actor.layers()[0].w.setZero();
  actor.layers()[0].b.setConstant(0.3);
  critic.layers()[0].w.setZero();
  critic.layers()[0].b.setZero();
  const MatD x = random_matrix(2, 3, 1);
  // returns equal to V = 0 remove the policy-gradient term
  const auto r = a2c_gradients<double>(actor, critic, x, {0, 2, 3}, {0.0, 0.0, 0.0}, 0.01);
  EXPECT_LT(r.actor.b[0].norm(), 1e-15);
  EXPECT_LT(r.actor.w[0].norm(), 1e-15);
}

TEST(A2c, FiniteDifferences) {
  std::mt19937_64 rng(4);
  nn::Mlp<double> actor({4, 300, 300, 4}, nn::Activation::identity, rng), critic({4, 300, 300, 1}, nn::Activation::identity, rng);
  const MatD x = random_matrix(4, 6, 5);
  const std::vector<int> acts{0, 3, 1, 2, 2, 1};
  const std::vector<double> ret{1.0, 0.5, -0.2, 2.0, 0.0, 1.5};
  const auto r = a2c_gradients<double>(actor, critic, x, acts, ret, 0.01);
  // the actor loss treats the advantage as a constant, so differentiate with the critic held fixed
  auto actor_loss = [&](const nn::Mlp<double>& a) { return a2c_gradients<double>(a, critic, x, acts, ret, 0.01).actor_loss; };
  auto critic_loss = [&](const nn::Mlp<double>& c) { return a2c_gradients<double>(actor, c, x, acts, ret, 0.01).critic_loss; };
  EXPECT_LT(hrac_test::check_parameter_gradients(actor, actor_loss, r.actor, 400, 1).max_rel_error, 1e-4);
  EXPECT_LT(hrac_test::check_parameter_gradients(critic, critic_loss, r.critic, 400, 2).max_rel_error, 1e-4);
}

TEST(LowLevel, InputIsDirectional) {
  std::mt19937_64 rng(0);
  LowLevelPolicy ll(2, AgentConfig{}, {6.5, 8.5}, rng);
  GridEnvState s;
  s.x = 2;
  s.y = 3;
  const auto in = ll.input({0.5f, 0.25f}, {8.5, 3.0}, s);
  ASSERT_EQ(in.size(), 4u);
  EXPECT_FLOAT_EQ(in[2], 1.0f);
  EXPECT_FLOAT_EQ(in[3], 0.0f);
  const auto p = ll.probabilities(in);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0f), 1.0f, 1e-6f);
}

TEST(Train, HighLevelTransitionsEveryTenSteps) {
  auto cfg = quick_config(Variant::hrac, 1000);
  std::vector<std::size_t> lengths;
  std::vector<bool> done;
  bool sums_ok = true;
  TrainHooks hooks;
  hooks.on_transition = [&](const HighLevelPolicy::Transition& t, const std::vector<double>& ext) {
    lengths.push_back(ext.size());
    done.push_back(t.done > 0.0f);
    const double sum = std::accumulate(ext.begin(), ext.end(), 0.0);
    sums_ok = sums_ok && std::abs(t.reward - static_cast<float>(sum)) < 1e-6f;
  };
  train(cfg, default_layout(Task::maze), hooks);
  EXPECT_TRUE(sums_ok);
  ASSERT_GE(lengths.size(), 100u);
  // intervals are 10 steps unless the goal is reached or the step budget runs out
  for (std::size_t i = 0; i + 1 < lengths.size(); ++i)
    EXPECT_TRUE(lengths[i] == 10 || (lengths[i] < 10 && done[i])) << i;
  EXPECT_LE(lengths.back(), 10u);
  EXPECT_EQ(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}), 1000u);
}

TEST(Train, EvalRecordsEveryInterval) {
  auto cfg = quick_config(Variant::vanilla, 1500);
  const auto res = train(cfg, default_layout(Task::maze));
  ASSERT_EQ(res.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(res.records[i].env_step, static_cast<long>(500 * (i + 1)));
    EXPECT_EQ(res.records[i].returns.size(), 5u);
  }
  EXPECT_TRUE(res.finite);
}

TEST(Train, SeededRunIsReproducible) {
  for (Variant v : {Variant::hrac, Variant::noadj, Variant::negreward, Variant::hrac_o}) {
    auto cfg = quick_config(v, 1000);
    const auto a = train(cfg, default_layout(Task::maze)), b = train(cfg, default_layout(Task::maze));
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].returns, b.records[i].returns) << to_string(v);
      EXPECT_EQ(a.records[i].eval_adjacent_fraction, b.records[i].eval_adjacent_fraction);
    }
  }
}

TEST(Train, KeyChestRuns) {
  auto cfg = quick_config(Variant::hrac, 1000);
  cfg.env.task = Task::keychest;
  cfg.agent = AgentConfig::defaults(Task::keychest, Variant::hrac);
  cfg.agent.hidden_hi = {16};
  cfg.agent.hidden_lo = {16};
  const auto res = train(cfg, default_layout(Task::keychest));
  EXPECT_EQ(res.records.size(), 2u);
  for (const auto& r : res.records)
    for (double ret : r.returns) EXPECT_TRUE(ret == 0.0 || ret == 1.0 || ret == 6.0);
}
