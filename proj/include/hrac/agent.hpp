#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "adjacency.hpp"
#include "grid_env.hpp"
#include "json.hpp"
#include "nn.hpp"

namespace hrac {

enum class Variant { hrac, hrac_o, noadj, negreward, vanilla };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::hrac: return "hrac";
    case Variant::hrac_o: return "hrac-o";
    case Variant::noadj: return "noadj";
    case Variant::negreward: return "negreward";
    default: return "vanilla";
  }
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::hrac, Variant::hrac_o, Variant::noadj, Variant::negreward, Variant::vanilla})
    if (to_string(v) == name) return v;
  throw std::invalid_argument("variant: unknown variant '" + name + "'");
}

inline bool uses_psi(Variant v) { return v != Variant::vanilla; }

struct AgentConfig {
  Variant variant = Variant::hrac;
  int k = 10;
  double gamma_hi = 0.99;
  double gamma_lo = 0.99;
  double eta = 20.0;
  double actor_lr_hi = 1e-4;
  double critic_lr_hi = 1e-3;
  std::size_t replay_capacity = 10000;
  std::size_t batch_hi = 64;
  double tau = 0.001;
  int policy_delay = 2;
  double explore_sigma = 3.0;  // grid units
  double target_noise = 0.2;   // fraction of the output half-extent
  double target_noise_clip = 0.5;
  double reward_scale_hi = 1.0;
  double actor_lr_lo = 1e-4;
  double critic_lr_lo = 1e-4;
  double entropy_weight = 0.01;
  double reward_scale_lo = 1.0;
  double negreward_penalty = -1.0;
  std::vector<std::size_t> hidden_hi{300, 300};
  std::vector<std::size_t> hidden_lo{300, 300};

  /// Discrete-task defaults for an environment and variant.
  static AgentConfig defaults(Task task, Variant variant) {
    AgentConfig c;
    c.variant = variant;
    c.replay_capacity = task == Task::maze ? 10000 : 20000;
    c.explore_sigma = task == Task::maze ? 3.0 : 5.0;
    if (variant == Variant::vanilla || variant == Variant::negreward) c.eta = 0.0;
    return c;
  }

  void check() const {
    if (k < 2) throw std::invalid_argument("k: must be >= 2");
    if (eta < 0.0) throw std::invalid_argument("eta: must be >= 0");
    if (batch_hi == 0 || replay_capacity < batch_hi) throw std::invalid_argument("replay_capacity: smaller than batch");
    if (policy_delay < 1) throw std::invalid_argument("policy_delay: must be >= 1");
  }
};

/// Binary intrinsic reward: both axes within half a cell.
inline double intrinsic_reward(const Subgoal& g, const GridEnvState& s) {
  return std::abs(s.x - g.gx) <= 0.5 && std::abs(s.y - g.gy) <= 0.5 ? 1.0 : 0.0;
}

/// Output box of the high-level actor. Directional subgoals are offsets from the current
/// position; absolute subgoals are offsets from the grid centre.
struct SubgoalBox {
  std::array<double, 2> scale{6.5, 8.5};
  std::array<double, 2> center{6.0, 8.0};
  bool absolute = false;

  static SubgoalBox for_layout(const Layout& layout, bool absolute) {
    return {{layout.width / 2.0, layout.height / 2.0}, {(layout.width - 1) / 2.0, (layout.height - 1) / 2.0}, absolute};
  }

  /// Normalized action in [-1, 1]^2 to an absolute subgoal.
  Subgoal to_subgoal(const std::array<float, 2>& a, const GridEnvState& s) const {
    const double ox = absolute ? center[0] : s.x, oy = absolute ? center[1] : s.y;
    return {ox + scale[0] * a[0], oy + scale[1] * a[1]};
  }
};

// ---------------------------------------------------------------------------
// Differentiable pieces, templated so they can be checked in double precision.

/// Mean hinge max(||psi(from) - psi(goal)|| - eps, 0) with psi frozen; gradient flows to `goals` only.
template <typename Scalar>
Scalar adjacency_hinge(const nn::Mlp<Scalar>& psi, Scalar eps, Scalar input_scale, const nn::Matrix<Scalar>& from,
                       const nn::Matrix<Scalar>& goals, nn::Matrix<Scalar>* d_goals = nullptr) {
  const Eigen::Index batch = goals.cols();
  const nn::Matrix<Scalar> anchor = psi.forward(from * input_scale);
  auto tape = psi.forward_tape(goals * input_scale);
  nn::Matrix<Scalar> d_out = nn::Matrix<Scalar>::Zero(tape.output.rows(), batch);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const nn::Vector<Scalar> diff = tape.output.col(i) - anchor.col(i);
    const Scalar dist = diff.norm();
    if (dist > eps) {
      loss += dist - eps;
      d_out.col(i) = diff / (dist * static_cast<Scalar>(batch));
    }
  }
  loss /= static_cast<Scalar>(batch);
  if (d_goals != nullptr) {
    nn::Matrix<Scalar> d_in;
    psi.backward(tape, d_out, &d_in);
    *d_goals = d_in * input_scale;
  }
  return loss;
}

template <typename Scalar>
struct RegressionResult {
  Scalar loss = 0;
  nn::Gradients<Scalar> grads;
};

/// Mean squared error of a scalar-output network against targets (1 x B).
template <typename Scalar>
RegressionResult<Scalar> critic_regression(const nn::Mlp<Scalar>& critic, const nn::Matrix<Scalar>& inputs,
                                           const nn::Matrix<Scalar>& targets) {
  auto tape = critic.forward_tape(inputs);
  const nn::Matrix<Scalar> err = tape.output - targets;
  const auto batch = static_cast<Scalar>(inputs.cols());
  RegressionResult<Scalar> r;
  r.loss = err.squaredNorm() / batch;
  r.grads = critic.backward(tape, (Scalar(2) / batch) * err);
  return r;
}

/// TD3 target: r + gamma (1 - done) min(Q1', Q2') at the smoothed target action.
template <typename Scalar>
nn::Matrix<Scalar> td3_targets(const nn::Mlp<Scalar>& critic1_target, const nn::Mlp<Scalar>& critic2_target,
                               const nn::Matrix<Scalar>& next_states, const nn::Matrix<Scalar>& next_actions,
                               const std::vector<Scalar>& rewards, const std::vector<Scalar>& done, Scalar gamma) {
  nn::Matrix<Scalar> in(next_states.rows() + next_actions.rows(), next_states.cols());
  in << next_states, next_actions;
  const nn::Matrix<Scalar> q1 = critic1_target.forward(in), q2 = critic2_target.forward(in);
  nn::Matrix<Scalar> y(1, next_states.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) {
    const auto j = static_cast<std::size_t>(i);
    y(0, i) = rewards[j] + gamma * (Scalar(1) - done[j]) * std::min(q1(0, i), q2(0, i));
  }
  return y;
}

template <typename Scalar>
struct ActorResult {
  Scalar loss = 0;
  Scalar q_term = 0;
  Scalar adj_term = 0;
  nn::Gradients<Scalar> grads;
  nn::Matrix<Scalar> d_action_adj;  // adjacency part of dLoss/daction, for inspection
};

/// Adjacency part of the high-level actor objective.
template <typename Scalar>
struct AdjacencyPenalty {
  const nn::Mlp<Scalar>* psi = nullptr;
  Scalar eps = 1;
  Scalar input_scale = Scalar(0.1);
  Scalar eta = 0;
  nn::Matrix<Scalar> positions;  // 2 x B, phi(s)
  nn::Matrix<Scalar> origin;     // 2 x B, point the normalized action is offset from
  std::array<Scalar, 2> scale{Scalar(6.5), Scalar(8.5)};
};

/// mean(-Q1(s, mu(s))) + eta * mean(hinge(psi(phi(s)), psi(goal(mu(s))))), minimised over actor parameters.
template <typename Scalar>
ActorResult<Scalar> actor_objective(const nn::Mlp<Scalar>& actor, const nn::Mlp<Scalar>& critic1,
                                    const nn::Matrix<Scalar>& states, const AdjacencyPenalty<Scalar>* adj) {
  const Eigen::Index batch = states.cols();
  auto actor_tape = actor.forward_tape(states);
  const nn::Matrix<Scalar>& action = actor_tape.output;
  nn::Matrix<Scalar> in(states.rows() + action.rows(), batch);
  in << states, action;
  auto critic_tape = critic1.forward_tape(in);
  ActorResult<Scalar> r;
  r.q_term = -critic_tape.output.mean();
  nn::Matrix<Scalar> d_in;
  critic1.backward(critic_tape, nn::Matrix<Scalar>::Constant(1, batch, -Scalar(1) / static_cast<Scalar>(batch)), &d_in);
  nn::Matrix<Scalar> d_action = d_in.bottomRows(action.rows());
  r.d_action_adj = nn::Matrix<Scalar>::Zero(action.rows(), batch);
  if (adj != nullptr && adj->eta > Scalar(0) && adj->psi != nullptr) {
    nn::Matrix<Scalar> goals(2, batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      goals(0, i) = adj->origin(0, i) + adj->scale[0] * action(0, i);
      goals(1, i) = adj->origin(1, i) + adj->scale[1] * action(1, i);
    }
    nn::Matrix<Scalar> d_goals;
    r.adj_term = adj->eta * adjacency_hinge(*adj->psi, adj->eps, adj->input_scale, adj->positions, goals, &d_goals);
    r.d_action_adj.row(0) = adj->eta * adj->scale[0] * d_goals.row(0);
    r.d_action_adj.row(1) = adj->eta * adj->scale[1] * d_goals.row(1);
    d_action += r.d_action_adj;
  }
  r.loss = r.q_term + r.adj_term;
  r.grads = actor.backward(actor_tape, d_action);
  return r;
}

template <typename Scalar>
struct A2cResult {
  Scalar actor_loss = 0;
  Scalar critic_loss = 0;
  Scalar entropy = 0;
  nn::Gradients<Scalar> actor;
  nn::Gradients<Scalar> critic;
};

/// Advantage actor-critic losses on one rollout (columns of `inputs`):
/// actor  -mean(log pi(a) * (R - V)) - beta * mean(H),  critic  mean(0.5 (V - R)^2).
template <typename Scalar>
A2cResult<Scalar> a2c_gradients(const nn::Mlp<Scalar>& actor, const nn::Mlp<Scalar>& critic,
                                const nn::Matrix<Scalar>& inputs, const std::vector<int>& actions,
                                const std::vector<Scalar>& returns, Scalar entropy_weight) {
  const Eigen::Index n = inputs.cols();
  const auto inv_n = Scalar(1) / static_cast<Scalar>(n);
  auto actor_tape = actor.forward_tape(inputs);
  auto critic_tape = critic.forward_tape(inputs);
  const nn::Matrix<Scalar>& logits = actor_tape.output;
  nn::Matrix<Scalar> d_logits(logits.rows(), n), d_value(1, n);
  A2cResult<Scalar> r;
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const nn::Vector<Scalar> z = logits.col(t).array() - logits.col(t).maxCoeff();
    const nn::Vector<Scalar> p = z.array().exp() / z.array().exp().sum();
    const nn::Vector<Scalar> logp = z.array() - std::log(z.array().exp().sum());
    const Scalar h = -(p.array() * logp.array()).sum();
    const Scalar value = critic_tape.output(0, t);
    const Scalar adv = returns[i] - value;
    r.actor_loss += -(logp(actions[i]) * adv) * inv_n - entropy_weight * h * inv_n;
    r.entropy += h * inv_n;
    r.critic_loss += Scalar(0.5) * (value - returns[i]) * (value - returns[i]) * inv_n;
    for (Eigen::Index j = 0; j < logits.rows(); ++j) {
      const Scalar onehot = j == actions[i] ? Scalar(1) : Scalar(0);
      d_logits(j, t) = (-(onehot - p(j)) * adv + entropy_weight * p(j) * (logp(j) + h)) * inv_n;
    }
    d_value(0, t) = (value - returns[i]) * inv_n;
  }
  r.actor = actor.backward(actor_tape, d_logits);
  r.critic = critic.backward(critic_tape, d_value);
  return r;
}

/// Discounted returns of a rollout, bootstrapped from `bootstrap`.
template <typename Scalar>
std::vector<Scalar> discounted_returns(const std::vector<Scalar>& rewards, Scalar bootstrap, Scalar gamma) {
  std::vector<Scalar> out(rewards.size());
  Scalar acc = bootstrap;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// TD3 subgoal generator with twin critics, target networks and FIFO replay.
class HighLevelPolicy {
 public:
  struct Transition {
    std::vector<float> state;
    std::array<float, 2> position;
    std::array<float, 2> action;
    float reward = 0.0f;
    std::vector<float> next_state;
    float done = 0.0f;
  };

  HighLevelPolicy() = default;
  HighLevelPolicy(std::size_t state_dim, const AgentConfig& cfg, SubgoalBox box, std::mt19937_64& rng)
      : cfg_(cfg), box_(box), state_dim_(state_dim) {
    auto sizes = [&](std::size_t in, std::size_t out) {
      std::vector<std::size_t> s{in};
      s.insert(s.end(), cfg.hidden_hi.begin(), cfg.hidden_hi.end());
      s.push_back(out);
      return s;
    };
    actor_ = nn::Mlp<float>(sizes(state_dim, 2), nn::Activation::tanh, rng);
    critic1_ = nn::Mlp<float>(sizes(state_dim + 2, 1), nn::Activation::identity, rng);
    critic2_ = nn::Mlp<float>(sizes(state_dim + 2, 1), nn::Activation::identity, rng);
    actor_target_ = actor_;
    critic1_target_ = critic1_;
    critic2_target_ = critic2_;
    actor_opt_ = nn::Adam<float>(actor_, cfg.actor_lr_hi);
    critic1_opt_ = nn::Adam<float>(critic1_, cfg.critic_lr_hi);
    critic2_opt_ = nn::Adam<float>(critic2_, cfg.critic_lr_hi);
  }

  const SubgoalBox& box() const { return box_; }
  std::size_t replay_size() const { return replay_.size(); }
  std::size_t updates() const { return updates_; }
  const nn::Mlp<float>& actor() const { return actor_; }
  const nn::Mlp<float>& critic1() const { return critic1_; }
  const nn::Mlp<float>& critic2() const { return critic2_; }

  /// Normalized action; exploration adds Gaussian noise of explore_sigma grid units, then clips to the box.
  std::array<float, 2> act(const std::vector<float>& state, bool explore, std::mt19937_64& rng) const {
    nn::Matrix<float> in = Eigen::Map<const nn::Matrix<float>>(state.data(), static_cast<Eigen::Index>(state.size()), 1);
    const nn::Matrix<float> out = actor_.forward(in);
    std::array<float, 2> a{out(0, 0), out(1, 0)};
    if (explore) {
      for (int i = 0; i < 2; ++i) {
        std::normal_distribution<double> noise(0.0, cfg_.explore_sigma / box_.scale[static_cast<std::size_t>(i)]);
        a[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(a[static_cast<std::size_t>(i)] + noise(rng), -1.0, 1.0));
      }
    }
    return a;
  }

  Subgoal select_subgoal(const std::vector<float>& features, const GridEnvState& s, bool explore,
                         std::mt19937_64& rng, std::array<float, 2>* action = nullptr) const {
    const auto a = act(features, explore, rng);
    if (action != nullptr) *action = a;
    return box_.to_subgoal(a, s);
  }

  void store(Transition t) {
    if (replay_.size() < cfg_.replay_capacity) {
      replay_.push_back(std::move(t));
    } else {
      replay_[next_slot_] = std::move(t);
    }
    next_slot_ = (next_slot_ + 1) % cfg_.replay_capacity;
  }

  const std::vector<Transition>& replay() const { return replay_; }

  /// One TD3 step. psi is the frozen adjacency network (may be null).
  void update(const AdjacencyNetwork* psi, std::mt19937_64& rng) {
    const std::size_t batch = cfg_.batch_hi;
    if (replay_.size() < batch) return;
    const auto b = static_cast<Eigen::Index>(batch);
    const auto sd = static_cast<Eigen::Index>(state_dim_);
    nn::Matrix<float> s(sd, b), s2(sd, b), a(2, b), pos(2, b);
    std::vector<float> r(batch), done(batch);
    std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& t = replay_[pick(rng)];
      for (Eigen::Index j = 0; j < sd; ++j) {
        s(j, i) = t.state[static_cast<std::size_t>(j)];
        s2(j, i) = t.next_state[static_cast<std::size_t>(j)];
      }
      a(0, i) = t.action[0];
      a(1, i) = t.action[1];
      pos(0, i) = t.position[0];
      pos(1, i) = t.position[1];
      r[static_cast<std::size_t>(i)] = static_cast<float>(cfg_.reward_scale_hi) * t.reward;
      done[static_cast<std::size_t>(i)] = t.done;
    }
    // target policy smoothing
    nn::Matrix<float> a2 = actor_target_.forward(s2);
    std::normal_distribution<double> noise(0.0, cfg_.target_noise);
    for (Eigen::Index i = 0; i < a2.size(); ++i) {
      const double eps = std::clamp(noise(rng), -cfg_.target_noise_clip, cfg_.target_noise_clip);
      a2.data()[i] = static_cast<float>(std::clamp(a2.data()[i] + eps, -1.0, 1.0));
    }
    const auto y = td3_targets<float>(critic1_target_, critic2_target_, s2, a2, r, done, static_cast<float>(cfg_.gamma_hi));
    nn::Matrix<float> sa(sd + 2, b);
    sa << s, a;
    critic1_opt_.step(critic1_, critic_regression<float>(critic1_, sa, y).grads);
    critic2_opt_.step(critic2_, critic_regression<float>(critic2_, sa, y).grads);
    ++updates_;
    if (updates_ % static_cast<std::size_t>(cfg_.policy_delay) != 0) return;

    std::optional<AdjacencyPenalty<float>> penalty;
    if (psi != nullptr && cfg_.eta > 0.0) {
      penalty.emplace();
      penalty->psi = &psi->net();
      penalty->eps = psi->eps_k();
      penalty->input_scale = psi->input_scale();
      penalty->eta = static_cast<float>(cfg_.eta);
      penalty->positions = pos;
      if (box_.absolute) {
        penalty->origin.resize(2, b);
        penalty->origin.row(0).setConstant(static_cast<float>(box_.center[0]));
        penalty->origin.row(1).setConstant(static_cast<float>(box_.center[1]));
      } else {
        penalty->origin = pos;
      }
      penalty->scale = {static_cast<float>(box_.scale[0]), static_cast<float>(box_.scale[1])};
    }
    auto res = actor_objective<float>(actor_, critic1_, s, penalty ? &*penalty : nullptr);
    last_adj_term_ = res.adj_term;
    actor_opt_.step(actor_, res.grads);
    const auto tau = static_cast<float>(cfg_.tau);
    actor_target_.soft_update_from(actor_, tau);
    critic1_target_.soft_update_from(critic1_, tau);
    critic2_target_.soft_update_from(critic2_, tau);
  }

  float last_adjacency_term() const { return last_adj_term_; }

  bool all_finite() const {
    return actor_.all_finite() && critic1_.all_finite() && critic2_.all_finite() && actor_target_.all_finite() &&
           critic1_target_.all_finite() && critic2_target_.all_finite();
  }

  nlohmann::json to_json() const {
    return {{"actor", nn::to_json(actor_)},
            {"critic1", nn::to_json(critic1_)},
            {"critic2", nn::to_json(critic2_)},
            {"absolute", box_.absolute},
            {"scale", box_.scale},
            {"center", box_.center}};
  }

  void load_json(const nlohmann::json& j) {
    actor_ = nn::mlp_from_json<float>(j.at("actor"));
    critic1_ = nn::mlp_from_json<float>(j.at("critic1"));
    critic2_ = nn::mlp_from_json<float>(j.at("critic2"));
    actor_target_ = actor_;
    critic1_target_ = critic1_;
    critic2_target_ = critic2_;
  }

 private:
  AgentConfig cfg_;
  SubgoalBox box_;
  std::size_t state_dim_ = 0;
  nn::Mlp<float> actor_, critic1_, critic2_, actor_target_, critic1_target_, critic2_target_;
  nn::Adam<float> actor_opt_, critic1_opt_, critic2_opt_;
  std::vector<Transition> replay_;
  std::size_t next_slot_ = 0;
  std::size_t updates_ = 0;
  float last_adj_term_ = 0.0f;
};

/// A2C goal-reaching controller over the four moves.
class LowLevelPolicy {
 public:
  LowLevelPolicy() = default;
  LowLevelPolicy(std::size_t state_dim, const AgentConfig& cfg, std::array<double, 2> goal_scale, std::mt19937_64& rng)
      : cfg_(cfg), goal_scale_(goal_scale), input_dim_(state_dim + 2) {
    std::vector<std::size_t> a{input_dim_}, c{input_dim_};
    a.insert(a.end(), cfg.hidden_lo.begin(), cfg.hidden_lo.end());
    c.insert(c.end(), cfg.hidden_lo.begin(), cfg.hidden_lo.end());
    a.push_back(kNumActions);
    c.push_back(1);
    actor_ = nn::Mlp<float>(a, nn::Activation::identity, rng);
    critic_ = nn::Mlp<float>(c, nn::Activation::identity, rng);
    actor_opt_ = nn::Adam<float>(actor_, cfg.actor_lr_lo);
    critic_opt_ = nn::Adam<float>(critic_, cfg.critic_lr_lo);
  }

  std::size_t input_dim() const { return input_dim_; }
  const nn::Mlp<float>& actor() const { return actor_; }
  const nn::Mlp<float>& critic() const { return critic_; }

  /// State features followed by the directional subgoal divided by the box half-extents.
  std::vector<float> input(const std::vector<float>& features, const Subgoal& g, const GridEnvState& s) const {
    std::vector<float> in = features;
    const Subgoal dir = to_directional(g, s);
    in.push_back(static_cast<float>(dir.gx / goal_scale_[0]));
    in.push_back(static_cast<float>(dir.gy / goal_scale_[1]));
    return in;
  }

  std::array<float, kNumActions> probabilities(const std::vector<float>& in) const {
    const nn::Matrix<float> x = Eigen::Map<const nn::Matrix<float>>(in.data(), static_cast<Eigen::Index>(in.size()), 1);
    const nn::Matrix<float> z = actor_.forward(x);
    const float m = z.maxCoeff();
    std::array<float, kNumActions> p{};
    float total = 0.0f;
    for (int i = 0; i < kNumActions; ++i) total += p[static_cast<std::size_t>(i)] = std::exp(z(i, 0) - m);
    for (auto& v : p) v /= total;
    return p;
  }

  int act(const std::vector<float>& in, bool greedy, std::mt19937_64& rng) const {
    const auto p = probabilities(in);
    if (greedy) return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    std::discrete_distribution<int> pick(p.begin(), p.end());
    return pick(rng);
  }

  float value(const std::vector<float>& in) const {
    const nn::Matrix<float> x = Eigen::Map<const nn::Matrix<float>>(in.data(), static_cast<Eigen::Index>(in.size()), 1);
    return critic_.forward(x)(0, 0);
  }

  struct Rollout {
    std::vector<std::vector<float>> inputs;
    std::vector<int> actions;
    std::vector<float> rewards;
    void clear() {
      inputs.clear();
      actions.clear();
      rewards.clear();
    }
    bool empty() const { return inputs.empty(); }
  };

  A2cResult<float> update(const Rollout& ro, float bootstrap) {
    const auto n = static_cast<Eigen::Index>(ro.inputs.size());
    nn::Matrix<float> x(static_cast<Eigen::Index>(input_dim_), n);
    for (Eigen::Index t = 0; t < n; ++t)
      for (Eigen::Index j = 0; j < x.rows(); ++j) x(j, t) = ro.inputs[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
    std::vector<float> rewards = ro.rewards;
    for (auto& r : rewards) r *= static_cast<float>(cfg_.reward_scale_lo);
    const auto returns = discounted_returns<float>(rewards, bootstrap, static_cast<float>(cfg_.gamma_lo));
    auto res = a2c_gradients<float>(actor_, critic_, x, ro.actions, returns, static_cast<float>(cfg_.entropy_weight));
    actor_opt_.step(actor_, res.actor);
    critic_opt_.step(critic_, res.critic);
    return res;
  }

  bool all_finite() const { return actor_.all_finite() && critic_.all_finite(); }

  nlohmann::json to_json() const {
    return {{"actor", nn::to_json(actor_)}, {"critic", nn::to_json(critic_)}, {"goal_scale", goal_scale_}};
  }

  void load_json(const nlohmann::json& j) {
    actor_ = nn::mlp_from_json<float>(j.at("actor"));
    critic_ = nn::mlp_from_json<float>(j.at("critic"));
  }

 private:
  AgentConfig cfg_;
  std::array<double, 2> goal_scale_{6.5, 8.5};
  std::size_t input_dim_ = 0;
  nn::Mlp<float> actor_, critic_;
  nn::Adam<float> actor_opt_, critic_opt_;
};

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
  GridEnvConfig env;
  AgentConfig agent;
  std::uint64_t seed = 0;
  long total_steps = 300000;
  long eval_interval = 5000;
  int eval_episodes = 5;
  long pretrain_steps = 50000;
  std::size_t pretrain_epochs = 50;
  long online_interval = 50000;
  std::size_t online_epochs = 25;
  std::size_t adjacency_batch = 64;
  double adjacency_lr = 2e-4;
  float eps_k = 1.0f;
  float delta = 0.2f;
};

struct EvalRecord {
  long env_step = 0;
  double mean_return = 0.0;
  double std_err = 0.0;
  double success_rate = 0.0;
  double eval_adjacent_fraction = 0.0;   // psi-adjacent subgoals emitted in the evaluation episodes
  double train_adjacent_fraction = 0.0;  // psi-adjacent subgoals emitted in training since the last record
  std::vector<double> returns;
};

struct TrainResult {
  std::vector<EvalRecord> records;
  bool finite = true;
  long pretrain_steps = 0;
};

class HierarchicalAgent {
 public:
  HierarchicalAgent(const TrainConfig& cfg, const Layout& layout, std::size_t state_dim)
      : cfg_(cfg), rng_(cfg.seed * 0x9E3779B97F4A7C15ULL + 17) {
    cfg_.agent.check();
    const bool absolute = cfg_.agent.variant == Variant::vanilla;
    const auto box = SubgoalBox::for_layout(layout, absolute);
    high_ = HighLevelPolicy(state_dim, cfg_.agent, box, rng_);
    low_ = LowLevelPolicy(state_dim, cfg_.agent, box.scale, rng_);
    if (uses_psi(cfg_.agent.variant))
      psi_ = std::make_unique<AdjacencyNetwork>(cfg_.agent.k, rng_(), cfg_.adjacency_lr, cfg_.eps_k, cfg_.delta);
  }

  HighLevelPolicy& high() { return high_; }
  LowLevelPolicy& low() { return low_; }
  const HighLevelPolicy& high() const { return high_; }
  const LowLevelPolicy& low() const { return low_; }
  AdjacencyNetwork* psi() { return psi_.get(); }
  const AdjacencyNetwork* psi() const { return psi_.get(); }
  std::mt19937_64& rng() { return rng_; }

  bool all_finite() const { return high_.all_finite() && low_.all_finite() && (!psi_ || psi_->net().all_finite()); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"format", "hrac-agent-v1"},
                     {"variant", to_string(cfg_.agent.variant)},
                     {"high", high_.to_json()},
                     {"low", low_.to_json()}};
    if (psi_) j["psi"] = psi_->to_json();
    return j;
  }

 private:
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  HighLevelPolicy high_;
  LowLevelPolicy low_;
  std::unique_ptr<AdjacencyNetwork> psi_;
};

/// Runs one evaluation episode with exploration off and a greedy low level.
struct EpisodeOutcome {
  double ret = 0.0;
  bool success = false;
  std::size_t subgoals = 0;
  std::size_t adjacent = 0;
};

inline EpisodeOutcome run_eval_episode(const HierarchicalAgent& agent, GridEnv& env, std::uint64_t seed, int k,
                                       std::mt19937_64& scratch) {
  EpisodeOutcome out;
  GridEnvState s = env.reset(seed);
  Subgoal g;
  for (int t = 0; !env.done(); ++t) {
    const auto features = env.features(s);
    if (t % k == 0) {
      g = agent.high().select_subgoal(features, s, false, scratch);
      ++out.subgoals;
      if (agent.psi() != nullptr && agent.psi()->judges_adjacent(goal_of(s), g)) ++out.adjacent;
    }
    const int a = agent.low().act(agent.low().input(features, g, s), true, scratch);
    const auto r = env.step(a);
    out.ret += r.reward;
    out.success = out.success || r.terminal;
    s = r.state;
  }
  return out;
}

struct TrainHooks {
  std::function<void(const EvalRecord&, const HierarchicalAgent&)> on_record;
  // stored high-level transition and the external rewards it accumulated
  std::function<void(const HighLevelPolicy::Transition&, const std::vector<double>&)> on_transition;
  // final agent and the adjacency matrix it was distilled from (null for variants without one)
  std::function<void(const HierarchicalAgent&, const AdjacencyMatrix*)> on_finish;
};

/// Full training procedure: optional adjacency pre-training, then the two-level loop with
/// per-interval low-level updates, per-episode high-level updates and periodic adjacency refresh.
inline TrainResult train(const TrainConfig& cfg, const Layout& layout, const TrainHooks& hooks = {}) {
  GridEnv env(cfg.env, layout, cfg.seed);
  GridEnv eval_env(cfg.env, layout, cfg.seed + 1000003);
  HierarchicalAgent agent(cfg, layout, env.feature_dim());
  auto& rng = agent.rng();
  const Variant variant = cfg.agent.variant;
  const int k = cfg.agent.k;
  TrainResult result;

  AdjacencyMatrix matrix(k);
  TrajectoryBuffer buffer;
  std::vector<std::vector<Cell>> history;  // all trajectories, for the sampler without a matrix
  std::set<Cell> visited;
  std::uint64_t episode_seed = cfg.seed * 1000 + 1;

  const bool learns_matrix = variant == Variant::hrac || variant == Variant::negreward;
  const bool learns_pairs = variant == Variant::noadj;
  auto refresh_adjacency = [&](std::size_t epochs) {
    if (learns_matrix) {
      matrix.update(buffer);
      train_adjacency(*agent.psi(), matrix, epochs, cfg.adjacency_batch, rng);
    } else if (learns_pairs) {
      buffer.clear();
      train_adjacency_noadj(*agent.psi(), history, visited.size(), epochs, cfg.adjacency_batch, rng);
    }
  };
  auto keep_trajectory = [&](std::vector<Cell>&& cells) {
    for (const Cell& c : cells) visited.insert(c);
    if (learns_pairs) history.push_back(cells);
    buffer.record(std::move(cells));
  };

  if (variant == Variant::hrac_o) {
    const auto nav = export_navigation(layout, cfg.env.random_action_prob);
    matrix = oracle_matrix(nav, shortest_transition_distance(nav.mdp), k);
    train_adjacency(*agent.psi(), matrix, cfg.pretrain_epochs, cfg.adjacency_batch, rng);
  } else if (learns_matrix || learns_pairs) {
    // random-policy exploration; these steps are not counted in total_steps
    std::uniform_int_distribution<int> pick(0, kNumActions - 1);
    long steps = 0;
    while (steps < cfg.pretrain_steps) {
      std::vector<Cell> cells{env.reset(episode_seed++).cell()};
      while (!env.done() && steps < cfg.pretrain_steps) {
        cells.push_back(env.step(pick(rng)).state.cell());
        ++steps;
      }
      keep_trajectory(std::move(cells));
    }
    result.pretrain_steps = steps;
    refresh_adjacency(cfg.pretrain_epochs);
  }

  long step = 0, since_refresh = 0;
  std::size_t train_subgoals = 0, train_adjacent = 0;
  long eval_index = 0;
  auto evaluate = [&]() {
    EvalRecord rec;
    rec.env_step = step;
    std::mt19937_64 scratch(cfg.seed ^ static_cast<std::uint64_t>(step));
    std::size_t subgoals = 0, adjacent = 0, successes = 0;
    for (int e = 0; e < cfg.eval_episodes; ++e) {
      const auto out = run_eval_episode(agent, eval_env, cfg.seed * 7919 + static_cast<std::uint64_t>(eval_index * 31 + e), k, scratch);
      rec.returns.push_back(out.ret);
      subgoals += out.subgoals;
      adjacent += out.adjacent;
      successes += out.success;
    }
    ++eval_index;
    const double n = static_cast<double>(rec.returns.size());
    for (double r : rec.returns) rec.mean_return += r / n;
    double var = 0.0;
    for (double r : rec.returns) var += (r - rec.mean_return) * (r - rec.mean_return);
    rec.std_err = n > 1 ? std::sqrt(var / (n - 1)) / std::sqrt(n) : 0.0;
    rec.success_rate = static_cast<double>(successes) / n;
    rec.eval_adjacent_fraction = subgoals ? static_cast<double>(adjacent) / subgoals : 0.0;
    rec.train_adjacent_fraction = train_subgoals ? static_cast<double>(train_adjacent) / train_subgoals : 0.0;
    train_subgoals = train_adjacent = 0;
    result.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec, agent);
  };

  LowLevelPolicy::Rollout rollout;
  while (step < cfg.total_steps) {
    GridEnvState s = env.reset(episode_seed++);
    std::vector<Cell> cells{s.cell()};
    std::size_t transitions = 0;
    HighLevelPolicy::Transition pending;
    Subgoal g;
    double hi_reward = 0.0;
    std::vector<double> external;
    for (int t = 0; !env.done() && step < cfg.total_steps; ++t) {
      const auto features = env.features(s);
      if (t % k == 0) {
        g = agent.high().select_subgoal(features, s, true, rng, &pending.action);
        pending.state = features;
        pending.position = {static_cast<float>(s.x), static_cast<float>(s.y)};
        hi_reward = 0.0;
        external.clear();
        if (agent.psi() != nullptr) {
          const bool adjacent = agent.psi()->judges_adjacent(goal_of(s), g);
          ++train_subgoals;
          train_adjacent += adjacent;
          if (variant == Variant::negreward && !adjacent) hi_reward += cfg.agent.negreward_penalty;
        }
      }
      const auto in = agent.low().input(features, g, s);
      const int a = agent.low().act(in, false, rng);
      const StepResult r = env.step(a);
      ++step;
      ++since_refresh;
      rollout.inputs.push_back(in);
      rollout.actions.push_back(a);
      rollout.rewards.push_back(static_cast<float>(intrinsic_reward(g, r.state)));
      hi_reward += r.reward;
      external.push_back(r.reward);
      cells.push_back(r.state.cell());
      s = r.state;

      const bool interval_end = (t + 1) % k == 0 || env.done() || step >= cfg.total_steps;
      if (interval_end) {
        const float bootstrap = r.terminal ? 0.0f : agent.low().value(agent.low().input(env.features(s), g, s));
        agent.low().update(rollout, bootstrap);
        rollout.clear();
        pending.reward = static_cast<float>(hi_reward);
        pending.next_state = env.features(s);
        pending.done = r.terminal ? 1.0f : 0.0f;
        if (hooks.on_transition) hooks.on_transition(pending, external);
        agent.high().store(pending);
        ++transitions;
      }
      if (step % cfg.eval_interval == 0) evaluate();
    }
    keep_trajectory(std::move(cells));
    for (std::size_t i = 0; i < transitions; ++i) agent.high().update(agent.psi(), rng);
    if ((learns_matrix || learns_pairs) && since_refresh >= cfg.online_interval) {
      refresh_adjacency(cfg.online_epochs);
      since_refresh = 0;
    }
    if (!learns_matrix && !learns_pairs) buffer.clear();
  }
  result.finite = agent.all_finite();
  if (hooks.on_finish) hooks.on_finish(agent, learns_matrix || variant == Variant::hrac_o ? &matrix : nullptr);
  return result;
}

}  // namespace hrac
