#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdp.hpp"

namespace hrac {

inline constexpr double kValueTolerance = 1e-10;
inline constexpr std::size_t kIterationCap = 1'000'000;
inline constexpr double kTieTolerance = 1e-12;

/// d[from][to]: minimal expected first hit time.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> d;
  double operator()(StateIndex from, StateIndex to) const { return d[from * n + to]; }
  double& operator()(StateIndex from, StateIndex to) { return d[from * n + to]; }
};

/// pi*(s, g) as a dense [state][goal] action table.
struct GoalPolicy {
  std::size_t n_states = 0;
  std::size_t n_goals = 0;
  std::vector<ActionIndex> action;
  ActionIndex operator()(StateIndex s, GoalIndex g) const { return action[s * n_goals + g]; }
};

/// How the low level behaves after hitting its goal inside the k-step block.
enum class KernelMode {
  stop_at_goal,  // state at time min(first hit, k)
  keep_acting,   // plain k-fold composition under pi*(., g)
};

/// p[s][g][s'] after k steps under pi*(., g).
struct KStepKernel {
  std::size_t n_states = 0;
  std::size_t n_goals = 0;
  std::size_t k = 0;
  std::vector<double> p;
  double operator()(StateIndex s, GoalIndex g, StateIndex next) const { return p[(s * n_goals + g) * n_states + next]; }
  double& operator()(StateIndex s, GoalIndex g, StateIndex next) { return p[(s * n_goals + g) * n_states + next]; }
};

struct HighLevelModel {
  KStepKernel kernel;
  std::vector<double> reward_tilde;  // [s][s'] in [0, k * r_max]
  double gamma = 0.9;

  double r_tilde(StateIndex s, StateIndex next) const { return reward_tilde[s * kernel.n_states + next]; }
  double r_hi(StateIndex s, GoalIndex g) const {
    double r = 0.0;
    for (StateIndex next = 0; next < kernel.n_states; ++next) r += kernel(s, g, next) * r_tilde(s, next);
    return r;
  }
};

/// pi(g | s), one Distribution per state.
struct StochasticHighPolicy {
  std::size_t n_states = 0;
  std::size_t n_goals = 0;
  std::vector<double> pi;
  double operator()(StateIndex s, GoalIndex g) const { return pi[s * n_goals + g]; }
  double& operator()(StateIndex s, GoalIndex g) { return pi[s * n_goals + g]; }
};

using GoalSet = std::vector<GoalIndex>;

// Stochastic-shortest-path value iteration, one target at a time.
inline DistanceMatrix shortest_transition_distance(const TabularMdp& mdp) {
  const std::size_t n = mdp.n_states;
  DistanceMatrix dm{n, std::vector<double>(n * n, 0.0)};
  std::vector<double> cur(n), next(n);
  for (StateIndex target = 0; target < n; ++target) {
    std::fill(cur.begin(), cur.end(), 0.0);
    std::size_t it = 0;
    for (; it < kIterationCap; ++it) {
      double residual = 0.0;
      for (StateIndex s = 0; s < n; ++s) {
        if (s == target) {
          next[s] = 0.0;
          continue;
        }
        double best = std::numeric_limits<double>::infinity();
        for (ActionIndex a = 0; a < mdp.n_actions; ++a) {
          double v = 1.0;
          for (StateIndex s2 = 0; s2 < n; ++s2) v += mdp.p(s, a, s2) * cur[s2];
          best = std::min(best, v);
        }
        next[s] = best;
        residual = std::max(residual, std::abs(next[s] - cur[s]));
      }
      cur.swap(next);
      if (residual < kValueTolerance) break;
    }
    if (it == kIterationCap)
      throw std::runtime_error("shortest_transition_distance: no convergence (MDP not communicating?)");
    for (StateIndex s = 0; s < n; ++s) dm(s, target) = cur[s];
  }
  return dm;
}

/// Hop counts on the support graph; max() marks unreachable.
inline std::vector<std::size_t> bfs_hops(const TabularMdp& mdp, StateIndex from) {
  const auto graph = detail::support_graph(mdp);
  std::vector<std::size_t> hops(mdp.n_states, std::numeric_limits<std::size_t>::max());
  std::deque<StateIndex> queue{from};
  hops[from] = 0;
  while (!queue.empty()) {
    auto u = queue.front();
    queue.pop_front();
    for (auto v : graph[u]) {
      if (hops[v] == std::numeric_limits<std::size_t>::max()) {
        hops[v] = hops[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return hops;
}

inline GoalPolicy optimal_goal_policy(const TabularMdp& mdp, const DistanceMatrix& d) {
  const std::size_t n = mdp.n_states, ng = mdp.n_goals();
  GoalPolicy pol{n, ng, std::vector<ActionIndex>(n * ng, 0)};
  std::vector<double> q(mdp.n_actions);
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < ng; ++g) {
      const StateIndex target = mdp.state_of_goal[g];
      for (ActionIndex a = 0; a < mdp.n_actions; ++a) {
        q[a] = 0.0;
        for (StateIndex s2 = 0; s2 < n; ++s2) q[a] += mdp.p(s, a, s2) * d(s2, target);
      }
      const double best = *std::min_element(q.begin(), q.end());
      ActionIndex a = 0;
      while (q[a] > best + kTieTolerance * std::max(1.0, std::abs(best))) ++a;
      pol.action[s * ng + g] = a;
    }
  }
  return pol;
}

/// Goals whose state is within expected first hit time k.
inline GoalSet adjacent_region_avg(const TabularMdp& mdp, const DistanceMatrix& d, StateIndex s, std::size_t k) {
  if (k < 1) throw std::invalid_argument("adjacent_region_avg: k >= 1");
  GoalSet out;
  for (GoalIndex g = 0; g < mdp.n_goals(); ++g)
    if (d(s, mdp.state_of_goal[g]) <= static_cast<double>(k) + 1e-9) out.push_back(g);
  return out;
}

/// Goals whose state is hit within k steps with positive probability under some policy.
inline GoalSet adjacent_region_max(const TabularMdp& mdp, StateIndex s, std::size_t k) {
  if (k < 1) throw std::invalid_argument("adjacent_region_max: k >= 1");
  const auto hops = bfs_hops(mdp, s);
  GoalSet out;
  for (GoalIndex g = 0; g < mdp.n_goals(); ++g)
    if (hops[mdp.state_of_goal[g]] <= k) out.push_back(g);
  return out;
}

inline KStepKernel k_step_kernel(const TabularMdp& mdp, const GoalPolicy& pi_star, std::size_t k,
                                 KernelMode mode = KernelMode::stop_at_goal) {
  const std::size_t n = mdp.n_states, ng = mdp.n_goals();
  KStepKernel ker{n, ng, k, std::vector<double>(n * ng * n, 0.0)};
  std::vector<double> dist(n), next(n);
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < ng; ++g) {
      std::fill(dist.begin(), dist.end(), 0.0);
      dist[s] = 1.0;
      for (std::size_t step = 0; step < k; ++step) {
        std::fill(next.begin(), next.end(), 0.0);
        const StateIndex target = mdp.state_of_goal[g];
        for (StateIndex u = 0; u < n; ++u) {
          if (dist[u] == 0.0) continue;
          if (mode == KernelMode::stop_at_goal && u == target) {
            next[u] += dist[u];
            continue;
          }
          const ActionIndex a = pi_star(u, g);
          for (StateIndex v = 0; v < n; ++v) next[v] += dist[u] * mdp.p(u, a, v);
        }
        dist.swap(next);
      }
      for (StateIndex v = 0; v < n; ++v) ker(s, g, v) = dist[v];
    }
  }
  return ker;
}

/// max over (s, g, s') of |P^k(s'|s,g) - sum_x P^k(s'|s,phi(x)) P^k(x|s,g)|.
inline double transition_mismatch_rate(const KStepKernel& kernel, const TabularMdp& mdp) {
  const std::size_t n = kernel.n_states;
  double mu = 0.0;
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < kernel.n_goals; ++g) {
      for (StateIndex next = 0; next < n; ++next) {
        double composed = 0.0;
        for (StateIndex mid = 0; mid < n; ++mid) {
          const double w = kernel(s, g, mid);
          if (w != 0.0) composed += kernel(s, mdp.goal_of_state[mid], next) * w;
        }
        mu = std::max(mu, std::abs(kernel(s, g, next) - composed));
      }
    }
  }
  return std::min(mu, 1.0);
}

/// States of the k-step rollout of pi*(., g) from s in a deterministic MDP.
inline std::vector<StateIndex> deterministic_rollout(const TabularMdp& mdp, const GoalPolicy& pi_star, StateIndex s,
                                                     GoalIndex g, std::size_t k) {
  std::vector<StateIndex> traj{s};
  for (std::size_t i = 0; i < k; ++i) {
    const ActionIndex a = pi_star(traj.back(), g);
    StateIndex next = 0;
    while (mdp.p(traj.back(), a, next) != 1.0) ++next;
    traj.push_back(next);
  }
  return traj;
}

/// Surrogate goal phi(s_k), where s_k is the k-th state of the optimal trajectory from s towards g.
inline GoalIndex surrogate_goal_deterministic(const TabularMdp& mdp, const GoalPolicy& pi_star, StateIndex s,
                                              GoalIndex g, std::size_t k) {
  if (!mdp.is_deterministic()) throw std::invalid_argument("rejected: deterministic only");
  const auto hops = bfs_hops(mdp, s);
  const std::size_t dist = hops[mdp.state_of_goal[g]];
  if (k < 1 || k > dist) throw std::invalid_argument("rejected: k must lie in [1, d_st(s, g)]");
  return mdp.goal_of_state[deterministic_rollout(mdp, pi_star, s, g, k).back()];
}

inline GoalPolicy optimal_goal_policy(const TabularMdp& mdp) {
  return optimal_goal_policy(mdp, shortest_transition_distance(mdp));
}

/// r_tilde(s, s') = r_max * k * U[0,1), seeded.
inline HighLevelModel make_high_level_model(const TabularMdp& mdp, KStepKernel kernel, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  HighLevelModel model;
  model.gamma = mdp.gamma;
  model.reward_tilde.resize(mdp.n_states * mdp.n_states);
  for (auto& r : model.reward_tilde) r = mdp.r_max * static_cast<double>(kernel.k) * unit(rng);
  model.kernel = std::move(kernel);
  return model;
}

/// Exact V^pi from the linear system (I - gamma P_pi) V = r_pi.
inline std::vector<double> policy_evaluation_high(const StochasticHighPolicy& pi, const HighLevelModel& model) {
  const std::size_t n = model.kernel.n_states;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < model.kernel.n_goals; ++g) {
      const double w = pi(s, g);
      if (w == 0.0) continue;
      for (StateIndex next = 0; next < n; ++next) {
        const double p = w * model.kernel(s, g, next);
        a(s, next) -= model.gamma * p;
        b(s) += p * model.r_tilde(s, next);
      }
    }
  }
  Eigen::VectorXd v = a.partialPivLu().solve(b);
  return {v.data(), v.data() + n};
}

namespace detail {

inline double high_q(const HighLevelModel& model, const std::vector<double>& v, StateIndex s, GoalIndex g) {
  double q = 0.0;
  for (StateIndex next = 0; next < model.kernel.n_states; ++next)
    q += model.kernel(s, g, next) * (model.r_tilde(s, next) + model.gamma * v[next]);
  return q;
}

inline StochasticHighPolicy greedy_high(const HighLevelModel& model, const std::vector<double>& v) {
  const std::size_t n = model.kernel.n_states, ng = model.kernel.n_goals;
  StochasticHighPolicy pol{n, ng, std::vector<double>(n * ng, 0.0)};
  std::vector<double> q(ng);
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < ng; ++g) q[g] = high_q(model, v, s, g);
    const double best = *std::max_element(q.begin(), q.end());
    GoalIndex g = 0;
    while (q[g] < best - kTieTolerance * std::max(1.0, std::abs(best))) ++g;
    pol(s, g) = 1.0;
  }
  return pol;
}

}  // namespace detail

struct HighLevelSolution {
  StochasticHighPolicy policy;
  std::vector<double> value;
};

// Value iteration to the tolerance, then policy-iteration polishing so the
// returned value is the exact value of the returned policy.
inline HighLevelSolution optimal_high_policy(const HighLevelModel& model) {
  const std::size_t n = model.kernel.n_states, ng = model.kernel.n_goals;
  std::vector<double> v(n, 0.0), next(n);
  for (std::size_t it = 0; it < kIterationCap; ++it) {
    double residual = 0.0;
    for (StateIndex s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (GoalIndex g = 0; g < ng; ++g) best = std::max(best, detail::high_q(model, v, s, g));
      next[s] = best;
      residual = std::max(residual, std::abs(next[s] - v[s]));
    }
    v.swap(next);
    if (residual < kValueTolerance) break;
  }
  auto policy = detail::greedy_high(model, v);
  for (int round = 0; round < 100; ++round) {
    v = policy_evaluation_high(policy, model);
    auto improved = detail::greedy_high(model, v);
    if (improved.pi == policy.pi) break;
    policy = std::move(improved);
  }
  return {std::move(policy), std::move(v)};
}

/// pi_adj(g|s) = sum_g' P^k(phi^-1(g) | s, g') pi*(g'|s).
inline StochasticHighPolicy adjacency_constrained_policy(const StochasticHighPolicy& pi_star, const KStepKernel& kernel,
                                                         const TabularMdp& mdp) {
  const std::size_t n = kernel.n_states, ng = kernel.n_goals;
  StochasticHighPolicy out{n, ng, std::vector<double>(n * ng, 0.0)};
  for (StateIndex s = 0; s < n; ++s) {
    double total = 0.0;
    for (GoalIndex g = 0; g < ng; ++g) {
      double w = 0.0;
      for (GoalIndex src = 0; src < ng; ++src) w += kernel(s, src, mdp.state_of_goal[g]) * pi_star(s, src);
      out(s, g) = w;
      total += w;
    }
    for (GoalIndex g = 0; g < ng; ++g) out(s, g) /= total;
  }
  return out;
}

/// Suboptimality bound mu k R / (2(1-gamma)) + gamma mu k R / (2(1-gamma)^2).
inline double suboptimality_bound(double mu_k, std::size_t k, double r_max, double gamma) {
  const double base = mu_k * static_cast<double>(k) * r_max;
  return base / (2.0 * (1.0 - gamma)) + gamma * base / (2.0 * (1.0 - gamma) * (1.0 - gamma));
}

struct BoundReport {
  double mu_k = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::size_t n_states = 0;
  std::size_t k = 0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const BoundReport& r) {
  return {{"mu_k", r.mu_k}, {"gap", r.gap},           {"bound", r.bound}, {"pass", r.pass},
          {"n_states", r.n_states}, {"k", r.k}, {"gamma", r.gamma}, {"seed", r.seed}};
}

inline BoundReport theorem2_check(const TabularMdp& mdp, const HighLevelModel& model, std::uint64_t seed = 0) {
  BoundReport report;
  report.n_states = mdp.n_states;
  report.k = model.kernel.k;
  report.gamma = model.gamma;
  report.seed = seed;
  report.mu_k = transition_mismatch_rate(model.kernel, mdp);
  if (report.mu_k < kTieTolerance) report.mu_k = 0.0;  // composition roundoff
  const auto optimal = optimal_high_policy(model);
  const auto adj = adjacency_constrained_policy(optimal.policy, model.kernel, mdp);
  const auto v_adj = policy_evaluation_high(adj, model);
  for (StateIndex s = 0; s < mdp.n_states; ++s)
    report.gap = std::max(report.gap, std::abs(optimal.value[s] - v_adj[s]));
  report.bound = suboptimality_bound(report.mu_k, model.kernel.k, mdp.r_max, model.gamma);
  report.pass = report.gap <= report.bound + 1e-9;
  return report;
}

struct Theorem1Report {
  bool pass = true;
  std::size_t checked = 0;
  std::size_t surrogates = 0;  // subgoals actually replaced (k <= d_st)
  double max_q_diff = 0.0;
  std::vector<std::string> failures;
};

/// Finite-horizon high-level Q* by backward induction, Q_T = 0, rewards accumulated
/// along the k-step deterministic rollout. Indexed [t][s][g].
struct FiniteHorizonQ {
  std::size_t horizon = 0, n_states = 0, n_goals = 0;
  std::vector<double> q;
  double operator()(std::size_t t, StateIndex s, GoalIndex g) const { return q[(t * n_states + s) * n_goals + g]; }
};

inline FiniteHorizonQ finite_horizon_high_q(const TabularMdp& mdp, const GoalPolicy& pi_star, std::size_t k,
                                            std::size_t horizon) {
  const std::size_t n = mdp.n_states, ng = mdp.n_goals();
  std::vector<double> reward(n * ng);
  std::vector<StateIndex> landing(n * ng);
  for (StateIndex s = 0; s < n; ++s) {
    for (GoalIndex g = 0; g < ng; ++g) {
      const auto traj = deterministic_rollout(mdp, pi_star, s, g, k);
      double r = 0.0;
      for (std::size_t i = 0; i < k; ++i) r += mdp.r(traj[i], pi_star(traj[i], g), traj[i + 1]);
      reward[s * ng + g] = r;
      landing[s * ng + g] = traj.back();
    }
  }
  FiniteHorizonQ out{horizon, n, ng, std::vector<double>((horizon + 1) * n * ng, 0.0)};
  for (std::size_t t = horizon; t-- > 0;) {
    for (StateIndex s = 0; s < n; ++s) {
      for (GoalIndex g = 0; g < ng; ++g) {
        const StateIndex next = landing[s * ng + g];
        double best = 0.0;
        if (t + 1 < horizon) {
          best = -std::numeric_limits<double>::infinity();
          for (GoalIndex g2 = 0; g2 < ng; ++g2) best = std::max(best, out(t + 1, next, g2));
        }
        out.q[(t * n + s) * ng + g] = reward[s * ng + g] + mdp.gamma * best;
      }
    }
  }
  return out;
}

inline Theorem1Report theorem1_check(const TabularMdp& mdp, std::size_t k, std::size_t horizon) {
  if (!mdp.is_deterministic()) throw std::invalid_argument("rejected: deterministic only");
  const auto d = shortest_transition_distance(mdp);
  const auto pi_star = optimal_goal_policy(mdp, d);
  const auto q = finite_horizon_high_q(mdp, pi_star, k, horizon);
  const std::size_t ng = mdp.n_goals();
  Theorem1Report report;
  for (StateIndex start = 0; start < mdp.n_states; ++start) {
    StateIndex s = start;
    for (std::size_t t = 0; t < horizon; ++t) {
      GoalIndex g = 0;
      for (GoalIndex cand = 1; cand < ng; ++cand)
        if (q(t, s, cand) > q(t, s, g) + kTieTolerance) g = cand;
      GoalIndex surrogate = g;
      if (static_cast<double>(k) <= d(s, mdp.state_of_goal[g])) {
        surrogate = surrogate_goal_deterministic(mdp, pi_star, s, g, k);
        ++report.surrogates;
      }
      const double diff = std::abs(q(t, s, surrogate) - q(t, s, g));
      report.max_q_diff = std::max(report.max_q_diff, diff);
      ++report.checked;
      const bool adjacent = d(s, mdp.state_of_goal[surrogate]) <= static_cast<double>(k) + 1e-9;
      if (diff > 1e-9 || !adjacent) {
        report.pass = false;
        report.failures.push_back("start " + std::to_string(start) + " t " + std::to_string(t) + " diff " +
                                  std::to_string(diff));
      }
      s = deterministic_rollout(mdp, pi_star, s, g, k).back();
    }
  }
  return report;
}

struct Lemma1Report {
  bool pass = true;
  std::size_t checked = 0;
  std::vector<std::string> failures;
};

/// All valid (s, g, k): surrogate lies in G_A(s, k) and the first k optimal actions coincide.
inline Lemma1Report lemma1_check(const TabularMdp& mdp) {
  if (!mdp.is_deterministic()) throw std::invalid_argument("rejected: deterministic only");
  const auto d = shortest_transition_distance(mdp);
  const auto pi_star = optimal_goal_policy(mdp, d);
  Lemma1Report report;
  for (StateIndex s = 0; s < mdp.n_states; ++s) {
    for (GoalIndex g = 0; g < mdp.n_goals(); ++g) {
      const auto dist = static_cast<std::size_t>(std::llround(d(s, mdp.state_of_goal[g])));
      for (std::size_t k = 1; k <= dist; ++k) {
        const GoalIndex sur = surrogate_goal_deterministic(mdp, pi_star, s, g, k);
        const auto region = adjacent_region_avg(mdp, d, s, k);
        bool ok = std::binary_search(region.begin(), region.end(), sur);
        const auto traj = deterministic_rollout(mdp, pi_star, s, g, k);
        for (std::size_t i = 0; ok && i < k; ++i) ok = pi_star(traj[i], sur) == pi_star(traj[i], g);
        ++report.checked;
        if (!ok) {
          report.pass = false;
          report.failures.push_back("s " + std::to_string(s) + " g " + std::to_string(g) + " k " + std::to_string(k));
        }
      }
    }
  }
  return report;
}

}  // namespace hrac
