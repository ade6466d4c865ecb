#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hrac {

using StateIndex = std::size_t;
using GoalIndex = std::size_t;
using ActionIndex = std::size_t;

/// Finite goal-conditioned MDP. Tables are dense and row-major:
/// transition and reward_mean are indexed [state][action][next_state].
/// Goals and states share an index space through a bijection.
struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward_mean;
  double r_max = 1.0;
  double gamma = 0.9;
  std::vector<GoalIndex> goal_of_state;
  std::vector<StateIndex> state_of_goal;

  std::size_t index(StateIndex s, ActionIndex a, StateIndex next) const {
    return (s * n_actions + a) * n_states + next;
  }
  double p(StateIndex s, ActionIndex a, StateIndex next) const { return transition[index(s, a, next)]; }
  double r(StateIndex s, ActionIndex a, StateIndex next) const { return reward_mean[index(s, a, next)]; }

  std::size_t n_goals() const { return state_of_goal.size(); }

  bool is_deterministic() const {
    return std::all_of(transition.begin(), transition.end(), [](double v) { return v == 0.0 || v == 1.0; });
  }

  /// Allocates zeroed tables with identity goal maps.
  static TabularMdp zeros(std::size_t n_states, std::size_t n_actions, double r_max = 1.0, double gamma = 0.9) {
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.transition.assign(n_states * n_actions * n_states, 0.0);
    mdp.reward_mean.assign(n_states * n_actions * n_states, 0.0);
    mdp.r_max = r_max;
    mdp.gamma = gamma;
    mdp.goal_of_state.resize(n_states);
    mdp.state_of_goal.resize(n_states);
    for (std::size_t s = 0; s < n_states; ++s) {
      mdp.goal_of_state[s] = s;
      mdp.state_of_goal[s] = s;
    }
    return mdp;
  }
};

/// Non-negative weights over a finite support.
struct Distribution {
  std::vector<double> weights;

  double total() const {
    double t = 0.0;
    for (double w : weights) t += w;
    return t;
  }
  bool is_normalized(double tol = 1e-12) const {
    return std::all_of(weights.begin(), weights.end(), [](double w) { return w >= 0.0; }) &&
           std::abs(total() - 1.0) <= tol;
  }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

// Successor lists of the support graph: edge s -> s' iff some action reaches s' with p > 0.
inline std::vector<std::vector<StateIndex>> support_graph(const TabularMdp& mdp) {
  std::vector<std::vector<StateIndex>> adj(mdp.n_states);
  for (StateIndex s = 0; s < mdp.n_states; ++s) {
    for (StateIndex next = 0; next < mdp.n_states; ++next) {
      for (ActionIndex a = 0; a < mdp.n_actions; ++a) {
        if (mdp.p(s, a, next) > 0.0) {
          adj[s].push_back(next);
          break;
        }
      }
    }
  }
  return adj;
}

// Kosaraju: first pass records finish order, second pass labels components on the transpose.
inline std::size_t count_sccs(const std::vector<std::vector<StateIndex>>& adj) {
  const std::size_t n = adj.size();
  std::vector<std::vector<StateIndex>> rev(n);
  for (std::size_t u = 0; u < n; ++u)
    for (auto v : adj[u]) rev[v].push_back(u);

  std::vector<char> seen(n, 0);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t root = 0; root < n; ++root) {
    if (seen[root]) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    seen[root] = 1;
    while (!stack.empty()) {
      auto& [u, i] = stack.back();
      if (i < adj[u].size()) {
        auto v = adj[u][i++];
        if (!seen[v]) {
          seen[v] = 1;
          stack.emplace_back(v, 0);
        }
      } else {
        order.push_back(u);
        stack.pop_back();
      }
    }
  }

  std::vector<char> assigned(n, 0);
  std::size_t components = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (assigned[*it]) continue;
    ++components;
    std::vector<std::size_t> stack{*it};
    assigned[*it] = 1;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : rev[u]) {
        if (!assigned[v]) {
          assigned[v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  return components;
}

}  // namespace detail

inline ValidationReport validate(const TabularMdp& mdp) {
  ValidationReport report;
  const std::size_t table = mdp.n_states * mdp.n_actions * mdp.n_states;
  if (mdp.n_states == 0 || mdp.n_actions == 0) {
    report.violations.push_back("empty state or action set");
    return report;
  }
  if (mdp.transition.size() != table || mdp.reward_mean.size() != table) {
    report.violations.push_back("table shape mismatch");
    return report;
  }
  for (StateIndex s = 0; s < mdp.n_states; ++s) {
    for (ActionIndex a = 0; a < mdp.n_actions; ++a) {
      double sum = 0.0;
      bool negative = false;
      for (StateIndex next = 0; next < mdp.n_states; ++next) {
        double v = mdp.p(s, a, next);
        negative = negative || v < 0.0;
        sum += v;
      }
      if (negative || std::abs(sum - 1.0) > 1e-12) {
        report.violations.push_back("transition row sum: state " + std::to_string(s) + " action " +
                                    std::to_string(a) + " sums to " + std::to_string(sum));
      }
    }
  }
  if (!(mdp.r_max > 0.0)) report.violations.push_back("r_max must be positive");
  for (std::size_t i = 0; i < table; ++i) {
    if (mdp.reward_mean[i] < 0.0 || mdp.reward_mean[i] > mdp.r_max) {
      report.violations.push_back("reward out of [0, r_max] at flat index " + std::to_string(i));
      break;
    }
  }
  if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) report.violations.push_back("discount outside [0, 1)");

  bool maps_ok = mdp.goal_of_state.size() == mdp.n_states && mdp.state_of_goal.size() == mdp.n_states;
  for (StateIndex s = 0; maps_ok && s < mdp.n_states; ++s) {
    maps_ok = mdp.goal_of_state[s] < mdp.n_states && mdp.state_of_goal[mdp.goal_of_state[s]] == s &&
              mdp.state_of_goal[s] < mdp.n_states && mdp.goal_of_state[mdp.state_of_goal[s]] == s;
  }
  if (!maps_ok) report.violations.push_back("goal map is not a bijection");

  if (detail::count_sccs(detail::support_graph(mdp)) != 1) report.violations.push_back("not strongly connected");
  return report;
}

/// Seeded random communicating MDP. stochasticity = 0 gives one-hot rows;
/// otherwise each row is (1 - stochasticity) * one-hot + stochasticity * random distribution.
inline TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, std::uint64_t seed, double stochasticity,
                             double r_max = 1.0, double gamma = 0.9, int max_attempts = 10000) {
  if (n_states < 2 || n_actions < 1) throw std::invalid_argument("random_mdp: need n_states >= 2, n_actions >= 1");
  if (stochasticity < 0.0 || stochasticity > 1.0) throw std::invalid_argument("random_mdp: stochasticity in [0,1]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_state(0, n_states - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    TabularMdp mdp = TabularMdp::zeros(n_states, n_actions, r_max, gamma);
    for (StateIndex s = 0; s < n_states; ++s) {
      for (ActionIndex a = 0; a < n_actions; ++a) {
        std::vector<double> row(n_states, 0.0);
        row[pick_state(rng)] = 1.0;
        if (stochasticity > 0.0) {
          // sparse random mixture: each state kept with probability 1/2, at least one kept
          std::vector<double> mix(n_states, 0.0);
          double total = 0.0;
          for (auto& w : mix) {
            w = unit(rng) < 0.5 ? unit(rng) : 0.0;
            total += w;
          }
          if (total == 0.0) {
            mix[pick_state(rng)] = 1.0;
            total = 1.0;
          }
          for (StateIndex next = 0; next < n_states; ++next)
            row[next] = (1.0 - stochasticity) * row[next] + stochasticity * mix[next] / total;
          double sum = 0.0;
          for (double v : row) sum += v;
          for (auto& v : row) v /= sum;
        }
        for (StateIndex next = 0; next < n_states; ++next) {
          mdp.transition[mdp.index(s, a, next)] = row[next];
          mdp.reward_mean[mdp.index(s, a, next)] = r_max * unit(rng);
        }
      }
    }
    if (validate(mdp).ok()) return mdp;
  }
  throw std::runtime_error("random_mdp: no communicating MDP within " + std::to_string(max_attempts) + " attempts");
}

/// Relabels states (and goals, consistently) by a permutation: new index = perm[old index].
inline TabularMdp permute_states(const TabularMdp& mdp, const std::vector<StateIndex>& perm) {
  TabularMdp out = TabularMdp::zeros(mdp.n_states, mdp.n_actions, mdp.r_max, mdp.gamma);
  for (StateIndex s = 0; s < mdp.n_states; ++s)
    for (ActionIndex a = 0; a < mdp.n_actions; ++a)
      for (StateIndex next = 0; next < mdp.n_states; ++next) {
        out.transition[out.index(perm[s], a, perm[next])] = mdp.p(s, a, next);
        out.reward_mean[out.index(perm[s], a, perm[next])] = mdp.r(s, a, next);
      }
  for (StateIndex s = 0; s < mdp.n_states; ++s) {
    out.goal_of_state[perm[s]] = perm[mdp.goal_of_state[s]];
    out.state_of_goal[perm[mdp.goal_of_state[s]]] = perm[s];
  }
  return out;
}

// JSON form: n_states, n_actions, transition[s][a][s'], reward_mean[s][a][s'], r_max, gamma.
inline nlohmann::json to_json(const TabularMdp& mdp) {
  using nlohmann::json;
  json t = json::array(), r = json::array();
  for (StateIndex s = 0; s < mdp.n_states; ++s) {
    json ts = json::array(), rs = json::array();
    for (ActionIndex a = 0; a < mdp.n_actions; ++a) {
      json ta = json::array(), ra = json::array();
      for (StateIndex next = 0; next < mdp.n_states; ++next) {
        ta.push_back(mdp.p(s, a, next));
        ra.push_back(mdp.r(s, a, next));
      }
      ts.push_back(std::move(ta));
      rs.push_back(std::move(ra));
    }
    t.push_back(std::move(ts));
    r.push_back(std::move(rs));
  }
  return json{{"n_states", mdp.n_states}, {"n_actions", mdp.n_actions}, {"transition", t},
              {"reward_mean", r},         {"r_max", mdp.r_max},         {"gamma", mdp.gamma}};
}

inline TabularMdp mdp_from_json(const nlohmann::json& j) {
  const auto n = j.at("n_states").get<std::size_t>();
  const auto m = j.at("n_actions").get<std::size_t>();
  TabularMdp mdp = TabularMdp::zeros(n, m, j.at("r_max").get<double>(), j.at("gamma").get<double>());
  const auto& t = j.at("transition");
  const auto& r = j.at("reward_mean");
  if (t.size() != n || r.size() != n) throw std::invalid_argument("mdp json: outer dimension != n_states");
  for (StateIndex s = 0; s < n; ++s) {
    if (t[s].size() != m || r[s].size() != m) throw std::invalid_argument("mdp json: action dimension != n_actions");
    for (ActionIndex a = 0; a < m; ++a) {
      if (t[s][a].size() != n || r[s][a].size() != n)
        throw std::invalid_argument("mdp json: inner dimension != n_states");
      for (StateIndex next = 0; next < n; ++next) {
        mdp.transition[mdp.index(s, a, next)] = t[s][a][next].get<double>();
        mdp.reward_mean[mdp.index(s, a, next)] = r[s][a][next].get<double>();
      }
    }
  }
  return mdp;
}

inline void save_mdp(const TabularMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(mdp).dump(1) << '\n';
}

inline TabularMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return mdp_from_json(nlohmann::json::parse(in));
}

}  // namespace hrac
