#pragma once

#include <utility>
#include <vector>

#include "hrac/mdp.hpp"

namespace hrac_test {

// Deterministic MDP from a successor table succ[s][a].
inline hrac::TabularMdp deterministic(const std::vector<std::vector<std::size_t>>& succ, double gamma = 0.9) {
  auto mdp = hrac::TabularMdp::zeros(succ.size(), succ.front().size(), 1.0, gamma);
  for (std::size_t s = 0; s < succ.size(); ++s)
    for (std::size_t a = 0; a < succ[s].size(); ++a) mdp.transition[mdp.index(s, a, succ[s][a])] = 1.0;
  return mdp;
}

// s0 -> s1 -> s2 -> s0 with a single action.
inline hrac::TabularMdp chain3() { return deterministic({{1}, {2}, {0}}); }

// One action: s0 reaches s1 w.p. p, else stays; s1 returns to s0.
inline hrac::TabularMdp geometric(double p) {
  auto mdp = hrac::TabularMdp::zeros(2, 1);
  mdp.transition[mdp.index(0, 0, 1)] = p;
  mdp.transition[mdp.index(0, 0, 0)] = 1.0 - p;
  mdp.transition[mdp.index(1, 0, 0)] = 1.0;
  return mdp;
}

// Oracle: breadth-first hop counts over the union-of-actions support graph.
inline std::vector<std::size_t> bfs_oracle(const hrac::TabularMdp& mdp, std::size_t from) {
  const std::size_t inf = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(mdp.n_states, inf);
  std::vector<std::size_t> frontier{from};
  dist[from] = 0;
  for (std::size_t depth = 1; !frontier.empty(); ++depth) {
    std::vector<std::size_t> next;
    for (std::size_t u : frontier)
      for (std::size_t a = 0; a < mdp.n_actions; ++a)
        for (std::size_t v = 0; v < mdp.n_states; ++v)
          if (mdp.p(u, a, v) > 0.0 && dist[v] == inf) {
            dist[v] = depth;
            next.push_back(v);
          }
    frontier = std::move(next);
  }
  return dist;
}

}  // namespace hrac_test
