#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdp.hpp"

namespace hrac {

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Absolute goal-space point in grid units.
struct Subgoal {
  double gx = 0.0;
  double gy = 0.0;
  bool operator==(const Subgoal&) const = default;
};

enum class Task { maze, keychest };

inline std::string to_string(Task task) { return task == Task::maze ? "maze" : "keychest"; }

inline Task parse_task(const std::string& name) {
  if (name == "maze") return Task::maze;
  if (name == "keychest") return Task::keychest;
  throw std::invalid_argument("env: unknown environment '" + name + "'");
}

enum Action : int { north = 0, south = 1, east = 2, west = 3 };
inline constexpr int kNumActions = 4;
inline constexpr std::array<Cell, kNumActions> kMoves{{{0, -1}, {0, 1}, {1, 0}, {-1, 0}}};

/// ASCII grid: '#' wall, '.' free, 'K' key, 'C' chest, 'G' goal, 'A' fixed spawn.
struct Layout {
  int width = 0;
  int height = 0;
  std::vector<char> wall;
  std::optional<Cell> key, chest, goal, spawn;

  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool is_wall(Cell c) const { return !inside(c) || wall[static_cast<std::size_t>(c.y * width + c.x)] != 0; }

  /// Free cells in row-major order.
  std::vector<Cell> free_cells() const {
    std::vector<Cell> out;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (!is_wall({x, y})) out.push_back({x, y});
    return out;
  }

  static Layout parse(const std::string& text) {
    Layout layout;
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) rows.push_back(line);
    }
    if (rows.empty()) throw std::invalid_argument("layout: empty");
    layout.height = static_cast<int>(rows.size());
    layout.width = static_cast<int>(rows.front().size());
    layout.wall.assign(static_cast<std::size_t>(layout.width * layout.height), 0);
    for (int y = 0; y < layout.height; ++y) {
      if (static_cast<int>(rows[y].size()) != layout.width)
        throw std::invalid_argument("layout: ragged row " + std::to_string(y));
      for (int x = 0; x < layout.width; ++x) {
        const char c = rows[y][x];
        const Cell cell{x, y};
        switch (c) {
          case '#': layout.wall[static_cast<std::size_t>(y * layout.width + x)] = 1; break;
          case '.': break;
          case 'K': layout.key = cell; break;
          case 'C': layout.chest = cell; break;
          case 'G': layout.goal = cell; break;
          case 'A': layout.spawn = cell; break;
          default: throw std::invalid_argument(std::string("layout: unknown symbol '") + c + "'");
        }
      }
    }
    return layout;
  }

  static Layout load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read layout " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Hop distances through free cells from `from`; -1 marks walls and unreachable cells.
  std::vector<int> hops_from(Cell from) const {
    std::vector<int> dist(static_cast<std::size_t>(width * height), -1);
    std::deque<Cell> queue{from};
    dist[static_cast<std::size_t>(from.y * width + from.x)] = 0;
    while (!queue.empty()) {
      const Cell u = queue.front();
      queue.pop_front();
      for (const Cell& m : kMoves) {
        const Cell v{u.x + m.x, u.y + m.y};
        if (is_wall(v)) continue;
        auto& dv = dist[static_cast<std::size_t>(v.y * width + v.x)];
        if (dv < 0) {
          dv = dist[static_cast<std::size_t>(u.y * width + u.x)] + 1;
          queue.push_back(v);
        }
      }
    }
    return dist;
  }

  bool connected() const {
    const auto cells = free_cells();
    if (cells.empty()) return false;
    const auto dist = hops_from(cells.front());
    for (const Cell& c : cells)
      if (dist[static_cast<std::size_t>(c.y * width + c.x)] < 0) return false;
    return true;
  }
};

// 13 x 17 layouts. Maze: winding corridors around a central goal; Key-Chest: three rooms.
inline constexpr const char* kMazeLayout =
    "#############\n"
    "#A....#.....#\n"
    "#.###.#.###.#\n"
    "#...#...#...#\n"
    "###.#####.###\n"
    "#.....#.....#\n"
    "#.###.#.###.#\n"
    "#.#.......#.#\n"
    "#.#.##G##.#.#\n"
    "#.#.......#.#\n"
    "#.###.#.###.#\n"
    "#.....#.....#\n"
    "###.#####.###\n"
    "#...#...#...#\n"
    "#.###.#.###.#\n"
    "#.....#.....#\n"
    "#############\n";

inline constexpr const char* kKeyChestLayout =
    "#############\n"
    "#...........#\n"
    "#.K.........#\n"
    "#...........#\n"
    "#...........#\n"
    "#####...#####\n"
    "#...........#\n"
    "#...........#\n"
    "#...........#\n"
    "#...........#\n"
    "#...........#\n"
    "#####...#####\n"
    "#...........#\n"
    "#...........#\n"
    "#.........C.#\n"
    "#...........#\n"
    "#############\n";

inline Layout default_layout(Task task) { return Layout::parse(task == Task::maze ? kMazeLayout : kKeyChestLayout); }

struct GridEnvState {
  int x = 0;
  int y = 0;
  bool has_key = false;
  int t = 0;
  Cell cell() const { return {x, y}; }
  bool operator==(const GridEnvState&) const = default;
};

struct StepResult {
  GridEnvState state;
  double reward = 0.0;
  bool done = false;      // episode over (terminal or time limit)
  bool terminal = false;  // task solved; no bootstrapping past this step
};

inline Subgoal goal_of(const GridEnvState& s) { return {static_cast<double>(s.x), static_cast<double>(s.y)}; }

/// Nearest cell, rounding half up.
inline Cell cell_of(const Subgoal& g) {
  return {static_cast<int>(std::floor(g.gx + 0.5)), static_cast<int>(std::floor(g.gy + 0.5))};
}

/// Goal transition h(g, s, s') = g + phi(s) - phi(s') on directional subgoals.
inline Subgoal directional_transition(const Subgoal& g_dir, const GridEnvState& prev, const GridEnvState& now) {
  return {g_dir.gx + prev.x - now.x, g_dir.gy + prev.y - now.y};
}

/// Same transition on absolute storage: the identity.
inline Subgoal subgoal_transition(const Subgoal& g_abs, const GridEnvState& /*prev*/, const GridEnvState& /*now*/) {
  return g_abs;
}

inline Subgoal to_directional(const Subgoal& g_abs, const GridEnvState& s) { return {g_abs.gx - s.x, g_abs.gy - s.y}; }

struct GridEnvConfig {
  Task task = Task::maze;
  double random_action_prob = 0.25;
  int episode_limit = 0;  // 0 selects 200 for Maze, 500 for Key-Chest
};

class GridEnv {
 public:
  explicit GridEnv(GridEnvConfig config, std::optional<Layout> layout = std::nullopt, std::uint64_t seed = 0)
      : config_(config), layout_(layout ? std::move(*layout) : default_layout(config.task)), rng_(seed) {
    if (config_.episode_limit <= 0) config_.episode_limit = config_.task == Task::maze ? 200 : 500;
    if (!layout_.connected()) throw std::invalid_argument("layout: free cells are not connected");
    if (config_.task == Task::maze) {
      if (!layout_.goal || !layout_.spawn) throw std::invalid_argument("maze layout needs 'G' and 'A'");
      goal_hops_ = layout_.hops_from(*layout_.goal);
    } else {
      if (!layout_.key || !layout_.chest) throw std::invalid_argument("keychest layout needs 'K' and 'C'");
      for (const Cell& c : layout_.free_cells())
        if (c != *layout_.key && c != *layout_.chest) spawn_cells_.push_back(c);
    }
  }

  const Layout& layout() const { return layout_; }
  const GridEnvConfig& config() const { return config_; }
  Task task() const { return config_.task; }
  const GridEnvState& state() const { return state_; }
  bool done() const { return done_; }

  void seed(std::uint64_t seed) { rng_.seed(seed); }

  GridEnvState reset(std::uint64_t seed) {
    rng_.seed(seed);
    return reset();
  }

  GridEnvState reset() {
    state_ = {};
    done_ = false;
    Cell start;
    if (config_.task == Task::maze) {
      start = *layout_.spawn;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, spawn_cells_.size() - 1);
      start = spawn_cells_[pick(rng_)];
    }
    state_.x = start.x;
    state_.y = start.y;
    return state_;
  }

  StepResult step(int action) {
    if (done_) throw std::logic_error("step called on a finished episode");
    if (action < 0 || action >= kNumActions) throw std::invalid_argument("step: action out of range");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (config_.random_action_prob > 0.0 && unit(rng_) < config_.random_action_prob) {
      std::uniform_int_distribution<int> pick(0, kNumActions - 1);
      action = pick(rng_);
    }
    StepResult result;
    const GridEnvState prev = state_;
    state_ = move(prev, action);
    state_.t = prev.t + 1;
    result.reward = transition_reward(prev, state_);
    result.terminal = is_terminal(prev, state_);
    done_ = result.terminal || state_.t >= config_.episode_limit;
    result.done = done_;
    result.state = state_;
    return result;
  }

  /// Deterministic effect of an action, including key pickup.
  GridEnvState move(const GridEnvState& s, int action) const {
    GridEnvState out = s;
    const Cell target{s.x + kMoves[static_cast<std::size_t>(action)].x, s.y + kMoves[static_cast<std::size_t>(action)].y};
    if (!layout_.is_wall(target)) {
      out.x = target.x;
      out.y = target.y;
    }
    if (config_.task == Task::keychest && !out.has_key && out.cell() == *layout_.key) out.has_key = true;
    return out;
  }

  /// Reward of a transition prev -> next (next produced by move()).
  double transition_reward(const GridEnvState& prev, const GridEnvState& next) const {
    if (config_.task == Task::maze) {
      const int before = goal_hops(prev.cell()), after = goal_hops(next.cell());
      if (after < before) return 0.1;
      if (after > before) return -0.1;
      return 0.0;
    }
    double r = 0.0;
    if (!prev.has_key && next.has_key) r += 1.0;
    if (prev.has_key && next.cell() == *layout_.chest) r += 5.0;
    return r;
  }

  bool is_terminal(const GridEnvState& prev, const GridEnvState& next) const {
    if (config_.task == Task::maze) return next.cell() == *layout_.goal;
    return prev.has_key && next.cell() == *layout_.chest;
  }

  int goal_hops(Cell c) const { return goal_hops_[static_cast<std::size_t>(c.y * layout_.width + c.x)]; }

  /// Network input features of a state, scaled to roughly [0, 1].
  std::vector<float> features(const GridEnvState& s) const {
    std::vector<float> f{static_cast<float>(s.x) / static_cast<float>(layout_.width - 1),
                         static_cast<float>(s.y) / static_cast<float>(layout_.height - 1)};
    if (config_.task == Task::keychest) f.push_back(s.has_key ? 1.0f : 0.0f);
    return f;
  }
  std::size_t feature_dim() const { return config_.task == Task::keychest ? 3 : 2; }

 private:
  GridEnvConfig config_;
  Layout layout_;
  std::mt19937_64 rng_;
  GridEnvState state_{};
  bool done_ = true;
  std::vector<int> goal_hops_;
  std::vector<Cell> spawn_cells_;
};

/// Tabular export: one state per (free cell[, key bit]), row-major, key-less block first.
struct ExportedGrid {
  TabularMdp mdp;
  std::vector<GridEnvState> states;
  int width = 0;
  int height = 0;
  std::vector<std::size_t> lookup;  // ((has_key * height) + y) * width + x -> state index, or max()

  std::size_t index_of(Cell c, bool has_key = false) const {
    return lookup[static_cast<std::size_t>(((has_key ? 1 : 0) * height + c.y) * width + c.x)];
  }
};

// Maze rewards are shifted by +0.1 into [0, 0.2]; Key-Chest rewards are already in [0, 5].
// Terminal cells are not absorbing: the export describes dynamics only.
inline ExportedGrid export_tabular(const GridEnv& env) {
  const Layout& layout = env.layout();
  const bool with_key = env.task() == Task::keychest;
  ExportedGrid out;
  out.width = layout.width;
  out.height = layout.height;
  out.lookup.assign(static_cast<std::size_t>(2 * layout.width * layout.height), std::numeric_limits<std::size_t>::max());
  for (int key = 0; key < (with_key ? 2 : 1); ++key) {
    for (const Cell& c : layout.free_cells()) {
      GridEnvState s;
      s.x = c.x;
      s.y = c.y;
      s.has_key = key != 0;
      if (with_key && !s.has_key && c == *layout.key) continue;  // key cell always carries the key
      out.lookup[static_cast<std::size_t>((key * layout.height + c.y) * layout.width + c.x)] = out.states.size();
      out.states.push_back(s);
    }
  }
  const std::size_t n = out.states.size();
  const double shift = with_key ? 0.0 : 0.1;
  out.mdp = TabularMdp::zeros(n, kNumActions, with_key ? 5.0 : 0.2, 0.99);
  const double p_rand = env.config().random_action_prob;
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < kNumActions; ++a) {
      for (int b = 0; b < kNumActions; ++b) {
        const double w = (a == b ? 1.0 - p_rand : 0.0) + p_rand / kNumActions;
        if (w == 0.0) continue;
        const GridEnvState next = env.move(out.states[i], b);
        const std::size_t j = out.index_of(next.cell(), next.has_key);
        const std::size_t flat = out.mdp.index(i, static_cast<ActionIndex>(a), j);
        out.mdp.transition[flat] += w;
        out.mdp.reward_mean[flat] = env.transition_reward(out.states[i], next) + shift;
      }
    }
  }
  return out;
}

/// Position-only dynamics of a layout with zero rewards: the goal-space MDP behind oracle adjacency labels.
inline ExportedGrid export_navigation(const Layout& layout, double random_action_prob) {
  ExportedGrid out;
  out.width = layout.width;
  out.height = layout.height;
  out.lookup.assign(static_cast<std::size_t>(2 * layout.width * layout.height), std::numeric_limits<std::size_t>::max());
  for (const Cell& c : layout.free_cells()) {
    out.lookup[static_cast<std::size_t>(c.y * layout.width + c.x)] = out.states.size();
    out.states.push_back({c.x, c.y, false, 0});
  }
  const std::size_t n = out.states.size();
  out.mdp = TabularMdp::zeros(n, kNumActions, 1.0, 0.99);
  for (std::size_t i = 0; i < n; ++i) {
    const Cell c = out.states[i].cell();
    for (int a = 0; a < kNumActions; ++a) {
      for (int b = 0; b < kNumActions; ++b) {
        const double w = (a == b ? 1.0 - random_action_prob : 0.0) + random_action_prob / kNumActions;
        Cell target{c.x + kMoves[static_cast<std::size_t>(b)].x, c.y + kMoves[static_cast<std::size_t>(b)].y};
        if (layout.is_wall(target)) target = c;
        out.mdp.transition[out.mdp.index(i, static_cast<ActionIndex>(a), out.index_of(target))] += w;
      }
    }
  }
  return out;
}

}  // namespace hrac
