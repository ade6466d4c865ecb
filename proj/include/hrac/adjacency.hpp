#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "exact_analysis.hpp"
#include "grid_env.hpp"
#include "json.hpp"
#include "nn.hpp"

namespace hrac {

/// Goal-space trajectories gathered since the last matrix update.
class TrajectoryBuffer {
 public:
  void record(std::vector<Cell> episode) {
    if (!episode.empty()) episodes_.push_back(std::move(episode));
  }
  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  const std::vector<std::vector<Cell>>& episodes() const { return episodes_; }
  void clear() { episodes_.clear(); }

 private:
  std::vector<std::vector<Cell>> episodes_;
};

/// Growable symmetric binary k-step adjacency over discovered goal cells.
class AdjacencyMatrix {
 public:
  explicit AdjacencyMatrix(int k = 10) : k_(k) {
    if (k < 1) throw std::invalid_argument("adjacency: k >= 1");
  }

  int k() const { return k_; }
  std::size_t size() const { return cells_.size(); }
  const std::vector<Cell>& cells() const { return cells_; }

  std::size_t add_cell(Cell c) {
    auto [it, inserted] = index_.emplace(c, cells_.size());
    if (inserted) {
      cells_.push_back(c);
      for (auto& row : adj_) row.push_back(0);
      adj_.emplace_back(cells_.size(), 0);
      adj_.back().back() = 1;
    }
    return it->second;
  }

  std::optional<std::size_t> find(Cell c) const {
    auto it = index_.find(c);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator()(std::size_t i, std::size_t j) const { return adj_[i][j] != 0; }
  bool adjacent(Cell a, Cell b) const {
    auto i = find(a), j = find(b);
    return i && j && adj_[*i][*j] != 0;
  }
  void set(std::size_t i, std::size_t j) {
    adj_[i][j] = 1;
    adj_[j][i] = 1;
  }

  /// Registers new cells, marks every within-episode pair at temporal gap <= k, then clears the buffer.
  void update(TrajectoryBuffer& buffer) {
    std::vector<std::size_t> ids;
    for (const auto& episode : buffer.episodes()) {
      ids.clear();
      for (const Cell& c : episode) ids.push_back(add_cell(c));
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size() && j - i <= static_cast<std::size_t>(k_); ++j) set(ids[i], ids[j]);
    }
    buffer.clear();
  }

  std::size_t count_ones() const {
    std::size_t n = 0;
    for (const auto& row : adj_)
      for (char v : row) n += v != 0;
    return n;
  }

  double density() const { return cells_.empty() ? 0.0 : static_cast<double>(count_ones()) / (size() * size()); }

  /// Text export: "cell <index> <x> <y>" lines, then "<row> <col>" for each 1 entry.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "# k " << k_ << "\n";
    for (std::size_t i = 0; i < cells_.size(); ++i) out << "cell " << i << " " << cells_[i].x << " " << cells_[i].y << "\n";
    for (std::size_t i = 0; i < cells_.size(); ++i)
      for (std::size_t j = 0; j < cells_.size(); ++j)
        if (adj_[i][j]) out << i << " " << j << "\n";
  }

 private:
  int k_;
  std::map<Cell, std::size_t> index_;
  std::vector<Cell> cells_;
  std::vector<std::vector<char>> adj_;
};

/// Perfect matrix over all free cells: 1 iff the expected shortest transition distance is <= k both ways.
inline AdjacencyMatrix oracle_matrix(const ExportedGrid& nav, const DistanceMatrix& d, int k) {
  AdjacencyMatrix m(k);
  for (const auto& s : nav.states) m.add_cell(s.cell());
  for (std::size_t i = 0; i < nav.states.size(); ++i)
    for (std::size_t j = i + 1; j < nav.states.size(); ++j)
      if (std::max(d(i, j), d(j, i)) <= k + 1e-9) m.set(i, j);
  return m;
}

struct LabeledPair {
  Cell a;
  Cell b;
  float label = 0.0f;
};

/// Seeded 10% hold-out over unordered cell pairs (i < j) of a matrix.
class PairSplit {
 public:
  PairSplit() = default;
  PairSplit(std::size_t n_cells, double fraction, std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t i = 0; i < n_cells; ++i)
      for (std::size_t j = i + 1; j < n_cells; ++j) all.emplace_back(i, j);
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(all.size()))));
    held_out_.assign(all.begin(), all.end());
    lookup_.insert(all.begin(), all.end());
  }
  bool held_out(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return lookup_.count({i, j}) != 0;
  }
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return held_out_; }
  bool empty() const { return held_out_.empty(); }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> held_out_;
  std::set<std::pair<std::size_t, std::size_t>> lookup_;
};

/// Uniform pairs over registered cells, labelled by the matrix; pairs in `exclude` are redrawn.
inline std::vector<LabeledPair> sample_training_pairs(const AdjacencyMatrix& m, std::size_t batch, std::mt19937_64& rng,
                                                      const PairSplit* exclude = nullptr) {
  if (m.size() == 0) throw std::invalid_argument("sample_training_pairs: empty matrix");
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
  std::vector<LabeledPair> out;
  out.reserve(batch);
  while (out.size() < batch) {
    const std::size_t i = pick(rng), j = pick(rng);
    if (exclude != nullptr && exclude->held_out(i, j)) continue;
    out.push_back({m.cells()[i], m.cells()[j], m(i, j) ? 1.0f : 0.0f});
  }
  return out;
}

/// Trajectory-pair sampler without a matrix: gap <= k positive, gap >= multiplier * k negative,
/// gaps in between skipped.
inline std::vector<LabeledPair> sample_pairs_noadj(const std::vector<std::vector<Cell>>& episodes, std::size_t batch,
                                                   int k, std::mt19937_64& rng, int multiplier = 4) {
  std::vector<std::size_t> usable;
  std::vector<double> weight;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].empty()) continue;
    usable.push_back(e);
    weight.push_back(static_cast<double>(episodes[e].size()));
  }
  if (usable.empty()) throw std::invalid_argument("sample_pairs_noadj: empty buffer");
  std::discrete_distribution<std::size_t> pick_episode(weight.begin(), weight.end());
  std::vector<LabeledPair> out;
  out.reserve(batch);
  std::size_t attempts = 0;
  while (out.size() < batch) {
    if (++attempts > 1000 * batch + 10000) throw std::runtime_error("sample_pairs_noadj: no usable pairs");
    const auto& ep = episodes[usable[pick_episode(rng)]];
    std::uniform_int_distribution<std::size_t> pick(0, ep.size() - 1);
    const std::size_t i = pick(rng), j = pick(rng);
    const std::size_t gap = i > j ? i - j : j - i;
    if (gap <= static_cast<std::size_t>(k))
      out.push_back({ep[i], ep[j], 1.0f});
    else if (gap >= static_cast<std::size_t>(multiplier * k))
      out.push_back({ep[i], ep[j], 0.0f});
  }
  return out;
}

template <typename Scalar>
struct ContrastiveResult {
  Scalar loss = 0;
  nn::Gradients<Scalar> grads;
};

/// Mean hinge loss l * max(D - eps, 0) + (1 - l) * max(eps + delta - D, 0), D the embedding distance.
/// Inputs are 2 x B matrices of (already scaled) goal points.
template <typename Scalar>
ContrastiveResult<Scalar> contrastive_loss(const nn::Mlp<Scalar>& net, const nn::Matrix<Scalar>& a,
                                           const nn::Matrix<Scalar>& b, const std::vector<Scalar>& labels,
                                           Scalar eps, Scalar delta) {
  const Eigen::Index batch = a.cols();
  nn::Matrix<Scalar> both(a.rows(), 2 * batch);
  both << a, b;
  auto tape = net.forward_tape(both);
  const auto& out = tape.output;
  nn::Matrix<Scalar> d_out = nn::Matrix<Scalar>::Zero(out.rows(), out.cols());
  ContrastiveResult<Scalar> result;
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const nn::Vector<Scalar> diff = out.col(i) - out.col(batch + i);
    const Scalar dist = diff.norm();
    const Scalar l = labels[static_cast<std::size_t>(i)];
    Scalar slope = 0;
    if (dist > eps) {
      result.loss += l * (dist - eps);
      slope += l;
    }
    if (dist < eps + delta) {
      result.loss += (1 - l) * (eps + delta - dist);
      slope -= 1 - l;
    }
    if (dist > Scalar(0) && slope != Scalar(0)) {
      const nn::Vector<Scalar> g = (slope * inv_batch / dist) * diff;
      d_out.col(i) += g;
      d_out.col(batch + i) -= g;
    }
  }
  result.loss *= inv_batch;
  result.grads = net.backward(tape, d_out);
  return result;
}

struct AdjacencyTrainStats {
  std::size_t steps = 0;
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
};

/// Embedding psi over goal points; its scaled Euclidean distance approximates d_st.
class AdjacencyNetwork {
 public:
  static constexpr std::size_t kEmbeddingDim = 32;

  AdjacencyNetwork() = default;
  AdjacencyNetwork(int k, std::uint64_t seed, double lr = 2e-4, float eps_k = 1.0f, float delta = 0.2f,
                   float input_scale = 0.1f)
      : k_(k), eps_k_(eps_k), delta_(delta), input_scale_(input_scale) {
    std::mt19937_64 rng(seed);
    net_ = nn::Mlp<float>({2, 128, 128, 128, kEmbeddingDim}, nn::Activation::identity, rng);
    opt_ = nn::Adam<float>(net_, lr);
  }

  int k() const { return k_; }
  float eps_k() const { return eps_k_; }
  float delta() const { return delta_; }
  float input_scale() const { return input_scale_; }
  const nn::Mlp<float>& net() const { return net_; }
  nn::Mlp<float>& net() { return net_; }
  nn::Adam<float>& optimizer() { return opt_; }

  /// Goal points (2 x B, grid units) to network inputs.
  nn::Matrix<float> inputs(const nn::Matrix<float>& goals) const { return goals * input_scale_; }

  nn::Matrix<float> embed(const nn::Matrix<float>& goals) const { return net_.forward(inputs(goals)); }

  float embedding_distance(const Subgoal& a, const Subgoal& b) const {
    nn::Matrix<float> g(2, 2);
    g << static_cast<float>(a.gx), static_cast<float>(b.gx), static_cast<float>(a.gy), static_cast<float>(b.gy);
    const auto e = embed(g);
    return (e.col(0) - e.col(1)).norm();
  }

  /// (k / eps_k) * ||psi(a) - psi(b)||
  double distance(const Subgoal& a, const Subgoal& b) const {
    return static_cast<double>(k_) / eps_k_ * embedding_distance(a, b);
  }

  bool judges_adjacent(const Subgoal& a, const Subgoal& b) const { return embedding_distance(a, b) <= eps_k_; }

  /// One optimizer step on a labelled batch; returns the batch loss.
  float train_step(const std::vector<LabeledPair>& pairs) {
    auto [a, b, labels] = pack(pairs);
    auto res = contrastive_loss<float>(net_, inputs(a), inputs(b), labels, eps_k_, delta_);
    opt_.step(net_, res.grads);
    return res.loss;
  }

  float loss(const std::vector<LabeledPair>& pairs) const {
    if (pairs.empty()) return 0.0f;
    auto [a, b, labels] = pack(pairs);
    return contrastive_loss<float>(net_, inputs(a), inputs(b), labels, eps_k_, delta_).loss;
  }

  /// Fraction of pairs whose embedding-distance verdict (<= eps_k) matches the label.
  double accuracy(const std::vector<LabeledPair>& pairs) const {
    if (pairs.empty()) return 1.0;
    auto [a, b, labels] = pack(pairs);
    const auto ea = embed(a), eb = embed(b);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const bool close = (ea.col(static_cast<Eigen::Index>(i)) - eb.col(static_cast<Eigen::Index>(i))).norm() <= eps_k_;
      correct += close == (labels[i] > 0.5f);
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
  }

  static std::tuple<nn::Matrix<float>, nn::Matrix<float>, std::vector<float>> pack(const std::vector<LabeledPair>& pairs) {
    const auto n = static_cast<Eigen::Index>(pairs.size());
    nn::Matrix<float> a(2, n), b(2, n);
    std::vector<float> labels(pairs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& p = pairs[static_cast<std::size_t>(i)];
      a(0, i) = static_cast<float>(p.a.x);
      a(1, i) = static_cast<float>(p.a.y);
      b(0, i) = static_cast<float>(p.b.x);
      b(1, i) = static_cast<float>(p.b.y);
      labels[static_cast<std::size_t>(i)] = p.label;
    }
    return {a, b, labels};
  }

  nlohmann::json to_json() const {
    return {{"format", "hrac-adjacency-v1"}, {"k", k_},     {"eps_k", eps_k_}, {"delta", delta_},
            {"input_scale", input_scale_},  {"net", nn::to_json(net_)}};
  }

  static AdjacencyNetwork from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "hrac-adjacency-v1") throw std::invalid_argument("checkpoint: not an adjacency network");
    AdjacencyNetwork psi;
    psi.k_ = j.at("k").get<int>();
    psi.eps_k_ = j.at("eps_k").get<float>();
    psi.delta_ = j.at("delta").get<float>();
    psi.input_scale_ = j.at("input_scale").get<float>();
    psi.net_ = nn::mlp_from_json<float>(j.at("net"));
    psi.opt_ = nn::Adam<float>(psi.net_, 2e-4);
    return psi;
  }

 private:
  int k_ = 10;
  float eps_k_ = 1.0f;
  float delta_ = 0.2f;
  float input_scale_ = 0.1f;
  nn::Mlp<float> net_;
  nn::Adam<float> opt_;
};

/// Optimizer steps per epoch: one pass over the n^2 ordered cell pairs in batches.
inline std::size_t steps_per_epoch(std::size_t n_cells, std::size_t batch) {
  return std::max<std::size_t>(1, (n_cells * n_cells + batch - 1) / batch);
}

/// Held-out pairs of a split, labelled by the matrix.
inline std::vector<LabeledPair> held_out_pairs(const AdjacencyMatrix& m, const PairSplit& split) {
  std::vector<LabeledPair> out;
  for (auto [i, j] : split.pairs()) out.push_back({m.cells()[i], m.cells()[j], m(i, j) ? 1.0f : 0.0f});
  return out;
}

inline AdjacencyTrainStats train_adjacency(AdjacencyNetwork& psi, const AdjacencyMatrix& m, std::size_t epochs,
                                           std::size_t batch, std::mt19937_64& rng, const PairSplit* split = nullptr) {
  if (m.size() == 0) throw std::invalid_argument("train_adjacency: empty matrix");
  AdjacencyTrainStats stats;
  const auto held = split ? held_out_pairs(m, *split) : std::vector<LabeledPair>{};
  stats.initial_heldout_loss = psi.loss(held);
  const std::size_t steps = epochs * steps_per_epoch(m.size(), batch);
  for (std::size_t i = 0; i < steps; ++i) psi.train_step(sample_training_pairs(m, batch, rng, split));
  stats.steps = steps;
  stats.final_heldout_loss = psi.loss(held);
  return stats;
}

/// Trajectory-pair training for the ablation without a matrix.
inline AdjacencyTrainStats train_adjacency_noadj(AdjacencyNetwork& psi, const std::vector<std::vector<Cell>>& episodes,
                                                 std::size_t n_cells, std::size_t epochs, std::size_t batch,
                                                 std::mt19937_64& rng) {
  AdjacencyTrainStats stats;
  const std::size_t steps = epochs * steps_per_epoch(n_cells, batch);
  for (std::size_t i = 0; i < steps; ++i) psi.train_step(sample_pairs_noadj(episodes, batch, psi.k(), rng));
  stats.steps = steps;
  return stats;
}

/// One row per free cell: scaled embedding distance from the probe.
inline void write_heatmap(const AdjacencyNetwork& psi, const Layout& layout, Cell probe, const std::string& path) {
  if (layout.is_wall(probe)) throw std::invalid_argument("heatmap: probe cell is a wall or outside the layout");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "x,y,distance\n";
  const Subgoal p{static_cast<double>(probe.x), static_cast<double>(probe.y)};
  for (const Cell& c : layout.free_cells())
    out << c.x << "," << c.y << "," << psi.distance(p, {static_cast<double>(c.x), static_cast<double>(c.y)}) << "\n";
}

struct SoundnessReport {
  std::size_t ones = 0;              // off-diagonal 1 entries checked
  std::size_t violations = 0;        // 1 entries with oracle d_st > k
  std::size_t hop_violations = 0;    // 1 entries outside the maximal k-step region
  std::size_t oracle_adjacent = 0;   // visited pairs with oracle d_st <= k
  std::size_t covered = 0;           // of those, labelled 1
  double max_violating_distance = 0.0;
  double coverage() const { return oracle_adjacent == 0 ? 1.0 : static_cast<double>(covered) / oracle_adjacent; }
};

/// Compares a learned matrix against the navigation MDP oracle over visited cells.
inline SoundnessReport check_soundness(const AdjacencyMatrix& m, const ExportedGrid& nav, const DistanceMatrix& d) {
  SoundnessReport r;
  std::vector<std::size_t> state(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) state[i] = nav.index_of(m.cells()[i]);
  std::vector<std::vector<std::size_t>> hops;
  for (std::size_t i = 0; i < m.size(); ++i) hops.push_back(bfs_hops(nav.mdp, state[i]));
  const double k = m.k();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) continue;
      const double dij = d(state[i], state[j]);
      if (m(i, j)) {
        ++r.ones;
        if (dij > k + 1e-9) {
          ++r.violations;
          r.max_violating_distance = std::max(r.max_violating_distance, dij);
        }
        if (hops[i][state[j]] > static_cast<std::size_t>(m.k())) ++r.hop_violations;
      }
      if (dij <= k + 1e-9) {
        ++r.oracle_adjacent;
        r.covered += m(i, j);
      }
    }
  }
  return r;
}

}  // namespace hrac
