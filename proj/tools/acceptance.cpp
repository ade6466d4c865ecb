#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "hrac/experiment.hpp"
#include "hrac/gradcheck.hpp"

using namespace hrac;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t passed(const VerifyOutcome& v) { return v.report.at("aggregate").at("passed").get<std::size_t>(); }
std::size_t total(const VerifyOutcome& v) { return v.report.at("aggregate").at("instances").get<std::size_t>(); }

// ---------------------------------------------------------------------------

void theory_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto lemma = verify_lemma1(100, 0);
  report(lemma.pass, "theory/lemma1 sweep", fmt("%.0f/%.0f deterministic instances pass", passed(lemma), total(lemma)));

  const auto th1 = verify_theorem1(50, 0);
  double max_diff = 0;
  for (const auto& i : th1.report.at("instances")) max_diff = std::max(max_diff, i.at("max_q_diff").get<double>());
  report(th1.pass, "theory/theorem1 sweep", fmt("%.0f/%.0f instances, max |dQ| = %.2e (tol 1e-9)", passed(th1), total(th1), max_diff));

  const auto th2 = verify_theorem2(100, 0);
  std::size_t zero_cases = 0, zero_ok = 0, stochastic = 0, stochastic_ok = 0;
  for (const auto& i : th2.report.at("instances")) {
    if (i.at("kind") == "stochastic") {
      ++stochastic;
      stochastic_ok += i.at("pass").get<bool>();
    }
    if (i.at("mu_k").get<double>() < 1e-12) {
      ++zero_cases;
      zero_ok += i.at("zero_mismatch_ok").get<bool>();
    }
  }
  report(stochastic_ok == stochastic && stochastic == 100, "theory/theorem2 bound sweep",
         fmt("%.0f/%.0f stochastic instances satisfy gap <= bound + 1e-9", stochastic_ok, stochastic));
  report(zero_ok == zero_cases && zero_cases > 0, "theory/theorem2 zero-mismatch clause",
         fmt("%.0f/%.0f instances with mu_k < 1e-12 have gap = 0 and bound = 0", zero_ok, zero_cases));

  const auto dist = verify_distance(100, 0);
  bool bfs = true, tri = true, geo = true, incl = true, eq = true;
  for (const auto& i : dist.report.at("instances")) {
    if (i.at("instance") == "geometric") {
      geo = geo && i.at("pass").get<bool>();
      continue;
    }
    bfs = bfs && i.at("bfs_exact").get<bool>();
    tri = tri && i.at("triangle").get<bool>();
    incl = incl && i.at("region_inclusion").get<bool>();
    eq = eq && i.at("region_equality").get<bool>();
  }
  report(bfs, "theory/distance BFS agreement", "exact on 100 deterministic instances");
  report(tri, "theory/distance triangle inequality", "within 1e-9 on 200 instances");
  report(geo, "theory/distance geometric example", "d = 1/p within 1e-8 for p in {0.1, 0.25, 0.5, 1}");
  report(incl && eq, "theory/adjacent regions", std::string("G_A within G_AM on all instances: ") + (incl ? "yes" : "no") +
                                                    ", equal on deterministic: " + (eq ? "yes" : "no"));
  const double elapsed = seconds_since(t0);
  report(elapsed < 120.0, "theory/runtime", fmt("%.1f s (limit 120 s)", elapsed));
}

// ---------------------------------------------------------------------------

nn::Matrix<double> gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nn::Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double gradient_checks() {
  using nn::Mlp;
  using nn::Activation;
  using gradcheck::check_parameter_gradients;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  Mlp<double> psi({2, 128, 128, 128, 32}, Activation::identity, rng);
  {
    const auto a = gaussian(2, 8, rng), b = gaussian(2, 8, rng);
    const std::vector<double> labels{1, 0, 1, 0, 1, 0, 1, 0};
    const double eps = 0.5 * ((psi.forward(a) - psi.forward(b)).colwise().norm().mean());
    const auto r = contrastive_loss<double>(psi, a, b, labels, eps, 0.2);
    track(check_parameter_gradients(psi, [&](const Mlp<double>& m) { return contrastive_loss<double>(m, a, b, labels, eps, 0.2).loss; },
                                    r.grads, 400, 1, 1e-6).max_rel_error);
  }
  for (std::size_t sd : {2u, 3u}) {
    Mlp<double> actor({sd, 300, 300, 2}, Activation::tanh, rng);
    Mlp<double> critic({sd + 2, 300, 300, 1}, Activation::identity, rng);
    Mlp<double> lo_actor({sd + 2, 300, 300, 4}, Activation::identity, rng);
    Mlp<double> lo_critic({sd + 2, 300, 300, 1}, Activation::identity, rng);
    const auto s = gaussian(static_cast<Eigen::Index>(sd), 6, rng, 0.5);
    AdjacencyPenalty<double> pen;
    pen.psi = &psi;
    pen.eps = 0.01;
    pen.eta = 20.0;
    pen.positions = gaussian(2, 6, rng, 4.0);
    pen.origin = pen.positions;
    const auto ar = actor_objective<double>(actor, critic, s, &pen);
    track(check_parameter_gradients(actor, [&](const Mlp<double>& m) { return actor_objective<double>(m, critic, s, &pen).loss; },
                                    ar.grads, 400, 2, 1e-6).max_rel_error);
    const auto sa = gaussian(static_cast<Eigen::Index>(sd + 2), 6, rng), y = gaussian(1, 6, rng);
    const auto cr = critic_regression<double>(critic, sa, y);
    track(check_parameter_gradients(critic, [&](const Mlp<double>& m) { return critic_regression<double>(m, sa, y).loss; },
                                    cr.grads, 400, 3).max_rel_error);
    const std::vector<int> acts{0, 1, 2, 3, 1, 2};
    const std::vector<double> ret{1.0, 0.2, -0.5, 2.0, 0.0, 0.7};
    const auto lr = a2c_gradients<double>(lo_actor, lo_critic, sa, acts, ret, 0.01);
    track(check_parameter_gradients(lo_actor, [&](const Mlp<double>& m) { return a2c_gradients<double>(m, lo_critic, sa, acts, ret, 0.01).actor_loss; },
                                    lr.actor, 400, 4).max_rel_error);
    track(check_parameter_gradients(lo_critic, [&](const Mlp<double>& m) { return a2c_gradients<double>(lo_actor, m, sa, acts, ret, 0.01).critic_loss; },
                                    lr.critic, 400, 5).max_rel_error);
  }
  return worst;
}

void infra_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const double worst = gradient_checks();
  report(worst < 1e-4, "infra/gradient checks",
         fmt("max relative error %.2e over adjacency net, high-level actor and critics, low-level actor and critic, both envs (tol 1e-4)", worst));

  const auto run = random_policy_soundness(20000, 0);
  report(run.report.violations == 0, "infra/matrix soundness",
         fmt("%.0f of %.0f one-entries have oracle d_st > k (max d_st %.2f); required 0", run.report.violations, run.report.ones,
             run.report.max_violating_distance));
  report(run.report.coverage() >= 0.9, "infra/matrix coverage",
         fmt("%.3f of %.0f oracle-adjacent visited pairs labelled 1 (required >= 0.90)", run.report.coverage(), run.report.oracle_adjacent));

  const auto nav = export_navigation(default_layout(Task::maze), 0.25);
  const auto oracle = oracle_matrix(nav, shortest_transition_distance(nav.mdp), 10);
  double acc_sum = 0.0, acc_min = 1.0;
  const int runs = 3;
  for (int seed = 0; seed < runs; ++seed) {
    PairSplit split(oracle.size(), 0.1, static_cast<std::uint64_t>(seed));
    AdjacencyNetwork psi(10, static_cast<std::uint64_t>(seed));
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    train_adjacency(psi, oracle, 50, 64, rng, &split);
    const double acc = psi.accuracy(held_out_pairs(oracle, split));
    acc_sum += acc;
    acc_min = std::min(acc_min, acc);
  }
  report(acc_sum / runs >= 0.95, "infra/adjacency network accuracy",
         fmt("held-out accuracy %.4f mean over %.0f seeds (min %.4f), 50 epochs on the oracle Maze matrix (required >= 0.95)",
             acc_sum / runs, runs, acc_min));
  const double elapsed = seconds_since(t0);
  report(elapsed < 300.0, "infra/runtime", fmt("%.1f s (limit 300 s)", elapsed));
}

// ---------------------------------------------------------------------------

struct VariantSummary {
  SeedStats final_return;
  double final_success = 0.0;
  std::vector<double> train_adjacent;  // at the 20/60/100% checkpoints
  std::vector<double> eval_adjacent;
  double max_seconds = 0.0;
  bool finite = true;
};

VariantSummary train_variant(Task env, Variant variant, long steps, int n_seeds, const fs::path& root) {
  auto cfg = ExperimentConfig::defaults(env, variant);
  cfg.train.total_steps = steps;
  cfg.seeds.clear();
  for (int s = 0; s < n_seeds; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  cfg.out_dir = (root / (to_string(env) + "_" + to_string(variant))).string();
  VariantSummary out;
  std::vector<double> finals, successes;
  const std::vector<long> checkpoints{steps / 5, 3 * steps / 5, steps};
  out.train_adjacent.assign(3, 0.0);
  out.eval_adjacent.assign(3, 0.0);
  for (auto seed : cfg.seeds) {
    const auto dir = seed_dir(cfg, seed);
    const auto t0 = std::chrono::steady_clock::now();
    const bool ran = run_seed(cfg, seed, dir);
    std::printf("  %s %s seed %llu: %s (%.0f s)\n", to_string(env).c_str(), to_string(variant).c_str(),
                static_cast<unsigned long long>(seed), ran ? "trained" : "cached", seconds_since(t0));
    std::fflush(stdout);
    const auto done = read_json_file((dir / "done").string());
    out.max_seconds = std::max(out.max_seconds, done.at("elapsed_seconds").get<double>());
    out.finite = out.finite && done.at("finite").get<bool>();
    const auto eval = read_csv((dir / "eval.csv").string());
    finals.push_back(rolling_mean(eval.numbers("mean_return"), 20).back());
    successes.push_back(read_csv((dir / "success.csv").string()).numbers("success_rate").back());
    const auto sub = read_csv((dir / "subgoal_adjacency.csv").string());
    const auto steps_col = sub.numbers("env_step"), tr = sub.numbers("train_adjacent_fraction"),
               ev = sub.numbers("eval_adjacent_fraction");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < steps_col.size(); ++i)
        if (static_cast<long>(steps_col[i]) == checkpoints[c]) {
          out.train_adjacent[c] += tr[i] / n_seeds;
          out.eval_adjacent[c] += ev[i] / n_seeds;
        }
  }
  out.final_return = across_seeds(finals);
  out.final_success = across_seeds(successes).mean;
  return out;
}

std::string describe(const char* name, const VariantSummary& v) {
  return std::string(name) + " " + fmt("%.3f +- %.3f", v.final_return.mean, v.final_return.std_err);
}

void training_suite(const fs::path& root, int n_seeds, long maze_steps, long kc_steps) {
  const auto maze_hrac = train_variant(Task::maze, Variant::hrac, maze_steps, n_seeds, root);
  const auto maze_vanilla = train_variant(Task::maze, Variant::vanilla, maze_steps, n_seeds, root);
  const auto maze_oracle = train_variant(Task::maze, Variant::hrac_o, maze_steps, n_seeds, root);
  const auto maze_noadj = train_variant(Task::maze, Variant::noadj, maze_steps, n_seeds, root);
  const auto kc_hrac = train_variant(Task::keychest, Variant::hrac, kc_steps, n_seeds, root);
  const auto kc_vanilla = train_variant(Task::keychest, Variant::vanilla, kc_steps, n_seeds, root);

  report(maze_hrac.final_return.mean >= maze_vanilla.final_return.mean, "training/maze HRAC >= Vanilla",
         describe("HRAC", maze_hrac) + " vs " + describe("Vanilla", maze_vanilla) + " (final smoothed return, window 20)");
  report(maze_hrac.final_success >= 0.8, "training/maze HRAC success",
         fmt("%.2f of final evaluation episodes reach the goal (required >= 0.80)", maze_hrac.final_success));
  report(maze_hrac.max_seconds <= 1800.0, "training/maze runtime", fmt("slowest HRAC seed %.0f s (limit 1800 s)", maze_hrac.max_seconds));
  report(kc_hrac.final_return.mean >= kc_vanilla.final_return.mean, "training/keychest HRAC >= Vanilla",
         describe("HRAC", kc_hrac) + " vs " + describe("Vanilla", kc_vanilla));
  report(kc_hrac.final_success >= 0.6, "training/keychest HRAC chest opened",
         fmt("%.2f of final evaluation episodes return 6 (required >= 0.60)", kc_hrac.final_success));
  const double gap = std::abs(maze_hrac.final_return.mean - maze_oracle.final_return.mean);
  report(gap <= maze_hrac.final_return.std_err + maze_oracle.final_return.std_err, "training/maze HRAC ~ HRAC-O",
         describe("HRAC", maze_hrac) + " vs " + describe("HRAC-O", maze_oracle) + " (bands must overlap)");
  report(maze_hrac.final_return.mean > maze_noadj.final_return.mean, "training/maze HRAC > NoAdj",
         describe("HRAC", maze_hrac) + " vs " + describe("NoAdj", maze_noadj));
  const auto& a = maze_hrac.train_adjacent;
  report(a[0] < a[1] && a[1] < a[2], "training/maze subgoal adjacency trend",
         fmt("psi-adjacent fraction of emitted subgoals %.3f -> %.3f -> %.3f at 20/60/100%%", a[0], a[1], a[2]) +
             fmt(" (greedy evaluation subgoals %.3f -> %.3f -> %.3f)", maze_hrac.eval_adjacent[0], maze_hrac.eval_adjacent[1],
                 maze_hrac.eval_adjacent[2]));
  bool finite = true;
  for (const auto* v : {&maze_hrac, &maze_vanilla, &maze_oracle, &maze_noadj, &kc_hrac, &kc_vanilla}) finite = finite && v->finite;
  report(finite, "training/finite parameters", "all runs finished with finite network parameters");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string suite = "all", runs = "acceptance_runs";
  int seeds = 5;
  long maze_steps = 300000, kc_steps = 500000;
  app.add_option("--suite", suite)->check(CLI::IsMember({"theory", "infra", "training", "all"}));
  app.add_option("--runs", runs, "directory for training runs (finished runs are reused)");
  app.add_option("--seeds", seeds);
  app.add_option("--maze-steps", maze_steps);
  app.add_option("--keychest-steps", kc_steps);
  CLI11_PARSE(app, argc, argv);
  try {
    if (suite == "theory" || suite == "all") theory_suite();
    if (suite == "infra" || suite == "all") infra_suite();
    if (suite == "training" || suite == "all") training_suite(runs, seeds, maze_steps, kc_steps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
