#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hrac/experiment.hpp"

namespace {

int cmd_train(const std::string& config_path, const std::string& env, const std::string& variant,
              const std::vector<std::uint64_t>& seeds, long steps, const std::string& out, bool force) {
  nlohmann::json user = config_path.empty() ? nlohmann::json::object() : hrac::read_json_file(config_path);
  hrac::apply_env_overrides(user, [](const char* name) { return std::getenv(name); });
  if (!env.empty()) user["env"] = env;
  if (!variant.empty()) user["variant"] = variant;
  if (!seeds.empty()) user["seeds"] = seeds;
  if (steps > 0) user["total_steps"] = steps;
  if (!out.empty()) user["out_dir"] = out;
  const auto cfg = hrac::config_from_json(user);
  for (auto seed : cfg.seeds) {
    const auto dir = hrac::seed_dir(cfg, seed);
    const bool ran = hrac::run_seed(cfg, seed, dir, !force);
    std::cout << (ran ? "trained " : "reused ") << dir.string() << "\n";
  }
  return 0;
}

int cmd_verify(const std::string& suite, std::size_t n, std::uint64_t seed, const std::string& mdp_path,
               const std::string& out) {
  if (n == 0) {
    if (suite == "theorem1") n = 50;
    else if (suite == "adjacency-soundness") n = 1;
    else n = 100;
  }
  std::optional<hrac::TabularMdp> input;
  if (!mdp_path.empty()) input = hrac::load_mdp(mdp_path);
  const auto result = hrac::verify(suite, n, seed, input ? &*input : nullptr);
  const std::string text = result.report.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << text;
    std::cout << suite << ": " << (result.pass ? "pass" : "FAIL") << "\n";
  }
  return result.pass ? 0 : 1;
}

int cmd_heatmap(const std::string& ckpt, const std::string& env, const std::string& probe, const std::string& layout_path,
                const std::string& out) {
  const auto psi = hrac::load_psi(ckpt);
  const hrac::Layout layout = layout_path.empty() ? hrac::default_layout(hrac::parse_task(env)) : hrac::Layout::load(layout_path);
  hrac::write_heatmap(psi, layout, hrac::parse_cell(probe), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical RL with k-step adjacency: training, exact verification and exports"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train one variant over one or more seeds");
  std::string config_path, env, variant, out;
  std::vector<std::uint64_t> seeds;
  long steps = 0;
  bool force = false;
  train->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  train->add_option("--env", env, "maze or keychest");
  train->add_option("--variant", variant, "hrac, hrac-o, noadj, negreward or vanilla");
  train->add_option("--seed", seeds, "seed (repeatable)");
  train->add_option("--steps", steps, "training environment steps");
  train->add_option("--out", out, "output directory");
  train->add_flag("--force", force, "retrain even when a finished run with the same config exists");

  auto* verify = app.add_subcommand("verify", "run an exact verification suite and print a JSON report");
  std::string suite, mdp_path, report_path;
  std::size_t n = 0;
  std::uint64_t vseed = 0;
  verify->add_option("--suite", suite, "suite name")
      ->required()
      ->check(CLI::IsMember({"lemma1", "theorem1", "theorem2", "distance", "adjacency-soundness"}));
  verify->add_option("--n", n, "number of instances (suite default when omitted)");
  verify->add_option("--seed", vseed, "base seed");
  verify->add_option("--mdp", mdp_path, "check this MDP JSON instead of random instances")->check(CLI::ExistingFile);
  verify->add_option("--out", report_path, "write the report here instead of stdout");

  auto* heatmap = app.add_subcommand("heatmap", "write per-cell adjacency distances from a probe cell");
  std::string ckpt, henv = "maze", probe, layout_path, hout;
  heatmap->add_option("--ckpt", ckpt, "checkpoint.json of a run")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--env", henv, "maze or keychest");
  heatmap->add_option("--probe", probe, "probe cell x,y")->required();
  heatmap->add_option("--layout", layout_path, "ASCII layout file")->check(CLI::ExistingFile);
  heatmap->add_option("--out", hout, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, env, variant, seeds, steps, out, force);
    if (*verify) return cmd_verify(suite, n, vseed, mdp_path, report_path);
    if (*heatmap) return cmd_heatmap(ckpt, henv, probe, layout_path, hout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
