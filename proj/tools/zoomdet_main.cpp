#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zoomdet/config.hpp"
#include "zoomdet/nn.hpp"
#include "zoomdet/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path = "configs/default.conf";
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

zoomdet::ExperimentConfig load_config(const GlobalArgs& g) {
  auto cfg = zoomdet::ExperimentConfig::from_file(g.config_path, g.overrides);
  if (g.seed_set) cfg.master_seed = g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

std::vector<std::string> parse_strategies(const std::string& list) {
  if (list.empty()) return zoomdet::kAllStrategies;
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zoomdet: cost-aware coarse-to-fine detection scheduler"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "experiment config file")
      ->capture_default_str();
  app.add_option("--set", g.overrides, "override a config key, e.g. --set rl.lambda=2");
  app.add_option("--out", g.out_dir, "output directory (overrides out.dir)");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed (overrides experiment.seed)");

  auto* gen = app.add_subcommand("gen-scenes", "generate train/test scene files");
  int n_train = -1;
  gen->add_option("--n", n_train, "number of training scenes (default data.train_scenes)");

  auto* trr = app.add_subcommand("train-rnet", "train the gain regressor");

  auto* trq = app.add_subcommand("train-qnet", "train a zoom policy network");
  std::string variant_str = "rnet";
  trq->add_option("--variant", variant_str, "rnet | er | nocost")->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "evaluate strategies on the test scenes");
  std::string strategies_str;
  ev->add_option("--strategies", strategies_str, "comma-separated strategy list");

  auto* sw = app.add_subcommand("sweep", "multi-seed budget sweep (trains per seed)");
  std::string sweep_strategies;
  std::vector<double> budgets;
  sw->add_option("--strategies", sweep_strategies, "comma-separated strategy list");
  sw->add_option("--budgets", budgets, "budget fractions, e.g. 0.4 0.55 0.7");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    const auto cfg = load_config(g);
    if (gen->parsed()) {
      zoomdet::cmd_gen_scenes(cfg, n_train >= 0 ? n_train : cfg.data.train_scenes,
                              cfg.out_dir);
      std::cout << "scenes written to " << cfg.out_dir << "\n";
    } else if (trr->parsed()) {
      zoomdet::cmd_train_rnet(cfg, cfg.out_dir);
      std::cout << "regressor weights written to " << cfg.out_dir << "/rnet.weights\n";
    } else if (trq->parsed()) {
      zoomdet::QnetVariant variant;
      if (variant_str == "rnet") {
        variant = zoomdet::QnetVariant::rnet;
      } else if (variant_str == "er") {
        variant = zoomdet::QnetVariant::er;
      } else if (variant_str == "nocost") {
        variant = zoomdet::QnetVariant::nocost;
      } else {
        throw zoomdet::ConfigError("unknown qnet variant '" + variant_str + "'");
      }
      zoomdet::cmd_train_qnet(cfg, variant, cfg.out_dir, &std::cout);
      std::cout << "qnet weights written to " << cfg.out_dir << "/qnet_"
                << zoomdet::variant_name(variant) << ".weights\n";
    } else if (ev->parsed()) {
      zoomdet::cmd_evaluate(cfg, parse_strategies(strategies_str), cfg.out_dir);
      std::cout << "report written to " << cfg.out_dir << "/report.csv\n";
    } else if (sw->parsed()) {
      const auto buckets = budgets.empty() ? cfg.eval.budgets : budgets;
      zoomdet::cmd_sweep(cfg, parse_strategies(sweep_strategies), buckets, cfg.out_dir,
                         &std::cout);
      std::cout << "sweep written to " << cfg.out_dir << "/sweep.csv\n";
    }
  } catch (const zoomdet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const zoomdet::nn::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
