#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "zoomdet/config.hpp"
#include "zoomdet/match.hpp"
#include "zoomdet/metrics.hpp"
#include "zoomdet/policy.hpp"
#include "zoomdet/regressor.hpp"

namespace zoomdet {

// Strategy roster. "qnet+rnet" is the refined variant; "-norefine" disables
// window refinement; "qnet+er" swaps regressor gains for score entropy (and
// trains its own Q-net on entropy maps); "-nocost" trains with lambda = 0.
extern const std::vector<std::string> kAllStrategies;

bool strategy_known(const std::string& name);

std::vector<Scene> make_scene_set(const SceneConfig& config, int count,
                                  std::uint64_t base_seed);

enum class QnetVariant { rnet, er, nocost };
std::string variant_name(QnetVariant v);

// Everything trained for one evaluation world (one seed run): scenes, oracle
// streams, regressor, and the Q-net variants the requested strategies need.
struct TrainedWorld {
  WorldSeeds seeds;
  DetectorModel coarse;
  DetectorModel fine;
  std::vector<Scene> train_scenes;
  std::vector<Scene> test_scenes;
  ActionGrid grid;
  GainRegressor regressor;
  std::optional<QNetwork> qnet_rnet;
  std::optional<QNetwork> qnet_er;
  std::optional<QNetwork> qnet_nocost;
};

GainRegressor train_world_rnet(const ExperimentConfig& cfg,
                               const std::vector<Scene>& train_scenes,
                               const WorldSeeds& seeds,
                               RegressorTrainStats* stats = nullptr,
                               std::vector<Correspondence>* out_corr = nullptr);

QNetwork train_world_qnet(const ExperimentConfig& cfg,
                          const std::vector<Scene>& train_scenes,
                          const GainRegressor* regressor, QnetVariant variant,
                          const WorldSeeds& seeds, TrainCurves* curves = nullptr,
                          std::ostream* log = nullptr);

TrainedWorld build_trained_world(const ExperimentConfig& cfg, int run_index,
                                 const std::vector<std::string>& strategies,
                                 std::ostream* log = nullptr);

struct StrategyResult {
  RunAggregate agg;
  bool attainable = true;
  std::vector<EpisodeResult> episodes;
};

// Run one strategy over the world's test scenes under a per-scene pixel
// budget of budget_fraction * frame pixels. A non-positive fraction means
// uncapped.
StrategyResult run_strategy(const ExperimentConfig& cfg, const TrainedWorld& world,
                            const std::string& strategy, double budget_fraction,
                            const StepObserver& observer = {});

std::vector<SweepRow> sweep_world(const ExperimentConfig& cfg, const TrainedWorld& world,
                                  const std::vector<std::string>& strategies,
                                  const std::vector<double>& budgets);

// The Table-style protocol: eval.seeds independent worlds, metrics averaged.
std::vector<SweepRow> sweep_multi(const ExperimentConfig& cfg,
                                  const std::vector<std::string>& strategies,
                                  const std::vector<double>& budgets, int seed_runs,
                                  std::ostream* log = nullptr);

// File-level commands shared by the CLI and the acceptance suite. All paths
// are relative to out_dir; every command reads only its declared inputs.
void cmd_gen_scenes(const ExperimentConfig& cfg, int n_train, const std::string& out_dir);
void cmd_train_rnet(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_train_qnet(const ExperimentConfig& cfg, QnetVariant variant,
                    const std::string& out_dir, std::ostream* log = nullptr);
void cmd_evaluate(const ExperimentConfig& cfg, const std::vector<std::string>& strategies,
                  const std::string& out_dir);
void cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& strategies,
               const std::vector<double>& budgets, const std::string& out_dir,
               std::ostream* log = nullptr);

}  // namespace zoomdet
