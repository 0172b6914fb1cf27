#include "zoomdet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "zoomdet/records.hpp"
#include "zoomdet/rng.hpp"

namespace zoomdet {

const std::vector<std::string> kAllStrategies = {
    "fine-all",  "coarse-all",        "gs+rnet", "qnet+rnet",
    "qnet+rnet-norefine", "qnet+er", "qnet+rnet-nocost"};

bool strategy_known(const std::string& name) {
  return std::find(kAllStrategies.begin(), kAllStrategies.end(), name) !=
         kAllStrategies.end();
}

std::vector<Scene> make_scene_set(const SceneConfig& config, int count,
                                  std::uint64_t base_seed) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_scene(config, mix_seed(base_seed, static_cast<std::uint64_t>(i))));
  return scenes;
}

std::string variant_name(QnetVariant v) {
  switch (v) {
    case QnetVariant::rnet: return "rnet";
    case QnetVariant::er: return "er";
    case QnetVariant::nocost: return "nocost";
  }
  return "rnet";
}

namespace {

EpisodeOptions episode_options_from(const ExperimentConfig& cfg) {
  EpisodeOptions opts;
  opts.lambda = cfg.rl.lambda_cost;
  opts.stop_threshold = cfg.rl.stop_threshold;
  opts.max_steps = cfg.rl.max_steps;
  opts.positive_stop = cfg.rl.positive_stop;
  opts.mask_zoomed = cfg.mask_zoomed;
  opts.alpha = cfg.alpha;
  opts.downsample = cfg.downsample;
  return opts;
}

DetectorModel with_stream(DetectorModel m, std::uint64_t stream) {
  m.seed_stream = stream;
  return m;
}

}  // namespace

GainRegressor train_world_rnet(const ExperimentConfig& cfg,
                               const std::vector<Scene>& train_scenes,
                               const WorldSeeds& seeds, RegressorTrainStats* stats,
                               std::vector<Correspondence>* out_corr) {
  const DetectorModel coarse = with_stream(cfg.coarse, seeds.coarse_stream);
  const DetectorModel fine = with_stream(cfg.fine, seeds.fine_stream);
  auto corr = build_training_set(train_scenes, coarse, fine, 1.0 / cfg.downsample);
  if (out_corr) *out_corr = corr;

  RegressorConfig rc = cfg.regressor;
  rc.seed = seeds.regressor;
  return train_regressor(corr, rc, stats);
}

QNetwork train_world_qnet(const ExperimentConfig& cfg,
                          const std::vector<Scene>& train_scenes,
                          const GainRegressor* regressor, QnetVariant variant,
                          const WorldSeeds& seeds, TrainCurves* curves,
                          std::ostream* log) {
  RLConfig rl = cfg.rl;
  rl.seed = mix_seed(seeds.rl, static_cast<std::uint64_t>(variant));
  if (variant == QnetVariant::nocost) rl.lambda_cost = 0.0;

  if (cfg.rl_env == "toy2") {
    TwoRegionEnv env;
    return q_learning_train(env, rl, curves, log);
  }

  GainSource gains;
  gains.use_entropy = variant == QnetVariant::er;
  gains.regressor = regressor;
  if (!gains.use_entropy && regressor == nullptr)
    throw std::invalid_argument("train_world_qnet: regressor weights required");

  EpisodeOptions opts = episode_options_from(cfg);
  opts.lambda = rl.lambda_cost;

  const DetectorModel coarse = with_stream(cfg.coarse, seeds.coarse_stream);
  const DetectorModel fine = with_stream(cfg.fine, seeds.fine_stream);
  const ActionGrid grid = build_action_grid(cfg.scene.width, cfg.scene.height,
                                            cfg.window_sizes);
  DetectionEnv env(train_scenes, coarse, fine, gains, grid, opts);
  return q_learning_train(env, rl, curves, log);
}

TrainedWorld build_trained_world(const ExperimentConfig& cfg, int run_index,
                                 const std::vector<std::string>& strategies,
                                 std::ostream* log) {
  TrainedWorld world;
  world.seeds = derive_world_seeds(cfg.master_seed, run_index);
  world.coarse = with_stream(cfg.coarse, world.seeds.coarse_stream);
  world.fine = with_stream(cfg.fine, world.seeds.fine_stream);
  world.train_scenes = make_scene_set(cfg.scene, cfg.data.train_scenes, world.seeds.train_scenes);
  world.test_scenes = make_scene_set(cfg.scene, cfg.data.test_scenes, world.seeds.test_scenes);
  world.grid = build_action_grid(cfg.scene.width, cfg.scene.height, cfg.window_sizes);

  auto wants = [&](const std::string& s) {
    return std::find(strategies.begin(), strategies.end(), s) != strategies.end();
  };
  const bool needs_rnet = wants("gs+rnet") || wants("qnet+rnet") ||
                          wants("qnet+rnet-norefine") || wants("qnet+rnet-nocost");
  const bool needs_qnet_rnet = wants("qnet+rnet") || wants("qnet+rnet-norefine");

  if (needs_rnet || wants("qnet+er"))
    world.regressor = train_world_rnet(cfg, world.train_scenes, world.seeds);

  if (needs_qnet_rnet)
    world.qnet_rnet = train_world_qnet(cfg, world.train_scenes, &world.regressor,
                                       QnetVariant::rnet, world.seeds, nullptr, log);
  if (wants("qnet+er"))
    world.qnet_er = train_world_qnet(cfg, world.train_scenes, nullptr, QnetVariant::er,
                                     world.seeds, nullptr, log);
  if (wants("qnet+rnet-nocost"))
    world.qnet_nocost = train_world_qnet(cfg, world.train_scenes, &world.regressor,
                                         QnetVariant::nocost, world.seeds, nullptr, log);
  return world;
}

StrategyResult run_strategy(const ExperimentConfig& cfg, const TrainedWorld& world,
                            const std::string& strategy, double budget_fraction,
                            const StepObserver& observer) {
  if (!strategy_known(strategy))
    throw std::invalid_argument("unknown strategy '" + strategy + "'");

  const double frame_pixels =
      static_cast<double>(cfg.scene.width) * cfg.scene.height;
  const bool capped = budget_fraction > 0.0;
  const double budget_pixels =
      capped ? budget_fraction * frame_pixels : std::numeric_limits<double>::infinity();

  EpisodeOptions opts = episode_options_from(cfg);
  opts.pixel_budget = budget_pixels;

  GainSource gains;
  gains.regressor = &world.regressor;

  PolicyKind policy = PolicyKind::greedy_ag;
  const QNetwork* qnet = nullptr;

  if (strategy == "coarse-all") {
    opts.max_steps = 0;
  } else if (strategy == "gs+rnet") {
    policy = PolicyKind::greedy_ag;
  } else if (strategy == "qnet+rnet" || strategy == "qnet+rnet-norefine") {
    policy = PolicyKind::qnet;
    if (!world.qnet_rnet)
      throw std::invalid_argument("strategy " + strategy + ": missing qnet+rnet weights");
    qnet = &*world.qnet_rnet;
    opts.refine = strategy == "qnet+rnet";
  } else if (strategy == "qnet+er") {
    policy = PolicyKind::qnet;
    if (!world.qnet_er)
      throw std::invalid_argument("strategy qnet+er: missing qnet+er weights");
    qnet = &*world.qnet_er;
    gains.use_entropy = true;
    gains.regressor = nullptr;
  } else if (strategy == "qnet+rnet-nocost") {
    policy = PolicyKind::qnet;
    if (!world.qnet_nocost)
      throw std::invalid_argument("strategy qnet+rnet-nocost: missing weights");
    qnet = &*world.qnet_nocost;
    // trained with lambda = 0; rewards are logged accordingly
    opts.lambda = 0.0;
  }

  StrategyResult result;
  std::vector<std::vector<Detection>> per_scene;
  per_scene.reserve(world.test_scenes.size());

  for (const auto& scene : world.test_scenes) {
    EpisodeResult ep;
    if (strategy == "fine-all") {
      ep = run_fine_all(scene, world.fine);
    } else {
      ep = run_episode(scene, world.coarse, world.fine, gains, world.grid, qnet, policy,
                       opts, observer);
    }
    result.agg.pixels += ep.ledger.pixels_processed;
    result.agg.sim_time += ep.ledger.wall_time;
    per_scene.push_back(ep.detections);
    result.episodes.push_back(std::move(ep));
  }
  result.agg.ap =
      pooled_average_precision(per_scene, world.test_scenes, cfg.eval.iou_threshold);

  if (capped) {
    const double total_budget = budget_pixels * static_cast<double>(world.test_scenes.size());
    result.attainable = static_cast<double>(result.agg.pixels) <= total_budget + 0.5;
  }
  return result;
}

std::vector<SweepRow> sweep_world(const ExperimentConfig& cfg, const TrainedWorld& world,
                                  const std::vector<std::string>& strategies,
                                  const std::vector<double>& budgets) {
  const StrategyResult fine = run_strategy(cfg, world, "fine-all", 0.0);

  std::vector<SweepRow> rows;
  for (const auto& strategy : strategies) {
    for (const double budget : budgets) {
      SweepRow row;
      row.strategy = strategy;
      row.budget = budget;
      const StrategyResult r = run_strategy(cfg, world, strategy, budget);
      row.attainable = r.attainable;
      if (row.attainable) row.metrics = compute_percentages(r.agg, fine.agg);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<SweepRow> sweep_multi(const ExperimentConfig& cfg,
                                  const std::vector<std::string>& strategies,
                                  const std::vector<double>& budgets, int seed_runs,
                                  std::ostream* log) {
  std::vector<SweepRow> acc;
  for (int run = 0; run < seed_runs; ++run) {
    if (log) (*log) << "sweep: world " << run << "\n";
    const TrainedWorld world = build_trained_world(cfg, run, strategies, log);
    const auto rows = sweep_world(cfg, world, strategies, budgets);
    if (acc.empty()) {
      acc = rows;
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i].attainable = acc[i].attainable && rows[i].attainable;
        acc[i].metrics.ap += rows[i].metrics.ap;
        acc[i].metrics.a_perc += rows[i].metrics.a_perc;
        acc[i].metrics.p_perc += rows[i].metrics.p_perc;
        acc[i].metrics.t_perc += rows[i].metrics.t_perc;
      }
    }
  }
  for (auto& row : acc) {
    row.metrics.ap /= seed_runs;
    row.metrics.a_perc /= seed_runs;
    row.metrics.p_perc /= seed_runs;
    row.metrics.t_perc /= seed_runs;
    row.seed_count = seed_runs;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// File-level commands
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string path_in(const std::string& out_dir, const std::string& name) {
  return (fs::path(out_dir) / name).string();
}

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir);
}

std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void cmd_gen_scenes(const ExperimentConfig& cfg, int n_train, const std::string& out_dir) {
  ensure_dir(out_dir);
  const WorldSeeds seeds = derive_world_seeds(cfg.master_seed, 0);
  write_scenes(path_in(out_dir, "train_scenes.jsonl"),
               make_scene_set(cfg.scene, n_train, seeds.train_scenes));
  write_scenes(path_in(out_dir, "test_scenes.jsonl"),
               make_scene_set(cfg.scene, cfg.data.test_scenes, seeds.test_scenes));
}

void cmd_train_rnet(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto train_scenes = read_scenes(path_in(out_dir, "train_scenes.jsonl"));
  if (train_scenes.empty())
    throw std::invalid_argument("train-rnet: empty training scene set");
  const WorldSeeds seeds = derive_world_seeds(cfg.master_seed, 0);

  RegressorTrainStats stats;
  std::vector<Correspondence> corr;
  const GainRegressor reg = train_world_rnet(cfg, train_scenes, seeds, &stats, &corr);

  write_correspondences(path_in(out_dir, "correspondences.jsonl"), corr);
  nn::save_network(reg.net, path_in(out_dir, "rnet.weights"));

  std::ofstream csv(path_in(out_dir, "rnet_mse.csv"));
  csv << "epoch,mse\n";
  for (std::size_t e = 0; e < stats.mse_curve.size(); ++e)
    csv << e << "," << csv_num(stats.mse_curve[e]) << "\n";
}

void cmd_train_qnet(const ExperimentConfig& cfg, QnetVariant variant,
                    const std::string& out_dir, std::ostream* log) {
  ensure_dir(out_dir);
  const WorldSeeds seeds = derive_world_seeds(cfg.master_seed, 0);

  GainRegressor reg;
  const GainRegressor* reg_ptr = nullptr;
  if (variant != QnetVariant::er && cfg.rl_env != "toy2") {
    reg.net = nn::load_network(path_in(out_dir, "rnet.weights"));
    reg.feature_dim = cfg.regressor.feature_dim;
    reg_ptr = &reg;
  }

  std::vector<Scene> train_scenes;
  if (cfg.rl_env != "toy2") {
    train_scenes = read_scenes(path_in(out_dir, "train_scenes.jsonl"));
    if (train_scenes.empty())
      throw std::invalid_argument("train-qnet: empty training scene set");
  }

  TrainCurves curves;
  const QNetwork qnet =
      train_world_qnet(cfg, train_scenes, reg_ptr, variant, seeds, &curves, log);

  const std::string stem = "qnet_" + variant_name(variant);
  save_qnetwork(qnet, path_in(out_dir, stem + ".weights"),
                path_in(out_dir, stem + ".grid.txt"));

  std::ofstream csv(path_in(out_dir, stem + "_curves.csv"));
  csv << "episode,epoch,epsilon,steps,total_reward,mean_loss\n";
  for (const auto& row : curves.rows)
    csv << row.episode << "," << row.epoch << "," << csv_num(row.epsilon) << ","
        << row.steps << "," << csv_num(row.total_reward) << ","
        << csv_num(row.mean_loss) << "\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::vector<std::string>& strategies,
                  const std::string& out_dir) {
  ensure_dir(out_dir);

  TrainedWorld world;
  world.seeds = derive_world_seeds(cfg.master_seed, 0);
  world.coarse = with_stream(cfg.coarse, world.seeds.coarse_stream);
  world.fine = with_stream(cfg.fine, world.seeds.fine_stream);
  world.test_scenes = read_scenes(path_in(out_dir, "test_scenes.jsonl"));
  world.grid = build_action_grid(cfg.scene.width, cfg.scene.height, cfg.window_sizes);

  auto wants = [&](const std::string& s) {
    return std::find(strategies.begin(), strategies.end(), s) != strategies.end();
  };
  for (const auto& s : strategies)
    if (!strategy_known(s)) throw std::invalid_argument("unknown strategy '" + s + "'");

  if (wants("gs+rnet") || wants("qnet+rnet") || wants("qnet+rnet-norefine") ||
      wants("qnet+rnet-nocost")) {
    const std::string p = path_in(out_dir, "rnet.weights");
    if (!fs::exists(p))
      throw std::invalid_argument("strategy needs rnet weights: missing " + p);
    world.regressor.net = nn::load_network(p);
    world.regressor.feature_dim = cfg.regressor.feature_dim;
  }
  auto load_variant = [&](const std::string& stem,
                          const std::string& strategy) -> QNetwork {
    const std::string w = path_in(out_dir, stem + ".weights");
    const std::string g = path_in(out_dir, stem + ".grid.txt");
    if (!fs::exists(w) || !fs::exists(g))
      throw std::invalid_argument("strategy " + strategy + ": missing weights " + w);
    return load_qnetwork(w, g);
  };
  if (wants("qnet+rnet") || wants("qnet+rnet-norefine"))
    world.qnet_rnet = load_variant("qnet_rnet", "qnet+rnet");
  if (wants("qnet+er")) world.qnet_er = load_variant("qnet_er", "qnet+er");
  if (wants("qnet+rnet-nocost"))
    world.qnet_nocost = load_variant("qnet_nocost", "qnet+rnet-nocost");

  const StrategyResult fine = run_strategy(cfg, world, "fine-all", 0.0);

  std::vector<SweepRow> rows;
  for (const auto& strategy : strategies) {
    SweepRow row;
    row.strategy = strategy;
    row.budget = 1.0;
    const StrategyResult r = run_strategy(cfg, world, strategy, 0.0);
    row.attainable = true;
    row.metrics = compute_percentages(r.agg, fine.agg);
    rows.push_back(row);
  }
  write_sweep_csv(path_in(out_dir, "report.csv"), rows);
  write_sweep_json(path_in(out_dir, "report.json"), rows);
}

void cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& strategies,
               const std::vector<double>& budgets, const std::string& out_dir,
               std::ostream* log) {
  ensure_dir(out_dir);
  std::vector<double> buckets = budgets;
  if (std::find(buckets.begin(), buckets.end(), 1.0) == buckets.end())
    buckets.push_back(1.0);
  const auto rows = sweep_multi(cfg, strategies, buckets, cfg.eval.seeds, log);
  write_sweep_csv(path_in(out_dir, "sweep.csv"), rows);
  write_sweep_json(path_in(out_dir, "sweep.json"), rows);
}

}  // namespace zoomdet
