#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "zoomdet/pipeline.hpp"
#include "zoomdet/policy.hpp"
#include "zoomdet/rng.hpp"

using namespace zoomdet;

namespace {

AccuracyGainMap uniform_map(int w, int h, double v, double cs = 2.0) {
  AccuracyGainMap m;
  m.width = w;
  m.height = h;
  m.coordinate_scale = cs;
  m.values.assign(static_cast<std::size_t>(w) * h, v);
  return m;
}

RLConfig toy_rl_config(std::uint64_t seed) {
  RLConfig rl;
  rl.epochs = 14;
  rl.batch_size = 16;
  rl.replay_capacity = 512;
  rl.learning_rate = 0.05;
  rl.max_steps = 4;
  rl.seed = seed;
  rl.qnet.trunk_channels = 6;
  return rl;
}

// Exact value iteration over the scripted two-region MDP.
struct ToyValues {
  double q_s0_a0, q_s0_a1;
};

ToyValues toy_value_iteration(double gamma) {
  // s1: Q(a0) = 0.4, Q(a1) = 0.0; s0: Q(a0) = 0.2, Q(a1) = 0.1 + gamma*max(s1)
  ToyValues v;
  const double s1_best = std::max(TwoRegionEnv::kRewardDeferred, 0.0);
  v.q_s0_a0 = TwoRegionEnv::kRewardDirect;
  v.q_s0_a1 = TwoRegionEnv::kRewardDetour + gamma * s1_best;
  return v;
}

ExperimentConfig desk_config() {
  KeyValueFile kv;
  auto cfg = ExperimentConfig::from_kv(kv);  // library defaults
  cfg.data.train_scenes = 6;
  cfg.data.test_scenes = 6;
  cfg.rl.epochs = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("action grid enumerations") {
    const ActionGrid g1 = build_action_grid(640, 480, {{320, 240}});
    CHECK(g1.count() == 9);
    CHECK(g1.classes[0].nx == 3);
    CHECK(g1.classes[0].ny == 3);
    CHECK(g1.actions[0].box.x == 0.0);
    CHECK(g1.actions[1].box.x == 160.0);  // row-major: x varies fastest
    CHECK(g1.actions[3].box.y == 120.0);
    for (const auto& a : g1.actions) {
      CHECK(a.box.x2() <= 640.0 + 1e-9);
      CHECK(a.box.y2() <= 480.0 + 1e-9);
    }

    const ActionGrid g2 = build_action_grid(640, 480, {{214, 160}});
    CHECK(g2.classes[0].nx == 4);
    CHECK(g2.classes[0].ny == 5);
    CHECK(g2.count() == 20);

    const ActionGrid g3 = build_action_grid(640, 480, {{640, 480}});
    CHECK(g3.count() == 1);
    CHECK(g3.actions[0].box.x == 0.0);

    const ActionGrid both = build_action_grid(640, 480, {{320, 240}, {214, 160}});
    CHECK(both.count() == 29);
    CHECK(both.classes[1].offset == 9);

    CHECK_THROWS(build_action_grid(100, 100, {{320, 240}}));
  }

  TEST_CASE("immediate reward worked cases") {
    // one proposal g=1, p_l=0.3, p_h=0.9; b/B = 0.25; lambda = 1
    CHECK(immediate_reward({{1, 0.3, 0.9}}, 100, 400, 1.0) == doctest::Approx(0.35));
    CHECK(immediate_reward({}, 100, 400, 1.0) == doctest::Approx(-0.25));
    CHECK(immediate_reward({{1, 0.3, 0.9}}, 100, 400, 0.0) == doctest::Approx(0.6));
  }

  TEST_CASE("head geometry matches the lattice") {
    CHECK(head_conv_geometry(6, 1) == std::pair<int, int>{6, 1});
    CHECK(head_conv_geometry(10, 2) == std::pair<int, int>{5, 5});
    // verify out = floor((in - k)/s) + 1 equals the target for a spread of cases
    for (int in = 4; in <= 160; in += 3) {
      for (int out = 1; out <= std::min(in, 8); ++out) {
        const auto [k, s] = head_conv_geometry(in, out);
        CHECK(k >= 1);
        CHECK((in - k) / s + 1 == out);
      }
    }
    CHECK_THROWS(head_conv_geometry(3, 5));
  }

  TEST_CASE("q_forward emits one value per grid action") {
    const ActionGrid grid = build_action_grid(320, 240, {{160, 120}, {107, 80}});
    QNetConfig qc;
    qc.seed = 5;
    const QNetwork q = build_qnetwork(160, 120, grid, qc);
    CHECK(q.action_count() == grid.count());
    const auto values = q_forward(q, uniform_map(160, 120, 0.01));
    CHECK(static_cast<int>(values.size()) == grid.count());
    for (const double v : values) CHECK(std::isfinite(v));

    CHECK_THROWS(q_forward(q, uniform_map(80, 60, 0.01)));
  }

  TEST_CASE("zero-weight network outputs its bias everywhere") {
    const ActionGrid grid = build_action_grid(320, 240, {{160, 120}});
    QNetConfig qc;
    QNetwork q = build_qnetwork(160, 120, grid, qc);
    for (auto& p : q.trunk.params)
      for (double& v : p.data) v = 0.0;
    for (auto& h : q.heads)
      for (auto& p : h.params)
        for (double& v : p.data) v = 0.0;
    q.heads[0].params[1].data[0] = 0.125;  // head bias
    const auto values = q_forward(q, uniform_map(160, 120, 0.3));
    for (const double v : values) CHECK(v == doctest::Approx(0.125));
  }

  TEST_CASE("q values are a pure function of the state") {
    const ActionGrid grid = build_action_grid(320, 240, {{160, 120}});
    QNetConfig qc;
    qc.seed = 9;
    const QNetwork q = build_qnetwork(160, 120, grid, qc);
    const auto a = q_forward(q, uniform_map(160, 120, 0.0));
    const auto b = q_forward(q, uniform_map(160, 120, 0.0));
    CHECK(a == b);
  }

  TEST_CASE("shifting a blob by the value-grid stride permutes the values") {
    // The trunk+head stack is translation-equivariant for shifts that are
    // multiples of the combined stride: moving a blob one value-grid cell to
    // the right must shift the action values identically (bitwise, since the
    // very same taps are summed in the same order).
    const ActionGrid grid = build_action_grid(320, 240, {{160, 120}});
    QNetConfig qc;
    qc.seed = 21;
    const QNetwork q = build_qnetwork(160, 120, grid, qc);

    // map 160x120 -> trunk out 78x58 -> head kernel/stride (26,26) in x:
    // one head cell = 2*26 = 52 map pixels.
    const int shift = 52;
    AccuracyGainMap m = uniform_map(160, 120, 0.0);
    for (int iy = 20; iy < 50; ++iy)
      for (int ix = 10; ix < 40; ++ix)
        m.values[static_cast<std::size_t>(iy) * 160 + ix] = 0.02;
    AccuracyGainMap shifted = uniform_map(160, 120, 0.0);
    for (int iy = 20; iy < 50; ++iy)
      for (int ix = 10; ix < 40; ++ix)
        shifted.values[static_cast<std::size_t>(iy) * 160 + ix + shift] = 0.02;

    const auto va = q_forward(q, m);
    const auto vb = q_forward(q, shifted);
    const int nx = grid.classes[0].nx, ny = grid.classes[0].ny;
    REQUIRE(nx == 3);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix + 1 < nx; ++ix)
        CHECK(va[static_cast<std::size_t>(iy) * nx + ix] ==
              vb[static_cast<std::size_t>(iy) * nx + ix + 1]);
  }

  TEST_CASE("epsilon-greedy selection") {
    Rng rng(1);
    CHECK(select_action({0.1, 0.9, 0.3}, 0.0, rng) == 1);
    CHECK(select_action({0.5, 0.9, 0.9}, 0.0, rng) == 1);  // tie -> lowest index
    CHECK_THROWS(select_action({}, 0.0, rng));

    // chi-squared uniformity over 9 actions at epsilon = 1
    const int k = 9, draws = 10000;
    std::vector<int> counts(k, 0);
    std::vector<double> values(k, 0.0);
    Rng rng2(123);
    for (int i = 0; i < draws; ++i)
      counts[static_cast<std::size_t>(select_action(values, 1.0, rng2))] += 1;
    const double expected = static_cast<double>(draws) / k;
    double chi2 = 0.0;
    for (const int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 26.13);  // 0.999 quantile, 8 dof
  }

  TEST_CASE("refinement keeps the original on uniform maps and clips at corners") {
    // Cell-aligned window and shifts: every candidate covers the same number
    // of cells, so all sums tie and the original is kept.
    const auto m = uniform_map(160, 120, 0.01);
    const ZoomAction original{BBox{80, 60, 160, 120}, 0};
    const ZoomAction kept = refine_window(original, m, 40.0, 30.0);
    CHECK(kept.box.x == original.box.x);
    CHECK(kept.box.y == original.box.y);

    const ZoomAction corner{BBox{0, 0, 160, 120}, 0};
    const ZoomAction clipped = refine_window(corner, m, 40.0, 30.0);
    CHECK(clipped.box.x >= 0.0);
    CHECK(clipped.box.y >= 0.0);
    CHECK(clipped.box.x2() <= 320.0 + 1e-9);
    CHECK(clipped.box.y2() <= 240.0 + 1e-9);
  }

  TEST_CASE("refinement moves toward an off-center blob by exactly mu") {
    // Mass blob centered mu_x to the left of the window center: evaluating
    // all nine candidates must pick the left shift.
    AccuracyGainMap m = uniform_map(160, 120, 0.0);
    // window at x=100..207 (full-res), blob under x=100-26.75 window position
    for (int iy = 35; iy < 55; ++iy)
      for (int ix = 40; ix < 63; ++ix)
        m.values[static_cast<std::size_t>(iy) * 160 + ix] = 0.02;
    const ZoomAction original{BBox{100, 50, 107, 80}, 0};
    const ZoomAction refined = refine_window(original, m, 26.75, 20.0);
    CHECK(refined.box.x == doctest::Approx(100.0 - 26.75));
    const double orig_sum = m.region_sum(original.box);
    CHECK(m.region_sum(refined.box) >= orig_sum);
  }

  TEST_CASE("refinement never lowers the AG sum on random maps") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
      AccuracyGainMap m = uniform_map(160, 120, 0.0);
      for (int b = 0; b < 6; ++b) {
        const int x0 = rng.uniform_int(0, 120), y0 = rng.uniform_int(0, 90);
        const double v = rng.uniform(-0.02, 0.03);
        for (int iy = y0; iy < std::min(120, y0 + 20); ++iy)
          for (int ix = x0; ix < std::min(160, x0 + 25); ++ix)
            m.values[static_cast<std::size_t>(iy) * 160 + ix] = v;
      }
      const ZoomAction a{BBox{rng.uniform(0, 213), rng.uniform(0, 160), 107, 80}, 0};
      const ZoomAction r = refine_window(a, m, 26.75, 20.0);
      CHECK(m.region_sum(r.box) >= m.region_sum(a.box) - 1e-12);
    }
  }

  TEST_CASE("toy env matches its scripted contract") {
    TwoRegionEnv env;
    CHECK(env.grid().count() == 2);
    env.reset();
    CHECK_FALSE(env.exhausted());
    auto r = env.step(1);
    CHECK(r.reward == doctest::Approx(TwoRegionEnv::kRewardDetour));
    CHECK_FALSE(r.terminal);
    r = env.step(0);
    CHECK(r.reward == doctest::Approx(TwoRegionEnv::kRewardDeferred));
    CHECK(r.terminal);

    env.reset();
    r = env.step(0);
    CHECK(r.reward == doctest::Approx(TwoRegionEnv::kRewardDirect));
    CHECK(r.terminal);
  }

  TEST_CASE("q-learning learns the two-region detour (single seed)") {
    const ToyValues vi = toy_value_iteration(0.5);
    CHECK(vi.q_s0_a1 > vi.q_s0_a0);  // value iteration says the detour wins

    TwoRegionEnv env;
    TrainCurves curves;
    const QNetwork q = q_learning_train(env, toy_rl_config(3), &curves);
    CHECK(curves.total_updates > 0);

    TwoRegionEnv probe;
    const auto values = q_forward(q, probe.reset());
    CHECK(values[1] > values[0]);
    CHECK(values[0] == doctest::Approx(vi.q_s0_a0).epsilon(0.5));
    CHECK(values[1] == doctest::Approx(vi.q_s0_a1).epsilon(0.5));
  }

  TEST_CASE("q-learning is deterministic per seed") {
    TwoRegionEnv e1, e2;
    RLConfig rl = toy_rl_config(8);
    rl.epochs = 4;
    const QNetwork a = q_learning_train(e1, rl);
    const QNetwork b = q_learning_train(e2, rl);
    for (std::size_t i = 0; i < a.trunk.params.size(); ++i)
      CHECK(a.trunk.params[i].data == b.trunk.params[i].data);
    for (std::size_t h = 0; h < a.heads.size(); ++h)
      for (std::size_t i = 0; i < a.heads[h].params.size(); ++i)
        CHECK(a.heads[h].params[i].data == b.heads[h].params[i].data);
  }

  TEST_CASE("episode stops immediately below the AG-sum threshold") {
    auto cfg = desk_config();
    SceneConfig empty = cfg.scene;
    empty.count_min = 0;
    empty.count_max = 0;
    const Scene scene = generate_scene(empty, 3);

    DetectorModel coarse = cfg.coarse, fine = cfg.fine;
    coarse.false_positive_rate = 0.0;
    fine.false_positive_rate = 0.0;
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);

    GainSource gains;
    gains.use_entropy = true;  // no regressor needed
    EpisodeOptions opts;
    const EpisodeResult ep = run_episode(scene, coarse, fine, gains, grid, nullptr,
                                         PolicyKind::greedy_ag, opts);
    CHECK(ep.zoom_trail.empty());
    CHECK(ep.ledger.pixels_processed == 320 * 240 / 4);
    CHECK(ep.ledger.steps == 0);
  }

  TEST_CASE("single high-gain region: one zoom then stop") {
    auto cfg = desk_config();
    SceneConfig one = cfg.scene;
    one.count_min = 3;
    one.count_max = 3;
    one.small_frac = 1.0;
    one.cluster_count = 1;
    one.cluster_sd = 8.0;
    const Scene scene = generate_scene(one, 12);

    DetectorModel coarse = cfg.coarse, fine = cfg.fine;
    coarse.false_positive_rate = 0.0;
    coarse.score_noise_sd = 0.0;
    coarse.size_midpoint = 1.0;  // coarse emits everything with score ~1...
    fine.false_positive_rate = 0.0;
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);

    GainSource gains;
    gains.use_entropy = true;
    // entropy of a saturated score is ~0, so force informative scores instead
    coarse.size_midpoint = cfg.coarse.size_midpoint;

    EpisodeOptions opts;
    opts.max_steps = 8;
    const EpisodeResult ep = run_episode(scene, coarse, fine, gains, grid, nullptr,
                                         PolicyKind::greedy_ag, opts);
    // all proposals are in one cluster: after zooming it the map is empty
    CHECK(ep.zoom_trail.size() <= 2);
    for (std::size_t i = 0; i < ep.zoom_trail.size(); ++i) CHECK(ep.rewards.size() > i);
  }

  TEST_CASE("max_steps zero reproduces the coarse-only baseline") {
    auto cfg = desk_config();
    const Scene scene = generate_scene(cfg.scene, 21);
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);
    GainSource gains;
    gains.use_entropy = true;
    EpisodeOptions opts;
    opts.max_steps = 0;

    const EpisodeResult ep = run_episode(scene, cfg.coarse, cfg.fine, gains, grid,
                                         nullptr, PolicyKind::greedy_ag, opts);
    CHECK(ep.zoom_trail.empty());
    CHECK(ep.ledger.pixels_processed == 320 * 240 / 4);

    CostLedger direct_ledger;
    const auto direct = run_detector(cfg.coarse, scene, BBox{0, 0, 320, 240}, 0.5,
                                     direct_ledger);
    REQUIRE(ep.detections.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i)
      CHECK(ep.detections[i].score == direct[i].score);
  }

  TEST_CASE("greedy episodes never re-select a zoomed region") {
    auto cfg = desk_config();
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);
    GainSource gains;
    gains.use_entropy = true;
    EpisodeOptions opts;
    opts.max_steps = 8;

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Scene scene = generate_scene(cfg.scene, seed);
      std::vector<BBox> taken;
      bool repeat_free = true;
      double worst_prev_region = 0.0;
      const auto obs = [&](const StepObservation& o) {
        for (const auto& prev : taken)
          if (iou(prev, o.refined.box) == 1.0) repeat_free = false;
        taken.push_back(o.refined.box);
        for (const auto& prev : taken)
          worst_prev_region =
              std::max(worst_prev_region, std::abs(o.map_after->region_sum(prev)));
        CHECK(o.refined_sum >= o.selected_sum - 1e-12);
      };
      run_episode(scene, cfg.coarse, cfg.fine, gains, grid, nullptr,
                  PolicyKind::greedy_ag, opts, obs);
      CHECK(repeat_free);
      CHECK(worst_prev_region == 0.0);  // zoomed regions stay exactly zero
    }
  }

  TEST_CASE("reward identity against replacement bookkeeping at lambda zero") {
    auto cfg = desk_config();
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);
    GainSource gains;
    gains.use_entropy = true;
    EpisodeOptions opts;
    opts.lambda = 0.0;
    opts.max_steps = 6;

    for (std::uint64_t seed = 100; seed < 140; ++seed) {
      const Scene scene = generate_scene(cfg.scene, seed);
      double bookkeeping = 0.0;
      const auto obs = [&](const StepObservation& o) {
        for (const auto& item : o.replaced)
          bookkeeping += std::abs(item.g - item.p_l) - std::abs(item.g - item.p_h);
      };
      const EpisodeResult ep = run_episode(scene, cfg.coarse, cfg.fine, gains, grid,
                                           nullptr, PolicyKind::greedy_ag, opts, obs);
      double reward_sum = 0.0;
      for (const double r : ep.rewards) reward_sum += r;
      CHECK(reward_sum == doctest::Approx(bookkeeping).epsilon(1e-9));
    }
  }

  TEST_CASE("pixel budget stops the episode before an unaffordable window") {
    auto cfg = desk_config();
    SceneConfig sc = cfg.scene;
    sc.count_min = 8;
    sc.count_max = 8;
    const Scene scene = generate_scene(sc, 5);
    const ActionGrid grid = build_action_grid(320, 240, cfg.window_sizes);
    GainSource gains;
    gains.use_entropy = true;

    EpisodeOptions opts;
    opts.pixel_budget = 0.40 * 320 * 240;  // room for one small window after coarse
    opts.max_steps = 8;
    const EpisodeResult ep = run_episode(scene, cfg.coarse, cfg.fine, gains, grid,
                                         nullptr, PolicyKind::greedy_ag, opts);
    CHECK(static_cast<double>(ep.ledger.pixels_processed) <= opts.pixel_budget + 0.5);
  }

  TEST_CASE("qnetwork save and load round-trip") {
    const ActionGrid grid = build_action_grid(320, 240, {{160, 120}, {107, 80}});
    QNetConfig qc;
    qc.seed = 77;
    const QNetwork q = build_qnetwork(160, 120, grid, qc);

    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const std::string w = (dir / "zoomdet_q_test.weights").string();
    const std::string s = (dir / "zoomdet_q_test.grid.txt").string();
    save_qnetwork(q, w, s);
    const QNetwork loaded = load_qnetwork(w, s);
    CHECK(loaded.map_w == q.map_w);
    CHECK(loaded.head_out == q.head_out);

    const auto m = uniform_map(160, 120, 0.005);
    const auto va = q_forward(q, m);
    const auto vb = q_forward(loaded, m);
    REQUIRE(va.size() == vb.size());
    for (std::size_t i = 0; i < va.size(); ++i)
      CHECK(va[i] == doctest::Approx(vb[i]).epsilon(1e-5));
    fs::remove(w);
    fs::remove(s);
  }
}
