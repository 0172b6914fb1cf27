#include <doctest.h>

#include <cmath>

#include "zoomdet/regressor.hpp"
#include "zoomdet/rng.hpp"

using namespace zoomdet;

namespace {

Correspondence sample_with(const std::vector<double>& feature, double target) {
  Correspondence c;
  c.coarse.feature = feature;
  c.gain_target = target;
  return c;
}

std::vector<double> random_feature(Rng& rng, int dim) {
  std::vector<double> f(static_cast<std::size_t>(dim));
  for (double& v : f) v = rng.uniform(-1.0, 1.0);
  return f;
}

RegressorConfig small_config() {
  RegressorConfig cfg;
  cfg.feature_dim = 8;
  cfg.hidden = 32;
  cfg.epochs = 200;
  return cfg;
}

}  // namespace

TEST_SUITE("regressor") {
  TEST_CASE("empty data is an error") {
    CHECK_THROWS(train_regressor({}, small_config()));
  }

  TEST_CASE("constant targets are fit almost exactly") {
    Rng rng(1);
    const auto cfg = small_config();
    std::vector<Correspondence> data;
    for (int i = 0; i < 128; ++i)
      data.push_back(sample_with(random_feature(rng, cfg.feature_dim), 0.37));
    RegressorTrainStats stats;
    const GainRegressor reg = train_regressor(data, cfg, &stats);
    CHECK(stats.final_mse < 1e-4);
    CHECK(predict_gain(reg, random_feature(rng, cfg.feature_dim)) ==
          doctest::Approx(0.37).epsilon(0.05));
  }

  TEST_CASE("noiseless linear targets reach small mse within 200 epochs") {
    Rng rng(2);
    const auto cfg = small_config();
    std::vector<Correspondence> data;
    for (int i = 0; i < 256; ++i) {
      auto f = random_feature(rng, cfg.feature_dim);
      data.push_back(sample_with(f, 0.8 * f[2]));
    }
    RegressorTrainStats stats;
    train_regressor(data, cfg, &stats);
    CHECK(stats.final_mse < 0.01);
  }

  TEST_CASE("pure-noise targets predict near zero") {
    Rng rng(3);
    const auto cfg = small_config();
    // mean-zero by construction: every noise target is paired with its
    // negation on an independent feature
    std::vector<Correspondence> data;
    for (int i = 0; i < 256; ++i) {
      const double t = rng.uniform(-1.0, 1.0);
      data.push_back(sample_with(random_feature(rng, cfg.feature_dim), t));
      data.push_back(sample_with(random_feature(rng, cfg.feature_dim), -t));
    }
    const GainRegressor reg = train_regressor(data, cfg);
    double mean = 0.0;
    const int probes = 200;
    for (int i = 0; i < probes; ++i)
      mean += predict_gain(reg, random_feature(rng, cfg.feature_dim));
    mean /= probes;
    CHECK(std::abs(mean) < 0.05);
  }

  TEST_CASE("training is deterministic per seed") {
    Rng rng(4);
    const auto cfg = small_config();
    std::vector<Correspondence> data;
    for (int i = 0; i < 64; ++i) {
      auto f = random_feature(rng, cfg.feature_dim);
      data.push_back(sample_with(f, f[0] - 0.5 * f[1]));
    }
    const GainRegressor a = train_regressor(data, cfg);
    const GainRegressor b = train_regressor(data, cfg);
    for (std::size_t i = 0; i < a.net.params.size(); ++i)
      CHECK(a.net.params[i].data == b.net.params[i].data);
  }

  TEST_CASE("zeroed final layer predicts zero; dimension mismatch throws") {
    const auto cfg = small_config();
    Rng rng(5);
    std::vector<Correspondence> data;
    for (int i = 0; i < 32; ++i)
      data.push_back(sample_with(random_feature(rng, cfg.feature_dim), 0.1));
    GainRegressor reg = train_regressor(data, cfg);
    for (double& v : reg.net.params[2].data) v = 0.0;  // final dense weights
    for (double& v : reg.net.params[3].data) v = 0.0;  // final bias
    CHECK(predict_gain(reg, random_feature(rng, cfg.feature_dim)) == 0.0);
    CHECK_THROWS(predict_gain(reg, std::vector<double>(3, 0.0)));
  }

  TEST_CASE("positive and negative gain directions are learned") {
    Rng rng(6);
    auto cfg = small_config();
    // zoom-helps data: low score feature -> positive target
    std::vector<Correspondence> helps, hurts;
    for (int i = 0; i < 256; ++i) {
      auto f = random_feature(rng, cfg.feature_dim);
      f[0] = rng.uniform(0.2, 0.6);
      helps.push_back(sample_with(f, 0.6 - f[0] * 0.5));
      auto f2 = f;
      hurts.push_back(sample_with(f2, -(0.6 - f2[0] * 0.5)));
    }
    const GainRegressor up = train_regressor(helps, cfg);
    const GainRegressor down = train_regressor(hurts, cfg);
    auto probe = random_feature(rng, cfg.feature_dim);
    probe[0] = 0.4;
    CHECK(predict_gain(up, probe) > 0.1);
    CHECK(predict_gain(down, probe) < -0.1);
  }

  // -- AG map ---------------------------------------------------------------

  TEST_CASE("single box spreads its gain uniformly") {
    // 10x10 map-cell box, gain 0.5, alpha 1 -> 0.005 per cell, sum 0.5
    const auto m = build_ag_map({{BBox{2, 3, 10, 10}, 0.5}}, 40, 30, 1.0, 2.0);
    CHECK(m.at(2, 3) == doctest::Approx(0.005));
    CHECK(m.at(11, 12) == doctest::Approx(0.005));
    CHECK(m.at(1, 3) == 0.0);
    CHECK(m.at(12, 3) == 0.0);
    CHECK(m.sum() == doctest::Approx(0.5).epsilon(1e-9));
  }

  TEST_CASE("no proposals gives the zero map") {
    const auto m = build_ag_map({}, 16, 12, 1.0, 2.0);
    CHECK(m.sum() == 0.0);
    for (const double v : m.values) CHECK(v == 0.0);
  }

  TEST_CASE("overlapping proposals sum") {
    const std::vector<GainProposal> props{{BBox{2, 3, 10, 10}, 0.5},
                                          {BBox{2, 3, 10, 10}, 0.5}};
    const auto m = build_ag_map(props, 40, 30, 1.0, 2.0);
    CHECK(m.at(2, 3) == doctest::Approx(0.010));
    CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("mass identity for non-overlapping proposals") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<GainProposal> props;
      double total = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double gain = rng.uniform(-0.5, 0.9);
        // disjoint 6x5 boxes in separate columns
        props.push_back({BBox{k * 9.0 + 1.0, 2.0, 6.0, 5.0}, gain});
        total += gain;
      }
      const auto m = build_ag_map(props, 40, 12, 1.0, 2.0);
      CHECK(m.sum() == doctest::Approx(total).epsilon(1e-9));
    }
  }

  TEST_CASE("map support is inside proposal boxes") {
    Rng rng(9);
    std::vector<GainProposal> props;
    for (int k = 0; k < 5; ++k)
      props.push_back({BBox{rng.uniform(0, 20), rng.uniform(0, 10), rng.uniform(2, 8),
                            rng.uniform(2, 8)},
                       rng.uniform(0.1, 0.9)});
    const auto m = build_ag_map(props, 30, 20, 1.0, 2.0);
    for (int iy = 0; iy < m.height; ++iy) {
      for (int ix = 0; ix < m.width; ++ix) {
        if (m.at(ix, iy) == 0.0) continue;
        bool inside_any = false;
        for (const auto& p : props)
          if (contains(p.box, ix + 0.5, iy + 0.5)) inside_any = true;
        CHECK(inside_any);
      }
    }
  }

  TEST_CASE("alpha scales the map, degenerate boxes throw") {
    const auto m1 = build_ag_map({{BBox{0, 0, 4, 4}, 0.4}}, 16, 16, 1.0, 2.0);
    const auto m2 = build_ag_map({{BBox{0, 0, 4, 4}, 0.4}}, 16, 16, 2.5, 2.0);
    CHECK(m2.sum() == doctest::Approx(2.5 * m1.sum()).epsilon(1e-9));
    CHECK_THROWS(build_ag_map({{BBox{0, 0, 0.0, 4}, 0.4}}, 16, 16, 1.0, 2.0));
  }

  TEST_CASE("zero_region is idempotent and exact") {
    const auto base = build_ag_map({{BBox{2, 2, 12, 9}, 0.8}}, 32, 24, 1.0, 2.0);
    // region given in full-resolution coordinates (scale 2)
    const BBox region{8.0, 6.0, 20.0, 14.0};

    AccuracyGainMap once = base;
    once.zero_region(region);
    AccuracyGainMap twice = once;
    twice.zero_region(region);
    CHECK(once.values == twice.values);

    CHECK(once.region_sum(region) == 0.0);
    const double removed = base.region_sum(region);
    CHECK(once.sum() == doctest::Approx(base.sum() - removed).epsilon(1e-9));

    AccuracyGainMap all = base;
    all.zero_region(BBox{0, 0, 64, 48});
    CHECK(all.sum() == 0.0);
  }
}
