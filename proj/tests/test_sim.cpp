#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "zoomdet/rng.hpp"
#include "zoomdet/sim.hpp"

using namespace zoomdet;

namespace {

DetectorModel quiet_model() {
  DetectorModel m;
  m.score_noise_sd = 0.0;
  m.false_positive_rate = 0.0;
  m.localization_jitter_sd = 0.0;
  return m;
}

bool scenes_equal(const Scene& a, const Scene& b) {
  if (a.width != b.width || a.height != b.height || a.objects.size() != b.objects.size())
    return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    const auto& x = a.objects[i].box;
    const auto& y = b.objects[i].box;
    if (x.x != y.x || x.y != y.y || x.w != y.w || x.h != y.h) return false;
  }
  return true;
}

// Test-local Lloyd's algorithm, the oracle for the clustering contract.
struct KMeans {
  std::vector<std::pair<double, double>> centroids;
  std::vector<int> assign;
};

KMeans kmeans2(const std::vector<std::pair<double, double>>& pts) {
  KMeans km;
  // farthest-pair initialization keeps Lloyd's away from degenerate optima
  std::size_t bi = 0, bj = 1;
  double best = -1.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double d = std::hypot(pts[i].first - pts[j].first,
                                  pts[i].second - pts[j].second);
      if (d > best) {
        best = d;
        bi = i;
        bj = j;
      }
    }
  km.centroids = {pts[bi], pts[bj]};
  km.assign.assign(pts.size(), 0);
  for (int iter = 0; iter < 50; ++iter) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d0 = std::hypot(pts[i].first - km.centroids[0].first,
                             pts[i].second - km.centroids[0].second);
      double d1 = std::hypot(pts[i].first - km.centroids[1].first,
                             pts[i].second - km.centroids[1].second);
      km.assign[i] = d1 < d0 ? 1 : 0;
    }
    for (int c = 0; c < 2; ++c) {
      double sx = 0, sy = 0;
      int n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (km.assign[i] != c) continue;
        sx += pts[i].first;
        sy += pts[i].second;
        ++n;
      }
      if (n > 0) km.centroids[static_cast<std::size_t>(c)] = {sx / n, sy / n};
    }
  }
  return km;
}

}  // namespace

TEST_SUITE("sim") {
  TEST_CASE("empty object count gives empty scene") {
    SceneConfig cfg;
    cfg.count_min = 0;
    cfg.count_max = 0;
    const Scene s = generate_scene(cfg, 5);
    CHECK(s.objects.empty());
    CHECK(s.width == cfg.width);
  }

  TEST_CASE("scene generation is deterministic per seed") {
    SceneConfig cfg;
    const Scene a = generate_scene(cfg, 99);
    const Scene b = generate_scene(cfg, 99);
    const Scene c = generate_scene(cfg, 100);
    CHECK(scenes_equal(a, b));
    CHECK_FALSE(scenes_equal(a, c));
  }

  TEST_CASE("objects stay inside the frame") {
    SceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Scene s = generate_scene(cfg, seed);
      for (const auto& obj : s.objects) {
        CHECK(obj.box.x >= 0.0);
        CHECK(obj.box.y >= 0.0);
        CHECK(obj.box.x2() <= cfg.width + 1e-9);
        CHECK(obj.box.y2() <= cfg.height + 1e-9);
      }
    }
  }

  TEST_CASE("cluster_count=2 produces two spatial clusters (k-means oracle)") {
    SceneConfig cfg;
    cfg.count_min = 10;
    cfg.count_max = 10;
    cfg.small_frac = 1.0;
    cfg.cluster_count = 2;
    cfg.cluster_sd = 10.0;
    const Scene s = generate_scene(cfg, 17);

    std::vector<std::pair<double, double>> centers;
    for (const auto& obj : s.objects) centers.emplace_back(obj.box.cx(), obj.box.cy());
    const KMeans km = kmeans2(centers);

    const double sep = std::hypot(km.centroids[0].first - km.centroids[1].first,
                                  km.centroids[0].second - km.centroids[1].second);
    double intra = 0.0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      const auto& c = km.centroids[static_cast<std::size_t>(km.assign[i])];
      intra += std::hypot(centers[i].first - c.first, centers[i].second - c.second);
    }
    intra /= static_cast<double>(centers.size());
    CHECK(sep > 3.0 * intra);
    CHECK(sep > 60.0);
  }

  TEST_CASE("empty scene with no false positives yields no detections") {
    SceneConfig cfg;
    cfg.count_min = 0;
    cfg.count_max = 0;
    const Scene s = generate_scene(cfg, 1);
    DetectorModel m = quiet_model();
    CostLedger ledger;
    const BBox frame{0, 0, 320, 240};
    CHECK(run_detector(m, s, frame, 1.0, ledger).empty());
  }

  TEST_CASE("detector calls are deterministic") {
    SceneConfig cfg;
    const Scene s = generate_scene(cfg, 4);
    DetectorModel m;
    const BBox frame{0, 0, 320, 240};
    CostLedger l1, l2;
    const auto a = run_detector(m, s, frame, 0.5, l1);
    const auto b = run_detector(m, s, frame, 0.5, l2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].score == b[i].score);
      CHECK(a[i].box.x == b[i].box.x);
      CHECK(a[i].feature == b[i].feature);
    }
    CHECK(l1.pixels_processed == l2.pixels_processed);
  }

  TEST_CASE("emission frequency at the size midpoint is one half") {
    // Monte Carlo oracle: an object whose effective size equals the midpoint
    // is emitted with probability 0.5; measured over 10,000 seed streams.
    SceneConfig cfg;
    cfg.count_min = 1;
    cfg.count_max = 1;
    cfg.small_frac = 1.0;
    cfg.small_height_min = 12.0;
    cfg.small_height_max = 12.0;
    const Scene s = generate_scene(cfg, 11);
    REQUIRE(s.objects.size() == 1);

    DetectorModel m = quiet_model();
    m.size_midpoint = s.objects[0].box.h;  // sigma(0) = 0.5 at scale 1
    const BBox frame{0, 0, 320, 240};

    int hits = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
      m.seed_stream = static_cast<std::uint64_t>(t);
      CostLedger ledger;
      hits += run_detector(m, s, frame, 1.0, ledger).empty() ? 0 : 1;
    }
    const double freq = static_cast<double>(hits) / trials;
    CHECK(freq == doctest::Approx(0.5).epsilon(0.04));  // +-0.02 absolute
  }

  TEST_CASE("detection probability is monotone in size and scale") {
    DetectorModel m = quiet_model();  // rolloff disabled
    double prev = 0.0;
    for (double h = 2.0; h <= 60.0; h += 1.0) {
      const double p = detection_probability(m, h, 1.0);
      CHECK(p >= prev);
      prev = p;
    }
    for (double h = 4.0; h <= 60.0; h += 4.0)
      CHECK(detection_probability(m, h, 1.0) >=
            detection_probability(m, h, 0.5));
  }

  TEST_CASE("upper rolloff makes the oracle worse for very large objects") {
    DetectorModel m = quiet_model();
    m.upper_midpoint = 60.0;
    m.upper_softness = 8.0;
    CHECK(detection_probability(m, 90.0, 1.0) < 0.05);
    CHECK(detection_probability(m, 90.0, 0.5) > 0.8);  // half scale dodges the rolloff
  }

  TEST_CASE("ledger accounting: full frame at half scale") {
    SceneConfig cfg;
    cfg.width = 640;
    cfg.height = 480;
    cfg.count_min = 0;
    cfg.count_max = 0;
    const Scene s = generate_scene(cfg, 2);
    DetectorModel m = quiet_model();
    CostLedger ledger;
    run_detector(m, s, BBox{0, 0, 640, 480}, 0.5, ledger);
    CHECK(ledger.pixels_processed == 640 * 480 / 4);  // 76,800
    CHECK(ledger.wall_time == doctest::Approx(m.time_base + m.time_per_mpixel * 0.0768));
  }

  TEST_CASE("ledger cost additivity over regions") {
    SceneConfig cfg;
    const Scene s = generate_scene(cfg, 3);
    DetectorModel m;
    CostLedger ledger;
    run_detector(m, s, BBox{0, 0, 320, 240}, 0.5, ledger);
    run_detector(m, s, BBox{0, 0, 107, 80}, 1.0, ledger);
    run_detector(m, s, BBox{50, 40, 107, 80}, 1.0, ledger);  // overlap charged anyway
    CHECK(ledger.pixels_processed == 19200 + 8560 + 8560);
  }

  TEST_CASE("region and scale errors") {
    SceneConfig cfg;
    const Scene s = generate_scene(cfg, 1);
    DetectorModel m;
    CostLedger ledger;
    CHECK_THROWS(run_detector(m, s, BBox{300, 0, 100, 50}, 1.0, ledger));
    CHECK_THROWS(run_detector(m, s, BBox{0, 0, 50, 50}, 0.0, ledger));
    CHECK_THROWS(run_detector(m, s, BBox{0, 0, 50, 50}, -1.0, ledger));
  }

  TEST_CASE("features have the configured dimension and encoding") {
    SceneConfig cfg;
    cfg.count_min = 3;
    cfg.count_max = 3;
    const Scene s = generate_scene(cfg, 8);
    DetectorModel m = quiet_model();
    m.size_midpoint = 1.0;  // emit everything
    CostLedger ledger;
    const auto dets = run_detector(m, s, BBox{0, 0, 320, 240}, 1.0, ledger);
    REQUIRE_FALSE(dets.empty());
    for (const auto& d : dets) {
      REQUIRE(static_cast<int>(d.feature.size()) == m.feature_dim);
      CHECK(d.feature[0] == doctest::Approx(d.score));
      CHECK(d.feature[1] == doctest::Approx(d.box.h / 50.0));
      CHECK(d.feature[2] == doctest::Approx(d.box.w / d.box.h));
    }
  }
}
