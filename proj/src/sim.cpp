#include "zoomdet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "zoomdet/rng.hpp"

namespace zoomdet {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Clip a box into [0,w]x[0,h], keeping at least 2px per side.
BBox clip_to_frame(BBox b, double w, double h) {
  const double min_side = 2.0;
  b.w = std::max(b.w, min_side);
  b.h = std::max(b.h, min_side);
  b.x = std::clamp(b.x, 0.0, w - b.w);
  b.y = std::clamp(b.y, 0.0, h - b.h);
  return b;
}

struct Placed {
  double cx, cy, obj_h, obj_w;
};

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  if (config.width <= 0 || config.height <= 0)
    throw std::invalid_argument("generate_scene: frame dimensions must be positive");

  Rng rng(mix_seed(seed, 0x5ce9eULL));
  Scene scene;
  scene.width = config.width;
  scene.height = config.height;
  scene.seed = seed;

  const int n = config.count_min >= config.count_max
                    ? config.count_min
                    : rng.uniform_int(config.count_min, config.count_max);

  // Cluster centers for small objects, kept apart so zooming one does not
  // accidentally cover another.
  std::vector<std::pair<double, double>> centers;
  if (config.cluster_count > 0) {
    const double min_sep = 0.35 * std::min(config.width, config.height);
    const double margin = 0.12;
    for (int c = 0; c < config.cluster_count; ++c) {
      double cx = 0.0, cy = 0.0;
      for (int attempt = 0; attempt < 20; ++attempt) {
        cx = rng.uniform(margin * config.width, (1.0 - margin) * config.width);
        cy = rng.uniform(margin * config.height, (1.0 - margin) * config.height);
        bool ok = true;
        for (const auto& [ox, oy] : centers) {
          const double d = std::hypot(cx - ox, cy - oy);
          if (d < min_sep) ok = false;
        }
        if (ok) break;
      }
      centers.emplace_back(cx, cy);
    }
  }

  int small_index = 0;
  for (int i = 0; i < n; ++i) {
    const bool small = rng.uniform() < config.small_frac;
    const double obj_h = small
                             ? rng.uniform(config.small_height_min, config.small_height_max)
                             : rng.uniform(config.large_height_min, config.large_height_max);
    const double aspect =
        std::clamp(rng.normal(config.aspect_mean, config.aspect_sd), 0.25, 0.85);
    const double obj_w = obj_h * aspect;

    double cx, cy;
    if (small && !centers.empty()) {
      // round-robin so every cluster is populated
      const auto& [kx, ky] =
          centers[static_cast<std::size_t>(small_index++ % centers.size())];
      cx = kx + rng.normal(0.0, config.cluster_sd);
      cy = ky + rng.normal(0.0, config.cluster_sd);
    } else {
      cx = rng.uniform(0.0, static_cast<double>(config.width));
      cy = rng.uniform(0.0, static_cast<double>(config.height));
    }

    BBox box{cx - 0.5 * obj_w, cy - 0.5 * obj_h, obj_w, obj_h};
    box = clip_to_frame(box, config.width, config.height);
    scene.objects.push_back(GroundTruthObject{box, "object"});
  }
  return scene;
}

double detection_probability(const DetectorModel& model, double object_height,
                             double scale) {
  const double eff = object_height * scale;
  double p = sigmoid((eff - model.size_midpoint) / model.size_softness);
  if (model.upper_midpoint > 0.0)
    p *= sigmoid((model.upper_midpoint - eff) / model.upper_softness);
  return p;
}

std::vector<Detection> run_detector(const DetectorModel& model, const Scene& scene,
                                    const BBox& region, double scale,
                                    CostLedger& ledger) {
  if (scale <= 0.0) throw std::invalid_argument("run_detector: scale must be positive");
  if (!region.valid() || region.x < -1e-9 || region.y < -1e-9 ||
      region.x2() > scene.width + 1e-9 || region.y2() > scene.height + 1e-9)
    throw std::invalid_argument("run_detector: region outside frame");

  Rng rng(mix_seed(model.seed_stream, scene.seed, seed_bits(region.x),
                   seed_bits(region.y), seed_bits(region.w), seed_bits(region.h),
                   seed_bits(scale)));

  const Source source = scale < 1.0 ? Source::coarse : Source::fine;
  std::vector<Detection> dets;

  for (const auto& obj : scene.objects) {
    if (!intersects(obj.box, region)) continue;
    const double p = detection_probability(model, obj.box.h, scale);
    if (rng.uniform() >= p) continue;

    Detection d;
    d.source = source;
    d.score = model.score_noise_sd > 0.0
                  ? clamp01(p + rng.normal(0.0, model.score_noise_sd))
                  : clamp01(p);
    BBox b = obj.box;
    if (model.localization_jitter_sd > 0.0) {
      const double sd = model.localization_jitter_sd / scale;
      b.x += rng.normal(0.0, sd);
      b.y += rng.normal(0.0, sd);
      b.w = std::max(2.0, b.w + rng.normal(0.0, 0.5 * sd));
      b.h = std::max(2.0, b.h + rng.normal(0.0, 0.5 * sd));
    }
    d.box = clip_to_frame(b, scene.width, scene.height);
    dets.push_back(std::move(d));
  }

  // False positives per processed megapixel, drawn from a low-score
  // distribution, sized around the detector's reliable range.
  const double processed_mpix = area(region) * scale * scale / 1e6;
  const int n_fp = rng.poisson(model.false_positive_rate * processed_mpix);
  for (int i = 0; i < n_fp; ++i) {
    const double cx = rng.uniform(region.x, region.x2());
    const double cy = rng.uniform(region.y, region.y2());
    const double fh = model.size_midpoint / scale * rng.uniform(0.8, 2.5);
    const double fw = fh * rng.uniform(0.35, 0.6);
    Detection d;
    d.source = source;
    d.score = clamp01(rng.normal(model.fp_score_mean, model.fp_score_sd));
    d.box = clip_to_frame(BBox{cx - 0.5 * fw, cy - 0.5 * fh, fw, fh}, scene.width,
                          scene.height);
    dets.push_back(std::move(d));
  }

  // Feature encoding: score, scaled height, aspect ratio, local crowding
  // estimate, then noise dims. Computed after the full list exists because
  // the crowding term looks at neighbors.
  const double radius = 60.0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int neighbors = 0;
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (j == i) continue;
      const double dist = std::hypot(dets[j].box.cx() - dets[i].box.cx(),
                                     dets[j].box.cy() - dets[i].box.cy());
      if (dist < radius) ++neighbors;
    }
    std::vector<double>& f = dets[i].feature;
    f.assign(static_cast<std::size_t>(model.feature_dim), 0.0);
    f[0] = dets[i].score;
    f[1] = dets[i].box.h * scale / 50.0;
    f[2] = dets[i].box.w / dets[i].box.h;
    f[3] = std::min(1.0, neighbors / 8.0);
    for (std::size_t k = 4; k < f.size(); ++k) f[k] = 0.3 * rng.normal();
  }

  const double processed = area(region) * scale * scale;
  ledger.pixels_processed += std::llround(processed);
  ledger.wall_time += model.time_base + model.time_per_mpixel * processed / 1e6;
  return dets;
}

}  // namespace zoomdet
