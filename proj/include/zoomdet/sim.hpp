#pragma once

#include <cstdint>
#include <vector>

#include "zoomdet/detection.hpp"

namespace zoomdet {

// Geometric scene: no image pixels, only object boxes. The detector oracles
// below turn a scene into score-model detections.
struct Scene {
  int width = 0;
  int height = 0;
  std::vector<GroundTruthObject> objects;
  std::uint64_t seed = 0;
};

struct SceneConfig {
  int width = 320;
  int height = 240;
  int count_min = 5;
  int count_max = 8;
  // Sizes are object heights in full-resolution pixels. Small objects are the
  // ones a half-scale pass struggles with; large ones are easy at any scale.
  double small_frac = 0.7;
  double small_height_min = 14.0;
  double small_height_max = 22.0;
  double large_height_min = 60.0;
  double large_height_max = 110.0;
  double aspect_mean = 0.45;
  double aspect_sd = 0.06;
  // cluster_count > 0 places small objects around that many well-separated
  // centers; large objects always scatter uniformly.
  int cluster_count = 2;
  double cluster_sd = 20.0;
};

Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

// Score model for a black-box detector. Detection quality is a logistic
// function of the object size at the processed scale; an optional second
// logistic rolls quality off again above upper_midpoint, which lets a fine
// oracle be configured worse than the coarse one for very large objects.
struct DetectorModel {
  double size_midpoint = 9.0;
  double size_softness = 2.0;
  double score_noise_sd = 0.04;
  double false_positive_rate = 25.0;  // per processed megapixel
  double localization_jitter_sd = 0.5;
  int feature_dim = 16;
  std::uint64_t seed_stream = 1;
  double upper_midpoint = 0.0;  // 0 disables the rolloff
  double upper_softness = 10.0;
  double fp_score_mean = 0.22;
  double fp_score_sd = 0.08;
  // Simulated latency: base seconds per invocation plus seconds per processed
  // megapixel. Keeps the time ledger deterministic across runs.
  double time_base = 0.02;
  double time_per_mpixel = 0.3;
};

struct CostLedger {
  std::int64_t pixels_processed = 0;
  double wall_time = 0.0;  // simulated seconds
  int steps = 0;
};

// Probability that an object of the given full-resolution height is emitted
// when the detector runs at `scale`.
double detection_probability(const DetectorModel& model, double object_height,
                             double scale);

// Apply the oracle to `region` (full-resolution coordinates) at `scale`.
// Emitted boxes are reported in full-resolution coordinates; the ledger is
// charged area(region) * scale^2 pixels plus simulated time.
std::vector<Detection> run_detector(const DetectorModel& model, const Scene& scene,
                                    const BBox& region, double scale,
                                    CostLedger& ledger);

}  // namespace zoomdet
