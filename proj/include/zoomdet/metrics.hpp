#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zoomdet/detection.hpp"
#include "zoomdet/sim.hpp"

namespace zoomdet {

// Single-class average precision with all-points interpolation (precision
// envelope). Greedy TP assignment in score order; each groundtruth box is
// matched at most once at IoU >= threshold; ties in score break by index.
double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& groundtruth,
                         double iou_threshold = 0.5);

// Same metric over a pooled set of scenes: one global ranking, matching
// restricted to each detection's own scene.
double pooled_average_precision(const std::vector<std::vector<Detection>>& per_scene,
                                const std::vector<Scene>& scenes,
                                double iou_threshold = 0.5);

struct RunAggregate {
  double ap = 0.0;
  std::int64_t pixels = 0;
  double sim_time = 0.0;
};

struct MetricsReport {
  double ap = 0.0;
  double a_perc = 0.0;  // ratios to the Fine-detection-all baseline
  double p_perc = 0.0;
  double t_perc = 0.0;
};

MetricsReport compute_percentages(const RunAggregate& run, const RunAggregate& fine);

struct SweepRow {
  std::string strategy;
  double budget = 1.0;  // fraction of full-frame pixels per scene
  bool attainable = true;
  MetricsReport metrics;
  int seed_count = 1;
};

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
void write_sweep_json(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace zoomdet
