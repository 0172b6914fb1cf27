#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "zoomdet/detection.hpp"
#include "zoomdet/sim.hpp"

namespace zoomdet {

// One training unit for the gain regressor: a coarse detection, the fine
// detection it corresponds to (if any), the groundtruth label, and the gain
// target measuring whether the fine pass got closer to the label.
struct Correspondence {
  Detection coarse;
  std::optional<Detection> fine;
  int label_g = 0;
  double gain_target = 0.0;
};

// One-to-one greedy matching: candidate pairs sorted by IoU descending,
// accepted when both sides are still free and IoU > 0.5.
std::vector<std::pair<int, int>> match_detections(const std::vector<Detection>& coarse,
                                                  const std::vector<Detection>& fine);

// 1 iff the detection overlaps any groundtruth box at IoU >= 0.5.
int assign_label(const Detection& det, const std::vector<GroundTruthObject>& groundtruth);

// |g - p_l| - |g - p_h|: positive when the fine score is closer to the label.
double gain_target(int g, double p_l, double p_h);

// Entropy of the coarse score, the hand-crafted gain surrogate used by the
// ER baseline. Natural log, 0*ln 0 := 0.
double entropy_gain(double p_l);

// Run both oracles full-frame (coarse at half scale, fine at full scale),
// match, label, and compute gain targets. Coarse detections with no fine
// match are kept with fine score 0.
std::vector<Correspondence> build_training_set(const std::vector<Scene>& scenes,
                                               const DetectorModel& coarse_model,
                                               const DetectorModel& fine_model,
                                               double coarse_scale = 0.5);

}  // namespace zoomdet
