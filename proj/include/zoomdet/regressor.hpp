#pragma once

#include <cstdint>
#include <vector>

#include "zoomdet/detection.hpp"
#include "zoomdet/match.hpp"
#include "zoomdet/nn.hpp"

namespace zoomdet {

struct RegressorConfig {
  int feature_dim = 16;
  int hidden = 64;
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 0.2;
  // Halve the learning rate every this many epochs (0 disables); damps the
  // terminal minibatch wander of constant-rate SGD.
  int lr_halflife = 50;
  std::uint64_t seed = 7;
};

// Maps a coarse-detection feature vector to the predicted zoom-in gain.
// Two dense layers with a relu between them.
struct GainRegressor {
  nn::Network net;
  int feature_dim = 0;
};

struct RegressorTrainStats {
  std::vector<double> mse_curve;  // one entry per epoch
  double final_mse = 0.0;
};

GainRegressor train_regressor(const std::vector<Correspondence>& data,
                              const RegressorConfig& config,
                              RegressorTrainStats* stats = nullptr);

double predict_gain(const GainRegressor& regressor, const std::vector<double>& feature);

// Per-cell predicted zoom-in gain over the down-sampled frame. Doubles as the
// RL state: zoomed regions are zeroed in place, so the map records action
// history. Cell membership is decided by the cell center, both for building
// and for region sums, so region_sum of a zeroed region is exactly 0.
struct AccuracyGainMap {
  int width = 0;
  int height = 0;
  double coordinate_scale = 2.0;  // full-resolution pixels per map cell
  std::vector<double> values;     // row-major, height rows by width cols

  double at(int ix, int iy) const {
    return values[static_cast<std::size_t>(iy) * width + ix];
  }

  double sum() const;
  double positive_sum() const;

  // Sum of cells whose center falls inside the region (full-resolution
  // coordinates).
  double region_sum(const BBox& region) const;

  // Zero every cell whose center falls inside the region. Idempotent.
  void zero_region(const BBox& region);
};

struct GainProposal {
  BBox box;  // down-sampled map coordinates
  double gain;
};

// Eq-style mass spreading: every member cell of proposal k receives
// alpha * gain_k / b_k where b_k is the member-cell count; overlapping
// proposals add up.
AccuracyGainMap build_ag_map(const std::vector<GainProposal>& proposals, int width,
                             int height, double alpha, double coordinate_scale);

}  // namespace zoomdet
