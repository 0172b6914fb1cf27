#include "zoomdet/match.hpp"

#include <algorithm>
#include <cmath>

namespace zoomdet {

std::vector<std::pair<int, int>> match_detections(const std::vector<Detection>& coarse,
                                                  const std::vector<Detection>& fine) {
  struct Cand {
    double overlap;
    int ci, fi;
  };
  std::vector<Cand> cands;
  for (int ci = 0; ci < static_cast<int>(coarse.size()); ++ci) {
    for (int fi = 0; fi < static_cast<int>(fine.size()); ++fi) {
      const double v = iou(coarse[ci].box, fine[fi].box);
      if (v > 0.5) cands.push_back({v, ci, fi});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (a.ci != b.ci) return a.ci < b.ci;
    return a.fi < b.fi;
  });

  std::vector<bool> coarse_used(coarse.size(), false), fine_used(fine.size(), false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& c : cands) {
    if (coarse_used[c.ci] || fine_used[c.fi]) continue;
    coarse_used[c.ci] = true;
    fine_used[c.fi] = true;
    pairs.emplace_back(c.ci, c.fi);
  }
  return pairs;
}

int assign_label(const Detection& det, const std::vector<GroundTruthObject>& groundtruth) {
  for (const auto& gt : groundtruth)
    if (iou(det.box, gt.box) >= 0.5) return 1;
  return 0;
}

double gain_target(int g, double p_l, double p_h) {
  return std::abs(g - p_l) - std::abs(g - p_h);
}

double entropy_gain(double p_l) {
  double e = 0.0;
  if (p_l > 0.0) e -= p_l * std::log(p_l);
  if (p_l < 1.0) e -= (1.0 - p_l) * std::log(1.0 - p_l);
  return e;
}

std::vector<Correspondence> build_training_set(const std::vector<Scene>& scenes,
                                               const DetectorModel& coarse_model,
                                               const DetectorModel& fine_model,
                                               double coarse_scale) {
  std::vector<Correspondence> out;
  for (const auto& scene : scenes) {
    CostLedger scratch;
    const BBox frame{0.0, 0.0, static_cast<double>(scene.width),
                     static_cast<double>(scene.height)};
    const auto coarse = run_detector(coarse_model, scene, frame, coarse_scale, scratch);
    const auto fine = run_detector(fine_model, scene, frame, 1.0, scratch);

    std::vector<int> fine_for_coarse(coarse.size(), -1);
    for (const auto& [ci, fi] : match_detections(coarse, fine)) fine_for_coarse[ci] = fi;

    for (std::size_t ci = 0; ci < coarse.size(); ++ci) {
      Correspondence corr;
      corr.coarse = coarse[ci];
      corr.label_g = assign_label(coarse[ci], scene.objects);
      double p_h = 0.0;
      if (fine_for_coarse[ci] >= 0) {
        corr.fine = fine[static_cast<std::size_t>(fine_for_coarse[ci])];
        p_h = corr.fine->score;
      }
      corr.gain_target = gain_target(corr.label_g, coarse[ci].score, p_h);
      out.push_back(std::move(corr));
    }
  }
  return out;
}

}  // namespace zoomdet
