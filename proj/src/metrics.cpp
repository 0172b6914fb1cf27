#include "zoomdet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace zoomdet {

namespace {

struct RankedDet {
  double score;
  int scene;
  int index;
};

double ap_from_ranked(const std::vector<RankedDet>& ranked,
                      const std::vector<std::vector<Detection>>& per_scene,
                      const std::vector<const std::vector<GroundTruthObject>*>& gts,
                      int total_gt, double iou_threshold) {
  if (total_gt == 0) return 0.0;
  if (ranked.empty()) return 0.0;

  std::vector<std::vector<bool>> gt_used(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) gt_used[s].assign(gts[s]->size(), false);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& rd : ranked) {
    const Detection& det =
        per_scene[static_cast<std::size_t>(rd.scene)][static_cast<std::size_t>(rd.index)];
    const auto& gt = *gts[static_cast<std::size_t>(rd.scene)];
    int best = -1;
    double best_iou = 0.0;
    for (int gi = 0; gi < static_cast<int>(gt.size()); ++gi) {
      if (gt_used[static_cast<std::size_t>(rd.scene)][static_cast<std::size_t>(gi)])
        continue;
      const double v = iou(det.box, gt[static_cast<std::size_t>(gi)].box);
      if (v > best_iou) {
        best_iou = v;
        best = gi;
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      gt_used[static_cast<std::size_t>(rd.scene)][static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gt);
  }

  // Precision envelope from the right, integrated over recall increments.
  double ap = 0.0;
  double env = 0.0;
  double next_recall = recall.back();
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    env = std::max(env, precision[static_cast<std::size_t>(i)]);
    const double prev_recall = i > 0 ? recall[static_cast<std::size_t>(i) - 1] : 0.0;
    ap += (recall[static_cast<std::size_t>(i)] - prev_recall) * env;
    next_recall = prev_recall;
  }
  (void)next_recall;
  return ap;
}

}  // namespace

double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& groundtruth,
                         double iou_threshold) {
  std::vector<std::vector<Detection>> per_scene{dets};
  Scene dummy;
  dummy.objects = groundtruth;
  std::vector<Scene> scenes{dummy};
  return pooled_average_precision(per_scene, scenes, iou_threshold);
}

double pooled_average_precision(const std::vector<std::vector<Detection>>& per_scene,
                                const std::vector<Scene>& scenes,
                                double iou_threshold) {
  if (per_scene.size() != scenes.size())
    throw std::invalid_argument("pooled_average_precision: scene count mismatch");

  std::vector<RankedDet> ranked;
  std::vector<const std::vector<GroundTruthObject>*> gts;
  int total_gt = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    gts.push_back(&scenes[s].objects);
    total_gt += static_cast<int>(scenes[s].objects.size());
    for (int i = 0; i < static_cast<int>(per_scene[s].size()); ++i)
      ranked.push_back({per_scene[s][static_cast<std::size_t>(i)].score,
                        static_cast<int>(s), i});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedDet& a, const RankedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.index < b.index;
  });
  return ap_from_ranked(ranked, per_scene, gts, total_gt, iou_threshold);
}

MetricsReport compute_percentages(const RunAggregate& run, const RunAggregate& fine) {
  if (fine.ap <= 0.0)
    throw std::invalid_argument("compute_percentages: baseline AP is zero");
  if (fine.pixels <= 0)
    throw std::invalid_argument("compute_percentages: baseline pixel count is zero");
  MetricsReport r;
  r.ap = run.ap;
  r.a_perc = run.ap / fine.ap;
  r.p_perc = static_cast<double>(run.pixels) / static_cast<double>(fine.pixels);
  r.t_perc = fine.sim_time > 0.0 ? run.sim_time / fine.sim_time : 0.0;
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "strategy,budget,a_perc,p_perc,t_perc,ap,seed_count\n";
  for (const auto& row : rows) {
    os << row.strategy << "," << fmt(row.budget) << ",";
    if (row.attainable) {
      os << fmt(row.metrics.a_perc) << "," << fmt(row.metrics.p_perc) << ","
         << fmt(row.metrics.t_perc) << "," << fmt(row.metrics.ap);
    } else {
      os << "NA,NA,NA,NA";
    }
    os << "," << row.seed_count << "\n";
  }
}

void write_sweep_json(const std::string& path, const std::vector<SweepRow>& rows) {
  nlohmann::json root;
  root["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j;
    j["strategy"] = row.strategy;
    j["budget"] = row.budget;
    j["attainable"] = row.attainable;
    j["seed_count"] = row.seed_count;
    if (row.attainable) {
      j["a_perc"] = row.metrics.a_perc;
      j["p_perc"] = row.metrics.p_perc;
      j["t_perc"] = row.metrics.t_perc;
      j["ap"] = row.metrics.ap;
    }
    root["rows"].push_back(j);
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << root.dump(2) << "\n";
}

}  // namespace zoomdet
